#include "lightner/vocab.hpp"

#include "lightner/error.hpp"

namespace lightner {
namespace {

constexpr std::string_view kReservedPrefix = "<reserved:";

bool is_reserved(const std::string& w) { return w.starts_with(kReservedPrefix); }

}  // namespace

Vocab::Vocab() {
  add("<s>");
  add("</s>");
  add("<unk>");
}

Vocab Vocab::build(const std::vector<std::string>& words, std::size_t reserved) {
  Vocab v;
  for (const auto& w : words)
    if (!v.index_.contains(w)) v.add(w);
  for (std::size_t i = 0; i < reserved; ++i) v.add(std::string(kReservedPrefix) + std::to_string(i) + ">");
  return v;
}

Vocab Vocab::from_words(std::vector<std::string> words) {
  if (words.size() < 3 || words[kBos] != "<s>" || words[kEos] != "</s>" || words[kUnk] != "<unk>")
    throw Error("BAD_VOCAB", "vocabulary must start with <s>, </s>, <unk>");
  Vocab v;
  v.words_.clear();
  v.index_.clear();
  for (auto& w : words) {
    if (v.index_.contains(w)) throw Error("BAD_VOCAB", "duplicate vocabulary entry '" + w + "'");
    v.add(std::move(w));
  }
  return v;
}

void Vocab::add(std::string word) {
  index_.emplace(word, words_.size());
  words_.push_back(std::move(word));
}

std::optional<std::size_t> Vocab::find(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t Vocab::id_or_unk(std::string_view word) const { return find(word).value_or(kUnk); }

std::size_t Vocab::intern(std::string_view word) {
  if (auto id = find(word)) return *id;
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!is_reserved(words_[i])) continue;
    index_.erase(words_[i]);
    words_[i] = std::string(word);
    index_.emplace(words_[i], i);
    return i;
  }
  throw Error("VOCAB_FULL", "no reserved vocabulary rows left for '" + std::string(word) + "'");
}

std::size_t Vocab::reserved_remaining() const {
  std::size_t n = 0;
  for (const auto& w : words_) n += is_reserved(w) ? 1 : 0;
  return n;
}

std::vector<std::size_t> Vocab::encode(const std::vector<std::string>& tokens) const {
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id_or_unk(t));
  return ids;
}

}  // namespace lightner
