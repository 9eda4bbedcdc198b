#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace lightner {

// Token <-> row mapping for the shared embedding table.
//
// Rows 0..2 are <s>, </s>, <unk>. A block of "<reserved:N>" rows at the end
// lets a frozen model gain new words (e.g. unseen verbalizer label words)
// without changing the embedding table's shape.
class Vocab {
 public:
  static constexpr std::size_t kBos = 0;
  static constexpr std::size_t kEos = 1;
  static constexpr std::size_t kUnk = 2;

  Vocab();
  // Words in first-seen order, then `reserved` spare rows.
  static Vocab build(const std::vector<std::string>& words, std::size_t reserved);
  static Vocab from_words(std::vector<std::string> words);

  std::size_t size() const noexcept { return words_.size(); }
  std::optional<std::size_t> find(std::string_view word) const;
  std::size_t id_or_unk(std::string_view word) const;
  const std::string& word(std::size_t id) const { return words_.at(id); }
  const std::vector<std::string>& words() const noexcept { return words_; }

  // Returns the id of `word`, claiming the next reserved row if it is new.
  // Throws VOCAB_FULL when no reserved rows remain.
  std::size_t intern(std::string_view word);
  std::size_t reserved_remaining() const;

  std::vector<std::size_t> encode(const std::vector<std::string>& tokens) const;

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.words_ == b.words_; }

 private:
  void add(std::string word);

  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace lightner
