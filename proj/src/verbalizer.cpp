#include "lightner/verbalizer.hpp"

#include <algorithm>
#include <cmath>

#include "lightner/data.hpp"
#include "lightner/error.hpp"

namespace lightner {

std::string to_string(BetaPolicy policy) { return policy == BetaPolicy::kUniform ? "uniform" : "learned"; }

BetaPolicy parse_beta_policy(std::string_view text) {
  if (text == "learned") return BetaPolicy::kLearned;
  if (text == "uniform") return BetaPolicy::kUniform;
  throw Error("BAD_BETA_POLICY", "beta policy must be 'learned' or 'uniform', got '" + std::string(text) + "'");
}

std::vector<double> simplex(std::span<const double> raw) {
  if (raw.empty()) return {};
  const double mx = *std::max_element(raw.begin(), raw.end());
  std::vector<double> out(raw.size());
  double total = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) total += (out[i] = std::exp(raw[i] - mx));
  double head = 0.0;
  for (std::size_t i = 0; i + 1 < raw.size(); ++i) head += (out[i] /= total);
  out.back() = 1.0 - head;
  return out;
}

Var simplex_row(Var raw) {
  const Tensor& x = raw.value();
  if (x.rows() != 1) throw Error("SHAPE_MISMATCH", "simplex_row: expected a single row, got " + x.shape_string());
  Tensor value(x.shape(), simplex(x.values()));
  const Var parents[] = {raw};
  return raw.tape->record(std::move(value), parents, [raw](Tape& tape, const Tensor& out, const Tensor& g) {
    double inner = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) inner += out[i] * g[i];
    Tensor& gx = tape.grad_slot(raw);
    for (std::size_t i = 0; i < out.size(); ++i) gx[i] += out[i] * (g[i] - inner);
  });
}

Verbalizer::Verbalizer(const std::vector<std::string>& categories, Vocab& vocab, BetaPolicy policy) : policy_(policy) {
  const auto mapping = build_verbalizer_mapping(categories);
  for (const auto& c : categories) {
    if (std::any_of(entries_.begin(), entries_.end(), [&](const VerbalizerEntry& e) { return e.category == c; }))
      throw Error("DUPLICATE_CATEGORY", "category '" + c + "' listed twice");
    add_entry(c, mapping.at(c), vocab);
  }
}

std::vector<std::string> Verbalizer::categories() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.category);
  return out;
}

void Verbalizer::set_policy(BetaPolicy policy) {
  policy_ = policy;
  for (auto& e : entries_) {
    e.raw->trainable = policy == BetaPolicy::kLearned;
    if (policy == BetaPolicy::kUniform) e.raw->value.fill(0.0);
  }
}

void Verbalizer::add_category(const std::string& name, Vocab& vocab) {
  for (const auto& e : entries_)
    if (e.category == name) throw Error("DUPLICATE_CATEGORY", "category '" + name + "' already present");
  add_entry(name, build_verbalizer_mapping({name}).at(name), vocab);
}

void Verbalizer::add_entry(const std::string& category, const std::vector<std::string>& words, Vocab& vocab) {
  VerbalizerEntry entry;
  entry.category = category;
  entry.words = words;
  for (const auto& w : words) entry.word_ids.push_back(vocab.intern(w));
  entry.raw = &store_.add(std::string(kPrefix) + category + ".raw", Tensor({1, words.size()}, 0.0),
                          policy_ == BetaPolicy::kLearned);
  entries_.push_back(std::move(entry));
}

std::vector<double> Verbalizer::beta(std::size_t c) const { return simplex(entries_.at(c).raw->value.values()); }

Var Verbalizer::representations(Tape& tape, Var token_table) const {
  if (entries_.empty()) throw Error("EMPTY_LABEL_SET", "verbalizer has no categories");
  std::vector<Var> rows;
  rows.reserve(entries_.size());
  for (const auto& e : entries_) {
    Var weights = simplex_row(tape.param(*e.raw));
    rows.push_back(ad::matmul(weights, ad::gather_rows(token_table, e.word_ids)));
  }
  return ad::concat(rows, Axis::kRows);
}

std::vector<Parameter*> Verbalizer::parameters() {
  std::vector<Parameter*> out;
  for (auto& e : entries_) out.push_back(e.raw);
  return out;
}

}  // namespace lightner
