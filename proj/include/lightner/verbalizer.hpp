#pragma once

// Category scoring through label words. Category c owns label words V_c with
// simplex weights beta^c = softmax(raw^c); its representation is
// sum_v beta_v^c * emb(v), used both to score the category and as the decoder
// input after the category is emitted.

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "lightner/autodiff.hpp"
#include "lightner/parameter.hpp"
#include "lightner/vocab.hpp"

namespace lightner {

enum class BetaPolicy { kLearned, kUniform };

std::string to_string(BetaPolicy policy);
BetaPolicy parse_beta_policy(std::string_view text);

// Softmax whose last entry is 1 minus the sum of the others, so a left-to-right
// sum of the result is exactly 1.0.
std::vector<double> simplex(std::span<const double> raw);

// Tape primitive over a 1 x k row with the same values as simplex() and the
// softmax Jacobian.
Var simplex_row(Var raw);

struct VerbalizerEntry {
  std::string category;
  std::vector<std::string> words;
  std::vector<std::size_t> word_ids;
  Parameter* raw = nullptr;  // 1 x |V_c|
};

class Verbalizer {
 public:
  static constexpr std::string_view kPrefix = "verbalizer.";

  Verbalizer() = default;
  // Label words come from build_verbalizer_mapping; words missing from
  // `vocab` are interned into its reserved rows. Raw weights start at 0.
  Verbalizer(const std::vector<std::string>& categories, Vocab& vocab, BetaPolicy policy = BetaPolicy::kLearned);
  Verbalizer(Verbalizer&&) = default;
  Verbalizer& operator=(Verbalizer&&) = default;

  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<VerbalizerEntry>& entries() const noexcept { return entries_; }
  std::vector<std::string> categories() const;
  BetaPolicy policy() const noexcept { return policy_; }
  // Uniform freezes the raw weights at 0; learned makes them trainable.
  void set_policy(BetaPolicy policy);

  // Appends a category without touching existing entries.
  void add_category(const std::string& name, Vocab& vocab);

  std::vector<double> beta(std::size_t c) const;

  // m x d category representations from a token-embedding table Var.
  Var representations(Tape& tape, Var token_table) const;

  ParameterStore& params() noexcept { return store_; }
  const ParameterStore& params() const noexcept { return store_; }
  std::vector<Parameter*> parameters();

 private:
  void add_entry(const std::string& category, const std::vector<std::string>& words, Vocab& vocab);

  std::vector<VerbalizerEntry> entries_;
  ParameterStore store_;
  BetaPolicy policy_ = BetaPolicy::kLearned;
};

}  // namespace lightner
