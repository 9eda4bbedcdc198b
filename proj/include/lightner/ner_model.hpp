#pragma once

// Generative pointer NER model: backbone + verbalizer over a shared vocabulary.
//
// At decoder step t with state h_t the next index is drawn from
//
//   softmax([emb(</s>); alpha*H_en + (1-alpha)*emb(X); E_tag] . h_t)
//
// where row c of E_tag is the verbalizer representation of category c.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lightner/backbone.hpp"
#include "lightner/index_space.hpp"
#include "lightner/verbalizer.hpp"
#include "lightner/vocab.hpp"

namespace lightner {

// Logits over [eos; pointers; categories] for every row of `decoder_states`.
// Throws SHAPE_MISMATCH when widths disagree or encoder/source rows differ.
Var pointer_logits(Var encoder_states, Var source_embeddings, Var decoder_states, Var eos_row, Var category_rows,
                   double alpha);

// One step's probabilities (length n+m+1) for a single 1 x d state.
std::vector<double> step_distribution(const Tensor& encoder_states, const Tensor& source_embeddings,
                                      const Tensor& state, const Tensor& eos_row, const Tensor& category_rows,
                                      double alpha);

struct GreedyResult {
  std::vector<std::size_t> indices;  // ends with 0 unless truncated
  bool truncated = false;
};

class NerModel {
 public:
  // config.vocab_size is taken from `vocab`, after label words are interned.
  NerModel(ModelConfig config, Vocab vocab, const std::vector<std::string>& categories, std::uint64_t seed,
           BetaPolicy policy = BetaPolicy::kLearned);
  // Rebuilds a model around an existing backbone (checkpoint load).
  NerModel(Backbone backbone, Vocab vocab, Verbalizer verbalizer);
  NerModel(NerModel&&) = default;
  NerModel& operator=(NerModel&&) = default;

  const ModelConfig& config() const noexcept { return backbone_.config(); }
  Backbone& backbone() noexcept { return backbone_; }
  const Backbone& backbone() const noexcept { return backbone_; }
  Vocab& vocab() noexcept { return vocab_; }
  const Vocab& vocab() const noexcept { return vocab_; }
  Verbalizer& verbalizer() noexcept { return verbalizer_; }
  const Verbalizer& verbalizer() const noexcept { return verbalizer_; }
  std::vector<std::string> categories() const { return verbalizer_.categories(); }

  // New verbalizer for another label set; the backbone is untouched.
  void set_categories(const std::vector<std::string>& categories, BetaPolicy policy = BetaPolicy::kLearned);
  void set_verbalizer(Verbalizer verbalizer) { verbalizer_ = std::move(verbalizer); }

  std::vector<std::size_t> token_ids(const std::vector<std::string>& tokens) const;

  // Teacher forcing: decoder inputs are <s> followed by target[0..T-2]
  // converted to embeddings; returns T x (n+m+1) logits.
  Var teacher_forced_logits(Tape& tape, std::span<const std::size_t> source, std::span<const std::size_t> target);

  // Argmax decoding from <s> until 0 or max_steps (0 means 3n+1). Steps are
  // also capped by max_len.
  GreedyResult greedy_decode(std::span<const std::size_t> source, std::size_t max_steps = 0);

  DecodedSpans predict(const std::vector<std::string>& tokens);

  // Backbone parameters followed by verbalizer weights.
  std::vector<Parameter*> parameters();

 private:
  Backbone backbone_;
  Vocab vocab_;
  Verbalizer verbalizer_;
};

}  // namespace lightner
