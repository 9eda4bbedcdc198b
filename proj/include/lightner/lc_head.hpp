#pragma once

// Label-specific classifier baseline: per-token softmax(h W + b) over the BIO
// tags of a fixed category set. Its weight shape is tied to that set, so a
// head trained for one label set cannot be loaded for another.

#include <cstdint>
#include <string>
#include <vector>

#include "lightner/autodiff.hpp"
#include "lightner/data.hpp"
#include "lightner/parameter.hpp"

namespace lightner {

// O, then B-c and I-c for every category in order.
std::vector<std::string> bio_tag_set(const std::vector<std::string>& categories);

class LcHead {
 public:
  LcHead(const std::vector<std::string>& categories, std::size_t d_model, std::uint64_t seed, double init_std = 0.02);
  LcHead(LcHead&&) = default;
  LcHead& operator=(LcHead&&) = default;

  const std::vector<std::string>& categories() const noexcept { return categories_; }
  const std::vector<std::string>& tags() const noexcept { return tags_; }
  std::size_t num_tags() const noexcept { return tags_.size(); }
  std::size_t d_model() const { return weight_->value.rows(); }

  Parameter& weight() { return *weight_; }
  Parameter& bias() { return *bias_; }
  const Parameter& weight() const { return *weight_; }
  const Parameter& bias() const { return *bias_; }
  std::vector<Parameter*> parameters() { return {weight_, bias_}; }

  // rows(h) x k logits.
  Var logits(Tape& tape, Var states);
  // Per-token tag distributions.
  Tensor distribution(const Tensor& states);

  // Copies trained weights in. Throws LC_SHAPE_MISMATCH naming both shapes.
  void load_state(const Tensor& weight, const Tensor& bias);

  // Greedy per-token tags for encoder states, read back into spans.
  std::vector<EntitySpan> predict_spans(const Tensor& states);

 private:
  std::vector<std::string> categories_;
  std::vector<std::string> tags_;
  ParameterStore store_;
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
};

}  // namespace lightner
