#include "lightner/lc_head.hpp"

#include <algorithm>
#include <random>

#include "lightner/error.hpp"

namespace lightner {

std::vector<std::string> bio_tag_set(const std::vector<std::string>& categories) {
  std::vector<std::string> tags{"O"};
  for (const auto& c : categories) {
    tags.push_back("B-" + c);
    tags.push_back("I-" + c);
  }
  return tags;
}

LcHead::LcHead(const std::vector<std::string>& categories, std::size_t d_model, std::uint64_t seed, double init_std)
    : categories_(categories), tags_(bio_tag_set(categories)) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, init_std);
  Tensor w({d_model, tags_.size()});
  for (double& x : w.values()) x = normal(rng);
  weight_ = &store_.add("lc.W", std::move(w));
  bias_ = &store_.add("lc.b", Tensor({1, tags_.size()}, 0.0));
}

Var LcHead::logits(Tape& tape, Var states) { return ad::add_row(ad::matmul(states, tape.param(*weight_)), tape.param(*bias_)); }

Tensor LcHead::distribution(const Tensor& states) {
  Tape tape(Tape::Mode::kInference);
  return ad::softmax_rows(logits(tape, tape.constant(states))).value();
}

void LcHead::load_state(const Tensor& weight, const Tensor& bias) {
  if (!weight.same_shape(weight_->value) || !bias.same_shape(bias_->value))
    throw Error("LC_SHAPE_MISMATCH", "classifier expects W " + weight_->value.shape_string() + " and b " +
                                         bias_->value.shape_string() + " (" + std::to_string(num_tags()) +
                                         " tags), got W " + weight.shape_string() + " and b " + bias.shape_string());
  weight_->value = weight;
  bias_->value = bias;
}

std::vector<EntitySpan> LcHead::predict_spans(const Tensor& states) {
  const Tensor probs = distribution(states);
  std::vector<std::string> predicted;
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const auto row = probs.row_span(r);
    predicted.push_back(tags_[static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin())]);
  }
  return bio_to_spans(predicted).spans;
}

}  // namespace lightner
