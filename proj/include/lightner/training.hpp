#pragma once

// Two training regimes over a NerModel:
//   full           every parameter trains (backbone pretraining)
//   guidance_only  only the guidance prefixes and verbalizer weights train;
//                  every backbone parameter, embeddings included, is frozen

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lightner/autodiff.hpp"
#include "lightner/config.hpp"
#include "lightner/data.hpp"
#include "lightner/lc_head.hpp"
#include "lightner/ner_model.hpp"

namespace lightner {

enum class TrainingMode { kFull, kGuidanceOnly };

std::string to_string(TrainingMode mode);

// Whether a named model parameter trains under `mode`.
bool trains_under(TrainingMode mode, std::string_view name, BetaPolicy policy);

struct ParameterPartition {
  std::vector<Parameter*> trainable;
  std::vector<Parameter*> frozen;
};

// Classifies every model parameter and sets its trainable flag to match.
ParameterPartition partition_parameters(NerModel& model, TrainingMode mode);

// ceil(warmup_fraction * T), at least 1 when T > 0.
std::size_t warmup_steps(const OptimizerConfig& config);

// Linear 0 -> peak over the warmup, then linear to 0 at T; 0 past T.
double lr_at_step(const OptimizerConfig& config, std::size_t step);

// Adam moments with weight decay applied to the weights directly (not through
// the moments), skipping decay-exempt names, after clipping the global
// gradient norm. Update s (1-based) uses lr_at_step(s).
class AdamW {
 public:
  AdamW(OptimizerConfig config, std::vector<Parameter*> params);

  // Applies one update from the parameters' accumulated gradients and returns
  // the pre-clipping global norm.
  double step();
  std::size_t steps_taken() const noexcept { return step_; }
  const OptimizerConfig& config() const noexcept { return config_; }

 private:
  OptimizerConfig config_;
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::size_t step_ = 0;
};

struct Example {
  std::vector<std::size_t> source;
  std::vector<std::size_t> target;  // 3l + 1 indices
};

// Throws UNKNOWN_CATEGORY when a span's category is not one of the model's.
std::vector<Example> make_examples(const NerModel& model, const Corpus& corpus);

// Summed cross-entropy over all target steps under teacher forcing.
Var sequence_loss(Tape& tape, NerModel& model, const Example& example);

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t steps = 0;        // optimizer steps so far
  double mean_step_loss = 0.0;  // per target step
  std::optional<double> dev_f1;
};

struct TrainOptions {
  TrainingMode mode = TrainingMode::kFull;
  OptimizerConfig optimizer;  // total_steps is derived from epochs when 0
  std::size_t batch_size = 8;
  std::size_t epochs = 1;
  std::size_t eval_every = 1;           // epochs between dev evaluations
  std::optional<double> stop_at_f1;     // early stop once dev F1 reaches it
  std::optional<std::size_t> max_steps; // hard cap on optimizer steps
  std::uint64_t seed = 1;               // batch order
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t steps = 0;
  bool reached_target = false;
  std::optional<double> final_dev_f1;
};

// Minibatch training. Throws DIVERGED (after restoring the last finite
// parameters) when a batch loss is not finite.
TrainResult train(NerModel& model, const Corpus& train_set, const Corpus* dev, const TrainOptions& options);

// Full-parameter training on a source corpus until dev F1 >= target_f1 or the
// epoch cap.
TrainResult pretrain_backbone(NerModel& model, const Corpus& source_train, const Corpus* source_dev,
                              const RunConfig& config,
                              std::function<void(const EpochRecord&)> on_epoch = {});

enum class GuidanceInit { kWarmStart, kFresh };

struct TuneOptions {
  GuidanceInit init = GuidanceInit::kWarmStart;
  std::optional<std::size_t> max_steps;
  std::optional<std::size_t> epochs;  // defaults to config.tune_epochs
  std::function<void(const EpochRecord&)> on_epoch;
};

// Rebuilds the verbalizer for the target label set and trains guidance and
// verbalizer weights only. Dev F1 is recorded every eval_every epochs.
TrainResult tune_guidance(NerModel& model, const Corpus& target_train, const Corpus* target_dev,
                          const RunConfig& config, const TuneOptions& options = {});

struct ParamRatio {
  std::size_t trainable = 0;
  std::size_t total = 0;
  std::size_t numerator = 0;  // trainable / total in lowest terms
  std::size_t denominator = 1;
  double value = 0.0;
  std::size_t guidance = 0;              // enumerated guidance coordinates
  std::size_t guidance_closed_form = 0;  // (guided enc + guided dec layers) * 2 * |P| * d
  std::size_t verbalizer = 0;
};

// Does not change any trainable flag.
ParamRatio param_ratio(NerModel& model, TrainingMode mode);

// Fits the classifier baseline on the model's encoder states (the model
// itself is not updated) with per-token cross-entropy over BIO tags. Returns
// the mean per-token loss of each epoch. Throws UNKNOWN_CATEGORY for a span
// whose category the head does not know.
std::vector<double> train_lc_head(LcHead& head, NerModel& model, const Corpus& corpus, const OptimizerConfig& optimizer,
                                  std::size_t epochs, std::size_t batch_size, std::uint64_t seed);

}  // namespace lightner
