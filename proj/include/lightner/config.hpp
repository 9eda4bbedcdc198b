#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace lightner {

enum class Activation { kGelu, kTanh };

// Which layers of one stack carry a guidance prefix.
struct LayerRange {
  enum class Mode { kAll, kLowest, kHighest };
  Mode mode = Mode::kAll;
  std::size_t k = 0;  // ignored for kAll

  friend bool operator==(const LayerRange&, const LayerRange&) = default;
};

// all -> {0..depth-1}; lowest k -> {0..k-1}; highest k -> {depth-k..depth-1}.
// Throws BAD_LAYER_RANGE when k > depth.
std::vector<std::size_t> select_guided_layers(const LayerRange& range, std::size_t depth);

std::string to_string(const LayerRange& range);
// "all", "lowest:K" or "highest:K"
LayerRange parse_layer_range(std::string_view text);

struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  std::size_t ffn_dim = 64;
  std::size_t vocab_size = 0;  // fixed by the vocabulary at construction
  std::size_t max_len = 64;
  std::size_t prompt_len = 10;
  double alpha = 0.5;
  LayerRange guidance_layers;
  Activation activation = Activation::kGelu;
  double init_std = 0.02;
  double embed_init_std = 0.0;  // token table only; 0 means init_std

  // Throws BAD_CONFIG naming the offending field.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct OptimizerConfig {
  double peak_lr = 1e-3;
  std::size_t total_steps = 0;
  double warmup_fraction = 0.10;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

// Everything a CLI run reads from a key=value config file.
struct RunConfig {
  ModelConfig model;
  OptimizerConfig optimizer;
  std::size_t batch_size = 8;
  std::size_t pretrain_epochs = 200;
  std::size_t tune_epochs = 300;
  double pretrain_lr = 3e-3;
  double tune_lr = 3e-2;
  double target_f1 = 0.95;  // early-stop threshold on the dev set
  std::size_t eval_every = 5;
  std::uint64_t seed = 1;
};

// Parses "key = value" lines; '#' starts a comment; blank lines are ignored.
// Throws BAD_CONFIG with the line number on a malformed line.
std::map<std::string, std::string> parse_key_values(std::string_view text);

// Applies known keys to `config`; unknown keys throw BAD_CONFIG.
void apply_config(const std::map<std::string, std::string>& values, RunConfig& config);

RunConfig load_run_config(const std::string& path);

// Canonical single-line rendering used for digests.
std::string describe(const ModelConfig& config);

}  // namespace lightner
