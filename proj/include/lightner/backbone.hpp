#pragma once

// Post-norm transformer encoder-decoder whose self-attention layers accept an
// optional guidance prefix (learned key/value rows prepended to the projected
// keys and values):
//
//   head_h = softmax(Q_h [phi_k,h ; K_h]^T / sqrt(d_head)) [phi_v,h ; V_h]
//
// phi is split across heads along the feature axis, enters attention without
// passing through W^K / W^V, carries no positional embedding and is never
// causally masked. Cross-attention is unguided.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lightner/autodiff.hpp"
#include "lightner/config.hpp"
#include "lightner/parameter.hpp"

namespace lightner {

struct AttentionWeights {
  Parameter* wq = nullptr;
  Parameter* bq = nullptr;
  Parameter* wk = nullptr;
  Parameter* bk = nullptr;
  Parameter* wv = nullptr;
  Parameter* bv = nullptr;
  Parameter* wo = nullptr;
  Parameter* bo = nullptr;
};

struct LayerNormWeights {
  Parameter* gain = nullptr;
  Parameter* bias = nullptr;
};

struct FeedForwardWeights {
  Parameter* w1 = nullptr;
  Parameter* b1 = nullptr;
  Parameter* w2 = nullptr;
  Parameter* b2 = nullptr;
};

// One guided layer's |P| x d key and value prefixes.
struct GuidancePrefix {
  Parameter* key = nullptr;
  Parameter* value = nullptr;

  bool present() const noexcept { return key != nullptr; }
};

struct EncoderLayer {
  AttentionWeights self_attn;
  LayerNormWeights self_ln;
  FeedForwardWeights ffn;
  LayerNormWeights ffn_ln;
  GuidancePrefix guidance;
};

struct DecoderLayer {
  AttentionWeights self_attn;
  LayerNormWeights self_ln;
  AttentionWeights cross_attn;
  LayerNormWeights cross_ln;
  FeedForwardWeights ffn;
  LayerNormWeights ffn_ln;
  GuidancePrefix guidance;
};

// Parameter names under this prefix form the guidance module; everything else
// in a Backbone is the frozen-able language model.
inline constexpr std::string_view kGuidancePrefix = "guidance.";

bool is_guidance_parameter(std::string_view name);
// Bias vectors and layer-norm gains/biases are exempt from weight decay.
bool is_decay_exempt(std::string_view name);

// Scaled dot-product attention with an optional guidance prefix, followed by
// W^O, the residual connection and layer normalization.
// `memory` supplies keys/values (pass `x` for self-attention).
// Throws GUIDANCE_SHAPE when a prefix's width differs from d_model.
Var attention_block(Tape& tape, const AttentionWeights& w, const LayerNormWeights& ln, Var x, Var memory,
                    const GuidancePrefix& guidance, bool causal, std::size_t n_heads);

class Backbone {
 public:
  // Initializes every weight from N(0, init_std^2) using `seed`; biases and
  // layer-norm biases start at 0, gains at 1.
  Backbone(const ModelConfig& config, std::uint64_t seed);

  Backbone(Backbone&&) = default;
  Backbone& operator=(Backbone&&) = default;

  const ModelConfig& config() const noexcept { return config_; }
  ParameterStore& params() noexcept { return store_; }
  const ParameterStore& params() const noexcept { return store_; }

  Parameter& token_embedding() { return *token_embed_; }
  const std::vector<EncoderLayer>& encoder_layers() const noexcept { return encoder_; }
  const std::vector<DecoderLayer>& decoder_layers() const noexcept { return decoder_; }
  const std::vector<std::size_t>& guided_encoder_layers() const noexcept { return guided_enc_; }
  const std::vector<std::size_t>& guided_decoder_layers() const noexcept { return guided_dec_; }

  // Every guidance prefix parameter, encoder stack first, key before value.
  std::vector<Parameter*> guidance_parameters();
  // Re-draws the guidance prefixes from N(0, init_std^2).
  void reinitialize_guidance(std::uint64_t seed);

  // H_en for `tokens` (vocabulary ids). Throws EMPTY_INPUT / SEQUENCE_TOO_LONG.
  Var encode(Tape& tape, std::span<const std::size_t> tokens);

  // Decoder hidden states for every position of `inputs` (t x d, already
  // embedded, position 0 is the start token). Row t-1 is h_t.
  Var decode(Tape& tape, Var encoder_states, Var inputs);

  // Row lookups into the shared token embedding table.
  Var embed(Tape& tape, std::span<const std::size_t> ids);

  // Last-position decoder state for a prefix of token ids beginning with <s>.
  Tensor decode_step(std::span<const std::size_t> source, std::span<const std::size_t> prev_tokens);

 private:
  Var feed_forward(Tape& tape, const FeedForwardWeights& w, const LayerNormWeights& ln, Var x) const;
  Var add_positions(Tape& tape, Parameter& table, const LayerNormWeights& ln, Var x) const;

  ModelConfig config_;
  ParameterStore store_;
  Parameter* token_embed_ = nullptr;
  Parameter* enc_positions_ = nullptr;
  Parameter* dec_positions_ = nullptr;
  LayerNormWeights enc_embed_ln_;
  LayerNormWeights dec_embed_ln_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  std::vector<std::size_t> guided_enc_;
  std::vector<std::size_t> guided_dec_;
};

}  // namespace lightner
