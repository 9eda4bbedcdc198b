#include "lightner/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "lightner/error.hpp"

namespace lightner {
namespace {

class Initializer {
 public:
  Initializer(ParameterStore& store, std::uint64_t seed, double std_dev)
      : store_(store), rng_(seed), normal_(0.0, std_dev) {}

  Parameter* normal(const std::string& name, std::size_t rows, std::size_t cols, double scale = 1.0) {
    Tensor t({rows, cols});
    for (double& v : t.values()) v = scale * normal_(rng_);
    return &store_.add(name, std::move(t));
  }
  Parameter* constant(const std::string& name, std::size_t n, double value) {
    return &store_.add(name, Tensor({n}, value));
  }

 private:
  ParameterStore& store_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_;
};

AttentionWeights make_attention(Initializer& init, const std::string& prefix, std::size_t d) {
  AttentionWeights w;
  w.wq = init.normal(prefix + ".Wq", d, d);
  w.bq = init.constant(prefix + ".bq", d, 0.0);
  w.wk = init.normal(prefix + ".Wk", d, d);
  w.bk = init.constant(prefix + ".bk", d, 0.0);
  w.wv = init.normal(prefix + ".Wv", d, d);
  w.bv = init.constant(prefix + ".bv", d, 0.0);
  w.wo = init.normal(prefix + ".Wo", d, d);
  w.bo = init.constant(prefix + ".bo", d, 0.0);
  return w;
}

LayerNormWeights make_ln(Initializer& init, const std::string& prefix, std::size_t d) {
  return {init.constant(prefix + ".gain", d, 1.0), init.constant(prefix + ".bias", d, 0.0)};
}

FeedForwardWeights make_ffn(Initializer& init, const std::string& prefix, std::size_t d, std::size_t f) {
  FeedForwardWeights w;
  w.w1 = init.normal(prefix + ".W1", d, f);
  w.b1 = init.constant(prefix + ".b1", f, 0.0);
  w.w2 = init.normal(prefix + ".W2", f, d);
  w.b2 = init.constant(prefix + ".b2", d, 0.0);
  return w;
}

Var project(Tape& tape, Var x, Parameter* w, Parameter* b) {
  return ad::add_row(ad::matmul(x, tape.param(*w)), tape.param(*b));
}

Tensor causal_mask(std::size_t queries, std::size_t prefix, std::size_t keys) {
  Tensor mask({queries, prefix + keys}, 0.0);
  for (std::size_t i = 0; i < queries; ++i)
    for (std::size_t j = i + 1; j < keys; ++j) mask(i, prefix + j) = -std::numeric_limits<double>::infinity();
  return mask;
}

}  // namespace

bool is_guidance_parameter(std::string_view name) { return name.starts_with(kGuidancePrefix); }

bool is_decay_exempt(std::string_view name) {
  const auto dot = name.rfind('.');
  const std::string_view leaf = dot == std::string_view::npos ? name : name.substr(dot + 1);
  return leaf == "gain" || leaf == "bias" || leaf == "bq" || leaf == "bk" || leaf == "bv" || leaf == "bo" ||
         leaf == "b1" || leaf == "b2" || leaf == "b";
}

Var attention_block(Tape& tape, const AttentionWeights& w, const LayerNormWeights& ln, Var x, Var memory,
                    const GuidancePrefix& guidance, bool causal, std::size_t n_heads) {
  const std::size_t d = x.value().cols();
  const std::size_t d_head = d / n_heads;
  const std::size_t queries = x.value().rows();
  const std::size_t keys = memory.value().rows();

  Var q = project(tape, x, w.wq, w.bq);
  Var k = project(tape, memory, w.wk, w.bk);
  Var v = project(tape, memory, w.wv, w.bv);

  std::size_t prefix_len = 0;
  Var phi_k{}, phi_v{};
  if (guidance.present()) {
    const Tensor& pk = guidance.key->value;
    const Tensor& pv = guidance.value->value;
    if (pk.cols() != d || pv.cols() != d || pk.rows() != pv.rows())
      throw Error("GUIDANCE_SHAPE", "guidance prefix " + pk.shape_string() + "/" + pv.shape_string() +
                                        " does not match model width " + std::to_string(d));
    prefix_len = pk.rows();
    if (prefix_len > 0) {
      phi_k = tape.param(*guidance.key);
      phi_v = tape.param(*guidance.value);
    }
  }

  const Tensor mask = causal ? causal_mask(queries, prefix_len, keys) : Tensor();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_head));
  std::vector<Var> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t b = h * d_head, e = b + d_head;
    Var qh = ad::slice_cols(q, b, e);
    Var kh = ad::slice_cols(k, b, e);
    Var vh = ad::slice_cols(v, b, e);
    if (prefix_len > 0) {
      Var kp[] = {ad::slice_cols(phi_k, b, e), kh};
      Var vp[] = {ad::slice_cols(phi_v, b, e), vh};
      kh = ad::concat(kp, Axis::kRows);
      vh = ad::concat(vp, Axis::kRows);
    }
    Var scores = ad::scale(ad::matmul_nt(qh, kh), inv_sqrt);
    if (causal) scores = ad::masked_fill(scores, mask);
    heads.push_back(ad::matmul(ad::softmax_rows(scores), vh));
  }
  Var merged = n_heads == 1 ? heads[0] : ad::concat(heads, Axis::kCols);
  Var out = project(tape, merged, w.wo, w.bo);
  return ad::layer_norm(ad::add(x, out), tape.param(*ln.gain), tape.param(*ln.bias));
}

Backbone::Backbone(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  if (config_.vocab_size < 3) throw Error("BAD_CONFIG", "vocab_size must cover the special tokens");
  const std::size_t d = config_.d_model;
  const std::size_t f = config_.ffn_dim;
  Initializer init(store_, seed, config_.init_std);

  const double embed_scale = config_.embed_init_std > 0.0 ? config_.embed_init_std / config_.init_std : 1.0;
  token_embed_ = init.normal("embed.tokens", config_.vocab_size, d, embed_scale);
  enc_positions_ = init.normal("embed.enc_positions", config_.max_len, d);
  dec_positions_ = init.normal("embed.dec_positions", config_.max_len, d);
  enc_embed_ln_ = make_ln(init, "embed.enc_ln", d);
  dec_embed_ln_ = make_ln(init, "embed.dec_ln", d);

  for (std::size_t l = 0; l < config_.enc_layers; ++l) {
    const std::string p = "encoder.layer" + std::to_string(l);
    EncoderLayer layer;
    layer.self_attn = make_attention(init, p + ".self_attn", d);
    layer.self_ln = make_ln(init, p + ".self_ln", d);
    layer.ffn = make_ffn(init, p + ".ffn", d, f);
    layer.ffn_ln = make_ln(init, p + ".ffn_ln", d);
    encoder_.push_back(layer);
  }
  for (std::size_t l = 0; l < config_.dec_layers; ++l) {
    const std::string p = "decoder.layer" + std::to_string(l);
    DecoderLayer layer;
    layer.self_attn = make_attention(init, p + ".self_attn", d);
    layer.self_ln = make_ln(init, p + ".self_ln", d);
    layer.cross_attn = make_attention(init, p + ".cross_attn", d);
    layer.cross_ln = make_ln(init, p + ".cross_ln", d);
    layer.ffn = make_ffn(init, p + ".ffn", d, f);
    layer.ffn_ln = make_ln(init, p + ".ffn_ln", d);
    decoder_.push_back(layer);
  }

  guided_enc_ = select_guided_layers(config_.guidance_layers, config_.enc_layers);
  guided_dec_ = select_guided_layers(config_.guidance_layers, config_.dec_layers);
  if (config_.prompt_len > 0) {
    for (std::size_t l : guided_enc_) {
      const std::string p = std::string(kGuidancePrefix) + "encoder.layer" + std::to_string(l);
      encoder_[l].guidance = {init.normal(p + ".key", config_.prompt_len, d),
                              init.normal(p + ".value", config_.prompt_len, d)};
    }
    for (std::size_t l : guided_dec_) {
      const std::string p = std::string(kGuidancePrefix) + "decoder.layer" + std::to_string(l);
      decoder_[l].guidance = {init.normal(p + ".key", config_.prompt_len, d),
                              init.normal(p + ".value", config_.prompt_len, d)};
    }
  } else {
    guided_enc_.clear();
    guided_dec_.clear();
  }
}

std::vector<Parameter*> Backbone::guidance_parameters() {
  std::vector<Parameter*> out;
  for (auto& l : encoder_)
    if (l.guidance.present()) out.insert(out.end(), {l.guidance.key, l.guidance.value});
  for (auto& l : decoder_)
    if (l.guidance.present()) out.insert(out.end(), {l.guidance.key, l.guidance.value});
  return out;
}

void Backbone::reinitialize_guidance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, config_.init_std);
  for (Parameter* p : guidance_parameters())
    for (double& v : p->value.values()) v = normal(rng);
}

Var Backbone::embed(Tape& tape, std::span<const std::size_t> ids) {
  return ad::gather_rows(tape.param(*token_embed_), ids);
}

Var Backbone::add_positions(Tape& tape, Parameter& table, const LayerNormWeights& ln, Var x) const {
  const std::size_t n = x.value().rows();
  std::vector<std::size_t> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = i;
  Var pos = ad::gather_rows(tape.param(table), positions);
  return ad::layer_norm(ad::add(x, pos), tape.param(*ln.gain), tape.param(*ln.bias));
}

Var Backbone::feed_forward(Tape& tape, const FeedForwardWeights& w, const LayerNormWeights& ln, Var x) const {
  Var hidden = project(tape, x, w.w1, w.b1);
  hidden = config_.activation == Activation::kGelu ? ad::gelu(hidden) : ad::tanh(hidden);
  Var out = project(tape, hidden, w.w2, w.b2);
  return ad::layer_norm(ad::add(x, out), tape.param(*ln.gain), tape.param(*ln.bias));
}

Var Backbone::encode(Tape& tape, std::span<const std::size_t> tokens) {
  if (tokens.empty()) throw Error("EMPTY_INPUT", "cannot encode an empty token sequence");
  if (tokens.size() > config_.max_len)
    throw Error("SEQUENCE_TOO_LONG", "input of " + std::to_string(tokens.size()) + " tokens exceeds max_len " +
                                         std::to_string(config_.max_len));
  Var x = add_positions(tape, *enc_positions_, enc_embed_ln_, embed(tape, tokens));
  for (const EncoderLayer& layer : encoder_) {
    x = attention_block(tape, layer.self_attn, layer.self_ln, x, x, layer.guidance, false, config_.n_heads);
    x = feed_forward(tape, layer.ffn, layer.ffn_ln, x);
  }
  return x;
}

Var Backbone::decode(Tape& tape, Var encoder_states, Var inputs) {
  const std::size_t t = inputs.value().rows();
  if (t == 0) throw Error("EMPTY_INPUT", "decoder needs at least the start token");
  if (t > config_.max_len)
    throw Error("SEQUENCE_TOO_LONG", "decoder prefix of " + std::to_string(t) + " tokens exceeds max_len " +
                                         std::to_string(config_.max_len));
  if (encoder_states.value().cols() != config_.d_model)
    throw Error("SHAPE_MISMATCH", "encoder states " + encoder_states.value().shape_string() +
                                      " do not match d_model " + std::to_string(config_.d_model));
  Var x = add_positions(tape, *dec_positions_, dec_embed_ln_, inputs);
  for (const DecoderLayer& layer : decoder_) {
    x = attention_block(tape, layer.self_attn, layer.self_ln, x, x, layer.guidance, true, config_.n_heads);
    x = attention_block(tape, layer.cross_attn, layer.cross_ln, x, encoder_states, GuidancePrefix{}, false,
                        config_.n_heads);
    x = feed_forward(tape, layer.ffn, layer.ffn_ln, x);
  }
  return x;
}

Tensor Backbone::decode_step(std::span<const std::size_t> source, std::span<const std::size_t> prev_tokens) {
  if (prev_tokens.empty() || prev_tokens.front() != 0)
    throw Error("BAD_PREFIX", "decoder prefix must begin with the start token");
  Tape tape(Tape::Mode::kInference);
  Var h = decode(tape, encode(tape, source), embed(tape, prev_tokens));
  const std::size_t t = h.value().rows();
  return ad::slice_rows(h, t - 1, t).value();
}

}  // namespace lightner
