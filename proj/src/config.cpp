#include "lightner/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "lightner/error.hpp"

namespace lightner {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw Error("BAD_CONFIG", key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw Error("BAD_CONFIG", key + ": expected a number, got '" + v + "'");
  }
}

}  // namespace

std::vector<std::size_t> select_guided_layers(const LayerRange& range, std::size_t depth) {
  std::vector<std::size_t> out;
  if (range.mode != LayerRange::Mode::kAll && range.k > depth)
    throw Error("BAD_LAYER_RANGE", "layer range " + to_string(range) + " exceeds stack depth " +
                                       std::to_string(depth));
  switch (range.mode) {
    case LayerRange::Mode::kAll:
      for (std::size_t i = 0; i < depth; ++i) out.push_back(i);
      break;
    case LayerRange::Mode::kLowest:
      for (std::size_t i = 0; i < range.k; ++i) out.push_back(i);
      break;
    case LayerRange::Mode::kHighest:
      for (std::size_t i = depth - range.k; i < depth; ++i) out.push_back(i);
      break;
  }
  return out;
}

std::string to_string(const LayerRange& range) {
  switch (range.mode) {
    case LayerRange::Mode::kAll:
      return "all";
    case LayerRange::Mode::kLowest:
      return "lowest:" + std::to_string(range.k);
    case LayerRange::Mode::kHighest:
      return "highest:" + std::to_string(range.k);
  }
  return "all";
}

LayerRange parse_layer_range(std::string_view text) {
  const std::string t = trim(text);
  if (t == "all") return {};
  const auto colon = t.find(':');
  if (colon != std::string::npos) {
    const std::string mode = t.substr(0, colon);
    const std::size_t k = to_size("guidance_layers", t.substr(colon + 1));
    if (mode == "lowest") return {LayerRange::Mode::kLowest, k};
    if (mode == "highest") return {LayerRange::Mode::kHighest, k};
  }
  throw Error("BAD_CONFIG", "guidance_layers: expected all, lowest:K or highest:K, got '" + t + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error("BAD_CONFIG", msg); };
  if (d_model == 0) fail("d_model must be positive");
  if (n_heads == 0 || d_model % n_heads != 0)
    fail("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" + std::to_string(n_heads) + ")");
  if (enc_layers == 0 || dec_layers == 0) fail("enc_layers and dec_layers must be positive");
  if (ffn_dim == 0) fail("ffn_dim must be positive");
  if (max_len == 0) fail("max_len must be positive");
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail("alpha must lie in [0, 1], got " + std::to_string(alpha));
  if (!(init_std > 0.0)) fail("init_std must be positive");
  if (!(embed_init_std >= 0.0)) fail("embed_init_std must be non-negative");
  select_guided_layers(guidance_layers, enc_layers);
  select_guided_layers(guidance_layers, dec_layers);
}

std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos || trim(t.substr(0, eq)).empty())
      throw Error("BAD_CONFIG", "line " + std::to_string(line_no) + ": expected key=value");
    out[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return out;
}

void apply_config(const std::map<std::string, std::string>& values, RunConfig& c) {
  for (const auto& [key, v] : values) {
    if (key == "d_model") c.model.d_model = to_size(key, v);
    else if (key == "n_heads") c.model.n_heads = to_size(key, v);
    else if (key == "enc_layers") c.model.enc_layers = to_size(key, v);
    else if (key == "dec_layers") c.model.dec_layers = to_size(key, v);
    else if (key == "layers") c.model.enc_layers = c.model.dec_layers = to_size(key, v);
    else if (key == "ffn_dim") c.model.ffn_dim = to_size(key, v);
    else if (key == "max_len") c.model.max_len = to_size(key, v);
    else if (key == "prompt_len") c.model.prompt_len = to_size(key, v);
    else if (key == "alpha") c.model.alpha = to_double(key, v);
    else if (key == "guidance_layers") c.model.guidance_layers = parse_layer_range(v);
    else if (key == "init_std") c.model.init_std = to_double(key, v);
    else if (key == "embed_init_std") c.model.embed_init_std = to_double(key, v);
    else if (key == "activation") {
      if (v == "gelu") c.model.activation = Activation::kGelu;
      else if (v == "tanh") c.model.activation = Activation::kTanh;
      else throw Error("BAD_CONFIG", "activation: expected gelu or tanh, got '" + v + "'");
    }
    else if (key == "warmup_fraction") c.optimizer.warmup_fraction = to_double(key, v);
    else if (key == "weight_decay") c.optimizer.weight_decay = to_double(key, v);
    else if (key == "beta1") c.optimizer.beta1 = to_double(key, v);
    else if (key == "beta2") c.optimizer.beta2 = to_double(key, v);
    else if (key == "epsilon") c.optimizer.epsilon = to_double(key, v);
    else if (key == "clip_norm") c.optimizer.clip_norm = to_double(key, v);
    else if (key == "batch_size") c.batch_size = to_size(key, v);
    else if (key == "pretrain_epochs") c.pretrain_epochs = to_size(key, v);
    else if (key == "tune_epochs") c.tune_epochs = to_size(key, v);
    else if (key == "pretrain_lr") c.pretrain_lr = to_double(key, v);
    else if (key == "tune_lr") c.tune_lr = to_double(key, v);
    else if (key == "target_f1") c.target_f1 = to_double(key, v);
    else if (key == "eval_every") c.eval_every = to_size(key, v);
    else if (key == "seed") c.seed = to_size(key, v);
    else throw Error("BAD_CONFIG", "unknown config key '" + key + "'");
  }
  if (c.batch_size == 0) throw Error("BAD_CONFIG", "batch_size must be positive");
  if (c.eval_every == 0) throw Error("BAD_CONFIG", "eval_every must be positive");
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("IO_ERROR", "cannot read config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  RunConfig config;
  apply_config(parse_key_values(buf.str()), config);
  return config;
}

std::string describe(const ModelConfig& c) {
  std::ostringstream s;
  s.precision(17);
  s << "d_model=" << c.d_model << ";n_heads=" << c.n_heads << ";enc_layers=" << c.enc_layers
    << ";dec_layers=" << c.dec_layers << ";ffn_dim=" << c.ffn_dim << ";vocab_size=" << c.vocab_size
    << ";max_len=" << c.max_len << ";prompt_len=" << c.prompt_len << ";alpha=" << c.alpha
    << ";guidance_layers=" << to_string(c.guidance_layers)
    << ";activation=" << (c.activation == Activation::kGelu ? "gelu" : "tanh") << ";init_std=" << c.init_std
    << ";embed_init_std=" << c.embed_init_std;
  return s.str();
}

}  // namespace lightner
