#include "lightner/persist.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include <json.hpp>

#include "lightner/backbone.hpp"
#include "lightner/data.hpp"
#include "lightner/error.hpp"

namespace lightner {
namespace {

using json = nlohmann::ordered_json;

constexpr std::string_view kCheckpointMagic{"LNRCKPT\0", 8};
constexpr std::string_view kPromptMagic{"LNRPRMT\0", 8};
constexpr std::string_view kLcMagic{"LNRLCHD\0", 8};
constexpr std::size_t kDigestBytes = 32;

std::string sha256_raw(std::string_view bytes) {
  unsigned char out[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), out, &len, EVP_sha256(), nullptr) != 1)
    throw Error("HASH_ERROR", "SHA-256 computation failed");
  return std::string(reinterpret_cast<const char*>(out), len);
}

std::string hex(std::string_view raw) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  for (unsigned char c : raw) {
    out.push_back(digits[c >> 4]);
    out.push_back(digits[c & 15]);
  }
  return out;
}

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::string_view in, std::size_t at) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

void put_doubles(std::string& out, std::span<const double> values) {
  for (double v : values) put_le(out, std::bit_cast<std::uint64_t>(v));
}

std::string container(std::string_view magic, std::uint32_t version, const json& header,
                      const std::vector<double>& payload) {
  std::string out(magic);
  put_le(out, version);
  const std::string h = header.dump();
  put_le(out, static_cast<std::uint64_t>(h.size()));
  out += h;
  put_le(out, static_cast<std::uint64_t>(payload.size()));
  put_doubles(out, payload);
  out += sha256_raw(out);
  return out;
}

struct Unpacked {
  json header;
  std::vector<double> payload;
};

Unpacked open_container(std::string_view bytes, std::string_view magic, std::uint32_t version, const char* kind) {
  if (bytes.size() < magic.size() || bytes.substr(0, magic.size()) != magic)
    throw Error("BAD_MAGIC", std::string("not a ") + kind + " file");
  auto truncated = [&] { return Error("CHECKSUM_MISMATCH", std::string(kind) + " file is truncated"); };
  std::size_t at = magic.size();
  if (bytes.size() < at + 4) throw truncated();
  const auto found = get_le<std::uint32_t>(bytes, at);
  if (found != version)
    throw Error("VERSION_MISMATCH", std::string(kind) + " format version " + std::to_string(found) +
                                        ", this build reads version " + std::to_string(version));
  at += 4;
  if (bytes.size() < at + 8) throw truncated();
  const auto header_len = get_le<std::uint64_t>(bytes, at);
  at += 8;
  if (bytes.size() - at < header_len + 8) throw truncated();
  const std::string_view header = bytes.substr(at, header_len);
  at += header_len;
  const auto count = get_le<std::uint64_t>(bytes, at);
  at += 8;
  if ((bytes.size() - at) / 8 < count || bytes.size() - at - count * 8 < kDigestBytes) throw truncated();
  const std::size_t end = at + count * 8;
  if (bytes.size() != end + kDigestBytes)
    throw Error("CHECKSUM_MISMATCH", std::string(kind) + " file has trailing bytes");
  if (sha256_raw(bytes.substr(0, end)) != bytes.substr(end))
    throw Error("CHECKSUM_MISMATCH", std::string(kind) + " file digest does not match its contents");

  Unpacked out;
  try {
    out.header = json::parse(header);
  } catch (const json::exception& e) {
    throw Error("BAD_HEADER", std::string(kind) + " header is not valid JSON: " + e.what());
  }
  out.payload.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.payload.push_back(std::bit_cast<double>(get_le<std::uint64_t>(bytes, at + 8 * i)));
  return out;
}

// Reads consecutive tensors off a payload.
class PayloadReader {
 public:
  explicit PayloadReader(const std::vector<double>& values) : values_(values) {}
  Tensor take(std::vector<std::size_t> shape) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    if (values_.size() - pos_ < n) throw Error("BAD_HEADER", "header describes more values than the payload holds");
    Tensor t(std::move(shape), std::vector<double>(values_.begin() + pos_, values_.begin() + pos_ + n));
    pos_ += n;
    return t;
  }
  void finish() const {
    if (pos_ != values_.size()) throw Error("BAD_HEADER", "payload holds values the header does not describe");
  }

 private:
  const std::vector<double>& values_;
  std::size_t pos_ = 0;
};

template <typename T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) throw Error("BAD_HEADER", std::string("header lacks field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error("BAD_HEADER", std::string("header field '") + key + "' has the wrong type");
  }
}

json config_json(const ModelConfig& c) {
  return json{{"d_model", c.d_model},
              {"n_heads", c.n_heads},
              {"enc_layers", c.enc_layers},
              {"dec_layers", c.dec_layers},
              {"ffn_dim", c.ffn_dim},
              {"vocab_size", c.vocab_size},
              {"max_len", c.max_len},
              {"prompt_len", c.prompt_len},
              {"alpha", c.alpha},
              {"guidance_layers", to_string(c.guidance_layers)},
              {"activation", c.activation == Activation::kGelu ? "gelu" : "tanh"},
              {"init_std", c.init_std},
              {"embed_init_std", c.embed_init_std}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.d_model = field<std::size_t>(j, "d_model");
  c.n_heads = field<std::size_t>(j, "n_heads");
  c.enc_layers = field<std::size_t>(j, "enc_layers");
  c.dec_layers = field<std::size_t>(j, "dec_layers");
  c.ffn_dim = field<std::size_t>(j, "ffn_dim");
  c.vocab_size = field<std::size_t>(j, "vocab_size");
  c.max_len = field<std::size_t>(j, "max_len");
  c.prompt_len = field<std::size_t>(j, "prompt_len");
  c.alpha = field<double>(j, "alpha");
  c.guidance_layers = parse_layer_range(field<std::string>(j, "guidance_layers"));
  const auto act = field<std::string>(j, "activation");
  if (act != "gelu" && act != "tanh") throw Error("BAD_HEADER", "unknown activation '" + act + "'");
  c.activation = act == "gelu" ? Activation::kGelu : Activation::kTanh;
  c.init_std = field<double>(j, "init_std");
  c.embed_init_std = field<double>(j, "embed_init_std");
  return c;
}

std::string render(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

std::vector<Parameter*> frozen_backbone(NerModel& model) {
  std::vector<Parameter*> out;
  for (Parameter* p : model.backbone().params().all())
    if (!is_guidance_parameter(p->name)) out.push_back(p);
  return out;
}

std::string field_diff_message(const std::string& what, const std::vector<std::string>& diffs) {
  std::string msg = what;
  for (std::size_t i = 0; i < diffs.size(); ++i) msg += (i ? "; " : ": ") + diffs[i];
  return msg;
}

}  // namespace

std::string sha256_hex(std::string_view bytes) { return hex(sha256_raw(bytes)); }

std::vector<std::string> config_diff(const ModelConfig& stored, const ModelConfig& requested) {
  const json a = config_json(stored), b = config_json(requested);
  std::vector<std::string> out;
  for (const auto& [key, value] : a.items())
    if (value != b.at(key)) out.push_back(key + ": stored " + render(value) + ", requested " + render(b.at(key)));
  return out;
}

void require_same_config(const ModelConfig& stored, const ModelConfig& requested) {
  const auto diffs = config_diff(stored, requested);
  if (!diffs.empty()) throw Error("CONFIG_MISMATCH", field_diff_message("model config differs", diffs));
}

std::string backbone_digest(NerModel& model) {
  std::string bytes;
  for (const Parameter* p : frozen_backbone(model)) {
    bytes += p->name;
    bytes.push_back('\0');
    for (auto s : p->value.shape()) put_le(bytes, static_cast<std::uint64_t>(s));
    put_doubles(bytes, p->value.values());
  }
  return sha256_hex(bytes);
}

// ---- checkpoints -----------------------------------------------------------

std::string serialize_checkpoint(NerModel& model, std::uint64_t seed) {
  json header;
  header["kind"] = "lightner-checkpoint";
  header["seed"] = seed;
  header["model"] = config_json(model.config());
  header["vocab"] = model.vocab().words();
  header["categories"] = model.categories();
  header["beta_policy"] = to_string(model.verbalizer().policy());
  header["backbone_sha256"] = backbone_digest(model);
  json params = json::array();
  std::vector<double> payload;
  for (const Parameter* p : model.parameters()) {
    params.push_back(json{{"name", p->name}, {"shape", p->value.shape()}});
    payload.insert(payload.end(), p->value.values().begin(), p->value.values().end());
  }
  header["parameters"] = params;
  return container(kCheckpointMagic, kCheckpointVersion, header, payload);
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  const Unpacked u = open_container(bytes, kCheckpointMagic, kCheckpointVersion, "checkpoint");
  const json& h = u.header;
  const ModelConfig config = config_from_json(field<json>(h, "model"));
  Vocab vocab = Vocab::from_words(field<std::vector<std::string>>(h, "vocab"));
  if (vocab.size() != config.vocab_size)
    throw Error("BAD_HEADER", "vocabulary has " + std::to_string(vocab.size()) + " words, config says " +
                                  std::to_string(config.vocab_size));
  const auto seed = field<std::uint64_t>(h, "seed");
  NerModel model(config, std::move(vocab), field<std::vector<std::string>>(h, "categories"), seed,
                 parse_beta_policy(field<std::string>(h, "beta_policy")));

  std::map<std::string, Parameter*> by_name;
  for (Parameter* p : model.parameters()) by_name[p->name] = p;
  PayloadReader reader(u.payload);
  std::set<std::string> seen;
  for (const json& entry : field<json>(h, "parameters")) {
    const auto name = field<std::string>(entry, "name");
    const auto shape = field<std::vector<std::size_t>>(entry, "shape");
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw Error("CHECKPOINT_MISMATCH", "checkpoint has unknown parameter " + name);
    Tensor value = reader.take(shape);
    if (!value.same_shape(it->second->value))
      throw Error("CHECKPOINT_MISMATCH", name + ": stored " + value.shape_string() + ", model expects " +
                                             it->second->value.shape_string());
    it->second->value = std::move(value);
    seen.insert(name);
  }
  reader.finish();
  for (const auto& [name, p] : by_name)
    if (!seen.contains(name)) throw Error("CHECKPOINT_MISMATCH", "checkpoint lacks parameter " + name);

  Checkpoint out{std::move(model), seed, field<std::string>(h, "backbone_sha256")};
  if (backbone_digest(out.model) != out.backbone_digest)
    throw Error("CHECKSUM_MISMATCH", "backbone section digest does not match the header");
  return out;
}

void save_checkpoint(const std::string& path, NerModel& model, std::uint64_t seed) {
  write_file(path, serialize_checkpoint(model, seed));
}

Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(read_file(path)); }

// ---- prompt files ----------------------------------------------------------

PromptFile extract_prompt(NerModel& model) {
  const Backbone& bb = model.backbone();
  PromptFile p;
  p.d_model = model.config().d_model;
  p.prompt_len = model.config().prompt_len;
  p.encoder_layers = bb.guided_encoder_layers();
  p.decoder_layers = bb.guided_decoder_layers();
  for (std::size_t l : p.encoder_layers) {
    p.encoder_keys.push_back(bb.encoder_layers()[l].guidance.key->value);
    p.encoder_values.push_back(bb.encoder_layers()[l].guidance.value->value);
  }
  for (std::size_t l : p.decoder_layers) {
    p.decoder_keys.push_back(bb.decoder_layers()[l].guidance.key->value);
    p.decoder_values.push_back(bb.decoder_layers()[l].guidance.value->value);
  }
  p.policy = model.verbalizer().policy();
  for (const auto& e : model.verbalizer().entries()) {
    p.categories.push_back(e.category);
    p.label_words.push_back(e.words);
    p.raw.push_back(e.raw->value);
  }
  return p;
}

namespace {

std::vector<std::string> prompt_shape_diff(const PromptFile& a, const PromptFile& b, const char* left,
                                           const char* right) {
  auto layers = [](const std::vector<std::size_t>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s + "]";
  };
  std::vector<std::string> out;
  auto add = [&](const char* name, const std::string& x, const std::string& y) {
    if (x != y) out.push_back(std::string(name) + ": " + left + " " + x + ", " + right + " " + y);
  };
  add("d_model", std::to_string(a.d_model), std::to_string(b.d_model));
  add("prompt_len", std::to_string(a.prompt_len), std::to_string(b.prompt_len));
  add("encoder_layers", layers(a.encoder_layers), layers(b.encoder_layers));
  add("decoder_layers", layers(a.decoder_layers), layers(b.decoder_layers));
  return out;
}

void validate_prompt(const PromptFile& p) {
  const std::size_t ne = p.encoder_layers.size(), nd = p.decoder_layers.size();
  bool ok = p.encoder_keys.size() == ne && p.encoder_values.size() == ne && p.decoder_keys.size() == nd &&
            p.decoder_values.size() == nd && p.raw.size() == p.categories.size() &&
            p.label_words.size() == p.categories.size();
  const std::vector<std::size_t> shape{p.prompt_len, p.d_model};
  for (const auto* group : {&p.encoder_keys, &p.encoder_values, &p.decoder_keys, &p.decoder_values})
    for (const Tensor& t : *group) ok = ok && t.shape() == shape;
  for (std::size_t c = 0; ok && c < p.raw.size(); ++c)
    ok = p.raw[c].shape() == std::vector<std::size_t>{1, p.label_words[c].size()};
  if (!ok) throw Error("BAD_PROMPT", "prompt tensors do not match its header");
}

}  // namespace

void apply_prompt(NerModel& model, const PromptFile& prompt) {
  validate_prompt(prompt);
  const auto diffs = prompt_shape_diff(prompt, extract_prompt(model), "prompt", "model");
  if (!diffs.empty()) throw Error("PROMPT_MISMATCH", field_diff_message("prompt does not fit the model", diffs));
  Backbone& bb = model.backbone();
  for (std::size_t i = 0; i < prompt.encoder_layers.size(); ++i) {
    const auto& g = bb.encoder_layers()[prompt.encoder_layers[i]].guidance;
    g.key->value = prompt.encoder_keys[i];
    g.value->value = prompt.encoder_values[i];
  }
  for (std::size_t i = 0; i < prompt.decoder_layers.size(); ++i) {
    const auto& g = bb.decoder_layers()[prompt.decoder_layers[i]].guidance;
    g.key->value = prompt.decoder_keys[i];
    g.value->value = prompt.decoder_values[i];
  }
  model.set_categories(prompt.categories, prompt.policy);
  const auto& entries = model.verbalizer().entries();
  for (std::size_t c = 0; c < entries.size(); ++c) {
    if (entries[c].words != prompt.label_words[c])
      throw Error("PROMPT_MISMATCH", "label words for " + prompt.categories[c] + " differ from the verbalizer mapping");
    entries[c].raw->value = prompt.raw[c];
  }
}

std::string serialize_prompt(const PromptFile& p) {
  validate_prompt(p);
  json header;
  header["kind"] = "lightner-prompt";
  header["d_model"] = p.d_model;
  header["prompt_len"] = p.prompt_len;
  header["encoder_layers"] = p.encoder_layers;
  header["decoder_layers"] = p.decoder_layers;
  header["categories"] = p.categories;
  header["label_words"] = p.label_words;
  header["beta_policy"] = to_string(p.policy);
  std::vector<double> payload;
  auto append = [&](const Tensor& t) { payload.insert(payload.end(), t.values().begin(), t.values().end()); };
  for (std::size_t i = 0; i < p.encoder_layers.size(); ++i) {
    append(p.encoder_keys[i]);
    append(p.encoder_values[i]);
  }
  for (std::size_t i = 0; i < p.decoder_layers.size(); ++i) {
    append(p.decoder_keys[i]);
    append(p.decoder_values[i]);
  }
  for (const Tensor& t : p.raw) append(t);
  return container(kPromptMagic, kPromptVersion, header, payload);
}

PromptFile parse_prompt(std::string_view bytes) {
  const Unpacked u = open_container(bytes, kPromptMagic, kPromptVersion, "prompt");
  const json& h = u.header;
  PromptFile p;
  p.d_model = field<std::size_t>(h, "d_model");
  p.prompt_len = field<std::size_t>(h, "prompt_len");
  p.encoder_layers = field<std::vector<std::size_t>>(h, "encoder_layers");
  p.decoder_layers = field<std::vector<std::size_t>>(h, "decoder_layers");
  p.categories = field<std::vector<std::string>>(h, "categories");
  p.label_words = field<std::vector<std::vector<std::string>>>(h, "label_words");
  p.policy = parse_beta_policy(field<std::string>(h, "beta_policy"));
  if (p.label_words.size() != p.categories.size()) throw Error("BAD_HEADER", "one label-word list per category");
  PayloadReader reader(u.payload);
  for (std::size_t i = 0; i < p.encoder_layers.size(); ++i) {
    p.encoder_keys.push_back(reader.take({p.prompt_len, p.d_model}));
    p.encoder_values.push_back(reader.take({p.prompt_len, p.d_model}));
  }
  for (std::size_t i = 0; i < p.decoder_layers.size(); ++i) {
    p.decoder_keys.push_back(reader.take({p.prompt_len, p.d_model}));
    p.decoder_values.push_back(reader.take({p.prompt_len, p.d_model}));
  }
  for (const auto& words : p.label_words) p.raw.push_back(reader.take({1, words.size()}));
  reader.finish();
  return p;
}

void save_prompt(const std::string& path, const PromptFile& prompt) { write_file(path, serialize_prompt(prompt)); }

PromptFile load_prompt(const std::string& path) { return parse_prompt(read_file(path)); }

PromptFile mix_prompts(std::span<const PromptFile> prompts) {
  if (prompts.empty()) throw Error("EMPTY_MIX", "mix needs at least one prompt");
  for (const auto& p : prompts) validate_prompt(p);
  for (std::size_t i = 1; i < prompts.size(); ++i) {
    const auto diffs = prompt_shape_diff(prompts[0], prompts[i], "first", ("input " + std::to_string(i + 1)).c_str());
    if (!diffs.empty()) throw Error("MIX_MISMATCH", field_diff_message("prompts disagree", diffs));
  }
  std::vector<std::size_t> order(prompts.size());
  {
    std::vector<std::string> keys;
    for (const auto& p : prompts) keys.push_back(serialize_prompt(p));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
  }
  const double count = static_cast<double>(prompts.size());
  auto mean = [&](auto member, std::size_t i) {
    Tensor out = (prompts[order[0]].*member)[i];
    for (std::size_t k = 1; k < order.size(); ++k) {
      const Tensor& t = (prompts[order[k]].*member)[i];
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += t[j];
    }
    for (double& v : out.values()) v /= count;
    return out;
  };

  const PromptFile& first = prompts[0];
  PromptFile out;
  out.d_model = first.d_model;
  out.prompt_len = first.prompt_len;
  out.encoder_layers = first.encoder_layers;
  out.decoder_layers = first.decoder_layers;
  for (std::size_t i = 0; i < first.encoder_layers.size(); ++i) {
    out.encoder_keys.push_back(mean(&PromptFile::encoder_keys, i));
    out.encoder_values.push_back(mean(&PromptFile::encoder_values, i));
  }
  for (std::size_t i = 0; i < first.decoder_layers.size(); ++i) {
    out.decoder_keys.push_back(mean(&PromptFile::decoder_keys, i));
    out.decoder_values.push_back(mean(&PromptFile::decoder_values, i));
  }
  std::set<std::string> categories;
  for (const auto& p : prompts) categories.insert(p.categories.begin(), p.categories.end());
  out.categories.assign(categories.begin(), categories.end());
  const auto mapping = build_verbalizer_mapping(out.categories);
  out.policy = BetaPolicy::kUniform;
  for (const auto& c : out.categories) {
    out.label_words.push_back(mapping.at(c));
    out.raw.emplace_back(std::vector<std::size_t>{1, mapping.at(c).size()}, 0.0);
  }
  return out;
}

// ---- classifier baseline ---------------------------------------------------

std::string serialize_lc_head(const LcHead& head) {
  json header;
  header["kind"] = "lightner-lc-head";
  header["categories"] = head.categories();
  header["tags"] = head.tags();
  header["weight_shape"] = head.weight().value.shape();
  header["bias_shape"] = head.bias().value.shape();
  std::vector<double> payload(head.weight().value.values().begin(), head.weight().value.values().end());
  payload.insert(payload.end(), head.bias().value.values().begin(), head.bias().value.values().end());
  return container(kLcMagic, kLcHeadVersion, header, payload);
}

void save_lc_head(const std::string& path, const LcHead& head) { write_file(path, serialize_lc_head(head)); }

LcHead parse_lc_head(std::string_view bytes, const std::vector<std::string>& categories) {
  const Unpacked u = open_container(bytes, kLcMagic, kLcHeadVersion, "classifier");
  PayloadReader reader(u.payload);
  Tensor weight = reader.take(field<std::vector<std::size_t>>(u.header, "weight_shape"));
  Tensor bias = reader.take(field<std::vector<std::size_t>>(u.header, "bias_shape"));
  reader.finish();
  LcHead head(categories, weight.rows(), 0);
  head.load_state(weight, bias);
  return head;
}

LcHead load_lc_head(const std::string& path, const std::vector<std::string>& categories) {
  return parse_lc_head(read_file(path), categories);
}

// ---- plain files -----------------------------------------------------------

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("IO_ERROR", "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("IO_ERROR", "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("IO_ERROR", "write failed for " + path);
}

}  // namespace lightner
