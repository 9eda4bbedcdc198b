#pragma once

// On-disk artifacts. Every file is one container:
//
//   8-byte magic | u32 version | u64 header length | JSON header
//   | u64 value count | little-endian IEEE-754 doubles | SHA-256 of all prior bytes
//
// The header alone determines the payload layout. A short or altered file
// fails the digest check (CHECKSUM_MISMATCH).

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lightner/config.hpp"
#include "lightner/lc_head.hpp"
#include "lightner/ner_model.hpp"

namespace lightner {

std::string sha256_hex(std::string_view bytes);

// "field: stored X, requested Y" for every differing ModelConfig field.
std::vector<std::string> config_diff(const ModelConfig& stored, const ModelConfig& requested);

// Throws CONFIG_MISMATCH listing config_diff when the two differ.
void require_same_config(const ModelConfig& stored, const ModelConfig& requested);

// ---- checkpoints -----------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  NerModel model;
  std::uint64_t seed = 0;
  std::string backbone_digest;  // as recorded in the header
};

// SHA-256 over the names, shapes and values of every backbone parameter
// except the guidance prefixes: the part guidance tuning must not change.
std::string backbone_digest(NerModel& model);

std::string serialize_checkpoint(NerModel& model, std::uint64_t seed);
Checkpoint parse_checkpoint(std::string_view bytes);
void save_checkpoint(const std::string& path, NerModel& model, std::uint64_t seed);
Checkpoint load_checkpoint(const std::string& path);

// ---- prompt files ----------------------------------------------------------

inline constexpr std::uint32_t kPromptVersion = 1;

// A self-contained task adapter: the guidance prefixes of every guided layer
// plus the verbalizer that scores the categories.
struct PromptFile {
  std::size_t d_model = 0;
  std::size_t prompt_len = 0;
  std::vector<std::size_t> encoder_layers;
  std::vector<std::size_t> decoder_layers;
  std::vector<std::string> categories;
  std::vector<std::vector<std::string>> label_words;  // per category
  BetaPolicy policy = BetaPolicy::kLearned;
  std::vector<Tensor> encoder_keys, encoder_values;  // per guided encoder layer, |P| x d
  std::vector<Tensor> decoder_keys, decoder_values;
  std::vector<Tensor> raw;  // per category, 1 x |V_c|

  friend bool operator==(const PromptFile&, const PromptFile&) = default;
};

PromptFile extract_prompt(NerModel& model);

// Installs the prefixes and rebuilds the verbalizer. Throws PROMPT_MISMATCH
// with a field diff when d, |P| or the guided layers differ from the model's.
void apply_prompt(NerModel& model, const PromptFile& prompt);

std::string serialize_prompt(const PromptFile& prompt);
PromptFile parse_prompt(std::string_view bytes);
void save_prompt(const std::string& path, const PromptFile& prompt);
PromptFile load_prompt(const std::string& path);

// Elementwise mean of the prefixes over any number of prompts. Categories are
// the sorted union; the verbalizer becomes uniform. Inputs are summed in a
// canonical order, so the result does not depend on argument order. Throws
// EMPTY_MIX, or MIX_MISMATCH with a field diff.
PromptFile mix_prompts(std::span<const PromptFile> prompts);

// ---- classifier baseline ---------------------------------------------------

inline constexpr std::uint32_t kLcHeadVersion = 1;

std::string serialize_lc_head(const LcHead& head);
void save_lc_head(const std::string& path, const LcHead& head);

// Builds a head for `categories` and loads the stored weights into it.
// Throws LC_SHAPE_MISMATCH when the stored tag set has a different size.
LcHead parse_lc_head(std::string_view bytes, const std::vector<std::string>& categories);
LcHead load_lc_head(const std::string& path, const std::vector<std::string>& categories);

// ---- plain files -----------------------------------------------------------

std::string read_file(const std::string& path);  // IO_ERROR
void write_file(const std::string& path, std::string_view bytes);

}  // namespace lightner
