#pragma once

// Output index space of the pointer head for a sentence of n tokens and m
// categories:
//
//   0          end of sequence
//   1..n       pointer to input token i
//   n+1..n+m   category (n + c for the c-th category, 1-based)
//
// A target sequence lists each entity as (start, end, category) and ends with 0.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lightner/data.hpp"

namespace lightner {

struct IndexSpace {
  std::size_t n = 0;
  std::size_t m = 0;

  static constexpr std::size_t kEos = 0;

  std::size_t size() const noexcept { return n + m + 1; }
  bool is_eos(std::size_t y) const noexcept { return y == kEos; }
  bool is_pointer(std::size_t y) const noexcept { return y >= 1 && y <= n; }
  bool is_category(std::size_t y) const noexcept { return y > n && y <= n + m; }
  // 0-based category slot of a category index.
  std::size_t category_of(std::size_t y) const noexcept { return y - n - 1; }
  std::size_t category_index(std::size_t slot) const noexcept { return n + 1 + slot; }
};

// What the decoder consumes for an emitted index: the embedding of a source
// token (vocabulary id) or the verbalizer representation of a category slot.
struct DecoderInput {
  enum class Kind { kToken, kCategory };
  Kind kind = Kind::kToken;
  std::size_t id = 0;

  friend bool operator==(const DecoderInput&, const DecoderInput&) = default;
};

// `source_ids` are the sentence's vocabulary ids. Throws INDEX_OUT_OF_RANGE for
// 0 or anything past n+m.
DecoderInput convert_index_to_token(std::size_t y, std::span<const std::size_t> source_ids, std::size_t m);

struct DecodedSpans {
  std::vector<EntitySpan> spans;   // emission order, duplicates removed
  std::size_t orphan_categories = 0;  // category index with no pointer before it
  std::size_t dangling_groups = 0;    // pointers left over when the sequence ends
  std::size_t duplicates = 0;

  std::size_t malformed() const noexcept { return orphan_categories + dangling_groups; }
};

// Reads an index sequence back into spans, stopping at the first 0. Each run of
// pointers closed by a category index becomes (min, max, category).
// Throws INDEX_OUT_OF_RANGE for an index past n+m.
DecodedSpans spans_from_indices(std::span<const std::size_t> y, std::size_t n,
                                std::span<const std::string> categories);

// (start, end, n+c) per span ordered by start then end, followed by 0.
// Throws SPAN_OUT_OF_RANGE / UNKNOWN_CATEGORY.
std::vector<std::size_t> indices_from_spans(std::span<const EntitySpan> spans, std::size_t n,
                                            std::span<const std::string> categories);

}  // namespace lightner
