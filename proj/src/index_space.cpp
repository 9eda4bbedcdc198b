#include "lightner/index_space.hpp"

#include <algorithm>

#include "lightner/error.hpp"

namespace lightner {
namespace {

[[noreturn]] void bad_index(std::size_t y, std::size_t n, std::size_t m) {
  throw Error("INDEX_OUT_OF_RANGE", "index " + std::to_string(y) + " outside 0.." + std::to_string(n + m) +
                                        " (n=" + std::to_string(n) + ", m=" + std::to_string(m) + ")");
}

}  // namespace

DecoderInput convert_index_to_token(std::size_t y, std::span<const std::size_t> source_ids, std::size_t m) {
  const IndexSpace space{source_ids.size(), m};
  if (space.is_pointer(y)) return {DecoderInput::Kind::kToken, source_ids[y - 1]};
  if (space.is_category(y)) return {DecoderInput::Kind::kCategory, space.category_of(y)};
  bad_index(y, space.n, m);
}

DecodedSpans spans_from_indices(std::span<const std::size_t> y, std::size_t n,
                                std::span<const std::string> categories) {
  const IndexSpace space{n, categories.size()};
  DecodedSpans out;
  std::vector<std::size_t> e;
  for (std::size_t idx : y) {
    if (idx >= space.size()) bad_index(idx, n, space.m);
    if (space.is_eos(idx)) break;
    if (space.is_pointer(idx)) {
      e.push_back(idx);
      continue;
    }
    if (e.empty()) {
      ++out.orphan_categories;
      continue;
    }
    const auto [lo, hi] = std::minmax_element(e.begin(), e.end());
    EntitySpan span{*lo, *hi, categories[space.category_of(idx)]};
    e.clear();
    if (std::find(out.spans.begin(), out.spans.end(), span) != out.spans.end()) {
      ++out.duplicates;
      continue;
    }
    out.spans.push_back(std::move(span));
  }
  if (!e.empty()) ++out.dangling_groups;
  return out;
}

std::vector<std::size_t> indices_from_spans(std::span<const EntitySpan> spans, std::size_t n,
                                            std::span<const std::string> categories) {
  std::vector<EntitySpan> sorted(spans.begin(), spans.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const EntitySpan& a, const EntitySpan& b) {
    return a.start != b.start ? a.start < b.start : a.end < b.end;
  });
  std::vector<std::size_t> out;
  out.reserve(3 * sorted.size() + 1);
  for (const auto& s : sorted) {
    if (s.start < 1 || s.start > s.end || s.end > n)
      throw Error("SPAN_OUT_OF_RANGE", "span (" + std::to_string(s.start) + ", " + std::to_string(s.end) +
                                           ") outside sentence of " + std::to_string(n) + " tokens");
    const auto it = std::find(categories.begin(), categories.end(), s.category);
    if (it == categories.end()) throw Error("UNKNOWN_CATEGORY", "category '" + s.category + "' not in label set");
    out.push_back(s.start);
    out.push_back(s.end);
    out.push_back(n + 1 + static_cast<std::size_t>(it - categories.begin()));
  }
  out.push_back(IndexSpace::kEos);
  return out;
}

}  // namespace lightner
