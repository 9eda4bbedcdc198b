#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace lightner {

// 1-based inclusive token positions.
struct EntitySpan {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string category;

  friend auto operator<=>(const EntitySpan&, const EntitySpan&) = default;
};

struct AnnotatedSentence {
  std::vector<std::string> tokens;
  std::vector<EntitySpan> spans;

  friend bool operator==(const AnnotatedSentence&, const AnnotatedSentence&) = default;
};

enum class CorpusRole { kSource, kTarget };

struct Corpus {
  std::vector<AnnotatedSentence> sentences;
  std::vector<std::string> label_set;  // sorted, unique
  CorpusRole role = CorpusRole::kTarget;

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

// Sorted unique categories used by the sentences.
std::vector<std::string> infer_label_set(const std::vector<AnnotatedSentence>& sentences);

struct BioConversion {
  std::vector<EntitySpan> spans;
  std::size_t repairs = 0;  // I-X tags that had to open a new span
};

// Tags are O, B-X or I-X. An I-X after O, at the start, or after a span of a
// different category is treated as B-X and counted. Throws BAD_TAG otherwise.
BioConversion bio_to_spans(const std::vector<std::string>& tags);

// Throws SPAN_OUT_OF_RANGE / OVERLAPPING_SPANS.
std::vector<std::string> spans_to_bio(const std::vector<EntitySpan>& spans, std::size_t n);

struct ColumnFile {
  Corpus corpus;
  std::size_t repairs = 0;
};

// Column format: first column token, last column BIO tag, blank line between
// sentences. Lines of one column are rejected with their line number
// (MALFORMED_LINE).
ColumnFile parse_column_text(std::string_view text);
ColumnFile read_column_file(const std::string& path);
std::string format_column_text(const Corpus& corpus);
void write_column_file(const std::string& path, const Corpus& corpus);

// Splits category names on '_' and '.' into lowercase label words, dropping
// empty pieces. A name with no usable piece maps to itself, lowercased.
std::map<std::string, std::vector<std::string>> build_verbalizer_mapping(const std::vector<std::string>& label_set);

// Union of all label words in first-seen order.
std::vector<std::string> verbalizer_words(const std::map<std::string, std::vector<std::string>>& mapping);

}  // namespace lightner
