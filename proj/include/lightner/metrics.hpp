#pragma once

// Exact-match span evaluation: a predicted span is correct only when start,
// end and category all equal a gold span. Counts are micro-averaged.

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lightner/data.hpp"

namespace lightner {

class NerModel;

struct PrfCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  double precision() const noexcept;
  double recall() const noexcept;
  double f1() const noexcept;  // 0 when precision + recall is 0
};

struct MetricsReport {
  static constexpr int kSchemaVersion = 1;

  PrfCounts total;
  std::map<std::string, PrfCounts> per_category;
  std::size_t sentences = 0;
  std::size_t malformed = 0;   // orphan categories + dangling pointer groups
  std::size_t truncated = 0;   // decodes that hit the step limit
  std::uint64_t seed = 0;
  std::string config_digest;

  double precision() const noexcept { return total.precision(); }
  double recall() const noexcept { return total.recall(); }
  double f1() const noexcept { return total.f1(); }
};

using SpanLists = std::vector<std::vector<EntitySpan>>;

// Duplicate predictions inside a sentence count once. Throws
// EVAL_LENGTH_MISMATCH when the lists differ in length.
MetricsReport evaluate(const SpanLists& gold, const SpanLists& predicted);
MetricsReport evaluate(const Corpus& gold, const SpanLists& predicted);

struct Predictions {
  SpanLists spans;
  std::size_t malformed = 0;
  std::size_t truncated = 0;
};

Predictions predict_corpus(NerModel& model, const Corpus& corpus);

// Decodes `corpus` and scores it, carrying the malformed/truncated counts.
MetricsReport evaluate_model(NerModel& model, const Corpus& corpus);

std::string metrics_json(const MetricsReport& report);

struct CsvRow {
  std::uint64_t seed = 0;
  std::size_t k_shot = 0;
  std::string source;
  std::string target;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline constexpr const char* kCsvHeader = "seed,k_shot,source,target,P,R,F1";
std::string csv_line(const CsvRow& row);

}  // namespace lightner
