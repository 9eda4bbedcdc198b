#include "lightner/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include <json.hpp>

#include "lightner/error.hpp"
#include "lightner/ner_model.hpp"

namespace lightner {

double PrfCounts::precision() const noexcept { return tp + fp == 0 ? 0.0 : double(tp) / double(tp + fp); }
double PrfCounts::recall() const noexcept { return tp + fn == 0 ? 0.0 : double(tp) / double(tp + fn); }
double PrfCounts::f1() const noexcept {
  const double p = precision(), r = recall();
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

MetricsReport evaluate(const SpanLists& gold, const SpanLists& predicted) {
  if (gold.size() != predicted.size())
    throw Error("EVAL_LENGTH_MISMATCH", "gold has " + std::to_string(gold.size()) + " sentences, predictions have " +
                                            std::to_string(predicted.size()));
  MetricsReport report;
  report.sentences = gold.size();
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const std::set<EntitySpan> g(gold[i].begin(), gold[i].end());
    const std::set<EntitySpan> p(predicted[i].begin(), predicted[i].end());
    for (const auto& s : p) {
      auto& cat = report.per_category[s.category];
      if (g.contains(s)) {
        ++report.total.tp;
        ++cat.tp;
      } else {
        ++report.total.fp;
        ++cat.fp;
      }
    }
    for (const auto& s : g)
      if (!p.contains(s)) {
        ++report.total.fn;
        ++report.per_category[s.category].fn;
      }
  }
  return report;
}

MetricsReport evaluate(const Corpus& gold, const SpanLists& predicted) {
  SpanLists g;
  g.reserve(gold.sentences.size());
  for (const auto& s : gold.sentences) g.push_back(s.spans);
  MetricsReport report = evaluate(g, predicted);
  for (const auto& c : gold.label_set) report.per_category[c];
  return report;
}

Predictions predict_corpus(NerModel& model, const Corpus& corpus) {
  Predictions out;
  const auto categories = model.categories();
  for (const auto& s : corpus.sentences) {
    const auto ids = model.token_ids(s.tokens);
    const auto result = model.greedy_decode(ids);
    const auto decoded = spans_from_indices(result.indices, s.tokens.size(), categories);
    out.spans.push_back(decoded.spans);
    out.malformed += decoded.malformed();
    out.truncated += result.truncated ? 1 : 0;
  }
  return out;
}

MetricsReport evaluate_model(NerModel& model, const Corpus& corpus) {
  const Predictions pred = predict_corpus(model, corpus);
  MetricsReport report = evaluate(corpus, pred.spans);
  report.malformed = pred.malformed;
  report.truncated = pred.truncated;
  return report;
}

std::string metrics_json(const MetricsReport& r) {
  auto block = [](const PrfCounts& c) {
    return nlohmann::ordered_json{{"precision", c.precision()}, {"recall", c.recall()}, {"f1", c.f1()},
                                  {"tp", c.tp},                 {"fp", c.fp},           {"fn", c.fn}};
  };
  nlohmann::ordered_json j;
  j["schema_version"] = MetricsReport::kSchemaVersion;
  j["precision"] = r.precision();
  j["recall"] = r.recall();
  j["f1"] = r.f1();
  j["counts"] = block(r.total);
  nlohmann::ordered_json per = nlohmann::ordered_json::object();
  for (const auto& [c, counts] : r.per_category) per[c] = block(counts);
  j["per_category"] = per;
  j["sentences"] = r.sentences;
  j["malformed_outputs"] = r.malformed;
  j["truncated_decodes"] = r.truncated;
  j["seed"] = r.seed;
  j["config_digest"] = r.config_digest;
  return j.dump(2) + "\n";
}

std::string csv_line(const CsvRow& row) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f", row.precision, row.recall, row.f1);
  return std::to_string(row.seed) + "," + std::to_string(row.k_shot) + "," + row.source + "," + row.target + "," + buf;
}

}  // namespace lightner
