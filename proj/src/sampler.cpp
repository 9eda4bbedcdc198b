#include "lightner/sampler.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "lightner/error.hpp"

namespace lightner {

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng() % i]);
  return perm;
}

SampleResult few_shot_sample(const Corpus& corpus, const SamplerConfig& config) {
  if (config.k == 0) throw Error("BAD_K", "k must be at least 1");
  if (corpus.sentences.empty()) throw Error("EMPTY_CORPUS", "cannot sample from an empty corpus");

  const std::size_t n = corpus.sentences.size();
  std::vector<std::map<std::string, std::size_t>> per_sentence(n);
  std::map<std::string, std::size_t> supply;
  for (const auto& tag : corpus.label_set) supply[tag] = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& s : corpus.sentences[i].spans) {
      ++per_sentence[i][s.category];
      ++supply[s.category];
    }

  SampleResult out;
  out.corpus.label_set = corpus.label_set;
  out.corpus.role = corpus.role;
  for (const auto& [tag, count] : supply) {
    out.tag_order.push_back(tag);
    out.counts[tag] = 0;
    if (count == 0) out.warnings.push_back("tag " + tag + " has no instances; quota unsatisfiable");
  }
  std::stable_sort(out.tag_order.begin(), out.tag_order.end(),
                   [&](const std::string& a, const std::string& b) { return supply[a] < supply[b]; });

  std::map<std::string, long long> remaining;
  for (const auto& tag : out.tag_order) remaining[tag] = static_cast<long long>(config.k);
  std::vector<char> taken(n, 0);
  const auto order = seeded_permutation(n, config.seed);

  for (const auto& tag : out.tag_order) {
    for (std::size_t idx : order) {
      if (remaining[tag] <= 0) break;
      if (taken[idx] || !per_sentence[idx].contains(tag)) continue;
      taken[idx] = 1;
      const bool overflow = std::any_of(per_sentence[idx].begin(), per_sentence[idx].end(), [&](const auto& kv) {
        return remaining[kv.first] - static_cast<long long>(kv.second) < 0;
      });
      if (overflow) {
        out.discarded.push_back(idx);
        continue;
      }
      for (const auto& [t, c] : per_sentence[idx]) {
        remaining[t] -= static_cast<long long>(c);
        out.counts[t] += c;
      }
      out.chosen.push_back(idx);
      out.corpus.sentences.push_back(corpus.sentences[idx]);
    }
  }
  for (const auto& [tag, count] : out.counts)
    if (count < config.k) out.shortfall[tag] = config.k - count;
  return out;
}

}  // namespace lightner
