#pragma once

// Greedy k-shot subsampling. Tags are visited from rarest to most frequent;
// for each tag, sentences are drawn in a seeded random order and accepted
// while that tag still has quota. Accepting a sentence charges every entity it
// contains. A sentence that would push any tag past k is discarded for good.
// The unit is entity occurrences, not sentences.

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lightner/data.hpp"

namespace lightner {

inline constexpr std::array<std::uint64_t, 5> kDefaultSeeds{1, 2, 49, 4321, 1234};

struct SamplerConfig {
  std::size_t k = 1;
  std::uint64_t seed = 1;
};

struct SampleResult {
  Corpus corpus;                        // accepted sentences in acceptance order
  std::vector<std::size_t> chosen;      // their indices in the input corpus
  std::vector<std::size_t> discarded;   // indices rejected for overflow
  std::vector<std::string> tag_order;   // rarest first
  std::map<std::string, std::size_t> counts;     // sampled entities per tag
  std::map<std::string, std::size_t> shortfall;  // k - count where positive
  std::vector<std::string> warnings;
};

// Fisher-Yates over 0..n-1 with mt19937_64(seed), swap partner rng() % (i + 1).
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

// Throws BAD_K for k = 0, EMPTY_CORPUS for an empty corpus.
SampleResult few_shot_sample(const Corpus& corpus, const SamplerConfig& config);

}  // namespace lightner
