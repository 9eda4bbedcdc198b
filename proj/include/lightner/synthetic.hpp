#pragma once

// Template-based corpora with known gold spans.
//
// Spec text, one entry per line ('#' starts a comment):
//
//   color: red, blue, navy blue, ...
//   @template the {color} car hit a {animal}
//
// A lexeme may span several whitespace-separated tokens. Template slots name a
// category in braces; everything else is filler.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lightner/data.hpp"
#include "lightner/vocab.hpp"

namespace lightner {

struct DomainSpec {
  std::string name;
  std::vector<std::pair<std::string, std::vector<std::string>>> lexicon;  // category -> lexemes
  std::vector<std::string> templates;

  std::vector<std::string> categories() const;  // sorted
};

inline constexpr std::size_t kMinLexemes = 5;

// Throws BAD_SPEC (with line number), LEXEME_COLLISION, TOO_FEW_LEXEMES,
// UNKNOWN_CATEGORY.
DomainSpec parse_domain_spec(std::string_view text, std::string name);
DomainSpec load_domain_spec(const std::string& path);
std::string format_domain_spec(const DomainSpec& spec);

// Built-in domains: "source" (color, animal; news wording), "target" (fruit,
// tool, color; workshop/kitchen wording) and "market" (fruit, animal, color;
// a third register used for zero-shot checks).
DomainSpec builtin_domain(std::string_view name);
std::vector<std::string> builtin_domain_names();

// Every token the spec can produce: fillers, then lexeme tokens.
std::vector<std::string> domain_words(const DomainSpec& spec);

// Stand-in for a pretrained LM's vocabulary: every word of every built-in
// domain, then the tokens of `corpora`, then `reserved` spare rows.
Vocab surrogate_vocabulary(const std::vector<const Corpus*>& corpora, std::size_t reserved = 16);

// Deterministic for a given seed. label_set is the spec's full category list.
Corpus synthetic_corpus(const DomainSpec& spec, std::size_t n_sentences, std::uint64_t seed,
                        CorpusRole role = CorpusRole::kTarget);

}  // namespace lightner
