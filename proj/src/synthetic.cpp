#include "lightner/synthetic.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "builtin_specs.hpp"
#include "lightner/error.hpp"

namespace lightner {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> tokenize(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

bool is_slot(const std::string& token) { return token.size() > 2 && token.front() == '{' && token.back() == '}'; }

void validate(const DomainSpec& spec) {
  std::map<std::string, std::string> owner;
  for (const auto& [category, lexemes] : spec.lexicon) {
    if (lexemes.size() < kMinLexemes)
      throw Error("TOO_FEW_LEXEMES", "category '" + category + "' has " + std::to_string(lexemes.size()) +
                                         " lexemes, need at least " + std::to_string(kMinLexemes));
    for (const auto& lex : lexemes) {
      const auto [it, fresh] = owner.emplace(lex, category);
      if (!fresh)
        throw Error("LEXEME_COLLISION", "lexeme '" + lex + "' appears under both '" + it->second + "' and '" +
                                            category + "'");
    }
  }
  if (spec.templates.empty()) throw Error("BAD_SPEC", "domain '" + spec.name + "' has no templates");
  for (const auto& t : spec.templates)
    for (const auto& token : tokenize(t)) {
      if (token.find('{') != std::string::npos && !is_slot(token))
        throw Error("BAD_SPEC", "slot must be a whole token in template '" + t + "'");
      if (!is_slot(token)) continue;
      const std::string category = token.substr(1, token.size() - 2);
      if (std::none_of(spec.lexicon.begin(), spec.lexicon.end(), [&](const auto& kv) { return kv.first == category; }))
        throw Error("UNKNOWN_CATEGORY", "template slot {" + category + "} has no lexicon");
    }
}

}  // namespace

std::vector<std::string> DomainSpec::categories() const {
  std::vector<std::string> out;
  for (const auto& kv : lexicon) out.push_back(kv.first);
  std::sort(out.begin(), out.end());
  return out;
}

DomainSpec parse_domain_spec(std::string_view text, std::string name) {
  DomainSpec spec;
  spec.name = std::move(name);
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    if (body.starts_with("@template")) {
      const std::string t = trim(std::string_view(body).substr(9));
      if (t.empty()) throw Error("BAD_SPEC", "line " + std::to_string(line_no) + ": empty template");
      spec.templates.push_back(t);
      continue;
    }
    const auto colon = body.find(':');
    if (colon == std::string::npos)
      throw Error("BAD_SPEC", "line " + std::to_string(line_no) + ": expected 'category: lexeme, ...'");
    const std::string category = trim(std::string_view(body).substr(0, colon));
    if (category.empty() || category.find_first_of(" \t{}") != std::string::npos)
      throw Error("BAD_SPEC", "line " + std::to_string(line_no) + ": bad category name '" + category + "'");
    std::vector<std::string> lexemes;
    std::string rest = body.substr(colon + 1);
    std::istringstream parts(rest);
    std::string piece;
    while (std::getline(parts, piece, ',')) {
      const auto words = tokenize(piece);
      if (words.empty()) continue;
      std::string joined;
      for (const auto& w : words) joined += (joined.empty() ? "" : " ") + w;
      lexemes.push_back(joined);
    }
    for (const auto& kv : spec.lexicon)
      if (kv.first == category)
        throw Error("BAD_SPEC", "line " + std::to_string(line_no) + ": category '" + category + "' defined twice");
    spec.lexicon.emplace_back(category, std::move(lexemes));
  }
  validate(spec);
  return spec;
}

DomainSpec load_domain_spec(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("IO_ERROR", "cannot read " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  std::string name = path.substr(path.find_last_of('/') + 1);
  if (const auto dot = name.find('.'); dot != std::string::npos) name.erase(dot);
  return parse_domain_spec(buf.str(), name);
}

std::string format_domain_spec(const DomainSpec& spec) {
  std::string out;
  for (const auto& [category, lexemes] : spec.lexicon) {
    out += category + ":";
    for (std::size_t i = 0; i < lexemes.size(); ++i) out += (i ? ", " : " ") + lexemes[i];
    out += "\n";
  }
  for (const auto& t : spec.templates) out += "@template " + t + "\n";
  return out;
}

DomainSpec builtin_domain(std::string_view name) {
  if (name == "source") return parse_domain_spec(builtin_specs::kSource, "source");
  if (name == "target") return parse_domain_spec(builtin_specs::kTarget, "target");
  if (name == "market") return parse_domain_spec(builtin_specs::kMarket, "market");
  throw Error("UNKNOWN_DOMAIN", "no built-in domain '" + std::string(name) + "' (have source, target, market)");
}

std::vector<std::string> builtin_domain_names() { return {"source", "target", "market"}; }

std::vector<std::string> domain_words(const DomainSpec& spec) {
  std::vector<std::string> out;
  auto add = [&](const std::string& w) {
    if (std::find(out.begin(), out.end(), w) == out.end()) out.push_back(w);
  };
  for (const auto& t : spec.templates)
    for (const auto& token : tokenize(t))
      if (!is_slot(token)) add(token);
  for (const auto& [category, lexemes] : spec.lexicon)
    for (const auto& lex : lexemes)
      for (const auto& w : tokenize(lex)) add(w);
  return out;
}

Corpus synthetic_corpus(const DomainSpec& spec, std::size_t n_sentences, std::uint64_t seed, CorpusRole role) {
  validate(spec);
  std::map<std::string, const std::vector<std::string>*> lexicon;
  for (const auto& kv : spec.lexicon) lexicon[kv.first] = &kv.second;

  Corpus corpus;
  corpus.role = role;
  corpus.label_set = spec.categories();
  std::mt19937_64 rng(seed);
  for (std::size_t s = 0; s < n_sentences; ++s) {
    const std::string& tmpl = spec.templates[rng() % spec.templates.size()];
    AnnotatedSentence sentence;
    for (const auto& token : tokenize(tmpl)) {
      if (!is_slot(token)) {
        sentence.tokens.push_back(token);
        continue;
      }
      const std::string category = token.substr(1, token.size() - 2);
      const auto& choices = *lexicon.at(category);
      const auto words = tokenize(choices[rng() % choices.size()]);
      const std::size_t start = sentence.tokens.size() + 1;
      sentence.tokens.insert(sentence.tokens.end(), words.begin(), words.end());
      sentence.spans.push_back({start, sentence.tokens.size(), category});
    }
    corpus.sentences.push_back(std::move(sentence));
  }
  return corpus;
}

Vocab surrogate_vocabulary(const std::vector<const Corpus*>& corpora, std::size_t reserved) {
  std::vector<std::string> words;
  for (const auto& name : builtin_domain_names())
    for (auto& w : domain_words(builtin_domain(name))) words.push_back(std::move(w));
  for (const Corpus* c : corpora)
    for (const auto& s : c->sentences) words.insert(words.end(), s.tokens.begin(), s.tokens.end());
  return Vocab::build(words, reserved);
}

}  // namespace lightner
