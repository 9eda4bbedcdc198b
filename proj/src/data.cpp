#include "lightner/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "lightner/error.hpp"

namespace lightner {
namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

bool is_valid_tag(const std::string& tag) {
  return tag == "O" || ((tag.starts_with("B-") || tag.starts_with("I-")) && tag.size() > 2);
}

}  // namespace

std::vector<std::string> infer_label_set(const std::vector<AnnotatedSentence>& sentences) {
  std::set<std::string> labels;
  for (const auto& s : sentences)
    for (const auto& span : s.spans) labels.insert(span.category);
  return {labels.begin(), labels.end()};
}

BioConversion bio_to_spans(const std::vector<std::string>& tags) {
  BioConversion out;
  bool open = false;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const std::string& tag = tags[i];
    if (!is_valid_tag(tag)) throw Error("BAD_TAG", "invalid BIO tag '" + tag + "'");
    const std::size_t pos = i + 1;
    if (tag == "O") {
      open = false;
      continue;
    }
    const std::string category = tag.substr(2);
    if (tag[0] == 'I' && open && out.spans.back().category == category) {
      out.spans.back().end = pos;
      continue;
    }
    if (tag[0] == 'I') ++out.repairs;
    out.spans.push_back({pos, pos, category});
    open = true;
  }
  return out;
}

std::vector<std::string> spans_to_bio(const std::vector<EntitySpan>& spans, std::size_t n) {
  std::vector<std::string> tags(n, "O");
  for (const auto& s : spans) {
    if (s.start < 1 || s.start > s.end || s.end > n)
      throw Error("SPAN_OUT_OF_RANGE", "span (" + std::to_string(s.start) + ", " + std::to_string(s.end) +
                                           ") outside sentence of " + std::to_string(n) + " tokens");
    for (std::size_t p = s.start; p <= s.end; ++p) {
      if (tags[p - 1] != "O") throw Error("OVERLAPPING_SPANS", "spans overlap at token " + std::to_string(p));
      tags[p - 1] = (p == s.start ? "B-" : "I-") + s.category;
    }
  }
  return tags;
}

ColumnFile parse_column_text(std::string_view text) {
  ColumnFile out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> tokens, tags;
  auto flush = [&] {
    if (tokens.empty()) return;
    BioConversion conv = bio_to_spans(tags);
    out.repairs += conv.repairs;
    out.corpus.sentences.push_back({std::move(tokens), std::move(conv.spans)});
    tokens.clear();
    tags.clear();
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto cols = split_ws(line);
    if (cols.empty()) {
      flush();
      continue;
    }
    if (cols.size() < 2)
      throw Error("MALFORMED_LINE", "line " + std::to_string(line_no) + ": expected token and tag columns");
    if (!is_valid_tag(cols.back()))
      throw Error("MALFORMED_LINE", "line " + std::to_string(line_no) + ": invalid BIO tag '" + cols.back() + "'");
    tokens.push_back(cols.front());
    tags.push_back(cols.back());
  }
  flush();
  out.corpus.label_set = infer_label_set(out.corpus.sentences);
  return out;
}

ColumnFile read_column_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("IO_ERROR", "cannot read " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_column_text(buf.str());
}

std::string format_column_text(const Corpus& corpus) {
  std::string out;
  for (std::size_t s = 0; s < corpus.sentences.size(); ++s) {
    const auto& sent = corpus.sentences[s];
    const auto tags = spans_to_bio(sent.spans, sent.tokens.size());
    if (s > 0) out += "\n";
    for (std::size_t i = 0; i < sent.tokens.size(); ++i) out += sent.tokens[i] + " " + tags[i] + "\n";
  }
  return out;
}

void write_column_file(const std::string& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IO_ERROR", "cannot write " + path);
  out << format_column_text(corpus);
}

std::map<std::string, std::vector<std::string>> build_verbalizer_mapping(const std::vector<std::string>& label_set) {
  if (label_set.empty()) throw Error("EMPTY_LABEL_SET", "verbalizer needs at least one category");
  std::map<std::string, std::vector<std::string>> mapping;
  for (const auto& category : label_set) {
    std::vector<std::string> words;
    std::string piece;
    auto push = [&] {
      if (!piece.empty() && std::find(words.begin(), words.end(), piece) == words.end()) words.push_back(piece);
      piece.clear();
    };
    for (char ch : category) {
      if (ch == '_' || ch == '.')
        push();
      else
        piece += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
    push();
    if (words.empty()) {
      std::string whole;
      for (char ch : category) whole += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      words.push_back(whole);
    }
    mapping[category] = std::move(words);
  }
  return mapping;
}

std::vector<std::string> verbalizer_words(const std::map<std::string, std::vector<std::string>>& mapping) {
  std::vector<std::string> out;
  for (const auto& [category, words] : mapping)
    for (const auto& w : words)
      if (std::find(out.begin(), out.end(), w) == out.end()) out.push_back(w);
  return out;
}

}  // namespace lightner
