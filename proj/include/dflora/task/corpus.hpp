#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dflora/common.hpp"

namespace dflora::task {

enum class Schema { single_sentence, sentence_pair };

inline std::string_view to_string(Schema s) {
  return s == Schema::single_sentence ? "single" : "pair";
}

inline Schema parse_schema(std::string_view s) {
  if (s == "single" || s == "single_sentence") return Schema::single_sentence;
  if (s == "pair" || s == "sentence_pair") return Schema::sentence_pair;
  fail("unknown corpus schema '", s, "' (expected single or pair)");
}

inline int field_count(Schema s) { return s == Schema::single_sentence ? 1 : 2; }

struct Instance {
  int label = 0;
  std::vector<std::string> fields;  // text, or text1 and text2
};

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::string::size_type start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    cols.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return cols;
}

inline bool parse_label(const std::string& s, int& out) {
  if (s.empty() || s.size() > 9) return false;
  for (char c : s) {
    if (c < '0' || c > '9') return false;
  }
  out = std::stoi(s);
  return true;
}

}  // namespace detail

// Reads a TSV corpus whose header is "label<TAB>text" or
// "label<TAB>text1<TAB>text2". With num_classes > 0, labels must lie in
// [0, num_classes). All malformed rows are reported together.
inline std::vector<Instance> parse_corpus(std::istream& in, Schema schema, int num_classes = 0,
                                          std::string_view source = "<corpus>") {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(concat(source, ": empty corpus, header missing"));
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> expected =
      schema == Schema::single_sentence ? std::vector<std::string>{"label", "text"}
                                        : std::vector<std::string>{"label", "text1", "text2"};
  if (detail::split_tabs(line) != expected) {
    std::string want;
    for (const auto& e : expected) want += (want.empty() ? "" : "\\t") + e;
    throw ParseError(concat(source, ": header must be '", want, "', got '", line, "'"));
  }

  std::vector<Instance> out;
  std::vector<std::string> problems;
  const std::size_t columns = expected.size();
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cols = detail::split_tabs(line);
    if (cols.size() != columns) {
      problems.push_back(concat("line ", lineno, ": expected ", columns, " fields, got ", cols.size()));
      continue;
    }
    Instance inst;
    if (!detail::parse_label(cols[0], inst.label)) {
      problems.push_back(concat("line ", lineno, ": label '", cols[0], "' is not a class id"));
      continue;
    }
    if (num_classes > 0 && inst.label >= num_classes) {
      problems.push_back(concat("line ", lineno, ": unknown label ", inst.label, " (task has ",
                                num_classes, " classes)"));
      continue;
    }
    inst.fields.assign(cols.begin() + 1, cols.end());
    out.push_back(std::move(inst));
  }
  if (!problems.empty()) {
    std::string msg = concat(source, ": ", problems.size(), " malformed row(s)");
    for (const auto& p : problems) msg += "\n  " + p;
    throw ParseError(msg);
  }
  return out;
}

inline std::vector<Instance> load_corpus(const std::string& path, Schema schema,
                                         int num_classes = 0) {
  std::ifstream in(path);
  if (!in) throw ParseError(concat("cannot open corpus '", path, "'"));
  return parse_corpus(in, schema, num_classes, path);
}

inline void write_corpus(std::ostream& out, const std::vector<Instance>& corpus, Schema schema) {
  out << (schema == Schema::single_sentence ? "label\ttext\n" : "label\ttext1\ttext2\n");
  for (const auto& inst : corpus) {
    require(static_cast<int>(inst.fields.size()) == field_count(schema),
            "write_corpus: instance has the wrong number of fields");
    out << inst.label;
    for (const auto& f : inst.fields) out << '\t' << f;
    out << '\n';
  }
}

inline int count_classes(const std::vector<Instance>& corpus) {
  int mx = -1;
  for (const auto& i : corpus) mx = std::max(mx, i.label);
  return mx + 1;
}

struct FewShotSplit {
  std::vector<Instance> train;
  std::vector<Instance> dev;
  std::vector<Instance> test;  // everything not drawn into train or dev
  int per_class = 0;
  int num_classes = 0;
};

// n training and n development instances per class, disjoint, drawn with a
// seeded shuffle of each class's rows.
inline FewShotSplit sample_few_shot(const std::vector<Instance>& corpus, int n, int num_classes,
                                    std::uint64_t seed) {
  require(n >= 1, "few-shot: n must be positive, got ", n);
  require(num_classes >= 1, "few-shot: need at least one class");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const int y = corpus[i].label;
    require(y >= 0 && y < num_classes, "few-shot: instance ", i, " has unknown label ", y);
    by_class[static_cast<std::size_t>(y)].push_back(i);
  }
  for (int c = 0; c < num_classes; ++c) {
    const auto have = by_class[static_cast<std::size_t>(c)].size();
    require(have >= static_cast<std::size_t>(2 * n), "few-shot: class ", c, " has ", have,
            " instances but ", 2 * n, " are needed for n=", n);
  }

  std::mt19937_64 rng(seed);
  FewShotSplit split;
  split.per_class = n;
  split.num_classes = num_classes;
  for (auto& idx : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      auto& dst = j < static_cast<std::size_t>(n)       ? split.train
                  : j < static_cast<std::size_t>(2 * n) ? split.dev
                                                        : split.test;
      dst.push_back(corpus[idx[j]]);
    }
  }
  std::shuffle(split.train.begin(), split.train.end(), rng);
  std::shuffle(split.dev.begin(), split.dev.end(), rng);
  return split;
}

}  // namespace dflora::task
