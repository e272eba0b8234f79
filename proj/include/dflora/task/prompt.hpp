#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dflora/common.hpp"
#include "dflora/task/corpus.hpp"
#include "dflora/task/vocabulary.hpp"

namespace dflora::task {

// Ordered pattern segments such as ["text", "It", "was", "<mask>", "."].
// "text", "text1" and "text2" are slots filled from the instance; every other
// segment is literal text and may itself contain "<mask>".
class Pattern {
 public:
  struct Segment {
    int slot = -1;                    // field index, or -1 for a literal
    std::vector<std::string> words;   // literal words (lowercased)
  };

  Pattern(std::vector<std::string> segments, Schema schema)
      : raw_(std::move(segments)), schema_(schema) {
    std::set<int> seen;
    int masks = 0;
    for (const auto& s : raw_) {
      Segment seg;
      if (s == "text" || s == "text1" || s == "text2") {
        const bool single = schema_ == Schema::single_sentence;
        require(single == (s == "text"), "pattern slot '", s, "' does not fit the ",
                to_string(schema_), " schema");
        seg.slot = s == "text2" ? 1 : 0;
        require(seen.insert(seg.slot).second, "pattern uses slot '", s, "' twice");
      } else {
        seg.words = tokenize(s);
        masks += static_cast<int>(std::count(seg.words.begin(), seg.words.end(), kMaskToken));
      }
      segments_.push_back(std::move(seg));
    }
    require(masks == 1, "pattern must contain exactly one <mask>, found ", masks);
    require(static_cast<int>(seen.size()) == field_count(schema_), "pattern must use every ",
            to_string(schema_), " slot exactly once");
  }

  const std::vector<std::string>& raw() const { return raw_; }
  const std::vector<Segment>& segments() const { return segments_; }
  Schema schema() const { return schema_; }

  int literal_length() const {
    int n = 0;
    for (const auto& s : segments_) n += static_cast<int>(s.words.size());
    return n;
  }

  void add_literals_to(Vocabulary& vocab) const {
    for (const auto& s : segments_) {
      for (const auto& w : s.words) vocab.add(w);
    }
  }

 private:
  std::vector<std::string> raw_;
  Schema schema_;
  std::vector<Segment> segments_;
};

// Class id -> single vocabulary token scored at the mask position.
class Verbalizer {
 public:
  Verbalizer(const std::map<int, std::string>& words, const Vocabulary& vocab) {
    require(!words.empty(), "verbalizer is empty");
    int expected = 0;
    std::set<int> used;
    for (const auto& [label, word] : words) {
      require(label == expected++, "verbalizer labels must be 0..", words.size() - 1);
      const auto toks = tokenize(word);
      require(toks.size() == 1, "verbalizer word '", word, "' must be a single token");
      require(vocab.contains(toks[0]), "verbalizer word '", toks[0], "' is not in the vocabulary");
      const int id = vocab.id(toks[0]);
      require(used.insert(id).second, "verbalizer maps two classes to '", toks[0], "'");
      tokens_.push_back(id);
      words_.push_back(toks[0]);
    }
  }

  int num_classes() const { return static_cast<int>(tokens_.size()); }
  int token(int label) const { return tokens_.at(static_cast<std::size_t>(label)); }
  const std::vector<int>& tokens() const { return tokens_; }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<int> tokens_;
  std::vector<std::string> words_;
};

struct RenderedInput {
  std::vector<int> tokens;
  int mask_position = -1;
};

// Fills the pattern from the instance. Text fields are cut from the right,
// longest field first, until the result fits max_len; literals are never cut.
inline RenderedInput render(const Instance& inst, const Pattern& pattern, const Vocabulary& vocab,
                            int max_len) {
  require(static_cast<int>(inst.fields.size()) == field_count(pattern.schema()),
          "render: instance has ", inst.fields.size(), " fields, pattern expects ",
          field_count(pattern.schema()));
  const int literals = pattern.literal_length();
  require(literals <= max_len, "render: pattern literals alone take ", literals,
          " tokens, above the limit of ", max_len);

  std::vector<std::vector<int>> fields;
  std::size_t total = static_cast<std::size_t>(literals);
  for (const auto& f : inst.fields) {
    fields.push_back(vocab.encode(f));
    total += fields.back().size();
  }
  while (total > static_cast<std::size_t>(max_len)) {
    auto longest = std::max_element(fields.begin(), fields.end(),
                                    [](const auto& a, const auto& b) { return a.size() < b.size(); });
    longest->pop_back();
    --total;
  }

  RenderedInput out;
  for (const auto& seg : pattern.segments()) {
    if (seg.slot >= 0) {
      const auto& f = fields[static_cast<std::size_t>(seg.slot)];
      out.tokens.insert(out.tokens.end(), f.begin(), f.end());
      continue;
    }
    for (const auto& w : seg.words) {
      if (w == kMaskToken) out.mask_position = static_cast<int>(out.tokens.size());
      out.tokens.push_back(vocab.id(w));
    }
  }
  return out;
}

}  // namespace dflora::task
