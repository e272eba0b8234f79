#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dflora/common.hpp"

namespace dflora::task {

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kMaskToken = "<mask>";
inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kMaskId = 2;

// Lowercase, whitespace-separated words. "<mask>" survives lowercasing.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) {
    std::transform(word.begin(), word.end(), word.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    out.push_back(std::move(word));
  }
  return out;
}

// Closed word list with the three reserved ids first.
class Vocabulary {
 public:
  Vocabulary() {
    for (auto w : {kPadToken, kUnkToken, kMaskToken}) add(std::string(w));
  }

  int add(const std::string& word) {
    auto [it, inserted] = ids_.emplace(word, static_cast<int>(words_.size()));
    if (inserted) words_.push_back(word);
    return it->second;
  }

  void add_text(std::string_view text) {
    for (const auto& w : tokenize(text)) add(w);
  }

  int id(const std::string& word) const {
    auto it = ids_.find(word);
    return it == ids_.end() ? kUnkId : it->second;
  }

  bool contains(const std::string& word) const { return ids_.count(word) > 0; }
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> out;
    for (const auto& w : tokenize(text)) out.push_back(id(w));
    return out;
  }

 private:
  std::map<std::string, int> ids_;
  std::vector<std::string> words_;
};

}  // namespace dflora::task
