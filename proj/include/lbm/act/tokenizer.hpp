#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "lbm/core/error.hpp"

namespace lbm::act {

// Word-level vocabulary with a per-character fallback. Text is split into runs
// of letters, runs of digits, and single punctuation characters; whitespace
// separates pieces and is dropped. Pieces outside the vocabulary are spelled
// out character by character, so every printable-ASCII string is encodable.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kFirstChar = 2;  // ids [2, 2 + 95) are printable ASCII ' '..'~'
  static constexpr int kNumChars = 95;
  static constexpr int kFirstWord = kFirstChar + kNumChars;

  Tokenizer() = default;
  explicit Tokenizer(int vocab_size) : vocab_size_(vocab_size) {
    if (vocab_size_ < kFirstWord) throw InvalidArgument("vocab size must be at least " + std::to_string(kFirstWord));
  }

  int vocab_size() const { return vocab_size_; }
  const std::vector<std::string>& words() const { return words_; }

  static std::vector<std::string> split(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
      const unsigned char c = static_cast<unsigned char>(text[i]);
      if (std::isspace(c)) {
        ++i;
      } else if (std::isalpha(c) || c == '_') {
        std::size_t j = i;
        while (j < text.size() && (std::isalpha(static_cast<unsigned char>(text[j])) || text[j] == '_')) ++j;
        out.emplace_back(text.substr(i, j - i));
        i = j;
      } else if (std::isdigit(c)) {
        std::size_t j = i;
        while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
        out.emplace_back(text.substr(i, j - i));
        i = j;
      } else {
        out.emplace_back(1, text[i]);
        ++i;
      }
    }
    return out;
  }

  // Adds the most frequent multi-character letter pieces of `corpus` until the
  // vocabulary is full. Digit runs stay spelled out so any number is
  // representable with the same ten symbols. Ties break lexicographically.
  void fit(const std::vector<std::string>& corpus) {
    std::map<std::string, long> freq;
    for (const auto& text : corpus)
      for (auto& p : split(text))
        if (p.size() > 1 && std::isalpha(static_cast<unsigned char>(p[0]))) ++freq[p];
    std::vector<std::pair<std::string, long>> items(freq.begin(), freq.end());
    std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    words_.clear();
    index_.clear();
    const std::size_t cap = static_cast<std::size_t>(vocab_size_ - kFirstWord);
    for (const auto& [w, n] : items) {
      if (words_.size() >= cap) break;
      add_word(w);
    }
  }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& p : split(text)) {
      auto it = index_.find(p);
      if (it != index_.end()) {
        ids.push_back(it->second);
        continue;
      }
      for (char ch : p) ids.push_back(char_id(ch));
    }
    return ids;
  }

  // Keeps the last max_len ids: the concluding direction line lives at the end.
  std::vector<int> encode(std::string_view text, int max_len) const {
    auto ids = encode(text);
    if (max_len >= 0 && static_cast<int>(ids.size()) > max_len)
      ids.erase(ids.begin(), ids.end() - max_len);
    return ids;
  }

  nlohmann::json to_json() const { return {{"vocab_size", vocab_size_}, {"words", words_}}; }

  static Tokenizer from_json(const nlohmann::json& j) {
    Tokenizer t(j.at("vocab_size").get<int>());
    for (const auto& w : j.at("words")) t.add_word(w.get<std::string>());
    return t;
  }

 private:
  static int char_id(char ch) {
    const unsigned char c = static_cast<unsigned char>(ch);
    if (c < 32 || c > 126) return kUnk;
    return kFirstChar + (c - 32);
  }

  void add_word(const std::string& w) {
    if (index_.count(w)) return;
    if (kFirstWord + static_cast<int>(words_.size()) >= vocab_size_) throw InvalidArgument("vocabulary full");
    index_[w] = kFirstWord + static_cast<int>(words_.size());
    words_.push_back(w);
  }

  int vocab_size_ = 2048;
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace lbm::act
