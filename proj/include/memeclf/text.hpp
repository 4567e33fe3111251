#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "memeclf/tensor.hpp"

namespace memeclf {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr Index kMaxTextLen = 40;

/// Lowercases ASCII letters and splits on whitespace; every ASCII
/// punctuation character becomes a token of its own. Bytes >= 0x80 are
/// kept inside words.
std::vector<std::string> split_tokens(std::string_view text);

class Vocab {
 public:
  Vocab();  // PAD and UNK only
  explicit Vocab(std::vector<std::string> tokens);

  int id(const std::string& token) const;  // UNK when absent
  const std::string& token(int id) const;
  Index size() const { return static_cast<Index>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

  static const std::string kPad;
  static const std::string kUnk;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

/// Tokens seen at least `min_freq` times, ordered by frequency (descending)
/// then bytewise, after PAD = 0 and UNK = 1.
Vocab build_vocab(const std::vector<std::string>& texts, std::size_t min_freq = 1);

void save_vocab(const Vocab& vocab, const std::string& path);
Vocab load_vocab(const std::string& path);

struct TokenizedText {
  std::vector<int> ids;   // length max_len
  std::vector<int> mask;  // 1 on real tokens
};

/// First `max_len` tokens as ids, right-padded with PAD.
TokenizedText tokenize_pad(std::string_view text, const Vocab& vocab, Index max_len = kMaxTextLen);

}  // namespace memeclf
