#include "memeclf/text.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <json.hpp>

#include "memeclf/errors.hpp"
#include "memeclf/io.hpp"

namespace memeclf {

const std::string Vocab::kPad = "<pad>";
const std::string Vocab::kUnk = "<unk>";

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (u < 0x80 && std::isspace(u)) {
      flush();
    } else if (u < 0x80 && std::ispunct(u)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      word.push_back(u < 0x80 ? static_cast<char>(std::tolower(u)) : ch);
    }
  }
  flush();
  return out;
}

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(std::vector<std::string> tokens) {
  if (tokens.empty()) tokens = {kPad, kUnk};
  if (tokens.size() < 2 || tokens[0] != kPad || tokens[1] != kUnk) {
    throw VocabularyError("vocabulary must start with " + kPad + " and " + kUnk);
  }
  tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw VocabularyError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

int Vocab::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= static_cast<int>(tokens_.size())) {
    throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

Vocab build_vocab(const std::vector<std::string>& texts, std::size_t min_freq) {
  std::map<std::string, std::size_t> counts;
  for (const auto& text : texts) {
    for (auto& tok : split_tokens(text)) ++counts[tok];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : counts) {
    if (n >= min_freq && tok != Vocab::kPad && tok != Vocab::kUnk) kept.emplace_back(tok, n);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens{Vocab::kPad, Vocab::kUnk};
  for (auto& [tok, n] : kept) tokens.push_back(tok);
  return Vocab(std::move(tokens));
}

void save_vocab(const Vocab& vocab, const std::string& path) {
  nlohmann::json j;
  j["tokens"] = vocab.tokens();
  write_file_atomic(path, j.dump(1) + "\n");
}

Vocab load_vocab(const std::string& path) {
  try {
    return Vocab(nlohmann::json::parse(read_file(path)).at("tokens").get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("cannot read vocabulary " + path + ": " + e.what());
  }
}

TokenizedText tokenize_pad(std::string_view text, const Vocab& vocab, Index max_len) {
  const auto len = static_cast<std::size_t>(max_len);
  TokenizedText out{std::vector<int>(len, kPadId), std::vector<int>(len, 0)};
  const auto tokens = split_tokens(text);
  for (std::size_t i = 0; i < std::min(len, tokens.size()); ++i) {
    out.ids[i] = vocab.id(tokens[i]);
    out.mask[i] = 1;
  }
  return out;
}

}  // namespace memeclf
