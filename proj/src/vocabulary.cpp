#include "i2v/vocabulary.hpp"

#include <sstream>

#include "i2v/errors.hpp"

namespace i2v {

std::string token_word(int token) {
  if (token == kNullToken) return "<null>";
  if (token >= kShapeTokenBase && token < kColorTokenBase) return std::string(kShapeWords[token - kShapeTokenBase]);
  if (token >= kColorTokenBase && token < kDirectionTokenBase) return std::string(kColorWords[token - kColorTokenBase]);
  if (token >= kDirectionTokenBase && token < kVocabularySize) {
    return std::string(kDirectionWords[token - kDirectionTokenBase]);
  }
  throw ConfigError("unknown token id " + std::to_string(token));
}

std::optional<int> word_token(std::string_view word) {
  for (int t = 0; t < kVocabularySize; ++t) {
    if (token_word(t) == word) return t;
  }
  return std::nullopt;
}

std::vector<int> parse_caption(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::vector<int> tokens;
  std::string word;
  while (in >> word) {
    auto t = word_token(word);
    if (!t) throw ConfigError("unknown caption word '" + word + "'");
    tokens.push_back(*t);
  }
  if (tokens.empty()) throw ConfigError("empty caption");
  return tokens;
}

std::string caption_text(const std::vector<int>& tokens) {
  std::string out;
  for (int t : tokens) {
    if (!out.empty()) out += ' ';
    out += token_word(t);
  }
  return out;
}

}  // namespace i2v
