#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace i2v {

// Closed caption vocabulary: one shape word, one color word, one direction word.
inline constexpr std::array<std::string_view, 3> kShapeWords = {"square", "circle", "triangle"};
inline constexpr std::array<std::string_view, 3> kColorWords = {"red", "green", "blue"};
inline constexpr std::array<std::string_view, 8> kDirectionWords = {
    "right", "down-right", "down", "down-left", "left", "up-left", "up", "up-right"};

inline constexpr int kNullToken = 0;
inline constexpr int kShapeTokenBase = 1;
inline constexpr int kColorTokenBase = kShapeTokenBase + static_cast<int>(kShapeWords.size());
inline constexpr int kDirectionTokenBase = kColorTokenBase + static_cast<int>(kColorWords.size());
inline constexpr int kVocabularySize = kDirectionTokenBase + static_cast<int>(kDirectionWords.size());

std::string token_word(int token);
std::optional<int> word_token(std::string_view word);

// "red circle right" -> token ids; throws ConfigError on unknown words.
std::vector<int> parse_caption(std::string_view text);
std::string caption_text(const std::vector<int>& tokens);

}  // namespace i2v
