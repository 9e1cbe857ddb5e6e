#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ulab {

// Closed word-level vocabulary. Text is split on single spaces; the
// punctuation tokens ".", ",", "?" and the possessive "'s" are split off the
// end of a word and re-attached without a space on decode, so
// decode(encode(s)) == s for canonical text (single spaces, no leading or
// trailing whitespace). Unknown words are errors.
class Vocabulary {
 public:
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;

  Vocabulary() = default;
  // Special tokens come first; `words` are deduplicated and sorted.
  explicit Vocabulary(std::vector<std::string> words);

  int size() const noexcept { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const;
  int id(std::string_view word) const;
  bool contains(std::string_view word) const;
  bool is_special(int id) const noexcept { return id == kBos || id == kEos; }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  std::vector<int> encode(std::string_view text) const;
  std::string decode(std::span<const int> ids) const;

  // Splits canonical text into word/punctuation pieces without lookup.
  static std::vector<std::string> split(std::string_view text);
  static bool attaches_left(std::string_view piece);

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int, std::less<>> index_;
};

}  // namespace ulab
