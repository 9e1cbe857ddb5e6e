#include "ulab/tokenizer.hpp"

#include <algorithm>

#include "ulab/error.hpp"

namespace ulab {

Vocabulary::Vocabulary(std::vector<std::string> words) {
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  tokens_ = {"<bos>", "<eos>"};
  for (auto& w : words) {
    require(!w.empty() && w != "<bos>" && w != "<eos>", "invalid_vocabulary", "reserved or empty word in vocabulary");
    tokens_.push_back(std::move(w));
  }
  for (int i = 0; i < size(); ++i) index_.emplace(tokens_[i], i);
}

const std::string& Vocabulary::token(int id) const {
  require(id >= 0 && id < size(), "index_out_of_range", "token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[id];
}

int Vocabulary::id(std::string_view word) const {
  auto it = index_.find(word);
  if (it == index_.end()) fail("out_of_vocabulary", "word '" + std::string(word) + "' is not in the vocabulary");
  return it->second;
}

bool Vocabulary::contains(std::string_view word) const { return index_.find(word) != index_.end(); }

bool Vocabulary::attaches_left(std::string_view piece) {
  return piece == "." || piece == "," || piece == "?" || piece == "'s";
}

std::vector<std::string> Vocabulary::split(std::string_view text) {
  std::vector<std::string> pieces;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find(' ', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view word = text.substr(pos, end - pos);
    pos = end + 1;
    if (word.empty()) continue;
    std::vector<std::string> tail;
    while (!word.empty()) {
      if (word.size() > 1 && (word.back() == '.' || word.back() == ',' || word.back() == '?')) {
        tail.emplace_back(word.substr(word.size() - 1));
        word.remove_suffix(1);
      } else if (word.size() > 2 && word.ends_with("'s")) {
        tail.emplace_back("'s");
        word.remove_suffix(2);
      } else {
        break;
      }
    }
    pieces.emplace_back(word);
    pieces.insert(pieces.end(), tail.rbegin(), tail.rend());
  }
  return pieces;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& piece : split(text)) ids.push_back(id(piece));
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    const std::string& piece = token(id);
    if (!out.empty() && !attaches_left(piece)) out += ' ';
    out += piece;
  }
  return out;
}

}  // namespace ulab
