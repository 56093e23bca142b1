#pragma once

#include <cctype>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rapgen/types.hpp"

namespace rapgen {

// Lyrics vocabulary: 0 = pad, 1 = boundary, then symbols.
class LyricsVocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBoundary = 1;

  // Character-level fallback: lowercase letters, apostrophe, and word gap.
  static LyricsVocab characters() {
    std::vector<std::string> syms;
    for (char c = 'a'; c <= 'z'; ++c) syms.emplace_back(1, c);
    syms.emplace_back("'");
    syms.emplace_back("_");
    return LyricsVocab(std::move(syms));
  }

  explicit LyricsVocab(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
      require(!index_.count(symbols_[i]), "lyrics vocab: duplicate symbol " + symbols_[i]);
      index_[symbols_[i]] = static_cast<int>(i) + 2;
    }
  }

  int size() const { return static_cast<int>(symbols_.size()) + 2; }

  // Character fallback: lowercase, drop anything outside the alphabet,
  // collapse whitespace into a single word-gap symbol.
  LyricsTokens encode_text(const std::string& text) const {
    LyricsTokens out;
    out.vocab = size();
    out.ids.push_back(kBoundary);
    bool pending_gap = false;
    for (unsigned char ch : text) {
      if (std::isspace(ch)) {
        pending_gap = out.ids.size() > 1;
        continue;
      }
      const std::string sym(1, static_cast<char>(std::tolower(ch)));
      auto it = index_.find(sym);
      if (it == index_.end()) continue;
      if (pending_gap) {
        auto gap = index_.find("_");
        if (gap != index_.end()) out.ids.push_back(gap->second);
        pending_gap = false;
      }
      out.ids.push_back(it->second);
    }
    out.ids.push_back(kBoundary);
    return out;
  }

  // Whitespace-separated phoneme symbols from an upstream phonemizer.
  LyricsTokens encode_symbols(const std::string& line) const {
    LyricsTokens out;
    out.vocab = size();
    out.ids.push_back(kBoundary);
    std::istringstream in(line);
    std::string sym;
    while (in >> sym) {
      auto it = index_.find(sym);
      require(it != index_.end(), "lyrics: unknown phoneme symbol '" + sym + "'");
      out.ids.push_back(it->second);
    }
    out.ids.push_back(kBoundary);
    return out;
  }

 private:
  std::vector<std::string> symbols_;
  std::map<std::string, int> index_;
};

// Phoneme count used for the tempo metric when no phoneme file exists:
// one unit per letter.
inline int count_phoneme_units(const std::string& text) {
  int n = 0;
  for (unsigned char c : text)
    if (std::isalpha(c)) ++n;
  return n;
}

inline int count_phoneme_symbols(const std::string& line) {
  std::istringstream in(line);
  std::string sym;
  int n = 0;
  while (in >> sym) ++n;
  return n;
}

}  // namespace rapgen
