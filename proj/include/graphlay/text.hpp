#pragma once

// Tokenization and sentence segmentation shared by concept matching, the
// model vocabulary and every readability/relevance metric.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace graphlay {

struct Token {
  std::string surface;
  std::size_t begin = 0;  // byte offsets into the source, [begin, end)
  std::size_t end = 0;

  bool operator==(const Token&) const = default;
};

struct SentenceSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  bool operator==(const SentenceSpan&) const = default;
};

namespace text_detail {

// Bytes >= 0x80 belong to UTF-8 multibyte sequences and are treated as
// letters so non-ASCII words stay whole.
inline bool is_word_byte(unsigned char c) {
  return std::isalnum(c) != 0 || c == '\'' || c >= 0x80;
}

inline bool is_space(unsigned char c) { return std::isspace(c) != 0; }

inline bool is_terminator(char c) { return c == '.' || c == '?' || c == '!'; }

// A period that closes one of these never ends a sentence. Compared
// lowercased, including the trailing period.
inline constexpr auto kAbbreviations = std::to_array<std::string_view>({
    "al.",    "approx.", "ca.",   "cf.",  "dr.",   "e.g.", "eq.",
    "eqs.",   "et.",     "fig.",  "figs.", "i.e.", "jr.",  "mr.",
    "mrs.",   "ms.",     "no.",   "nos.", "p.",    "pp.",  "prof.",
    "ref.",   "refs.",   "resp.", "sec.", "sr.",   "vol.", "vs."});

}  // namespace text_detail

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) {
    return static_cast<char>(std::tolower(c));
  });
  return out;
}

/// Maximal runs of letters, digits and apostrophes. Case is preserved.
inline std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!text_detail::is_word_byte(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() &&
           text_detail::is_word_byte(static_cast<unsigned char>(text[j]))) {
      ++j;
    }
    tokens.push_back({std::string(text.substr(i, j - i)), i, j});
    i = j;
  }
  return tokens;
}

/// Lowercased token surfaces.
inline std::vector<std::string> words(std::string_view text) {
  std::vector<std::string> out;
  for (auto& t : tokenize(text)) out.push_back(to_lower(t.surface));
  return out;
}

/// Splits on runs of [.?!] followed by whitespace or end of text, except when
/// the period closes a known abbreviation. Spans start at the first
/// non-whitespace byte and end after the terminator run (or at the last
/// non-whitespace byte for unterminated trailing text).
inline std::vector<SentenceSpan> split_sentences(std::string_view text) {
  using namespace text_detail;
  std::vector<SentenceSpan> spans;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    while (i < n && is_space(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= n) break;
    const std::size_t start = i;
    std::size_t end = n;
    while (i < n) {
      if (!is_terminator(text[i])) {
        ++i;
        continue;
      }
      std::size_t run_end = i;
      while (run_end < n && is_terminator(text[run_end])) ++run_end;
      const bool boundary =
          run_end == n || is_space(static_cast<unsigned char>(text[run_end]));
      if (boundary && text[i] == '.' && run_end == i + 1) {
        std::size_t w = i;
        while (w > start && !is_space(static_cast<unsigned char>(text[w - 1])))
          --w;
        while (w < i && (text[w] == '(' || text[w] == '[' || text[w] == '"' ||
                         text[w] == '\''))
          ++w;
        const std::string word = to_lower(text.substr(w, i + 1 - w));
        if (std::find(kAbbreviations.begin(), kAbbreviations.end(), word) !=
            kAbbreviations.end()) {
          i = run_end;
          continue;
        }
      }
      i = run_end;
      if (boundary) {
        end = run_end;
        break;
      }
    }
    if (end == n) {
      while (end > start && is_space(static_cast<unsigned char>(text[end - 1])))
        --end;
    }
    spans.push_back({start, end});
    i = end;
  }
  return spans;
}

inline std::vector<std::string> sentences(std::string_view text) {
  std::vector<std::string> out;
  for (auto s : split_sentences(text))
    out.emplace_back(text.substr(s.begin, s.end - s.begin));
  return out;
}

}  // namespace graphlay
