#pragma once

// Lexicon-driven concept extraction: candidate matching per section followed
// by the word-overlap noise filter.

#include <algorithm>
#include <array>
#include <cstddef>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "graphlay/corpus.hpp"
#include "graphlay/text.hpp"

namespace graphlay {

// English stopword list, version 1. Changing it changes extraction output.
inline constexpr auto kStopwords = std::to_array<std::string_view>({
    "a",       "about",   "above",   "after",   "again",   "against", "all",
    "also",    "am",      "an",      "and",     "any",     "are",     "as",
    "at",      "be",      "because", "been",    "before",  "being",   "below",
    "between", "both",    "but",     "by",      "can",     "could",   "did",
    "do",      "does",    "doing",   "down",    "during",  "each",    "either",
    "few",     "for",     "from",    "further", "had",     "has",     "have",
    "having",  "he",      "her",     "here",    "hers",    "herself", "him",
    "himself", "his",     "how",     "however", "i",       "if",      "in",
    "into",    "is",      "it",      "it's",    "its",     "itself",  "just",
    "may",     "me",      "might",   "more",    "most",    "must",    "my",
    "myself",  "no",      "nor",     "not",     "now",     "of",      "off",
    "on",      "once",    "only",    "or",      "other",   "our",     "ours",
    "out",     "over",    "own",     "same",    "she",     "should",  "so",
    "some",    "such",    "than",    "that",    "the",     "their",   "theirs",
    "them",    "then",    "there",   "these",   "they",    "this",    "those",
    "through", "to",      "too",     "under",   "until",   "up",      "upon",
    "very",    "was",     "we",      "were",    "what",    "when",    "where",
    "which",   "while",   "who",     "whom",    "why",     "will",    "with",
    "would",   "you"});

inline bool is_stopword(std::string_view lower_word) {
  return std::find(kStopwords.begin(), kStopwords.end(), lower_word) !=
         kStopwords.end();
}

/// Suffix stripper standing in for lemmatisation: "ies"->"y", then "es", "s",
/// "ing", "ed", each only when at least three characters remain.
inline std::string stem(std::string word) {
  auto ends_with = [&](std::string_view suf) {
    return word.size() >= suf.size() &&
           std::string_view(word).substr(word.size() - suf.size()) == suf;
  };
  constexpr std::size_t kMinStem = 3;
  if (ends_with("ies") && word.size() - 3 >= kMinStem) {
    word.resize(word.size() - 3);
    word += 'y';
    return word;
  }
  for (std::string_view suf : {"es", "s", "ing", "ed"}) {
    if (ends_with(suf) && word.size() - suf.size() >= kMinStem) {
      word.resize(word.size() - suf.size());
      return word;
    }
  }
  return word;
}

/// Lowercase, drop stopwords, stem. Order is preserved.
inline std::vector<std::string> normalize(const std::vector<Token>& tokens) {
  std::vector<std::string> out;
  for (const auto& t : tokens) {
    std::string w = to_lower(t.surface);
    if (is_stopword(w)) continue;
    out.push_back(stem(std::move(w)));
  }
  return out;
}

inline std::vector<std::string> normalize(const std::vector<std::string>& raw) {
  std::vector<std::string> out;
  for (const auto& r : raw) {
    std::string w = to_lower(r);
    if (is_stopword(w)) continue;
    out.push_back(stem(std::move(w)));
  }
  return out;
}

inline std::vector<std::string> normalize_text(std::string_view text) {
  return normalize(tokenize(text));
}

enum class MatchMode { exact, loose };

struct CandidateMention {
  std::string concept_id;
  int section_index = kAbstractIndex;
  std::string matched_name;
  double match_fraction = 0.0;
};

using SectionConceptMap = std::map<int, std::set<std::string>>;

namespace concepts_detail {

inline bool contains_run(const std::vector<std::string>& hay,
                         const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > hay.size()) return false;
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) !=
         hay.end();
}

}  // namespace concepts_detail

/// Candidate pool for one section. Exact mode requires a contiguous run of a
/// name's normalized words; loose mode accepts any shared name word and
/// records the best overlap fraction across the concept's names.
inline std::vector<CandidateMention> match_concepts(std::string_view section_text,
                                                    const Lexicon& lexicon,
                                                    MatchMode mode,
                                                    int section_index = kAbstractIndex) {
  const auto section = normalize_text(section_text);
  const std::unordered_set<std::string> present(section.begin(), section.end());
  std::vector<CandidateMention> out;
  for (const auto& [id, concept_entry] : lexicon.concepts) {
    CandidateMention best{id, section_index, {}, 0.0};
    for (const auto& name : concept_entry.names) {
      const auto name_words = normalize_text(name);
      if (name_words.empty()) continue;
      double fraction = 0.0;
      if (mode == MatchMode::exact) {
        if (concepts_detail::contains_run(section, name_words)) fraction = 1.0;
      } else {
        std::size_t found = 0;
        for (const auto& w : name_words) found += present.count(w);
        fraction = static_cast<double>(found) /
                   static_cast<double>(name_words.size());
      }
      if (fraction > best.match_fraction) {
        best.match_fraction = fraction;
        best.matched_name = name;
      }
    }
    if (best.match_fraction > 0.0) out.push_back(std::move(best));
  }
  return out;
}

/// Word-overlap noise filter: keep a candidate only if every normalized word
/// of at least one of its names occurs somewhere in the section.
inline std::set<std::string> filter_concepts(
    const std::vector<CandidateMention>& candidates,
    std::string_view section_text, const Lexicon& lexicon) {
  const auto section = normalize_text(section_text);
  const std::unordered_set<std::string> present(section.begin(), section.end());
  std::set<std::string> kept;
  for (const auto& c : candidates) {
    auto it = lexicon.concepts.find(c.concept_id);
    if (it == lexicon.concepts.end()) continue;
    for (const auto& name : it->second.names) {
      const auto name_words = normalize_text(name);
      if (name_words.empty()) continue;
      const bool all = std::all_of(
          name_words.begin(), name_words.end(),
          [&](const std::string& w) { return present.count(w) > 0; });
      if (all) {
        kept.insert(c.concept_id);
        break;
      }
    }
  }
  return kept;
}

/// Loose match followed by the overlap filter, for the abstract (key -1) and
/// every body section.
inline SectionConceptMap extract_article_concepts(const Article& article,
                                                  const Lexicon& lexicon) {
  SectionConceptMap out;
  auto run = [&](int index, const Section& s) {
    out[index] = filter_concepts(
        match_concepts(s.text, lexicon, MatchMode::loose, index), s.text,
        lexicon);
  };
  run(kAbstractIndex, article.abstract);
  for (std::size_t i = 0; i < article.sections.size(); ++i)
    run(static_cast<int>(i), article.sections[i]);
  return out;
}

/// Position (in normalized abstract words) where a concept is first
/// mentioned: the earliest contiguous occurrence of any of its names, or
/// failing that the earliest occurrence of any name word.
inline std::size_t first_mention(const std::vector<std::string>& words_norm,
                                 const Concept& c) {
  std::size_t best = std::numeric_limits<std::size_t>::max();
  for (const auto& name : c.names) {
    const auto nw = normalize_text(name);
    if (nw.empty()) continue;
    auto it = std::search(words_norm.begin(), words_norm.end(), nw.begin(),
                          nw.end());
    if (it != words_norm.end())
      best = std::min(best, static_cast<std::size_t>(it - words_norm.begin()));
  }
  if (best != std::numeric_limits<std::size_t>::max()) return best;
  for (const auto& name : c.names) {
    for (const auto& w : normalize_text(name)) {
      auto it = std::find(words_norm.begin(), words_norm.end(), w);
      if (it != words_norm.end())
        best = std::min(best, static_cast<std::size_t>(it - words_norm.begin()));
    }
  }
  return best;
}

/// The abstract's concepts ordered by first mention; ties by concept id.
inline std::vector<std::string> select_salient_concepts(
    const SectionConceptMap& map, const Article& article,
    const Lexicon& lexicon) {
  auto it = map.find(kAbstractIndex);
  if (it == map.end())
    throw Error(ErrorKind::missing_field,
                "section concept map has no abstract entry");
  const auto abstract_words = normalize_text(article.abstract.text);
  std::vector<std::pair<std::size_t, std::string>> keyed;
  for (const auto& id : it->second)
    keyed.emplace_back(first_mention(abstract_words, lexicon.concept_at(id)), id);
  std::sort(keyed.begin(), keyed.end());
  std::vector<std::string> out;
  for (auto& [pos, id] : keyed) out.push_back(id);
  return out;
}

}  // namespace graphlay
