#pragma once

// Deterministic synthetic article generator. Every section names at least
// three lexicon concepts verbatim and each lay summary restates the
// definitions of the article's leading abstract concepts, so knowledge from
// the lexicon is useful for producing the summary.

#include <array>
#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "graphlay/corpus.hpp"
#include "graphlay/error.hpp"
#include "graphlay/rng.hpp"

namespace graphlay {

namespace synth_detail {

inline constexpr auto kAbstractTemplates = std::to_array<std::string_view>({
    "We show how {A} and {B} shape {C} in adult mice.",
    "Here we report that {A} changes {B} during early growth, with effects on {C}.",
    "Our results link {A} to {B} and to {C}.",
    "This work asks whether {A} controls {B} through {C}.",
});

inline constexpr auto kSectionTemplates = std::to_array<std::string_view>({
    "Earlier studies suggested that {A} interacts with {B}.",
    "We measured {A} in a large group of animals.",
    "Levels of {B} rose when {C} was blocked.",
    "These findings suggest a new role for {C}.",
    "Together these data explain how {A} guides {B} and {C}.",
    "Changes in {A} were seen within hours.",
    "A second experiment confirmed the effect of {B}.",
    "The pattern held across every tested group for {C}.",
});

inline constexpr auto kSectionTitles = std::to_array<std::string_view>(
    {"Introduction", "Results", "Discussion", "Methods"});

inline std::string fill(std::string_view tpl, const std::string& a,
                        const std::string& b, const std::string& c) {
  std::string out;
  for (std::size_t i = 0; i < tpl.size(); ++i) {
    if (tpl[i] == '{' && i + 2 < tpl.size() && tpl[i + 2] == '}') {
      const char slot = tpl[i + 1];
      out += slot == 'A' ? a : slot == 'B' ? b : c;
      i += 2;
    } else {
      out += tpl[i];
    }
  }
  return out;
}

// Definition as a clause: first letter lowercased, trailing period dropped.
inline std::string clause(std::string def) {
  while (!def.empty() && (def.back() == '.' || def.back() == ' ')) def.pop_back();
  if (!def.empty())
    def[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(def[0])));
  return def;
}

inline std::string two_digits(std::size_t v) {
  return (v < 10 ? "0" : "") + std::to_string(v);
}

}  // namespace synth_detail

inline Corpus generate_synthetic_corpus(std::uint64_t seed,
                                        std::size_t n_articles,
                                        const Lexicon& lexicon) {
  using namespace synth_detail;
  if (lexicon.concepts.size() < 3)
    throw Error(ErrorKind::invalid_argument,
                "synthetic corpus needs a lexicon with at least 3 concepts");
  if (n_articles < 1)
    throw Error(ErrorKind::invalid_argument, "n_articles must be >= 1");

  std::vector<const Concept*> pool;
  for (const auto& [id, c] : lexicon.concepts) pool.push_back(&c);

  Rng rng(seed);
  auto pick3 = [&] {
    std::vector<const Concept*> p = pool;
    rng.shuffle(p);
    return std::array<const Concept*, 3>{p[0], p[1], p[2]};
  };

  Corpus corpus;
  for (std::size_t i = 0; i < n_articles; ++i) {
    Article a;
    a.id = "syn" + std::to_string(seed) + "-" + std::to_string(i);
    const auto abs = pick3();
    const std::string& A = abs[0]->primary_name();
    const std::string& B = abs[1]->primary_name();
    const std::string& C = abs[2]->primary_name();

    a.title = "How " + A + " relates to " + B;
    a.keywords = {A, B};
    a.pub_date = std::to_string(2012 + rng.index(10)) + "-" +
                 two_digits(1 + rng.index(12)) + "-" +
                 two_digits(1 + rng.index(28));
    a.abstract = {"Abstract",
                  fill(kAbstractTemplates[rng.index(kAbstractTemplates.size())],
                       A, B, C)};

    const std::size_t n_sections = 2 + rng.index(2);
    for (std::size_t s = 0; s < n_sections; ++s) {
      const auto mention = pick3();
      const std::string& x = mention[0]->primary_name();
      const std::string& y = mention[1]->primary_name();
      const std::string& z = mention[2]->primary_name();
      // First sentence names all three; a second adds variety.
      std::string text = fill(kSectionTemplates[4], x, y, z);
      text += ' ';
      text += fill(kSectionTemplates[rng.index(kSectionTemplates.size())], x, y, z);
      a.sections.push_back({std::string(kSectionTitles[s]), std::move(text)});
    }

    a.lay_summary = "This study is about " + A + " and " + B + ". " + A +
                    " means " + clause(abs[0]->definition) + ". " + B +
                    " means " + clause(abs[1]->definition) + ".";
    corpus.push_back(std::move(a));
  }
  return corpus;
}

}  // namespace graphlay
