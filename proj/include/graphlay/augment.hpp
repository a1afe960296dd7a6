#pragma once

// Article text augmentation: salient concepts and their semantic types are
// rendered as plain-language definitions and prepended to the article.

#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "graphlay/corpus.hpp"

namespace graphlay {

inline constexpr std::string_view kAugmentSeparator = "\n\n";

struct AugmentationText {
  std::string concept_block;
  std::string semtype_block;
  std::string rendered;

  bool empty() const { return rendered.empty(); }
};

namespace augment_detail {

inline std::string strip_final_period(std::string s) {
  while (!s.empty() && (s.back() == ' ' || s.back() == '\n')) s.pop_back();
  if (!s.empty() && s.back() == '.') s.pop_back();
  return s;
}

}  // namespace augment_detail

/// One line per concept: "{name} = {definition}. {name} is a {semtype}."
/// using the primary name and first semantic type, then one line per distinct
/// semantic type in first-mention order: "{semtype} = {definition}".
/// Blocks are newline-joined and separated by a blank line.
inline AugmentationText format_augmentation(
    const std::vector<std::string>& salient_concepts, const Lexicon& lexicon) {
  AugmentationText out;
  std::vector<std::string> semtype_order;
  std::set<std::string> seen;
  for (const auto& cid : salient_concepts) {
    const Concept& c = lexicon.concept_at(cid);
    const SemType& first = lexicon.semtype_at(c.semtypes.front());
    if (!out.concept_block.empty()) out.concept_block += '\n';
    out.concept_block += c.primary_name() + " = " +
                         augment_detail::strip_final_period(c.definition) +
                         ". " + c.primary_name() + " is a " + first.name + ".";
    for (const auto& tid : c.semtypes)
      if (seen.insert(tid).second) semtype_order.push_back(tid);
  }
  for (const auto& tid : semtype_order) {
    const SemType& t = lexicon.semtype_at(tid);
    if (!out.semtype_block.empty()) out.semtype_block += '\n';
    out.semtype_block += t.name + " = " + t.definition;
  }
  if (!out.concept_block.empty())
    out.rendered = out.concept_block + std::string(kAugmentSeparator) +
                   out.semtype_block;
  return out;
}

inline std::string augment_article(std::string_view article_text,
                                   const AugmentationText& aug) {
  if (aug.empty()) return std::string(article_text);
  std::string out = aug.rendered;
  out += kAugmentSeparator;
  out += article_text;
  return out;
}

/// Inverse of augment_article given the same augmentation.
inline std::string strip_augmentation(std::string_view augmented,
                                      const AugmentationText& aug) {
  if (aug.empty()) return std::string(augmented);
  return std::string(augmented.substr(aug.rendered.size() + kAugmentSeparator.size()));
}

}  // namespace graphlay
