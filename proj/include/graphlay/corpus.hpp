#pragma once

// Article and lexicon data model plus their JSON(-lines) readers/writers.

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "graphlay/error.hpp"

namespace graphlay {

using json = nlohmann::json;

struct Section {
  std::string title;
  std::string text;

  bool operator==(const Section&) const = default;
};

struct Article {
  std::string id;
  std::string title;
  std::vector<std::string> keywords;
  std::string pub_date;  // YYYY-MM-DD
  Section abstract;
  std::vector<Section> sections;
  std::optional<std::string> lay_summary;

  bool operator==(const Article&) const = default;
};

using Corpus = std::vector<Article>;

/// Section index used for the abstract throughout concept maps.
inline constexpr int kAbstractIndex = -1;

/// Abstract followed by every body section, blank-line separated. This is the
/// model's source document.
inline std::string article_text(const Article& a) {
  std::string out = a.abstract.text;
  for (const auto& s : a.sections) {
    out += "\n\n";
    out += s.text;
  }
  return out;
}

inline const Section& section_at(const Article& a, int index) {
  if (index == kAbstractIndex) return a.abstract;
  return a.sections.at(static_cast<std::size_t>(index));
}

// ---------------------------------------------------------------- lexicon

struct Concept {
  std::string id;
  std::vector<std::string> names;
  std::string definition;
  std::vector<std::string> semtypes;

  const std::string& primary_name() const { return names.front(); }
};

struct SemType {
  std::string id;
  std::string name;
  std::string definition;
};

struct RelationTriple {
  std::string from;
  std::string relation;
  std::string to;

  auto operator<=>(const RelationTriple&) const = default;
};

struct Lexicon {
  std::map<std::string, Concept> concepts;
  std::map<std::string, SemType> semtypes;
  std::vector<RelationTriple> relations;

  const Concept& concept_at(const std::string& id) const {
    auto it = concepts.find(id);
    if (it == concepts.end())
      throw Error(ErrorKind::unresolved_reference, "unknown concept id " + id);
    return it->second;
  }
  const SemType& semtype_at(const std::string& id) const {
    auto it = semtypes.find(id);
    if (it == semtypes.end())
      throw Error(ErrorKind::unresolved_reference, "unknown semtype id " + id);
    return it->second;
  }
};

// UMLS Semantic Network relation names (54), with the network's "isa" spelled
// "is_a" as in the article graphs.
inline constexpr auto kSemanticRelations = std::to_array<std::string_view>({
    "is_a",
    "associated_with",
    "physically_related_to",
    "part_of",
    "consists_of",
    "contains",
    "connected_to",
    "interconnects",
    "branch_of",
    "tributary_of",
    "ingredient_of",
    "spatially_related_to",
    "location_of",
    "adjacent_to",
    "surrounds",
    "traverses",
    "functionally_related_to",
    "affects",
    "manages",
    "treats",
    "disrupts",
    "complicates",
    "interacts_with",
    "prevents",
    "brings_about",
    "produces",
    "causes",
    "performs",
    "carries_out",
    "exhibits",
    "practices",
    "occurs_in",
    "process_of",
    "uses",
    "manifestation_of",
    "indicates",
    "result_of",
    "temporally_related_to",
    "co-occurs_with",
    "precedes",
    "conceptually_related_to",
    "evaluation_of",
    "degree_of",
    "analyzes",
    "assesses_effect_of",
    "measurement_of",
    "measures",
    "diagnoses",
    "property_of",
    "derivative_of",
    "developmental_form_of",
    "method_of",
    "conceptual_part_of",
    "issue_in",
});

// Structural relations added on top of the semantic network.
inline constexpr auto kStructuralRelations = std::to_array<std::string_view>({
    "contains", "was_published_in", "has_title", "has_keyword"});

inline bool is_semantic_relation(std::string_view name) {
  return std::find(kSemanticRelations.begin(), kSemanticRelations.end(),
                   name) != kSemanticRelations.end();
}

inline bool is_known_relation(std::string_view name) {
  return is_semantic_relation(name) ||
         std::find(kStructuralRelations.begin(), kStructuralRelations.end(),
                   name) != kStructuralRelations.end();
}

struct LexiconLoad {
  Lexicon lexicon;
  std::size_t dropped_without_definition = 0;
};

namespace corpus_detail {

inline bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

inline const json& require(const json& obj, const char* key,
                           std::size_t line) {
  if (!obj.is_object() || !obj.contains(key))
    throw Error(ErrorKind::missing_field, "line " + std::to_string(line) +
                                              ": missing field \"" + key +
                                              "\"");
  return obj.at(key);
}

inline std::string require_string(const json& obj, const char* key,
                                  std::size_t line) {
  const json& v = require(obj, key, line);
  if (!v.is_string())
    throw ParseError(line, std::string("field \"") + key + "\" must be a string");
  return v.get<std::string>();
}

inline bool valid_iso_date(std::string_view d) {
  if (d.size() != 10 || d[4] != '-' || d[7] != '-') return false;
  for (std::size_t i : {0, 1, 2, 3, 5, 6, 8, 9})
    if (!std::isdigit(static_cast<unsigned char>(d[i]))) return false;
  const int month = (d[5] - '0') * 10 + (d[6] - '0');
  const int day = (d[8] - '0') * 10 + (d[9] - '0');
  return month >= 1 && month <= 12 && day >= 1 && day <= 31;
}

inline Section parse_section(const json& j, std::size_t line) {
  Section s{require_string(j, "title", line), require_string(j, "text", line)};
  if (blank(s.text)) throw ParseError(line, "section text is empty");
  return s;
}

}  // namespace corpus_detail

/// Parses one JSON-lines record. `line` is only used for diagnostics.
inline Article parse_article(std::string_view record, std::size_t line = 1) {
  using namespace corpus_detail;
  json j;
  try {
    j = json::parse(record);
  } catch (const json::parse_error& e) {
    throw ParseError(line, e.what());
  }
  if (!j.is_object()) throw ParseError(line, "article must be a JSON object");

  Article a;
  a.id = require_string(j, "id", line);
  if (a.id.empty()) throw ParseError(line, "article id is empty");
  a.title = require_string(j, "title", line);
  const json& kws = require(j, "keywords", line);
  if (!kws.is_array()) throw ParseError(line, "keywords must be an array");
  for (const auto& k : kws) {
    if (!k.is_string()) throw ParseError(line, "keyword must be a string");
    a.keywords.push_back(k.get<std::string>());
  }
  a.pub_date = require_string(j, "pub_date", line);
  if (!valid_iso_date(a.pub_date))
    throw ParseError(line, "pub_date is not an ISO-8601 date: " + a.pub_date);
  a.abstract = parse_section(require(j, "abstract", line), line);
  const json& secs = require(j, "sections", line);
  if (!secs.is_array()) throw ParseError(line, "sections must be an array");
  for (const auto& s : secs) a.sections.push_back(parse_section(s, line));
  if (j.contains("lay_summary") && !j.at("lay_summary").is_null()) {
    if (!j.at("lay_summary").is_string())
      throw ParseError(line, "lay_summary must be a string");
    a.lay_summary = j.at("lay_summary").get<std::string>();
  }
  return a;
}

inline json article_to_json(const Article& a) {
  json j;
  j["id"] = a.id;
  j["title"] = a.title;
  j["keywords"] = a.keywords;
  j["pub_date"] = a.pub_date;
  j["abstract"] = {{"title", a.abstract.title}, {"text", a.abstract.text}};
  j["sections"] = json::array();
  for (const auto& s : a.sections)
    j["sections"].push_back({{"title", s.title}, {"text", s.text}});
  if (a.lay_summary) j["lay_summary"] = *a.lay_summary;
  return j;
}

inline std::string serialize_article(const Article& a) {
  return article_to_json(a).dump();
}

inline std::string serialize_corpus(const Corpus& corpus) {
  std::string out;
  for (const auto& a : corpus) {
    out += serialize_article(a);
    out += '\n';
  }
  return out;
}

/// Reads JSON-lines; blank lines are skipped. Order is preserved.
inline Corpus parse_corpus(std::istream& in) {
  Corpus corpus;
  std::set<std::string> ids;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (corpus_detail::blank(line)) continue;
    Article a = parse_article(line, number);
    if (!ids.insert(a.id).second)
      throw Error(ErrorKind::duplicate_id, "line " + std::to_string(number) +
                                               ": duplicate article id \"" +
                                               a.id + "\"");
    corpus.push_back(std::move(a));
  }
  return corpus;
}

inline Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open corpus " + path);
  return parse_corpus(in);
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path);
  out << serialize_corpus(corpus);
}

inline LexiconLoad parse_lexicon(const json& j) {
  using corpus_detail::blank;
  using corpus_detail::require;
  using corpus_detail::require_string;
  LexiconLoad out;
  Lexicon& lex = out.lexicon;

  for (const auto& [tid, t] : require(j, "semtypes", 0).items()) {
    lex.semtypes[tid] = {tid, require_string(t, "name", 0),
                         require_string(t, "definition", 0)};
  }
  for (const auto& [cid, c] : require(j, "concepts", 0).items()) {
    Concept con;
    con.id = cid;
    for (const auto& n : require(c, "names", 0)) {
      if (!n.is_string() || blank(n.get<std::string>())) continue;
      con.names.push_back(n.get<std::string>());
    }
    if (con.names.empty())
      throw Error(ErrorKind::missing_field, "concept " + cid + " has no names");
    for (const auto& t : require(c, "semtypes", 0)) {
      const std::string tid = t.get<std::string>();
      if (!lex.semtypes.count(tid))
        throw Error(ErrorKind::unresolved_reference,
                    "concept " + cid + " references unknown semtype " + tid);
      con.semtypes.push_back(tid);
    }
    if (con.semtypes.empty())
      throw Error(ErrorKind::missing_field,
                  "concept " + cid + " has no semantic types");
    if (c.contains("definition") && c.at("definition").is_string())
      con.definition = c.at("definition").get<std::string>();
    if (blank(con.definition)) {
      ++out.dropped_without_definition;
      continue;
    }
    lex.concepts[cid] = std::move(con);
  }
  if (j.contains("relations")) {
    for (const auto& r : j.at("relations")) {
      if (!r.is_array() || r.size() != 3)
        throw ParseError(0, "relation must be a [semtype, name, semtype] triple");
      RelationTriple t{r[0].get<std::string>(), r[1].get<std::string>(),
                       r[2].get<std::string>()};
      if (!is_semantic_relation(t.relation))
        throw Error(ErrorKind::unknown_relation,
                    "unknown relation name \"" + t.relation + "\"");
      if (!lex.semtypes.count(t.from) || !lex.semtypes.count(t.to))
        throw Error(ErrorKind::unresolved_reference,
                    "relation references unknown semtype");
      lex.relations.push_back(std::move(t));
    }
  }
  return out;
}

inline LexiconLoad load_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open lexicon " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(0, e.what());
  }
  return parse_lexicon(j);
}

inline json lexicon_to_json(const Lexicon& lex) {
  json j;
  j["semtypes"] = json::object();
  for (const auto& [id, t] : lex.semtypes)
    j["semtypes"][id] = {{"name", t.name}, {"definition", t.definition}};
  j["concepts"] = json::object();
  for (const auto& [id, c] : lex.concepts)
    j["concepts"][id] = {{"names", c.names},
                         {"definition", c.definition},
                         {"semtypes", c.semtypes}};
  j["relations"] = json::array();
  for (const auto& r : lex.relations)
    j["relations"].push_back({r.from, r.relation, r.to});
  return j;
}

}  // namespace graphlay
