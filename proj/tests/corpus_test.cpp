#include <gtest/gtest.h>

#include <sstream>

#include "graphlay/corpus.hpp"
#include "graphlay/synth.hpp"
#include "graphlay/concepts.hpp"
#include "test_support.hpp"

using namespace graphlay;
namespace ts = testing_support;

namespace {

const char* kMinimal =
    R"({"id":"a1","title":"T","keywords":[],"pub_date":"2020-01-02",)"
    R"("abstract":{"title":"Abstract","text":"Some text."},"sections":[]})";

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::io;
}

}  // namespace

TEST(Corpus, MinimalArticle) {
  std::istringstream in(std::string(kMinimal) + "\n");
  const Corpus c = parse_corpus(in);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].id, "a1");
  EXPECT_FALSE(c[0].lay_summary.has_value());
}

TEST(Corpus, DuplicateIdRejected) {
  std::istringstream in(std::string(kMinimal) + "\n" + kMinimal + "\n");
  EXPECT_EQ(kind_of([&] { parse_corpus(in); }), ErrorKind::duplicate_id);
}

TEST(Corpus, ParseErrorCarriesLine) {
  std::istringstream in(std::string(kMinimal) + "\n{not json\n");
  try {
    parse_corpus(in);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Corpus, MissingFieldAndBadValues) {
  EXPECT_EQ(kind_of([] { parse_article(R"({"id":"x"})"); }), ErrorKind::missing_field);
  nlohmann::json j = nlohmann::json::parse(kMinimal);
  j["pub_date"] = "2020-13-01";
  EXPECT_NE(kind_of([&] { parse_article(j.dump()); }), ErrorKind::io);
  j = nlohmann::json::parse(kMinimal);
  j["sections"] = {{{"title", "Intro"}, {"text", "  "}}};
  EXPECT_NE(kind_of([&] { parse_article(j.dump()); }), ErrorKind::io);
}

TEST(Corpus, FixtureMatchesManifest) {
  const Corpus c = ts::fixture_corpus();
  ASSERT_EQ(c.size(), 8u);
  for (const auto& a : c) {
    EXPECT_EQ(a.sections.size(), 2u) << a.id;
    EXPECT_TRUE(a.lay_summary.has_value());
  }
}

TEST(Corpus, SerializeRoundTrip) {
  const Corpus c = ts::fixture_corpus();
  std::istringstream in(serialize_corpus(c));
  EXPECT_EQ(parse_corpus(in), c);
}

TEST(Lexicon, MiniLexiconIsClean) {
  const auto load = load_lexicon(ts::data_file("mini_lexicon.json"));
  EXPECT_EQ(load.dropped_without_definition, 0u);
  EXPECT_EQ(load.lexicon.concepts.size(), 12u);
  EXPECT_EQ(load.lexicon.semtypes.size(), 6u);
}

TEST(Lexicon, ConceptWithoutDefinitionIsDropped) {
  auto j = ts::read_json(ts::data_file("mini_lexicon.json"));
  j["concepts"]["C0018787"]["definition"] = "";
  const auto load = parse_lexicon(j);
  EXPECT_EQ(load.dropped_without_definition, 1u);
  EXPECT_EQ(load.lexicon.concepts.count("C0018787"), 0u);
}

TEST(Lexicon, UnknownRelationRejected) {
  auto j = ts::read_json(ts::data_file("mini_lexicon.json"));
  j["relations"].push_back({"T025", "frobnicates", "T167"});
  EXPECT_EQ(kind_of([&] { parse_lexicon(j); }), ErrorKind::unknown_relation);
}

TEST(Lexicon, UnresolvedSemtypeRejected) {
  auto j = ts::read_json(ts::data_file("mini_lexicon.json"));
  j["concepts"]["C0018787"]["semtypes"] = {"T999"};
  EXPECT_EQ(kind_of([&] { parse_lexicon(j); }), ErrorKind::unresolved_reference);
}

TEST(Lexicon, RoundTrip) {
  const Lexicon lex = ts::mini_lexicon();
  const auto again = parse_lexicon(lexicon_to_json(lex)).lexicon;
  EXPECT_EQ(lexicon_to_json(again), lexicon_to_json(lex));
}

TEST(Relations, SemanticNetworkHas54Relations) {
  EXPECT_EQ(kSemanticRelations.size(), 54u);
  EXPECT_TRUE(is_semantic_relation("is_a"));
  EXPECT_TRUE(is_semantic_relation("affects"));
  EXPECT_FALSE(is_semantic_relation("has_keyword"));
  EXPECT_TRUE(is_known_relation("has_keyword"));
}

TEST(Synthetic, DeterministicPerSeed) {
  const Lexicon lex = ts::mini_lexicon();
  EXPECT_EQ(serialize_corpus(generate_synthetic_corpus(7, 1, lex)),
            serialize_corpus(generate_synthetic_corpus(7, 1, lex)));
  EXPECT_NE(serialize_corpus(generate_synthetic_corpus(7, 8, lex)),
            serialize_corpus(generate_synthetic_corpus(8, 8, lex)));
}

TEST(Synthetic, EveryAbstractNamesAConcept) {
  const Lexicon lex = ts::mini_lexicon();
  for (const auto& a : generate_synthetic_corpus(7, 8, lex)) {
    EXPECT_FALSE(match_concepts(a.abstract.text, lex, MatchMode::exact).empty()) << a.id;
    ASSERT_TRUE(a.lay_summary.has_value());
  }
}

TEST(Synthetic, SectionsNameThreeConcepts) {
  const Lexicon lex = ts::mini_lexicon();
  for (const auto& a : generate_synthetic_corpus(11, 20, lex)) {
    const auto map = extract_article_concepts(a, lex);
    for (const auto& [idx, ids] : map) EXPECT_GE(ids.size(), 3u) << a.id << " " << idx;
  }
}

TEST(Synthetic, RejectsTinyLexicon) {
  Lexicon empty;
  EXPECT_THROW(generate_synthetic_corpus(7, 1, empty), Error);
}
