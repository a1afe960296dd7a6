#include <gtest/gtest.h>

#include <random>

#include "graphlay/metrics.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace graphlay;
namespace ts = testing_support;

namespace {

const WordLists& lists() {
  static const WordLists l = WordLists::load(ts::data_file(""));
  return l;
}

}  // namespace

// ---------------------------------------------------------------- ROUGE

TEST(Rouge, HandExamples) {
  EXPECT_DOUBLE_EQ(rouge_n("a b c", "a b c", 1).f1, 100.0);
  EXPECT_DOUBLE_EQ(rouge_n("a b c", "a b c", 2).f1, 100.0);
  EXPECT_NEAR(rouge_n("a b c", "a b d", 1).f1, 66.6667, 1e-4);
  EXPECT_EQ(rouge_n("a b c", "a x c", 2).f1, 0.0);
  EXPECT_DOUBLE_EQ(rouge_l("a b c d", "a c b d").f1, 75.0);
  EXPECT_EQ(rouge_l("", "a b").f1, 0.0);
  EXPECT_EQ(lcs_length({"a", "b", "c", "d"}, {"a", "c", "b", "d"}), 3u);
}

TEST(Rouge, ClippedCounts) {
  // Candidate repeats "the" four times; reference has it twice.
  const auto s = rouge_n("the the the the", "the cat the", 1);
  EXPECT_DOUBLE_EQ(s.precision, 50.0);
  EXPECT_NEAR(s.recall, 200.0 / 3.0, 1e-12);
}

TEST(Rouge, FuzzAgainstBruteForce) {
  std::mt19937_64 gen(2024);
  for (int i = 0; i < 500; ++i) {
    const auto c = oracles::random_tokens(gen, 10), r = oracles::random_tokens(gen, 10);
    const auto cs = oracles::join(c), rs = oracles::join(r);
    EXPECT_NEAR(rouge_n(cs, rs, 1).f1, oracles::rouge_n_f1(c, r, 1), 1e-9) << cs << " | " << rs;
    EXPECT_NEAR(rouge_n(cs, rs, 2).f1, oracles::rouge_n_f1(c, r, 2), 1e-9) << cs << " | " << rs;
    EXPECT_NEAR(rouge_l(cs, rs).f1, oracles::rouge_l_f1(c, r), 1e-9) << cs << " | " << rs;
    EXPECT_NEAR(abstractiveness(cs, rs), oracles::abstractiveness(c, r), 1e-9);
    // F1 is symmetric.
    EXPECT_NEAR(rouge_n(cs, rs, 1).f1, rouge_n(rs, cs, 1).f1, 1e-9);
    EXPECT_NEAR(rouge_l(cs, rs).f1, rouge_l(rs, cs).f1, 1e-9);
  }
}

// ---------------------------------------------------------------- readability

TEST(Syllables, Heuristic) {
  EXPECT_EQ(count_syllables("test"), 1u);
  EXPECT_EQ(count_syllables("cake"), 1u);
  EXPECT_EQ(count_syllables("table"), 2u);
  EXPECT_EQ(count_syllables("the"), 1u);
  EXPECT_EQ(count_syllables("rhythm"), 1u);
  EXPECT_EQ(count_syllables("banana"), 3u);
  EXPECT_EQ(count_syllables("42"), 1u);
}

TEST(Readability, HandDerivedSentence) {
  EXPECT_NEAR(fkgl("This is a test."), -2.23, 1e-6);
  EXPECT_NEAR(cli_index("This is a test."), -7.03, 1e-6);
}

TEST(Readability, DuplicationInvariance) {
  const std::string s = "Cells divide when the body grows quickly.";
  const std::string d = s + " " + s;
  EXPECT_NEAR(fkgl(s), fkgl(d), 1e-12);
  EXPECT_NEAR(cli_index(s), cli_index(d), 1e-12);
  EXPECT_NEAR(dcrs(s, lists().familiar), dcrs(d, lists().familiar), 1e-12);
}

TEST(Readability, EmptyTextRejected) {
  EXPECT_THROW(fkgl(""), Error);
  EXPECT_THROW(cli_index("  "), Error);
  EXPECT_THROW(dcrs("", lists().familiar), Error);
  EXPECT_THROW(wordrank("", lists().ranked), Error);
}

TEST(Dcrs, HandDerivedCases) {
  const auto familiar = WordList::from_words({"one", "two", "three", "four", "five"});
  EXPECT_NEAR(dcrs("one two three four five one two three four five.", familiar), 0.496, 1e-12);
  EXPECT_NEAR(dcrs("Zeta eta theta iota kappa lambda mu nu xi omicron.", familiar),
              0.1579 * 100 + 0.496 + 3.6365, 1e-12);
  // Numerals are never difficult.
  EXPECT_NEAR(dcrs("one 2 three 4 five 6 one 8 three 10.", familiar), 0.496, 1e-12);
}

TEST(WordRank, HandDerivedCases) {
  const auto ranked = WordList::from_words({"a", "b", "c", "d", "e", "f", "g", "h"});
  EXPECT_EQ(wordrank("a a a", ranked), 0.0);
  EXPECT_DOUBLE_EQ(wordrank("b h", ranked), 2.0);
  std::vector<std::string> many;
  for (int i = 0; i < 1024; ++i) many.push_back("w" + std::to_string(i));
  EXPECT_DOUBLE_EQ(wordrank("unlisted", WordList::from_words(many)), 10.0);
}

TEST(Abstractiveness, HandCases) {
  EXPECT_DOUBLE_EQ(abstractiveness("x y", "x"), 50.0);
  EXPECT_EQ(abstractiveness("x", "x y z"), 0.0);
  EXPECT_EQ(abstractiveness("", "x"), 0.0);
}

TEST(Readability, FixtureAbstractsHarderThanLaySummaries) {
  for (const auto& a : ts::fixture_corpus()) {
    EXPECT_GT(fkgl(a.abstract.text), fkgl(*a.lay_summary)) << a.id;
    EXPECT_GT(cli_index(a.abstract.text), cli_index(*a.lay_summary)) << a.id;
  }
}

// ---------------------------------------------------------------- statistics

TEST(MannWhitney, HandExamples) {
  const auto r = mann_whitney_u({1, 2}, {3, 4});
  EXPECT_EQ(r.u, 0.0);
  EXPECT_NEAR(r.p, 1.0 / 3.0, 1e-12);
  EXPECT_TRUE(r.exact);
  EXPECT_DOUBLE_EQ(mann_whitney_u({1, 2, 2}, {2, 1, 2}).p, 1.0);
  EXPECT_THROW(mann_whitney_u({}, {1}), Error);
}

TEST(MannWhitney, ExactMatchesEnumerationFuzz) {
  std::mt19937_64 gen(77);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> a(1 + gen() % 6), b(1 + gen() % 6);
    for (double& v : a) v = static_cast<double>(gen() % 5);
    for (double& v : b) v = static_cast<double>(gen() % 5);
    const auto r = mann_whitney_u(a, b);
    EXPECT_NEAR(r.u, oracles::u_statistic(a, b), 1e-12);
    EXPECT_NEAR(r.p, oracles::exact_p(a, b), 1e-12);
    EXPECT_NEAR(r.u + mann_whitney_u(b, a).u, static_cast<double>(a.size() * b.size()), 1e-12);
  }
}

TEST(MannWhitney, NormalApproximationForLargeSamples) {
  std::vector<double> a, b;
  for (int i = 0; i < 20; ++i) {
    a.push_back(i);
    b.push_back(i + 30);
  }
  const auto r = mann_whitney_u(a, b);
  EXPECT_FALSE(r.exact);
  EXPECT_EQ(r.u, 0.0);
  EXPECT_LT(r.p, 1e-6);
  EXPECT_DOUBLE_EQ(mann_whitney_u(a, a).p, 1.0);
  // Hand value: mean 200, var = 20*20*41/12, z = (200 - 0.5)/sqrt(var)
  const double z = 199.5 / std::sqrt(400.0 * 41.0 / 12.0);
  EXPECT_NEAR(r.p, std::erfc(z / std::sqrt(2.0)), 1e-15);
}

TEST(Kappa, Cases) {
  EXPECT_DOUBLE_EQ(cohens_kappa({1, 0, 1, 0}, {1, 0, 1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(cohens_kappa({1, 0, 1, 0}, {1, 1, 0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(cohens_kappa({1, 1, 1}, {1, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(cohens_kappa({1, 0}, {0, 1}), -1.0);
  // p_o = 3/4, p_e = 1/2 * 3/4 + 1/2 * 1/4 = 1/2
  EXPECT_DOUBLE_EQ(cohens_kappa({1, 1, 0, 0}, {1, 1, 1, 0}), 0.5);
  EXPECT_THROW(cohens_kappa({1}, {1, 0}), Error);
  std::mt19937_64 gen(4);
  for (int t = 0; t < 200; ++t) {
    std::vector<int> x(1 + gen() % 12), y(x.size());
    for (auto& v : x) v = static_cast<int>(gen() % 2);
    for (auto& v : y) v = static_cast<int>(gen() % 2);
    const double k = cohens_kappa(x, y);
    EXPECT_GE(k, -1.0 - 1e-12);
    EXPECT_LE(k, 1.0 + 1e-12);
  }
}

// ---------------------------------------------------------------- reports

TEST(EvaluateRun, BaseAgainstItself) {
  const auto corpus = ts::fixture_corpus();
  std::map<std::string, std::string> refs, srcs, outs;
  for (const auto& a : corpus) {
    refs[a.id] = *a.lay_summary;
    srcs[a.id] = article_text(a);
    outs[a.id] = a.abstract.text;
  }
  const auto rows =
      evaluate_run({{"base", outs}, {"copy", outs}, {"oracle", refs}}, refs, srcs, "base", lists());
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_TRUE(rows[0].p_values.empty());
  for (const auto& [m, p] : rows[1].p_values) EXPECT_DOUBLE_EQ(p, 1.0) << m;
  EXPECT_TRUE(rows[1].significant.empty());
  EXPECT_DOUBLE_EQ(rows[2].means.at("R1"), 100.0);
  EXPECT_DOUBLE_EQ(rows[2].means.at("R2"), 100.0);
  EXPECT_DOUBLE_EQ(rows[2].means.at("RL"), 100.0);
  const std::string md = report_markdown(rows);
  EXPECT_NE(md.find("| oracle | 100.00"), std::string::npos);
  EXPECT_EQ(rows[0].to_json()["BERTScore"], "n/a (out of scope)");
}

TEST(EvaluateRun, MatchesScriptedRecomputation) {
  const auto corpus = ts::fixture_corpus();
  std::map<std::string, std::string> refs, srcs, base, other;
  for (const auto& a : corpus) {
    refs[a.id] = *a.lay_summary;
    srcs[a.id] = article_text(a);
    base[a.id] = a.abstract.text;
    other[a.id] = a.sections[0].text;
  }
  const auto rows = evaluate_run({{"base", base}, {"other", other}}, refs, srcs, "base", lists());
  double r1 = 0, rl = 0, nov = 0;
  std::vector<double> r1_other, r1_base;
  for (const auto& a : corpus) {
    const auto c = words(other[a.id]), r = words(refs[a.id]), s = words(srcs[a.id]);
    r1 += oracles::rouge_n_f1(c, r, 1);
    rl += oracles::rouge_l_f1(c, r);
    nov += oracles::abstractiveness(c, s);
    r1_other.push_back(oracles::rouge_n_f1(c, r, 1));
    r1_base.push_back(oracles::rouge_n_f1(words(base[a.id]), r, 1));
  }
  EXPECT_NEAR(rows[1].means.at("R1"), r1 / 8, 1e-9);
  EXPECT_NEAR(rows[1].means.at("RL"), rl / 8, 1e-9);
  EXPECT_NEAR(rows[1].means.at("Abstractiveness"), nov / 8, 1e-9);
  // 16 pooled documents: normal approximation, recomputed from pairwise U.
  const double u = oracles::u_statistic(r1_other, r1_base);
  EXPECT_NEAR(mann_whitney_u(r1_other, r1_base).u, u, 1e-9);
  EXPECT_DOUBLE_EQ(rows[1].p_values.at("R1"), mann_whitney_u(r1_other, r1_base).p);
}

TEST(EvaluateRun, Misalignment) {
  std::map<std::string, std::string> refs{{"a", "x"}}, srcs{{"a", "x"}};
  EXPECT_THROW(evaluate_run({{"base", {{"b", "x"}}}}, refs, srcs, "base", lists()), Error);
  EXPECT_THROW(evaluate_run({{"m", {{"a", "x"}}}}, refs, srcs, "base", lists()), Error);
  EXPECT_THROW(evaluate_run({{"base", {{"a", "x"}}}, {"m", {}}}, refs, srcs, "base", lists()),
               Error);
}

TEST(EvaluateRun, EmptySummaryScoresZeroWithoutReadability) {
  std::map<std::string, std::string> refs{{"a", "x y"}}, srcs{{"a", "x"}};
  const auto d = score_document("a", "", refs["a"], srcs["a"], lists());
  EXPECT_EQ(d.values.at("R1"), 0.0);
  EXPECT_EQ(d.values.count("FKGL"), 0u);
}

TEST(WordLists, ShippedListsLoad) {
  EXPECT_GT(lists().familiar.size(), 2000u);
  EXPECT_EQ(lists().ranked.size(), 10000u);
  EXPECT_EQ(lists().ranked.rank.at("the"), 1u);
  EXPECT_TRUE(lists().familiar.contains("cat"));
}
