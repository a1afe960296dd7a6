#include <gtest/gtest.h>

#include <thread>

#include "graphlay/annotation_server.hpp"
#include "test_support.hpp"

using namespace graphlay;
namespace ts = testing_support;

namespace {

std::vector<RunOutputs> two_runs() {
  RunOutputs base{"base", {}}, enh{"enhanced", {}};
  for (const auto& a : ts::fixture_corpus()) {
    base.summaries[a.id] = "The study looked at " + a.title + ". It found a change.";
    enh.summaries[a.id] = "Scientists studied " + a.title + ".";
  }
  return {base, enh};
}

SessionOptions options(std::size_t sample = 3) {
  SessionOptions o;
  o.sample_size = sample;
  o.seed = 7;
  return o;
}

Judgment verdict(std::size_t task, const std::string& judge, bool r, bool f) {
  return Judgment{task, judge, r, f, "2020-01-01T00:00:00Z"};
}

// Readable iff the task id is even; factual iff it belongs to the base model.
void judge_everything(AnnotationSession& s, const std::string& judge) {
  while (auto t = s.next_task(judge))
    s.submit(verdict(t->task_id, judge, t->task_id % 2 == 0, t->model_name == "base"));
}

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

TEST(Session, TaskEnumeration) {
  const auto dir = ts::scratch_dir("ann-tasks");
  AnnotationSession s(two_runs(), ts::fixture_corpus(), options(), (dir / "log.jsonl").string());
  ASSERT_EQ(s.sample().size(), 3u);
  EXPECT_TRUE(std::is_sorted(s.sample().begin(), s.sample().end()));
  // Two sentences from base, one from enhanced, per sampled article.
  ASSERT_EQ(s.tasks().size(), 9u);
  for (std::size_t i = 0; i < s.tasks().size(); ++i) {
    const auto& t = s.tasks()[i];
    EXPECT_EQ(t.task_id, i);
    EXPECT_EQ(t.article_sections.front().title, "Abstract");
    EXPECT_EQ(t.article_sections.size(), 3u);
    EXPECT_FALSE(t.reference_lay_summary.empty());
  }
  EXPECT_EQ(s.tasks()[1].sentence_text, "It found a change.");
  EXPECT_EQ(s.tasks()[2].model_name, "enhanced");
  const auto blind = s.tasks()[0].to_json(true);
  EXPECT_EQ(blind["system"].get<std::string>().rfind("System ", 0), 0u);
  EXPECT_EQ(blind.dump().find("base"), std::string::npos);
}

TEST(Session, SamplingIsSeeded) {
  const auto dir = ts::scratch_dir("ann-seed");
  AnnotationSession a(two_runs(), ts::fixture_corpus(), options(), (dir / "a").string());
  AnnotationSession b(two_runs(), ts::fixture_corpus(), options(), (dir / "b").string());
  EXPECT_EQ(a.sample(), b.sample());
  AnnotationSession all(two_runs(), ts::fixture_corpus(), options(50), (dir / "c").string());
  EXPECT_EQ(all.sample().size(), 8u);
}

TEST(Session, NextTaskAndErrors) {
  const auto dir = ts::scratch_dir("ann-next");
  AnnotationSession s(two_runs(), ts::fixture_corpus(), options(), (dir / "log").string());
  EXPECT_EQ(s.next_task("j1")->task_id, 0u);
  EXPECT_EQ(s.submit(verdict(0, "j1", true, true)), 1u);
  EXPECT_EQ(s.next_task("j1")->task_id, 1u);
  EXPECT_EQ(s.next_task("j2")->task_id, 0u);
  EXPECT_EQ(kind_of([&] { s.submit(verdict(0, "j1", false, false)); }), ErrorKind::conflict);
  EXPECT_EQ(kind_of([&] { s.submit(verdict(99, "j1", false, false)); }), ErrorKind::not_found);
  EXPECT_EQ(kind_of([&] { s.submit(verdict(1, "", false, false)); }), ErrorKind::invalid_argument);
  EXPECT_EQ(s.log_length(), 1u);
  judge_everything(s, "j1");
  EXPECT_FALSE(s.next_task("j1").has_value());
  EXPECT_EQ(s.judged_by("j1"), 9u);
}

TEST(Session, ResultsMatchHandTally) {
  const auto dir = ts::scratch_dir("ann-tally");
  AnnotationSession s(two_runs(), ts::fixture_corpus(), options(), (dir / "log").string());
  judge_everything(s, "j1");
  judge_everything(s, "j2");
  const auto r = s.results();
  // Task ids: base 0,1 3,4 6,7; enhanced 2,5,8.
  // Base readable (even ids): 0,4,6 -> 3/6. Enhanced readable: 2,8 -> 2/3.
  const auto& base = r["models"][0];
  const auto& enh = r["models"][1];
  EXPECT_EQ(base["model"], "base");
  EXPECT_EQ(base["sentences"], 6);
  EXPECT_EQ(base["judges"], 2);
  EXPECT_EQ(base["judged"], 12);
  EXPECT_DOUBLE_EQ(base["readability_pct"].get<double>(), 50.0);
  EXPECT_DOUBLE_EQ(base["factuality_pct"].get<double>(), 100.0);
  EXPECT_NEAR(enh["readability_pct"].get<double>(), 200.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(enh["factuality_pct"].get<double>(), 0.0);
  // Factuality: enhanced all 0 vs base all 1. Of the C(9,3) = 84 relabellings
  // only the observed one is as extreme.
  EXPECT_NEAR(enh["factuality_p"].get<double>(), 1.0 / 84.0, 1e-12);
  ASSERT_EQ(r["agreement"].size(), 1u);
  EXPECT_DOUBLE_EQ(r["agreement"][0]["kappa_readability"].get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(r["agreement"][0]["kappa_factuality"].get<double>(), 1.0);
}

TEST(Session, RestartReplaysLog) {
  const auto dir = ts::scratch_dir("ann-restart");
  const std::string log = (dir / "log").string();
  nlohmann::json before;
  {
    AnnotationSession s(two_runs(), ts::fixture_corpus(), options(), log);
    judge_everything(s, "j1");
    for (std::size_t t = 0; t < 4; ++t) s.submit(verdict(t, "j2", t != 1, true));
    before = s.results();
  }
  AnnotationSession again(two_runs(), ts::fixture_corpus(), options(), log);
  EXPECT_EQ(again.log_length(), 13u);
  EXPECT_EQ(again.results(), before);
  EXPECT_EQ(again.next_task("j2")->task_id, 4u);
  EXPECT_EQ(kind_of([&] { again.submit(verdict(0, "j2", true, true)); }), ErrorKind::conflict);
  EXPECT_EQ(again.log_length(), 13u);
}

TEST(Session, TornTailIsDropped) {
  const auto dir = ts::scratch_dir("ann-torn");
  const std::string log = (dir / "log").string();
  {
    AnnotationSession s(two_runs(), ts::fixture_corpus(), options(), log);
    s.submit(verdict(0, "j1", true, true));
  }
  {
    std::ofstream out(log, std::ios::app);
    out << "{\"task_id\":1,\"judge";
  }
  AnnotationSession s(two_runs(), ts::fixture_corpus(), options(), log);
  EXPECT_EQ(s.log_length(), 1u);
  s.submit(verdict(1, "j1", true, false));
  AnnotationSession t(two_runs(), ts::fixture_corpus(), options(), log);
  EXPECT_EQ(t.log_length(), 2u);
}

TEST(Session, CorruptLogLineIsAParseError) {
  const auto dir = ts::scratch_dir("ann-corrupt");
  const std::string log = (dir / "log").string();
  {
    std::ofstream out(log);
    out << "not json\n";
  }
  EXPECT_THROW(AnnotationSession(two_runs(), ts::fixture_corpus(), options(), log), ParseError);
}

TEST(Judgment, StrictParsing) {
  EXPECT_THROW(Judgment::from_json({{"task_id", 1}, {"judge_id", "j"}, {"readability", 1},
                                    {"factuality", true}}),
               Error);
  EXPECT_THROW(Judgment::from_json({{"task_id", -1}, {"judge_id", "j"}, {"readability", true},
                                    {"factuality", true}}),
               Error);
  const auto j = Judgment::from_json(
      {{"task_id", 3}, {"judge_id", "j"}, {"readability", true}, {"factuality", false}});
  EXPECT_EQ(j.task_id, 3u);
  EXPECT_FALSE(j.factuality);
}

TEST(Http, EndToEnd) {
  const auto dir = ts::scratch_dir("ann-http");
  AnnotationSession s(two_runs(), ts::fixture_corpus(), options(), (dir / "log").string());
  httplib::Server server;
  install_annotation_routes(server, s);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client c("127.0.0.1", port);
  auto res = c.Get("/api/session");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(nlohmann::json::parse(res->body)["tasks"], 9);

  EXPECT_EQ(c.Get("/api/tasks/next")->status, 400);
  res = c.Get("/api/tasks/next?judge=j1");
  auto body = nlohmann::json::parse(res->body);
  EXPECT_EQ(body["done"], false);
  EXPECT_EQ(body["task"]["task_id"], 0);
  EXPECT_EQ(body["progress"]["total"], 9);

  const std::string ok =
      R"({"task_id":0,"judge_id":"j1","readability":true,"factuality":false})";
  res = c.Post("/api/judgments", ok, "application/json");
  EXPECT_EQ(res->status, 201);
  EXPECT_EQ(nlohmann::json::parse(res->body)["log_length"], 1);
  EXPECT_EQ(c.Post("/api/judgments", ok, "application/json")->status, 409);
  EXPECT_EQ(c.Post("/api/judgments", "{oops", "application/json")->status, 400);
  EXPECT_EQ(c.Post("/api/judgments",
                   R"({"task_id":50,"judge_id":"j1","readability":true,"factuality":false})",
                   "application/json")
                ->status,
            404);
  EXPECT_EQ(c.Post("/api/judgments", R"({"task_id":1,"judge_id":"j1"})", "application/json")
                ->status,
            400);
  EXPECT_EQ(s.log_length(), 1u);

  res = c.Get("/api/results");
  body = nlohmann::json::parse(res->body);
  EXPECT_EQ(body["judgments"], 1);
  EXPECT_DOUBLE_EQ(body["models"][0]["readability_pct"].get<double>(), 100.0);

  server.stop();
  th.join();
}
