#pragma once

// Sentence-level human evaluation: task enumeration over sampled summaries,
// an append-only judgment log, and per-model results with agreement and
// significance. The HTTP front end lives in annotation_server.hpp.

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "graphlay/corpus.hpp"
#include "graphlay/error.hpp"
#include "graphlay/metrics.hpp"
#include "graphlay/rng.hpp"
#include "graphlay/text.hpp"

namespace graphlay {

struct JudgmentTask {
  std::size_t task_id = 0;
  std::string model_name;
  std::string blind_code;
  std::string article_id;
  std::size_t sentence_index = 0;
  std::string sentence_text;
  std::vector<Section> article_sections;  // abstract first
  std::string reference_lay_summary;

  /// Payload for judges; the model name is withheld when blind.
  nlohmann::json to_json(bool blind) const {
    nlohmann::json sections = nlohmann::json::array();
    for (const auto& s : article_sections)
      sections.push_back({{"title", s.title}, {"text", s.text}});
    nlohmann::json j{{"task_id", task_id},
                     {"system", blind ? blind_code : model_name},
                     {"article_id", article_id},
                     {"sentence_index", sentence_index},
                     {"sentence_text", sentence_text},
                     {"article_sections", sections},
                     {"reference_lay_summary", reference_lay_summary}};
    return j;
  }
};

struct Judgment {
  std::size_t task_id = 0;
  std::string judge_id;
  bool readability = false;
  bool factuality = false;
  std::string timestamp;

  nlohmann::json to_json() const {
    return {{"task_id", task_id},
            {"judge_id", judge_id},
            {"readability", readability},
            {"factuality", factuality},
            {"timestamp", timestamp}};
  }

  /// Strict: both verdicts must be booleans and the judge id non-empty.
  static Judgment from_json(const nlohmann::json& j) {
    auto bad = [](const std::string& w) { throw Error(ErrorKind::invalid_argument, w); };
    if (!j.is_object()) bad("judgment must be a JSON object");
    for (const char* k : {"task_id", "judge_id", "readability", "factuality"})
      if (!j.contains(k)) bad(std::string("judgment lacks \"") + k + "\"");
    if (!j["task_id"].is_number_integer() || j["task_id"].get<long long>() < 0)
      bad("task_id must be a non-negative integer");
    if (!j["judge_id"].is_string() || j["judge_id"].get<std::string>().empty())
      bad("judge_id must be a non-empty string");
    if (!j["readability"].is_boolean() || !j["factuality"].is_boolean())
      bad("readability and factuality must be booleans");
    Judgment out;
    out.task_id = j["task_id"];
    out.judge_id = j["judge_id"];
    out.readability = j["readability"];
    out.factuality = j["factuality"];
    if (j.contains("timestamp") && j["timestamp"].is_string()) out.timestamp = j["timestamp"];
    return out;
  }
};

struct RunOutputs {
  std::string model_name;
  std::map<std::string, std::string> summaries;
};

struct SessionOptions {
  std::size_t sample_size = 5;
  std::uint64_t seed = 7;
  bool blind = true;
  std::string base_model = "base";
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Appends one line and fsyncs before returning.
class AppendLog {
 public:
  explicit AppendLog(std::string path) : path_(std::move(path)) {
    fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd_ < 0) throw Error(ErrorKind::io, "cannot open judgment log " + path_);
  }
  AppendLog(const AppendLog&) = delete;
  AppendLog& operator=(const AppendLog&) = delete;
  ~AppendLog() {
    if (fd_ >= 0) ::close(fd_);
  }

  void append(const std::string& line) {
    std::string data = line + "\n";
    const char* p = data.data();
    std::size_t left = data.size();
    while (left > 0) {
      const ssize_t n = ::write(fd_, p, left);
      if (n < 0) throw Error(ErrorKind::io, "write to judgment log failed");
      p += n;
      left -= static_cast<std::size_t>(n);
    }
    if (::fsync(fd_) != 0) throw Error(ErrorKind::io, "fsync of judgment log failed");
  }

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  int fd_ = -1;
};

class AnnotationSession {
 public:
  /// Samples `sample_size` articles present in every run, then enumerates one
  /// task per summary sentence, ordered by article, model, sentence. Replays
  /// any judgments already in the log.
  AnnotationSession(const std::vector<RunOutputs>& runs, const Corpus& corpus,
                    SessionOptions options, const std::string& log_path)
      : options_(std::move(options)) {
    if (runs.empty()) throw Error(ErrorKind::invalid_argument, "no runs for the session");
    std::set<std::string> names;
    for (const auto& r : runs) {
      if (r.summaries.empty())
        throw Error(ErrorKind::not_found, "run " + r.model_name + " has no outputs");
      if (!names.insert(r.model_name).second)
        throw Error(ErrorKind::invalid_argument, "duplicate model name " + r.model_name);
    }
    std::map<std::string, const Article*> by_id;
    for (const auto& a : corpus) by_id[a.id] = &a;

    std::vector<std::string> common;
    for (const auto& [id, s] : runs.front().summaries) {
      bool everywhere = by_id.count(id) > 0;
      for (const auto& r : runs) everywhere = everywhere && r.summaries.count(id) > 0;
      if (everywhere) common.push_back(id);
    }
    if (common.empty())
      throw Error(ErrorKind::not_found, "runs share no article present in the corpus");
    Rng rng(options_.seed);
    rng.shuffle(common);
    common.resize(std::min(common.size(), options_.sample_size));
    std::sort(common.begin(), common.end());
    sample_ = common;

    // Blind codes follow a seeded permutation of the models.
    std::vector<std::string> shuffled;
    for (const auto& r : runs) shuffled.push_back(r.model_name);
    rng.shuffle(shuffled);
    for (std::size_t i = 0; i < shuffled.size(); ++i)
      codes_[shuffled[i]] = "System " + std::string(1, static_cast<char>('A' + i % 26)) +
                            (i >= 26 ? std::to_string(i / 26) : "");
    for (const auto& r : runs) models_.push_back(r.model_name);

    for (const auto& aid : sample_) {
      const Article& a = *by_id.at(aid);
      std::vector<Section> sections{a.abstract};
      sections.insert(sections.end(), a.sections.begin(), a.sections.end());
      for (const auto& r : runs) {
        const auto sents = sentences(r.summaries.at(aid));
        for (std::size_t i = 0; i < sents.size(); ++i) {
          JudgmentTask t;
          t.task_id = tasks_.size();
          t.model_name = r.model_name;
          t.blind_code = codes_.at(r.model_name);
          t.article_id = aid;
          t.sentence_index = i;
          t.sentence_text = sents[i];
          t.article_sections = sections;
          t.reference_lay_summary = a.lay_summary.value_or("");
          tasks_.push_back(std::move(t));
        }
      }
    }
    replay(log_path);
    log_ = std::make_unique<AppendLog>(log_path);
  }

  const std::vector<JudgmentTask>& tasks() const { return tasks_; }
  const std::vector<std::string>& sample() const { return sample_; }
  const std::vector<std::string>& models() const { return models_; }
  const SessionOptions& options() const { return options_; }

  std::size_t log_length() const {
    std::shared_lock lock(mu_);
    return judgments_.size();
  }

  std::vector<Judgment> judgments() const {
    std::shared_lock lock(mu_);
    return judgments_;
  }

  std::size_t judged_by(const std::string& judge) const {
    std::shared_lock lock(mu_);
    auto it = done_.find(judge);
    return it == done_.end() ? 0 : it->second.size();
  }

  /// Lowest-indexed task the judge has not judged, or nothing when done.
  std::optional<JudgmentTask> next_task(const std::string& judge) const {
    std::shared_lock lock(mu_);
    auto it = done_.find(judge);
    for (const auto& t : tasks_)
      if (it == done_.end() || !it->second.count(t.task_id)) return t;
    return std::nullopt;
  }

  /// Durably appends the judgment; returns the new log length.
  std::size_t submit(Judgment j) {
    std::unique_lock lock(mu_);
    if (j.judge_id.empty()) throw Error(ErrorKind::invalid_argument, "judge_id is empty");
    if (j.task_id >= tasks_.size())
      throw Error(ErrorKind::not_found, "unknown task " + std::to_string(j.task_id));
    if (done_[j.judge_id].count(j.task_id))
      throw Error(ErrorKind::conflict, "judge " + j.judge_id + " already judged task " +
                                           std::to_string(j.task_id));
    if (j.timestamp.empty()) j.timestamp = utc_timestamp();
    log_->append(j.to_json().dump());
    done_[j.judge_id].insert(j.task_id);
    judgments_.push_back(std::move(j));
    return judgments_.size();
  }

  /// Pure function of the log; timestamps are ignored.
  nlohmann::json results() const {
    std::shared_lock lock(mu_);
    return compute_results(tasks_, judgments_, models_, options_.base_model);
  }

  static nlohmann::json compute_results(const std::vector<JudgmentTask>& tasks,
                                        const std::vector<Judgment>& judgments,
                                        const std::vector<std::string>& models,
                                        const std::string& base_model) {
    // judge -> task -> (readable, factual)
    std::map<std::string, std::map<std::size_t, std::pair<int, int>>> by_judge;
    for (const auto& j : judgments)
      by_judge[j.judge_id][j.task_id] = {j.readability ? 1 : 0, j.factuality ? 1 : 0};

    // Per-sentence score: mean verdict over the judges who saw it.
    std::map<std::string, std::vector<double>> sent_read, sent_fact;
    std::map<std::string, std::size_t> sentence_count;
    for (const auto& t : tasks) {
      ++sentence_count[t.model_name];
      double r = 0, f = 0, n = 0;
      for (const auto& [judge, verdicts] : by_judge) {
        auto it = verdicts.find(t.task_id);
        if (it == verdicts.end()) continue;
        r += it->second.first;
        f += it->second.second;
        n += 1;
      }
      if (n > 0) {
        sent_read[t.model_name].push_back(r / n);
        sent_fact[t.model_name].push_back(f / n);
      }
    }

    nlohmann::json out;
    out["judgments"] = judgments.size();
    out["models"] = nlohmann::json::array();
    for (const auto& m : models) {
      nlohmann::json row;
      row["model"] = m;
      row["sentences"] = sentence_count[m];
      double read_sum = 0, fact_sum = 0;
      std::size_t judges = 0, judged = 0;
      for (const auto& [judge, verdicts] : by_judge) {
        double r = 0, f = 0, n = 0;
        for (const auto& [tid, v] : verdicts) {
          if (tasks[tid].model_name != m) continue;
          r += v.first;
          f += v.second;
          n += 1;
        }
        if (n == 0) continue;
        ++judges;
        judged += static_cast<std::size_t>(n);
        read_sum += 100.0 * r / n;
        fact_sum += 100.0 * f / n;
      }
      row["judges"] = judges;
      row["judged"] = judged;
      if (judges > 0) {
        row["readability_pct"] = read_sum / static_cast<double>(judges);
        row["factuality_pct"] = fact_sum / static_cast<double>(judges);
      } else {
        row["readability_pct"] = nullptr;
        row["factuality_pct"] = nullptr;
      }
      if (m != base_model && !sent_read[m].empty() && !sent_read[base_model].empty()) {
        const double pr = mann_whitney_u(sent_read[m], sent_read[base_model]).p;
        const double pf = mann_whitney_u(sent_fact[m], sent_fact[base_model]).p;
        row["readability_p"] = pr;
        row["factuality_p"] = pf;
        row["readability_significant"] = pr < 0.05;
        row["factuality_significant"] = pf < 0.05;
      }
      out["models"].push_back(row);
    }

    out["agreement"] = nlohmann::json::array();
    for (auto a = by_judge.begin(); a != by_judge.end(); ++a) {
      for (auto b = std::next(a); b != by_judge.end(); ++b) {
        std::vector<int> ra, rb, fa, fb;
        for (const auto& [tid, v] : a->second) {
          auto it = b->second.find(tid);
          if (it == b->second.end()) continue;
          ra.push_back(v.first);
          rb.push_back(it->second.first);
          fa.push_back(v.second);
          fb.push_back(it->second.second);
        }
        if (ra.empty()) continue;
        out["agreement"].push_back({{"judges", {a->first, b->first}},
                                    {"co_judged", ra.size()},
                                    {"kappa_readability", cohens_kappa(ra, rb)},
                                    {"kappa_factuality", cohens_kappa(fa, fb)}});
      }
    }
    return out;
  }

  nlohmann::json summary(bool blind) const {
    nlohmann::json models = nlohmann::json::array();
    for (const auto& m : models_) models.push_back(blind ? codes_.at(m) : m);
    std::sort(models.begin(), models.end());
    return {{"tasks", tasks_.size()},
            {"sample", sample_},
            {"systems", models},
            {"blind", blind},
            {"judgments", log_length()}};
  }

 private:
  void replay(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return;
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0, line_no = 0;
    while (pos < content.size()) {
      const auto nl = content.find('\n', pos);
      ++line_no;
      if (nl == std::string::npos) break;  // torn final write, never acknowledged
      const std::string line = content.substr(pos, nl - pos);
      pos = nl + 1;
      if (line.empty()) continue;
      Judgment j;
      try {
        j = Judgment::from_json(nlohmann::json::parse(line));
      } catch (const std::exception& e) {
        throw ParseError(line_no, std::string("judgment log: ") + e.what());
      }
      if (j.task_id >= tasks_.size())
        throw ParseError(line_no, "judgment log refers to unknown task");
      if (!done_[j.judge_id].insert(j.task_id).second)
        throw ParseError(line_no, "judgment log holds a duplicate judgment");
      judgments_.push_back(std::move(j));
    }
    if (pos < content.size()) {
      // Drop the torn tail so later appends start on a fresh line.
      std::ofstream rewrite(path, std::ios::binary | std::ios::trunc);
      rewrite << content.substr(0, pos);
    }
  }

  SessionOptions options_;
  std::vector<std::string> sample_;
  std::vector<std::string> models_;
  std::map<std::string, std::string> codes_;
  std::vector<JudgmentTask> tasks_;
  std::vector<Judgment> judgments_;
  std::map<std::string, std::set<std::size_t>> done_;
  std::unique_ptr<AppendLog> log_;
  mutable std::shared_mutex mu_;
};

}  // namespace graphlay
