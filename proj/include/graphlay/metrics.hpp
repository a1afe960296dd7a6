#pragma once

// Relevance, readability and abstractiveness metrics plus the two statistics
// used for reporting (Mann-Whitney U, Cohen's kappa).

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "graphlay/error.hpp"
#include "graphlay/text.hpp"

namespace graphlay {

// ------------------------------------------------------------- ROUGE

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

namespace metrics_detail {

inline RougeScore prf(double overlap, double cand_total, double ref_total) {
  RougeScore s;
  if (cand_total > 0) s.precision = overlap / cand_total;
  if (ref_total > 0) s.recall = overlap / ref_total;
  if (s.precision + s.recall > 0)
    s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  s.precision *= 100.0;
  s.recall *= 100.0;
  s.f1 *= 100.0;
  return s;
}

inline std::map<std::vector<std::string>, std::size_t> ngram_counts(
    const std::vector<std::string>& toks, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> out;
  if (toks.size() < n) return out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i)
    ++out[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                   toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

}  // namespace metrics_detail

/// Clipped n-gram overlap on lowercased tokens, no stemming or stopword
/// removal. Values in [0, 100].
inline RougeScore rouge_n(std::string_view candidate, std::string_view reference,
                          std::size_t n) {
  if (n < 1) throw Error(ErrorKind::invalid_argument, "rouge_n needs n >= 1");
  const auto c = metrics_detail::ngram_counts(words(candidate), n);
  const auto r = metrics_detail::ngram_counts(words(reference), n);
  double overlap = 0, ct = 0, rt = 0;
  for (const auto& [g, k] : c) {
    ct += static_cast<double>(k);
    if (auto it = r.find(g); it != r.end())
      overlap += static_cast<double>(std::min(k, it->second));
  }
  for (const auto& [g, k] : r) rt += static_cast<double>(k);
  return metrics_detail::prf(overlap, ct, rt);
}

inline std::size_t lcs_length(const std::vector<std::string>& a,
                              const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline RougeScore rouge_l(std::string_view candidate, std::string_view reference) {
  const auto c = words(candidate);
  const auto r = words(reference);
  return metrics_detail::prf(static_cast<double>(lcs_length(c, r)),
                             static_cast<double>(c.size()),
                             static_cast<double>(r.size()));
}

// ------------------------------------------------------------- readability

/// Vowel groups (a e i o u y); a final "e" is silent unless the word ends in
/// consonant + "le". At least one syllable per word.
inline std::size_t count_syllables(std::string_view word) {
  const std::string w = to_lower(word);
  auto vowel = [](char c) {
    return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u' || c == 'y';
  };
  std::size_t groups = 0;
  bool in_group = false;
  for (char c : w) {
    const bool v = vowel(c);
    if (v && !in_group) ++groups;
    in_group = v;
  }
  if (w.size() >= 2 && w.back() == 'e') {
    const bool consonant_le = w.size() >= 3 && w[w.size() - 2] == 'l' &&
                              std::isalpha(static_cast<unsigned char>(w[w.size() - 3])) &&
                              !vowel(w[w.size() - 3]);
    if (!consonant_le && groups > 0) --groups;
  }
  return std::max<std::size_t>(groups, 1);
}

struct TextCounts {
  std::size_t words = 0;
  std::size_t sentences = 0;
  std::size_t syllables = 0;
  std::size_t letters = 0;
};

inline TextCounts text_counts(std::string_view text) {
  TextCounts c;
  for (const auto& t : tokenize(text)) {
    ++c.words;
    c.syllables += count_syllables(t.surface);
    for (unsigned char ch : t.surface) {
      if (std::isalpha(ch) || (ch >= 0x80 && (ch & 0xC0) != 0x80)) ++c.letters;
    }
  }
  c.sentences = split_sentences(text).size();
  return c;
}

namespace metrics_detail {

inline TextCounts require_words(std::string_view text, const char* metric) {
  TextCounts c = text_counts(text);
  if (c.words == 0)
    throw Error(ErrorKind::invalid_argument, std::string(metric) + ": text has no words");
  return c;
}

}  // namespace metrics_detail

/// Flesch-Kincaid grade level.
inline double fkgl(std::string_view text) {
  const auto c = metrics_detail::require_words(text, "fkgl");
  const double w = static_cast<double>(c.words);
  return 0.39 * (w / static_cast<double>(c.sentences)) +
         11.8 * (static_cast<double>(c.syllables) / w) - 15.59;
}

/// Coleman-Liau index.
inline double cli_index(std::string_view text) {
  const auto c = metrics_detail::require_words(text, "cli");
  const double w = static_cast<double>(c.words);
  const double L = 100.0 * static_cast<double>(c.letters) / w;
  const double S = 100.0 * static_cast<double>(c.sentences) / w;
  return 0.0588 * L - 0.296 * S - 15.8;
}

struct WordList {
  std::vector<std::string> words;  // in file order (rank order for WordRank)
  std::unordered_map<std::string, std::size_t> rank;  // 1-based

  static WordList from_lines(std::istream& in) {
    WordList wl;
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      if (line.empty()) continue;
      std::string w = to_lower(line);
      if (wl.rank.emplace(w, wl.words.size() + 1).second) wl.words.push_back(w);
    }
    return wl;
  }

  static WordList load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot open word list " + path);
    return from_lines(in);
  }

  static WordList from_words(const std::vector<std::string>& ws) {
    std::stringstream ss;
    for (const auto& w : ws) ss << w << '\n';
    return from_lines(ss);
  }

  bool contains(const std::string& w) const { return rank.count(w) > 0; }
  std::size_t size() const { return words.size(); }
};

inline bool is_numeral(std::string_view tok) {
  return !tok.empty() && std::all_of(tok.begin(), tok.end(), [](unsigned char c) {
           return std::isdigit(c) != 0;
         });
}

/// Dale-Chall readability score against a familiar-word list.
inline double dcrs(std::string_view text, const WordList& familiar) {
  const auto toks = tokenize(text);
  if (toks.empty()) throw Error(ErrorKind::invalid_argument, "dcrs: text has no words");
  std::size_t difficult = 0;
  for (const auto& t : toks) {
    const std::string w = to_lower(t.surface);
    if (!familiar.contains(w) && !is_numeral(w)) ++difficult;
  }
  const double words_n = static_cast<double>(toks.size());
  const double pct = 100.0 * static_cast<double>(difficult) / words_n;
  const double sentences_n = static_cast<double>(split_sentences(text).size());
  double score = 0.1579 * pct + 0.0496 * (words_n / sentences_n);
  if (pct > 5.0) score += 3.6365;
  return score;
}

/// Mean log2 frequency rank; unknown tokens take the list length as rank.
inline double wordrank(std::string_view text, const WordList& ranked) {
  const auto ws = words(text);
  if (ws.empty()) throw Error(ErrorKind::invalid_argument, "wordrank: text has no words");
  if (ranked.size() == 0) throw Error(ErrorKind::invalid_argument, "wordrank: empty list");
  double sum = 0.0;
  for (const auto& w : ws) {
    auto it = ranked.rank.find(w);
    const double r = static_cast<double>(it == ranked.rank.end() ? ranked.size() : it->second);
    sum += std::log2(r);
  }
  return sum / static_cast<double>(ws.size());
}

/// Percentage of summary unigram types absent from the source.
inline double abstractiveness(std::string_view summary, std::string_view source) {
  const auto s = words(summary);
  if (s.empty()) return 0.0;
  const auto src = words(source);
  const std::unordered_set<std::string> source_set(src.begin(), src.end());
  const std::set<std::string> types(s.begin(), s.end());
  std::size_t novel = 0;
  for (const auto& t : types) novel += source_set.count(t) == 0 ? 1 : 0;
  return 100.0 * static_cast<double>(novel) / static_cast<double>(types.size());
}

// ------------------------------------------------------------- statistics

struct MannWhitneyResult {
  double u = 0.0;  // U statistic of the first sample
  double p = 1.0;  // two-sided
  bool exact = false;
};

/// Midranks (1-based) of the pooled values.
inline std::vector<double> midranks(const std::vector<double>& pooled) {
  std::vector<std::size_t> order(pooled.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pooled[a] < pooled[b]; });
  std::vector<double> ranks(pooled.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Two-sided Mann-Whitney U test with midranks for ties. Exact (enumerating
/// every assignment of the pooled ranks) when n_a + n_b <= 12, otherwise the
/// tie-corrected normal approximation with continuity correction.
inline MannWhitneyResult mann_whitney_u(const std::vector<double>& a,
                                        const std::vector<double>& b) {
  if (a.empty() || b.empty())
    throw Error(ErrorKind::invalid_argument, "mann_whitney_u: empty sample");
  const std::size_t na = a.size(), nb = b.size(), n = na + nb;
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto ranks = midranks(pooled);
  const double offset = static_cast<double>(na) * static_cast<double>(na + 1) / 2.0;
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < na; ++i) rank_sum += ranks[i];
  MannWhitneyResult r;
  r.u = rank_sum - offset;
  const double mean = static_cast<double>(na) * static_cast<double>(nb) / 2.0;
  const double observed = std::abs(r.u - mean);

  if (n <= 12) {
    r.exact = true;
    std::size_t extreme = 0, total = 0;
    // Walk every size-na subset of positions as a combination.
    std::vector<std::size_t> idx(na);
    std::iota(idx.begin(), idx.end(), 0);
    while (true) {
      double s = 0.0;
      for (auto k : idx) s += ranks[k];
      ++total;
      if (std::abs(s - offset - mean) >= observed - 1e-9) ++extreme;
      std::size_t pos = na;
      while (pos > 0 && idx[pos - 1] == n - na + pos - 1) --pos;
      if (pos == 0) break;
      ++idx[pos - 1];
      for (std::size_t k = pos; k < na; ++k) idx[k] = idx[k - 1] + 1;
    }
    r.p = static_cast<double>(extreme) / static_cast<double>(total);
    return r;
  }

  std::map<double, std::size_t> ties;
  for (double v : pooled) ++ties[v];
  double tie_term = 0.0;
  for (const auto& [v, t] : ties) {
    const double td = static_cast<double>(t);
    tie_term += td * td * td - td;
  }
  const double nd = static_cast<double>(n);
  const double var = static_cast<double>(na) * static_cast<double>(nb) / 12.0 *
                     ((nd + 1.0) - tie_term / (nd * (nd - 1.0)));
  if (var <= 0.0) {
    r.p = 1.0;
    return r;
  }
  const double z = std::max(0.0, observed - 0.5) / std::sqrt(var);
  r.p = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return r;
}

/// Cohen's kappa for two binary raters.
inline double cohens_kappa(const std::vector<int>& r1, const std::vector<int>& r2) {
  if (r1.size() != r2.size())
    throw Error(ErrorKind::invalid_argument, "cohens_kappa: rating lists differ in length");
  if (r1.empty()) throw Error(ErrorKind::invalid_argument, "cohens_kappa: no ratings");
  const double n = static_cast<double>(r1.size());
  double agree = 0, pos1 = 0, pos2 = 0;
  for (std::size_t i = 0; i < r1.size(); ++i) {
    const bool a = r1[i] != 0, b = r2[i] != 0;
    agree += a == b ? 1 : 0;
    pos1 += a ? 1 : 0;
    pos2 += b ? 1 : 0;
  }
  const double po = agree / n;
  const double p1 = pos1 / n, p2 = pos2 / n;
  const double pe = p1 * p2 + (1 - p1) * (1 - p2);
  if (pe >= 1.0) return 1.0;  // both raters constant and equal
  return (po - pe) / (1.0 - pe);
}

// ------------------------------------------------------------- run reports

struct WordLists {
  WordList familiar;  // Dale-Chall
  WordList ranked;    // frequency order

  static WordLists load(const std::string& data_dir) {
    return {WordList::load(data_dir + "/dale_chall_familiar.txt"),
            WordList::load(data_dir + "/word_ranks.txt")};
  }
};

inline constexpr auto kMetricNames = std::to_array<std::string_view>(
    {"R1", "R2", "RL", "CLI", "DCRS", "FKGL", "WordRank", "Abstractiveness"});

struct DocumentScores {
  std::string id;
  std::map<std::string, double> values;  // readability absent for empty summaries
};

inline DocumentScores score_document(const std::string& id, const std::string& summary,
                                     const std::string& reference,
                                     const std::string& source, const WordLists& lists) {
  DocumentScores d{id, {}};
  d.values["R1"] = rouge_n(summary, reference, 1).f1;
  d.values["R2"] = rouge_n(summary, reference, 2).f1;
  d.values["RL"] = rouge_l(summary, reference).f1;
  d.values["Abstractiveness"] = abstractiveness(summary, source);
  if (!tokenize(summary).empty()) {
    d.values["CLI"] = cli_index(summary);
    d.values["DCRS"] = dcrs(summary, lists.familiar);
    d.values["FKGL"] = fkgl(summary);
    d.values["WordRank"] = wordrank(summary, lists.ranked);
  }
  return d;
}

struct MetricRow {
  std::string model;
  std::size_t documents = 0;
  std::map<std::string, double> means;
  std::map<std::string, double> p_values;  // vs base, absent for the base row
  std::set<std::string> significant;       // p < 0.05

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["model"] = model;
    j["documents"] = documents;
    j["means"] = means;
    j["p_values"] = p_values;
    j["significant"] = significant;
    j["BERTScore"] = "n/a (out of scope)";
    j["BARTScore"] = "n/a (out of scope)";
    return j;
  }
};

struct ModelOutputs {
  std::string model;
  std::map<std::string, std::string> summaries;  // article id -> summary
};

/// Per-model means over aligned documents, with a Mann-Whitney test of every
/// metric's per-document scores against the base model.
inline std::vector<MetricRow> evaluate_run(const std::vector<ModelOutputs>& models,
                                           const std::map<std::string, std::string>& references,
                                           const std::map<std::string, std::string>& sources,
                                           const std::string& base_model,
                                           const WordLists& lists) {
  const ModelOutputs* base = nullptr;
  for (const auto& m : models)
    if (m.model == base_model) base = &m;
  if (base == nullptr)
    throw Error(ErrorKind::not_found, "base model " + base_model + " not among runs");

  std::map<std::string, std::vector<DocumentScores>> scored;
  for (const auto& m : models) {
    if (m.summaries.size() != base->summaries.size())
      throw Error(ErrorKind::invalid_argument, "model " + m.model + " is misaligned with base");
    for (const auto& [id, summary] : m.summaries) {
      if (!base->summaries.count(id) || !references.count(id) || !sources.count(id))
        throw Error(ErrorKind::invalid_argument, "misaligned article id " + id + " in " + m.model);
      scored[m.model].push_back(
          score_document(id, summary, references.at(id), sources.at(id), lists));
    }
  }

  auto column = [](const std::vector<DocumentScores>& docs, std::string_view metric) {
    std::vector<double> v;
    for (const auto& d : docs)
      if (auto it = d.values.find(std::string(metric)); it != d.values.end())
        v.push_back(it->second);
    return v;
  };

  std::vector<MetricRow> rows;
  for (const auto& m : models) {
    MetricRow row;
    row.model = m.model;
    row.documents = m.summaries.size();
    for (auto metric : kMetricNames) {
      const auto v = column(scored[m.model], metric);
      if (v.empty()) continue;
      row.means[std::string(metric)] =
          std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      if (m.model == base_model) continue;
      const auto b = column(scored[base_model], metric);
      if (b.empty()) continue;
      const double p = mann_whitney_u(v, b).p;
      row.p_values[std::string(metric)] = p;
      if (p < 0.05) row.significant.insert(std::string(metric));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string report_markdown(const std::vector<MetricRow>& rows) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "| Model | R-1 | R-2 | R-L | BeS | CLI | DCRS | BaS | FKGL | WordRank | Novel 1-grams |\n";
  os << "|---|---|---|---|---|---|---|---|---|---|---|\n";
  auto cell = [&](const MetricRow& r, const char* m) {
    std::ostringstream c;
    c << std::fixed << std::setprecision(2);
    if (auto it = r.means.find(m); it != r.means.end()) {
      c << it->second;
      if (r.significant.count(m)) c << '*';
    } else {
      c << "-";
    }
    return c.str();
  };
  for (const auto& r : rows) {
    os << "| " << r.model << " | " << cell(r, "R1") << " | " << cell(r, "R2") << " | "
       << cell(r, "RL") << " | n/a (out of scope) | " << cell(r, "CLI") << " | "
       << cell(r, "DCRS") << " | n/a (out of scope) | " << cell(r, "FKGL") << " | "
       << cell(r, "WordRank") << " | " << cell(r, "Abstractiveness") << " |\n";
  }
  os << "\n* p < 0.05 against the base model (two-sided Mann-Whitney U).\n";
  return os.str();
}

}  // namespace graphlay
