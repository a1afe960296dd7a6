#pragma once

// Vocabulary, example preparation, Adam training with checkpoint selection,
// greedy/beam generation, and checkpoint + run-directory I/O.

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "graphlay/augment.hpp"
#include "graphlay/concepts.hpp"
#include "graphlay/corpus.hpp"
#include "graphlay/error.hpp"
#include "graphlay/graph.hpp"
#include "graphlay/metrics.hpp"
#include "graphlay/model.hpp"
#include "graphlay/rng.hpp"
#include "graphlay/text.hpp"

namespace graphlay {

// ------------------------------------------------------------- tokens

inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kBos = 2;
inline constexpr int kEos = 3;
inline constexpr std::string_view kSentenceToken = ".";

/// Lowercased words with a "." token closing every sentence.
inline std::vector<std::string> model_tokens(std::string_view text) {
  std::vector<std::string> out;
  for (const auto& span : split_sentences(text)) {
    auto ws = words(text.substr(span.begin, span.end - span.begin));
    if (ws.empty()) continue;
    for (auto& w : ws) out.push_back(std::move(w));
    out.emplace_back(kSentenceToken);
  }
  return out;
}

/// Joins model tokens back into text, capitalising sentence starts.
inline std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  bool sentence_start = true;
  for (const auto& t : tokens) {
    if (t == kSentenceToken) {
      out += '.';
      sentence_start = true;
      continue;
    }
    if (!out.empty()) out += ' ';
    std::string w = t;
    if (sentence_start && !w.empty())
      w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
    out += w;
    sentence_start = false;
  }
  return out;
}

class Vocab {
 public:
  Vocab() : tokens_{"<pad>", "<unk>", "<bos>", "<eos>"} { reindex(); }

  /// Specials, then every token seen by descending count, ties alphabetical.
  static Vocab build(const std::vector<std::vector<std::string>>& texts) {
    std::map<std::string, std::size_t> counts;
    for (const auto& t : texts)
      for (const auto& w : t) ++counts[w];
    std::vector<std::pair<std::string, std::size_t>> sorted(counts.begin(), counts.end());
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocab v;
    for (const auto& [w, c] : sorted) v.tokens_.push_back(w);
    v.reindex();
    return v;
  }

  static Vocab from_tokens(std::vector<std::string> tokens) {
    if (tokens.size() < 4 || tokens[0] != "<pad>" || tokens[3] != "<eos>")
      throw Error(ErrorKind::parse, "vocabulary lacks the special tokens");
    Vocab v;
    v.tokens_ = std::move(tokens);
    v.reindex();
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  int id(const std::string& w) const {
    auto it = index_.find(w);
    return it == index_.end() ? kUnk : it->second;
  }

  std::vector<int> encode(const std::vector<std::string>& ws) const {
    std::vector<int> out;
    out.reserve(ws.size());
    for (const auto& w : ws) out.push_back(id(w));
    return out;
  }

  /// Drops specials other than <unk>.
  std::vector<std::string> decode(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    for (int i : ids) {
      if (i == kPad || i == kBos || i == kEos) continue;
      out.push_back(tokens_.at(static_cast<std::size_t>(i)));
    }
    return out;
  }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i)
      index_.emplace(tokens_[i], static_cast<int>(i));
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Vocabulary over everything a model may read or write for this corpus:
/// article text, lay summaries and the lexicon text used by augmentation.
inline Vocab build_vocab(const Corpus& corpus, const Lexicon& lexicon) {
  std::vector<std::vector<std::string>> texts;
  for (const auto& a : corpus) {
    texts.push_back(model_tokens(article_text(a)));
    if (a.lay_summary) texts.push_back(model_tokens(*a.lay_summary));
  }
  for (const auto& [id, c] : lexicon.concepts) {
    texts.push_back(model_tokens(c.primary_name() + " = " + c.definition + ". " +
                                 c.primary_name() + " is a ."));
  }
  for (const auto& [id, t] : lexicon.semtypes)
    texts.push_back(model_tokens(t.name + " = " + t.definition));
  return Vocab::build(texts);
}

// ------------------------------------------------------------- examples

struct Example {
  std::string id;
  std::string source_text;  // augmented when text_aug is on
  std::vector<int> source;
  std::vector<int> decoder_input;  // <bos> + target tokens
  std::vector<int> targets;        // target tokens + <eos>
  std::string reference;
  GraphInput graph;
  std::vector<std::string> warnings;
};

inline GraphInput graph_input(const ArticleGraph& graph, const Article& article,
                              const Lexicon& lexicon, const ModelConfig& cfg) {
  GraphInput g;
  g.features = init_node_features(graph, article, lexicon, cfg.d_text, cfg.rwpe_k).values;
  g.neighbors = gat_input_graph(graph).neighbors;
  return g;
}

/// Builds model inputs for one article. `graph` may be null for variants that
/// do not read it; when given it must belong to the article.
inline Example prepare_example(const Article& article, const Lexicon& lexicon,
                               const Vocab& vocab, const ModelConfig& cfg,
                               const ArticleGraph* graph) {
  Example ex;
  ex.id = article.id;
  const auto& e = cfg.enhancement;
  ex.source_text = article_text(article);
  if (e.text_aug) {
    const auto concepts = extract_article_concepts(article, lexicon);
    const auto aug =
        format_augmentation(select_salient_concepts(concepts, article, lexicon), lexicon);
    ex.source_text = augment_article(ex.source_text, aug);
  }
  auto tokens = model_tokens(ex.source_text);
  if (tokens.size() > cfg.input_budget()) {
    ex.warnings.push_back("article " + article.id + ": input truncated from " +
                          std::to_string(tokens.size()) + " to " +
                          std::to_string(cfg.input_budget()) + " tokens");
    tokens.resize(cfg.input_budget());
  }
  ex.source = vocab.encode(tokens);
  if (ex.source.empty())
    throw Error(ErrorKind::invalid_argument, "article " + article.id + " has no tokens");

  if (article.lay_summary) {
    ex.reference = *article.lay_summary;
    const auto target = vocab.encode(model_tokens(ex.reference));
    ex.decoder_input.push_back(kBos);
    ex.decoder_input.insert(ex.decoder_input.end(), target.begin(), target.end());
    ex.targets = target;
    ex.targets.push_back(kEos);
  }

  if (e.uses_graph()) {
    if (graph == nullptr)
      throw Error(ErrorKind::not_found, "no graph for article " + article.id + " (variant " +
                                            e.name() + " needs one)");
    if (graph->find(article.id) == nullptr)
      throw Error(ErrorKind::invalid_argument, "graph does not belong to article " + article.id);
    ex.graph = graph_input(*graph, article, lexicon, cfg);
  }
  return ex;
}

/// Examples for a corpus with graphs built on the fly from the lexicon.
inline std::vector<Example> prepare_examples(const Corpus& corpus, const Lexicon& lexicon,
                                             const Vocab& vocab, const ModelConfig& cfg) {
  std::vector<Example> out;
  for (const auto& a : corpus) {
    std::optional<ArticleGraph> g;
    if (cfg.enhancement.uses_graph())
      g = build_graph(a, extract_article_concepts(a, lexicon), lexicon);
    out.push_back(prepare_example(a, lexicon, vocab, cfg, g ? &*g : nullptr));
  }
  return out;
}

// ------------------------------------------------------------- loss

/// Mean token cross-entropy over every target of the batch, recorded on `t`.
inline ad::Var forward_loss(ad::Tape& t, Model& model, const std::vector<const Example*>& batch) {
  if (batch.empty()) throw Error(ErrorKind::invalid_argument, "empty batch");
  std::vector<ad::Var> parts;
  std::size_t count = 0;
  for (const Example* ex : batch) {
    if (ex->targets.empty())
      throw Error(ErrorKind::invalid_argument, "example " + ex->id + " has no lay summary");
    const GraphInput* g = model.config().enhancement.uses_graph() ? &ex->graph : nullptr;
    parts.push_back(model.sequence_nll(t, ex->source, ex->decoder_input, ex->targets, g));
    for (int tg : ex->targets) count += tg >= 0 ? 1 : 0;
  }
  ad::Var total = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) total = ad::add(total, parts[i]);
  return ad::scale(total, 1.0 / static_cast<double>(count));
}

// ------------------------------------------------------------- optimiser

struct AdamOptions {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // 0 disables clipping
};

class Adam {
 public:
  explicit Adam(AdamOptions o = {}) : o_(o) {}

  std::size_t steps() const { return t_; }

  /// One update from accumulated gradients. Returns the pre-clip gradient norm.
  double step(const std::vector<ad::Parameter*>& params) {
    double sq = 0.0;
    for (const auto* p : params)
      for (double g : p->grad.data) sq += g * g;
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm))
      throw Error(ErrorKind::training_diverged, "gradient norm is not finite");
    const double clip = (o_.clip_norm > 0 && norm > o_.clip_norm) ? o_.clip_norm / norm : 1.0;
    ++t_;
    const double c1 = 1.0 - std::pow(o_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(o_.beta2, static_cast<double>(t_));
    for (auto* p : params) {
      for (std::size_t k = 0; k < p->value.data.size(); ++k) {
        const double g = p->grad.data[k] * clip;
        double& m = p->m.data[k];
        double& v = p->v.data[k];
        m = o_.beta1 * m + (1 - o_.beta1) * g;
        v = o_.beta2 * v + (1 - o_.beta2) * g * g;
        p->value.data[k] -= o_.lr * (m / c1) / (std::sqrt(v / c2) + o_.eps);
      }
    }
    return norm;
  }

  const AdamOptions& options() const { return o_; }

 private:
  AdamOptions o_;
  std::size_t t_ = 0;
};

/// Loss ceiling used to call a run diverged: `factor` times the loss of a
/// uniform prediction, ln V. In double precision a runaway run saturates at
/// huge finite losses long before it produces NaN.
inline double divergence_limit(std::size_t vocab_size, double factor) {
  return factor > 0 ? factor * std::log(static_cast<double>(vocab_size))
                    : std::numeric_limits<double>::infinity();
}

/// Forward, backward and update on one batch; returns the batch loss.
inline double train_step(Model& model, Adam& opt, const std::vector<const Example*>& batch,
                         double loss_limit = std::numeric_limits<double>::infinity()) {
  model.params().zero_grad();
  double loss = 0.0;
  {
    ad::Tape tape(true);
    ad::Var l = forward_loss(tape, model, batch);
    loss = l.value()(0, 0);
    if (!std::isfinite(loss) || loss > loss_limit)
      throw Error(ErrorKind::training_diverged,
                  "loss became " + std::to_string(loss) + " at step " +
                      std::to_string(opt.steps() + 1) +
                      (std::isfinite(loss) ? " (above the divergence limit " +
                                                 std::to_string(loss_limit) + ")"
                                           : std::string()));
    tape.backward(l);
  }
  opt.step(model.params().all());
  for (const auto* p : model.params().all())
    for (double x : p->value.data)
      if (!std::isfinite(x))
        throw Error(ErrorKind::training_diverged,
                    "parameter " + p->name + " is not finite after step " +
                        std::to_string(opt.steps()));
  return loss;
}

// ------------------------------------------------------------- generation

struct GenerationOptions {
  std::size_t beam_size = 4;
  std::size_t max_len = 64;
  double length_alpha = 1.0;
};

namespace gen_detail {

inline std::vector<double> log_softmax_last_row(const Matrix& logits) {
  const double* x = logits.row(logits.rows - 1);
  const double mx = *std::max_element(x, x + logits.cols);
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.cols; ++j) sum += std::exp(x[j] - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.cols);
  for (std::size_t j = 0; j < logits.cols; ++j) out[j] = x[j] - lse;
  return out;
}

}  // namespace gen_detail

/// Decoder state for one source: the encoder memory is computed once.
class DecodeSession {
 public:
  DecodeSession(Model& model, const Example& ex) : model_(model), tape_(false) {
    const GraphInput* g = model.config().enhancement.uses_graph() ? &ex.graph : nullptr;
    memory_ = model.build_memory(tape_, ex.source, g);
  }

  /// Log-probabilities of the next token after <bos> + prefix.
  std::vector<double> next_log_probs(const std::vector<int>& prefix) {
    std::vector<int> in{kBos};
    in.insert(in.end(), prefix.begin(), prefix.end());
    return gen_detail::log_softmax_last_row(model_.decode(tape_, in, memory_).value());
  }

  /// Next-token logits (one row) after <bos> + prefix.
  std::vector<double> next_logits(const std::vector<int>& prefix) {
    std::vector<int> in{kBos};
    in.insert(in.end(), prefix.begin(), prefix.end());
    const Matrix logits = model_.decode(tape_, in, memory_).value();
    const double* x = logits.row(logits.rows - 1);
    return {x, x + logits.cols};
  }

 private:
  Model& model_;
  ad::Tape tape_;
  Model::Memory memory_;
};

/// Total log-probability of `tokens` (which may end in <eos>) and its
/// length-normalized score sum / len^alpha.
struct SequenceScore {
  double log_prob = 0.0;
  double normalized = 0.0;
};

inline double length_normalize(double log_prob, std::size_t len, double alpha) {
  return log_prob / std::pow(static_cast<double>(std::max<std::size_t>(len, 1)), alpha);
}

inline SequenceScore sequence_score(Model& model, const Example& ex,
                                    const std::vector<int>& tokens, double alpha = 1.0) {
  SequenceScore s;
  if (tokens.empty()) return s;
  ad::Tape tape(false);
  const GraphInput* g = model.config().enhancement.uses_graph() ? &ex.graph : nullptr;
  auto mem = model.build_memory(tape, ex.source, g);
  std::vector<int> in{kBos};
  in.insert(in.end(), tokens.begin(), tokens.end() - 1);
  const Matrix logits = model.decode(tape, in, mem).value();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const double* x = logits.row(i);
    const double mx = *std::max_element(x, x + logits.cols);
    double sum = 0.0;
    for (std::size_t j = 0; j < logits.cols; ++j) sum += std::exp(x[j] - mx);
    s.log_prob += x[static_cast<std::size_t>(tokens[i])] - mx - std::log(sum);
  }
  s.normalized = length_normalize(s.log_prob, tokens.size(), alpha);
  return s;
}

inline int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Iterated argmax; the result ends in <eos> unless max_len was reached.
inline std::vector<int> greedy_decode(Model& model, const Example& ex, std::size_t max_len) {
  DecodeSession s(model, ex);
  std::vector<int> out;
  while (out.size() < max_len) {
    const int next = argmax(s.next_logits(out));
    out.push_back(next);
    if (next == kEos) break;
  }
  return out;
}

/// Length-normalized beam search. The greedy sequence competes with the
/// finished beam, so the result never scores below greedy decoding.
inline std::vector<int> beam_decode(Model& model, const Example& ex,
                                    const GenerationOptions& o) {
  if (o.beam_size == 0) throw Error(ErrorKind::invalid_argument, "beam size must be >= 1");
  if (o.beam_size == 1) return greedy_decode(model, ex, o.max_len);
  struct Hyp {
    std::vector<int> tokens;
    double log_prob = 0.0;
  };
  DecodeSession s(model, ex);
  std::vector<Hyp> alive{Hyp{}};
  std::vector<Hyp> finished;
  for (std::size_t step = 0; step < o.max_len && !alive.empty(); ++step) {
    std::vector<Hyp> cand;
    for (const Hyp& h : alive) {
      const auto lp = s.next_log_probs(h.tokens);
      std::vector<int> order(lp.size());
      for (std::size_t i = 0; i < lp.size(); ++i) order[i] = static_cast<int>(i);
      const std::size_t keep = std::min(o.beam_size, order.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep),
                        order.end(), [&](int a, int b) {
                          return lp[static_cast<std::size_t>(a)] > lp[static_cast<std::size_t>(b)] ||
                                 (lp[static_cast<std::size_t>(a)] == lp[static_cast<std::size_t>(b)] && a < b);
                        });
      for (std::size_t k = 0; k < keep; ++k) {
        Hyp n = h;
        n.tokens.push_back(order[k]);
        n.log_prob += lp[static_cast<std::size_t>(order[k])];
        cand.push_back(std::move(n));
      }
    }
    std::stable_sort(cand.begin(), cand.end(),
                     [](const Hyp& a, const Hyp& b) { return a.log_prob > b.log_prob; });
    alive.clear();
    for (auto& c : cand) {
      if (alive.size() >= o.beam_size) break;
      if (c.tokens.back() == kEos)
        finished.push_back(std::move(c));
      else
        alive.push_back(std::move(c));
    }
    if (finished.size() >= o.beam_size) break;
  }
  for (auto& h : alive) finished.push_back(std::move(h));

  std::vector<int> best = greedy_decode(model, ex, o.max_len);
  double best_score = sequence_score(model, ex, best, o.length_alpha).normalized;
  for (const Hyp& h : finished) {
    const double sc = length_normalize(h.log_prob, h.tokens.size(), o.length_alpha);
    if (sc > best_score) {
      best_score = sc;
      best = h.tokens;
    }
  }
  return best;
}

inline std::string generate_summary(Model& model, const Example& ex, const Vocab& vocab,
                                    const GenerationOptions& o) {
  return detokenize(vocab.decode(beam_decode(model, ex, o)));
}

// ------------------------------------------------------------- training

struct RougeTriple {
  double r1 = 0.0;
  double r2 = 0.0;
  double rl = 0.0;
  double mean() const { return (r1 + r2 + rl) / 3.0; }
};

/// Corpus-mean ROUGE F1 of greedy generations against the references.
inline RougeTriple evaluate_rouge(Model& model, const std::vector<Example>& examples,
                                  const Vocab& vocab, std::size_t max_len) {
  RougeTriple out;
  if (examples.empty()) return out;
  for (const auto& ex : examples) {
    const std::string summary = detokenize(vocab.decode(greedy_decode(model, ex, max_len)));
    out.r1 += rouge_n(summary, ex.reference, 1).f1;
    out.r2 += rouge_n(summary, ex.reference, 2).f1;
    out.rl += rouge_l(summary, ex.reference).f1;
  }
  const double n = static_cast<double>(examples.size());
  out.r1 /= n;
  out.r2 /= n;
  out.rl /= n;
  return out;
}

/// argmax by score; ties go to the earliest epoch.
inline std::size_t select_checkpoint(const std::vector<std::pair<std::size_t, double>>& scores) {
  if (scores.empty()) throw Error(ErrorKind::invalid_argument, "no validation scores");
  auto best = scores.front();
  for (const auto& s : scores)
    if (s.second > best.second || (s.second == best.second && s.first < best.first)) best = s;
  return best.first;
}

struct TrainOptions {
  std::size_t max_epochs = 20;
  std::size_t batch_size = 4;
  std::size_t max_steps = 0;  // 0 = unlimited
  AdamOptions adam;
  std::size_t val_max_len = 64;
  double divergence_factor = 100.0;  // 0 disables the loss ceiling
  std::uint64_t seed = 7;

  nlohmann::json to_json() const {
    return {{"max_epochs", max_epochs}, {"batch_size", batch_size},
            {"max_steps", max_steps},   {"lr", adam.lr},
            {"beta1", adam.beta1},      {"beta2", adam.beta2},
            {"adam_eps", adam.eps},     {"clip_norm", adam.clip_norm},
            {"val_max_len", val_max_len}, {"divergence_factor", divergence_factor},
            {"seed", seed}};
  }

  static TrainOptions from_json(const nlohmann::json& j) {
    TrainOptions o;
    o.max_epochs = j.at("max_epochs");
    o.batch_size = j.at("batch_size");
    o.max_steps = j.at("max_steps");
    o.adam.lr = j.at("lr");
    o.adam.beta1 = j.at("beta1");
    o.adam.beta2 = j.at("beta2");
    o.adam.eps = j.at("adam_eps");
    o.adam.clip_norm = j.at("clip_norm");
    o.val_max_len = j.at("val_max_len");
    o.divergence_factor = j.at("divergence_factor");
    o.seed = j.at("seed");
    return o;
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t steps = 0;  // cumulative
  double mean_loss = 0.0;
  RougeTriple val;

  nlohmann::json to_json() const {
    return {{"epoch", epoch},       {"steps", steps},     {"mean_loss", mean_loss},
            {"val_rouge1", val.r1}, {"val_rouge2", val.r2}, {"val_rougeL", val.rl},
            {"val_score", val.mean()}};
  }
};

struct CheckpointSet {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  std::map<std::string, Matrix> best_params;
};

inline std::map<std::string, Matrix> snapshot(const Model& model) {
  std::map<std::string, Matrix> out;
  for (const auto* p : model.params().all()) out.emplace(p->name, p->value);
  return out;
}

inline void restore(Model& model, const std::map<std::string, Matrix>& values) {
  for (auto* p : model.params().all()) {
    auto it = values.find(p->name);
    if (it == values.end()) throw Error(ErrorKind::not_found, "checkpoint lacks " + p->name);
    if (!it->second.same_shape(p->value))
      throw Error(ErrorKind::shape_mismatch, "checkpoint tensor " + p->name + " has wrong shape");
    p->value = it->second;
  }
}

/// Epoch loop: shuffled mini-batches, one validation score per epoch, best
/// parameters kept by select_checkpoint. Leaves the model at the best epoch.
inline CheckpointSet train(Model& model, const std::vector<Example>& train_set,
                           const std::vector<Example>& val_set, const Vocab& vocab,
                           const TrainOptions& o,
                           const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  if (train_set.empty()) throw Error(ErrorKind::invalid_argument, "empty training set");
  if (o.batch_size == 0) throw Error(ErrorKind::invalid_argument, "batch size must be >= 1");
  Adam opt(o.adam);
  Rng rng(o.seed);
  CheckpointSet result;
  std::vector<std::pair<std::size_t, double>> scores;
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const double limit = divergence_limit(model.config().vocab_size, o.divergence_factor);

  for (std::size_t epoch = 1; epoch <= o.max_epochs; ++epoch) {
    if (o.max_steps && opt.steps() >= o.max_steps) break;
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += o.batch_size) {
      if (o.max_steps && opt.steps() >= o.max_steps) break;
      std::vector<const Example*> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + o.batch_size); ++k)
        batch.push_back(&train_set[order[k]]);
      loss_sum += train_step(model, opt, batch, limit);
      ++batches;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.steps = opt.steps();
    rec.mean_loss = loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1));
    rec.val = evaluate_rouge(model, val_set, vocab, o.val_max_len);
    result.epochs.push_back(rec);
    scores.emplace_back(epoch, rec.val.mean());
    if (select_checkpoint(scores) == epoch) {
      result.best_epoch = epoch;
      result.best_params = snapshot(model);
    }
    if (on_epoch) on_epoch(rec);
  }
  if (!result.best_params.empty()) restore(model, result.best_params);
  return result;
}

// ------------------------------------------------------------- checkpoints

inline constexpr std::string_view kCheckpointFormat = "graphlay-checkpoint";
inline constexpr int kCheckpointVersion = 1;

namespace ckpt_detail {

inline constexpr std::string_view kB64 =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(const std::vector<unsigned char>& in) {
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < in.size(); i += 3) {
    const std::uint32_t v = (in[i] << 16) | (in[i + 1] << 8) | in[i + 2];
    for (int s : {18, 12, 6, 0}) out += kB64[(v >> s) & 63];
  }
  if (i < in.size()) {
    std::uint32_t v = in[i] << 16;
    if (i + 1 < in.size()) v |= in[i + 1] << 8;
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += i + 1 < in.size() ? kB64[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

inline std::vector<unsigned char> base64_decode(std::string_view in) {
  if (in.size() % 4 != 0) throw Error(ErrorKind::parse, "bad base64 length");
  auto val = [](char c) -> std::uint32_t {
    const auto p = kB64.find(c);
    if (p == std::string_view::npos) throw Error(ErrorKind::parse, "bad base64 character");
    return static_cast<std::uint32_t>(p);
  };
  std::vector<unsigned char> out;
  for (std::size_t i = 0; i < in.size(); i += 4) {
    const std::uint32_t v = (val(in[i]) << 18) | (val(in[i + 1]) << 12) |
                            (in[i + 2] == '=' ? 0 : val(in[i + 2]) << 6) |
                            (in[i + 3] == '=' ? 0 : val(in[i + 3]));
    out.push_back(static_cast<unsigned char>(v >> 16));
    if (in[i + 2] != '=') out.push_back(static_cast<unsigned char>(v >> 8));
    if (in[i + 3] != '=') out.push_back(static_cast<unsigned char>(v));
  }
  return out;
}

// Little-endian IEEE doubles regardless of host order.
inline std::string encode_doubles(const std::vector<double>& xs) {
  std::vector<unsigned char> bytes(xs.size() * 8);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::uint64_t u = std::bit_cast<std::uint64_t>(xs[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + static_cast<std::size_t>(b)] = (u >> (8 * b)) & 0xFF;
  }
  return base64_encode(bytes);
}

inline std::vector<double> decode_doubles(std::string_view s, std::size_t expected) {
  const auto bytes = base64_decode(s);
  if (bytes.size() != expected * 8) throw Error(ErrorKind::parse, "tensor size mismatch");
  std::vector<double> out(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    std::uint64_t u = 0;
    for (int b = 0; b < 8; ++b)
      u |= static_cast<std::uint64_t>(bytes[i * 8 + static_cast<std::size_t>(b)]) << (8 * b);
    out[i] = std::bit_cast<double>(u);
  }
  return out;
}

}  // namespace ckpt_detail

struct Checkpoint {
  ModelConfig config;
  Vocab vocab;
  std::size_t epoch = 0;
  std::map<std::string, Matrix> tensors;
};

inline nlohmann::json checkpoint_to_json(const Model& model, const Vocab& vocab,
                                         std::size_t epoch) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["config"] = model.config().to_json();
  j["vocab"] = vocab.tokens();
  j["epoch"] = epoch;
  j["tensors"] = nlohmann::json::array();
  for (const auto* p : model.params().all())
    j["tensors"].push_back({{"name", p->name},
                            {"rows", p->value.rows},
                            {"cols", p->value.cols},
                            {"data", ckpt_detail::encode_doubles(p->value.data)}});
  return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != kCheckpointFormat) throw Error(ErrorKind::parse, "not a checkpoint");
    if (j.at("version") != kCheckpointVersion)
      throw Error(ErrorKind::parse, "unsupported checkpoint version");
    Checkpoint c;
    c.config = ModelConfig::from_json(j.at("config"));
    c.vocab = Vocab::from_tokens(j.at("vocab").get<std::vector<std::string>>());
    c.epoch = j.at("epoch");
    for (const auto& t : j.at("tensors")) {
      Matrix m(t.at("rows").get<std::size_t>(), t.at("cols").get<std::size_t>());
      m.data = ckpt_detail::decode_doubles(t.at("data").get<std::string>(), m.size());
      c.tensors.emplace(t.at("name").get<std::string>(), std::move(m));
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::string& path, const Model& model, const Vocab& vocab,
                            std::size_t epoch) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path);
  out << checkpoint_to_json(model, vocab, epoch).dump() << '\n';
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, path + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

inline Model model_from_checkpoint(const Checkpoint& c) {
  Model m(c.config);
  restore(m, c.tensors);
  return m;
}

// ------------------------------------------------------------- run directory

namespace fs = std::filesystem;

inline void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out << content;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// config.json, epochs.jsonl, checkpoints/{index.json,best.json}.
inline void write_run(const fs::path& dir, const Model& model, const Vocab& vocab,
                      const TrainOptions& o, const CheckpointSet& cs) {
  fs::create_directories(dir / "checkpoints");
  nlohmann::json cfg;
  cfg["variant"] = model.config().enhancement.name();
  cfg["model"] = model.config().to_json();
  cfg["train"] = o.to_json();
  write_text(dir / "config.json", cfg.dump(2) + "\n");
  std::string log;
  for (const auto& e : cs.epochs) log += e.to_json().dump() + "\n";
  write_text(dir / "epochs.jsonl", log);
  nlohmann::json index;
  index["best_epoch"] = cs.best_epoch;
  index["best"] = "best.json";
  index["scores"] = nlohmann::json::array();
  for (const auto& e : cs.epochs) index["scores"].push_back({e.epoch, e.val.mean()});
  write_text(dir / "checkpoints" / "index.json", index.dump(2) + "\n");
  save_checkpoint((dir / "checkpoints" / "best.json").string(), model, vocab, cs.best_epoch);
}

inline void write_outputs(const fs::path& path, const std::vector<std::pair<std::string, std::string>>& rows) {
  std::string out;
  for (const auto& [id, summary] : rows)
    out += nlohmann::json{{"id", id}, {"summary", summary}}.dump() + "\n";
  write_text(path, out);
}

inline std::map<std::string, std::string> read_outputs(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::not_found, "missing outputs " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const std::string id = j.at("id");
      if (!out.emplace(id, j.at("summary").get<std::string>()).second)
        throw ParseError(n, "duplicate output id " + id);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(n, std::string("bad output record: ") + e.what());
    }
  }
  return out;
}

}  // namespace graphlay
