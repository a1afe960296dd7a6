// graphlay: command-line entry point for the whole pipeline.
//
//   synth-corpus -> extract / build-graph / augment -> train -> generate
//   -> evaluate, plus graph-stats and serve-annotation.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "graphlay/annotation_server.hpp"
#include "graphlay/augment.hpp"
#include "graphlay/concepts.hpp"
#include "graphlay/corpus.hpp"
#include "graphlay/graph.hpp"
#include "graphlay/metrics.hpp"
#include "graphlay/synth.hpp"
#include "graphlay/train.hpp"

#ifndef GRAPHLAY_DEFAULT_DATA_DIR
#define GRAPHLAY_DEFAULT_DATA_DIR "data"
#endif
#ifndef GRAPHLAY_DEFAULT_WEB_DIR
#define GRAPHLAY_DEFAULT_WEB_DIR "web"
#endif

namespace fs = std::filesystem;
using namespace graphlay;

namespace {

std::string data_dir() {
  if (const char* env = std::getenv("GRAPHLAY_DATA_DIR"); env && *env) return env;
  return GRAPHLAY_DEFAULT_DATA_DIR;
}

std::string resolve_lexicon(const std::string& given) {
  return given.empty() ? data_dir() + "/mini_lexicon.json" : given;
}

Lexicon lexicon_from(const std::string& path) {
  auto load = load_lexicon(resolve_lexicon(path));
  if (load.dropped_without_definition > 0)
    std::cerr << "warning: dropped " << load.dropped_without_definition
              << " concepts without a definition\n";
  return std::move(load.lexicon);
}

void emit(const std::string& out_path, const std::string& content) {
  if (out_path.empty() || out_path == "-") {
    std::cout << content;
  } else {
    if (auto parent = fs::path(out_path).parent_path(); !parent.empty())
      fs::create_directories(parent);
    write_text(out_path, content);
  }
}

std::optional<ArticleGraph> graph_for(const Article& a, const Lexicon& lex,
                                      const std::string& graphs_dir) {
  if (graphs_dir.empty()) return build_graph(a, extract_article_concepts(a, lex), lex);
  const fs::path p = fs::path(graphs_dir) / (a.id + ".json");
  if (!fs::exists(p)) return std::nullopt;
  return parse_graph(read_text(p));
}

std::vector<Example> examples_for(const Corpus& corpus, const Lexicon& lex, const Vocab& vocab,
                                  const ModelConfig& cfg, const std::string& graphs_dir) {
  std::vector<Example> out;
  for (const auto& a : corpus) {
    std::optional<ArticleGraph> g;
    if (cfg.enhancement.uses_graph()) g = graph_for(a, lex, graphs_dir);
    out.push_back(prepare_example(a, lex, vocab, cfg, g ? &*g : nullptr));
    for (const auto& w : out.back().warnings) std::cerr << "warning: " << w << '\n';
  }
  return out;
}

void apply_variant(Enhancements& e, const std::string& name) {
  if (name == "base") return;
  if (name == "text-aug") e.text_aug = true;
  else if (name == "doc-enhance") e.doc_enhance = true;
  else if (name == "decoder-attn") e.decoder_attn = true;
  else throw Error(ErrorKind::invalid_argument, "unknown variant " + name);
}

std::string run_model_name(const fs::path& run) {
  const fs::path cfg = run / "config.json";
  if (fs::exists(cfg)) {
    const auto j = nlohmann::json::parse(read_text(cfg));
    if (j.contains("variant")) return j["variant"];
  }
  return run.filename().string();
}

// ------------------------------------------------------------- subcommands

struct CommonPaths {
  std::string corpus;
  std::string lexicon;
  std::string out;
};

int cmd_extract(const CommonPaths& p) {
  const Lexicon lex = lexicon_from(p.lexicon);
  std::string out;
  for (const auto& a : load_corpus(p.corpus)) {
    const auto concepts = extract_article_concepts(a, lex);
    nlohmann::json sections = nlohmann::json::object();
    for (const auto& [idx, ids] : concepts) sections[std::to_string(idx)] = ids;
    out += nlohmann::json{{"id", a.id},
                          {"sections", sections},
                          {"salient", select_salient_concepts(concepts, a, lex)}}
               .dump() +
           "\n";
  }
  emit(p.out, out);
  return 0;
}

int cmd_build_graph(const CommonPaths& p, const std::string& out_dir) {
  const Lexicon lex = lexicon_from(p.lexicon);
  fs::create_directories(out_dir);
  for (const auto& a : load_corpus(p.corpus)) {
    const ArticleGraph g = build_graph(a, extract_article_concepts(a, lex), lex);
    if (auto problems = validate_graph(g); !problems.empty())
      throw Error(ErrorKind::invalid_argument, "graph for " + a.id + " is invalid: " + problems.front());
    write_text(fs::path(out_dir) / (a.id + ".json"), serialize_graph(g));
  }
  return 0;
}

int cmd_augment(const CommonPaths& p) {
  const Lexicon lex = lexicon_from(p.lexicon);
  std::string out;
  for (const auto& a : load_corpus(p.corpus)) {
    const auto aug = format_augmentation(
        select_salient_concepts(extract_article_concepts(a, lex), a, lex), lex);
    out += nlohmann::json{{"id", a.id},
                          {"augmentation", aug.rendered},
                          {"input", augment_article(article_text(a), aug)}}
               .dump() +
           "\n";
  }
  emit(p.out, out);
  return 0;
}

int cmd_synth(const CommonPaths& p, std::uint64_t seed, std::size_t n) {
  const Lexicon lex = lexicon_from(p.lexicon);
  emit(p.out, serialize_corpus(generate_synthetic_corpus(seed, n, lex)));
  return 0;
}

struct TrainArgs {
  std::string run_dir;
  std::string graphs_dir;
  std::string val_corpus;
  double val_fraction = 0.0;
  std::string variant = "base";
  std::vector<std::string> combine;
  ModelConfig model;
  TrainOptions train;
};

int cmd_train(const CommonPaths& p, TrainArgs a, std::uint64_t seed) {
  const Lexicon lex = lexicon_from(p.lexicon);
  Corpus corpus = load_corpus(p.corpus);
  Corpus val;
  if (!a.val_corpus.empty()) {
    val = load_corpus(a.val_corpus);
  } else if (a.val_fraction > 0.0) {
    Rng rng(seed);
    rng.shuffle(corpus);
    const auto n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(a.val_fraction * static_cast<double>(corpus.size())));
    if (n_val >= corpus.size())
      throw Error(ErrorKind::invalid_argument, "validation split leaves no training data");
    val.assign(corpus.end() - static_cast<std::ptrdiff_t>(n_val), corpus.end());
    corpus.resize(corpus.size() - n_val);
  } else {
    val = corpus;  // validate on the training set
  }

  apply_variant(a.model.enhancement, a.variant);
  for (const auto& c : a.combine) apply_variant(a.model.enhancement, c);
  a.model.seed = seed;
  a.train.seed = seed;

  Corpus all = corpus;
  all.insert(all.end(), val.begin(), val.end());
  const Vocab vocab = build_vocab(all, lex);
  a.model.vocab_size = vocab.size();
  Model model(a.model);
  const auto train_set = examples_for(corpus, lex, vocab, a.model, a.graphs_dir);
  const auto val_set = examples_for(val, lex, vocab, a.model, a.graphs_dir);
  std::cerr << "training " << a.model.enhancement.name() << " on " << train_set.size()
            << " articles (" << val_set.size() << " validation), vocab " << vocab.size()
            << ", " << model.params().size() << " tensors\n";
  const auto cs = train(model, train_set, val_set, vocab, a.train, [](const EpochRecord& r) {
    std::cerr << "epoch " << r.epoch << " steps " << r.steps << " loss " << r.mean_loss
              << " val " << r.val.mean() << '\n';
  });
  write_run(a.run_dir, model, vocab, a.train, cs);
  std::cerr << "best epoch " << cs.best_epoch << " -> " << a.run_dir << '\n';
  return 0;
}

int cmd_generate(const CommonPaths& p, const std::string& run_dir, const std::string& graphs_dir,
                 const GenerationOptions& g) {
  const Lexicon lex = lexicon_from(p.lexicon);
  const Checkpoint ck = load_checkpoint((fs::path(run_dir) / "checkpoints" / "best.json").string());
  Model model = model_from_checkpoint(ck);
  const auto examples = examples_for(load_corpus(p.corpus), lex, ck.vocab, ck.config, graphs_dir);
  std::vector<std::pair<std::string, std::string>> rows;
  for (const auto& ex : examples)
    rows.emplace_back(ex.id, generate_summary(model, ex, ck.vocab, g));
  write_outputs(fs::path(run_dir) / "outputs.jsonl", rows);
  return 0;
}

int cmd_evaluate(const std::vector<std::string>& run_dirs, const std::string& refs,
                 const std::string& base_run, const std::string& out_dir) {
  const WordLists lists = WordLists::load(data_dir());
  std::map<std::string, std::string> references, sources;
  for (const auto& a : load_corpus(refs)) {
    if (!a.lay_summary) throw Error(ErrorKind::missing_field, "article " + a.id + " has no lay_summary");
    references[a.id] = *a.lay_summary;
    sources[a.id] = article_text(a);
  }
  std::vector<std::string> dirs = run_dirs;
  if (std::find(dirs.begin(), dirs.end(), base_run) == dirs.end()) dirs.insert(dirs.begin(), base_run);
  std::vector<ModelOutputs> models;
  for (const auto& d : dirs)
    models.push_back({run_model_name(d), read_outputs(fs::path(d) / "outputs.jsonl")});
  const auto rows = evaluate_run(models, references, sources, run_model_name(base_run), lists);
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) j.push_back(r.to_json());
  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / "report.json", j.dump(2) + "\n");
  const std::string md = report_markdown(rows);
  write_text(fs::path(out_dir) / "report.md", md);
  std::cout << md;
  return 0;
}

int cmd_graph_stats(const CommonPaths& p, const std::string& graphs_dir, bool as_json) {
  std::vector<ArticleGraph> graphs;
  if (!graphs_dir.empty()) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(graphs_dir))
      if (e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) graphs.push_back(parse_graph(read_text(f)));
  } else {
    const Lexicon lex = lexicon_from(p.lexicon);
    for (const auto& a : load_corpus(p.corpus))
      graphs.push_back(build_graph(a, extract_article_concepts(a, lex), lex));
  }
  const GraphStats s = graph_stats(graphs);
  emit(p.out, as_json ? s.to_json().dump(2) + "\n" : s.to_markdown());
  return 0;
}

struct ServeArgs {
  std::vector<std::string> run_dirs;
  std::string log;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string static_dir;
  bool no_blind = false;
  std::size_t sample = 5;
  std::string base = "base";
};

int cmd_serve(const CommonPaths& p, const ServeArgs& a, std::uint64_t seed) {
  std::vector<RunOutputs> runs;
  for (const auto& d : a.run_dirs)
    runs.push_back({run_model_name(d), read_outputs(fs::path(d) / "outputs.jsonl")});
  SessionOptions o;
  o.sample_size = a.sample;
  o.seed = seed;
  o.blind = !a.no_blind;
  o.base_model = a.base;
  AnnotationSession session(runs, load_corpus(p.corpus), o, a.log);
  httplib::Server server;
  const std::string static_dir =
      a.static_dir.empty() ? std::string(GRAPHLAY_DEFAULT_WEB_DIR) : a.static_dir;
  install_annotation_routes(server, session, static_dir);
  std::cerr << "serving " << session.tasks().size() << " tasks on http://" << a.host << ':'
            << a.port << " (log " << a.log << ", " << session.log_length() << " judgments)\n";
  if (!server.listen(a.host, a.port))
    throw Error(ErrorKind::io, "cannot listen on " + a.host + ":" + std::to_string(a.port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"graphlay: knowledge-graph enhanced lay summarisation toolkit"};
  app.require_subcommand(1);
  std::uint64_t seed = 7;
  app.add_option("--seed", seed, "Seed for every random choice")->capture_default_str();

  CommonPaths paths;
  auto add_corpus = [&](CLI::App* sc, bool required = true) {
    auto* o = sc->add_option("--corpus", paths.corpus, "Articles, one JSON object per line");
    if (required) o->required();
    sc->add_option("--lexicon", paths.lexicon,
                   "Lexicon JSON (default: $GRAPHLAY_DATA_DIR/mini_lexicon.json)");
  };

  auto* extract = app.add_subcommand("extract", "Concepts per section and salient concepts");
  add_corpus(extract);
  extract->add_option("--out", paths.out, "Output JSONL (default stdout)");

  std::string graphs_out;
  auto* build = app.add_subcommand("build-graph", "Build one graph file per article");
  add_corpus(build);
  build->add_option("--out-dir", graphs_out, "Directory for <id>.json graphs")->required();

  auto* augment = app.add_subcommand("augment", "Render augmented model inputs");
  add_corpus(augment);
  augment->add_option("--out", paths.out, "Output JSONL (default stdout)");

  std::size_t synth_n = 8;
  auto* synth = app.add_subcommand("synth-corpus", "Generate a synthetic corpus");
  synth->add_option("--n", synth_n, "Number of articles")->capture_default_str();
  synth->add_option("--lexicon", paths.lexicon, "Lexicon JSON");
  synth->add_option("--out", paths.out, "Output JSONL (default stdout)");

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "Train one variant into a run directory");
  add_corpus(trn);
  trn->add_option("--run-dir", ta.run_dir, "Run directory")->required();
  trn->add_option("--variant", ta.variant, "base|text-aug|doc-enhance|decoder-attn")
      ->check(CLI::IsMember({"base", "text-aug", "doc-enhance", "decoder-attn"}))
      ->capture_default_str();
  trn->add_option("--combine", ta.combine, "Further enhancements to switch on")
      ->check(CLI::IsMember({"text-aug", "doc-enhance", "decoder-attn"}));
  trn->add_option("--graphs-dir", ta.graphs_dir, "Prebuilt graphs (default: build in memory)");
  trn->add_option("--val-corpus", ta.val_corpus, "Validation articles");
  trn->add_option("--val-fraction", ta.val_fraction,
                  "Held-out share when no --val-corpus (0 validates on the training set)")
      ->check(CLI::Range(0.0, 0.9));
  trn->add_option("--epochs", ta.train.max_epochs, "Maximum epochs")->capture_default_str();
  trn->add_option("--max-steps", ta.train.max_steps, "Stop after this many steps (0 = no cap)");
  trn->add_option("--batch-size", ta.train.batch_size)->capture_default_str();
  trn->add_option("--lr", ta.train.adam.lr)->capture_default_str();
  trn->add_option("--clip-norm", ta.train.adam.clip_norm)->capture_default_str();
  trn->add_option("--val-max-len", ta.train.val_max_len)->capture_default_str();
  trn->add_option("--divergence-factor", ta.train.divergence_factor,
                  "Abort when loss exceeds this multiple of ln(vocab); 0 disables")
      ->capture_default_str();
  trn->add_option("--d-model", ta.model.d_model)->capture_default_str();
  trn->add_option("--heads", ta.model.n_heads)->capture_default_str();
  trn->add_option("--d-ff", ta.model.d_ff)->capture_default_str();
  trn->add_option("--enc-layers", ta.model.n_enc_layers)->capture_default_str();
  trn->add_option("--dec-layers", ta.model.n_dec_layers)->capture_default_str();
  trn->add_option("--window", ta.model.attention_window)->capture_default_str();
  trn->add_option("--max-input-tokens", ta.model.max_input_tokens)->capture_default_str();
  trn->add_option("--gat-layers", ta.model.gat_layers)->capture_default_str();
  trn->add_option("--gat-heads", ta.model.gat_heads)->capture_default_str();
  trn->add_option("--p", ta.model.p, "Mixing factor for doc-enhance")->capture_default_str();
  trn->add_option("--d-text", ta.model.d_text)->capture_default_str();
  trn->add_option("--rwpe-k", ta.model.rwpe_k)->capture_default_str();

  std::string run_dir, gen_graphs;
  GenerationOptions gen;
  auto* generate = app.add_subcommand("generate", "Write outputs.jsonl for a trained run");
  add_corpus(generate);
  generate->add_option("--run-dir", run_dir, "Run directory")->required();
  generate->add_option("--graphs-dir", gen_graphs, "Prebuilt graphs");
  generate->add_option("--beam", gen.beam_size, "Beam size (1 = greedy)")->capture_default_str();
  generate->add_option("--max-len", gen.max_len)->capture_default_str();

  std::vector<std::string> eval_runs;
  std::string refs, base_run, report_dir = ".";
  auto* evaluate = app.add_subcommand("evaluate", "Metric report against the base run");
  evaluate->add_option("--run-dir", eval_runs, "Run directories (repeatable)")->required();
  evaluate->add_option("--refs", refs, "Corpus with reference lay summaries")->required();
  evaluate->add_option("--base-run", base_run, "Run directory of the base model")->required();
  evaluate->add_option("--out-dir", report_dir, "Where report.md and report.json go")
      ->capture_default_str();

  std::string stats_graphs;
  bool stats_json = false;
  auto* stats = app.add_subcommand("graph-stats", "Mean node and edge counts per graph");
  add_corpus(stats, false);
  stats->add_option("--graphs-dir", stats_graphs, "Graph files instead of --corpus");
  stats->add_flag("--json", stats_json, "JSON instead of Markdown");
  stats->add_option("--out", paths.out, "Output file (default stdout)");

  ServeArgs sa;
  auto* serve = app.add_subcommand("serve-annotation", "Human evaluation service");
  add_corpus(serve);
  serve->add_option("--run-dir", sa.run_dirs, "Run directories with outputs.jsonl")->required();
  serve->add_option("--log", sa.log, "Judgment log (JSONL, appended)")->required();
  serve->add_option("--host", sa.host)->capture_default_str();
  serve->add_option("--port", sa.port)->capture_default_str();
  serve->add_option("--static-dir", sa.static_dir, "UI assets served from /");
  serve->add_option("--sample", sa.sample, "Articles sampled for judging")->capture_default_str();
  serve->add_option("--base", sa.base, "Model name used as the significance baseline")
      ->capture_default_str();
  serve->add_flag("--no-blind", sa.no_blind, "Show model names to judges");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*extract) return cmd_extract(paths);
    if (*build) return cmd_build_graph(paths, graphs_out);
    if (*augment) return cmd_augment(paths);
    if (*synth) return cmd_synth(paths, seed, synth_n);
    if (*trn) return cmd_train(paths, ta, seed);
    if (*generate) return cmd_generate(paths, run_dir, gen_graphs, gen);
    if (*evaluate) return cmd_evaluate(eval_runs, refs, base_run, report_dir);
    if (*stats) {
      if (stats_graphs.empty() && paths.corpus.empty())
        throw CLI::RequiredError("--corpus or --graphs-dir");
      return cmd_graph_stats(paths, stats_graphs, stats_json);
    }
    if (*serve) return cmd_serve(paths, sa, seed);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
