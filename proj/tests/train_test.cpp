#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "graphlay/synth.hpp"
#include "graphlay/train.hpp"
#include "test_support.hpp"

using namespace graphlay;
namespace ts = testing_support;

namespace {

struct Setup {
  Lexicon lex = ts::mini_lexicon();
  Corpus corpus = generate_synthetic_corpus(7, 8, lex);
  Vocab vocab = build_vocab(corpus, lex);

  ModelConfig config(Enhancements e = {}) const {
    ModelConfig c;
    c.vocab_size = vocab.size();
    c.d_model = 16;
    c.n_heads = 2;
    c.d_ff = 32;
    c.n_enc_layers = 1;
    c.n_dec_layers = 1;
    c.gat_layers = 2;
    c.gat_heads = 2;
    c.d_text = 16;
    c.rwpe_k = 4;
    c.enhancement = e;
    return c;
  }
};

const Setup& setup() {
  static const Setup s;
  return s;
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

// Log-softmax of one row, computed independently of the library.
double log_prob(const Matrix& logits, std::size_t row, int token) {
  double z = 0;
  for (std::size_t j = 0; j < logits.cols; ++j) z += std::exp(logits(row, j));
  return logits(row, static_cast<std::size_t>(token)) - std::log(z);
}

}  // namespace

TEST(Tokens, SentenceMarkersAndDetokenize) {
  EXPECT_EQ(model_tokens("Cells grow. They divide!"),
            (std::vector<std::string>{"cells", "grow", ".", "they", "divide", "."}));
  EXPECT_EQ(detokenize({"cells", "grow", ".", "they", "divide", "."}), "Cells grow. They divide.");
  EXPECT_EQ(detokenize({}), "");
}

TEST(Vocab, SpecialsFirstAndStableOrder) {
  const Vocab v = Vocab::build({{"b", "a", "b"}, {"c", "a", "b"}});
  EXPECT_EQ(v.tokens()[kPad], "<pad>");
  EXPECT_EQ(v.tokens()[kEos], "<eos>");
  EXPECT_EQ(v.id("b"), 4);  // most frequent
  EXPECT_EQ(v.id("a"), 5);
  EXPECT_EQ(v.id("zzz"), kUnk);
  EXPECT_EQ(v.decode({kBos, v.id("c"), kEos, kPad}), (std::vector<std::string>{"c"}));
  EXPECT_EQ(Vocab::from_tokens(v.tokens()).tokens(), v.tokens());
}

TEST(Examples, ShapesAndTruncation) {
  const auto& s = setup();
  auto cfg = s.config();
  const auto ex = prepare_example(s.corpus[0], s.lex, s.vocab, cfg, nullptr);
  EXPECT_EQ(ex.decoder_input.front(), kBos);
  EXPECT_EQ(ex.targets.back(), kEos);
  EXPECT_EQ(ex.decoder_input.size(), ex.targets.size());
  EXPECT_TRUE(ex.warnings.empty());
  cfg.max_input_tokens = 10;
  const auto cut = prepare_example(s.corpus[0], s.lex, s.vocab, cfg, nullptr);
  EXPECT_EQ(cut.source.size(), 10u);
  EXPECT_EQ(cut.warnings.size(), 1u);
}

TEST(Examples, TextAugmentationEndsWithArticle) {
  const auto& s = setup();
  const auto cfg = s.config({true, false, false});
  const auto ex = prepare_example(s.corpus[1], s.lex, s.vocab, cfg, nullptr);
  const std::string text = article_text(s.corpus[1]);
  ASSERT_GT(ex.source_text.size(), text.size());
  EXPECT_EQ(ex.source_text.substr(ex.source_text.size() - text.size()), text);
}

TEST(Examples, GraphVariantsNeedMatchingGraph) {
  const auto& s = setup();
  const auto cfg = s.config({false, true, false});
  EXPECT_EQ(kind_of([&] { prepare_example(s.corpus[0], s.lex, s.vocab, cfg, nullptr); }),
            ErrorKind::not_found);
  const auto other = build_graph(s.corpus[1], extract_article_concepts(s.corpus[1], s.lex), s.lex);
  EXPECT_EQ(kind_of([&] { prepare_example(s.corpus[0], s.lex, s.vocab, cfg, &other); }),
            ErrorKind::invalid_argument);
  const auto ex = prepare_examples(s.corpus, s.lex, s.vocab, cfg);
  EXPECT_GT(ex[0].graph.size(), 0u);
}

TEST(ForwardLoss, UniformLogitsGiveLogV) {
  const auto& s = setup();
  Model m(s.config());
  for (const char* n : {"out.w", "out.b"}) {
    auto& p = m.params().at(n);
    std::fill(p.value.data.begin(), p.value.data.end(), 0.0);
  }
  const auto ex = prepare_examples(s.corpus, s.lex, s.vocab, m.config());
  ad::Tape t(false);
  EXPECT_NEAR(forward_loss(t, m, {&ex[0], &ex[1]}).value()(0, 0),
              std::log(static_cast<double>(s.vocab.size())), 1e-12);
  EXPECT_THROW(forward_loss(t, m, {}), Error);
}

TEST(ForwardLoss, MatchesHandSummedTokenNll) {
  const auto& s = setup();
  Model m(s.config());
  const auto ex = prepare_examples(s.corpus, s.lex, s.vocab, m.config());
  ad::Tape t(false);
  double sum = 0;
  std::size_t count = 0;
  for (const Example* e : {&ex[2], &ex[5]}) {
    auto mem = m.build_memory(t, e->source, nullptr);
    const Matrix logits = m.decode(t, e->decoder_input, mem).value();
    for (std::size_t i = 0; i < e->targets.size(); ++i) sum -= log_prob(logits, i, e->targets[i]);
    count += e->targets.size();
  }
  EXPECT_NEAR(forward_loss(t, m, {&ex[2], &ex[5]}).value()(0, 0), sum / static_cast<double>(count),
              1e-10);
}

TEST(SelectCheckpoint, ArgmaxEarliestOnTies) {
  EXPECT_EQ(select_checkpoint({{1, 0.2}, {2, 0.5}, {3, 0.4}}), 2u);
  EXPECT_EQ(select_checkpoint({{1, 0.5}, {2, 0.5}}), 1u);
  EXPECT_EQ(select_checkpoint({{4, 0.0}}), 4u);
  EXPECT_THROW(select_checkpoint({}), Error);
}

TEST(Training, OneEpochOneRecord) {
  const auto& s = setup();
  Model m(s.config());
  const auto ex = prepare_examples(s.corpus, s.lex, s.vocab, m.config());
  TrainOptions o;
  o.max_epochs = 1;
  o.val_max_len = 8;
  const auto cs = train(m, ex, ex, s.vocab, o);
  ASSERT_EQ(cs.epochs.size(), 1u);
  EXPECT_EQ(cs.best_epoch, 1u);
  EXPECT_EQ(cs.epochs[0].steps, 2u);
}

TEST(Training, LossDecreasesOverFiveEpochs) {
  const auto& s = setup();
  Model m(s.config());
  const auto ex = prepare_examples(s.corpus, s.lex, s.vocab, m.config());
  TrainOptions o;
  o.max_epochs = 5;
  o.batch_size = 2;
  o.adam.lr = 3e-3;
  o.val_max_len = 4;
  const auto cs = train(m, ex, {}, s.vocab, o);
  ASSERT_EQ(cs.epochs.size(), 5u);
  EXPECT_LT(cs.epochs[4].mean_loss, cs.epochs[0].mean_loss);
  EXPECT_EQ(cs.epochs[4].steps, 20u);
}

TEST(Training, MaxStepsStopsEarly) {
  const auto& s = setup();
  Model m(s.config());
  const auto ex = prepare_examples(s.corpus, s.lex, s.vocab, m.config());
  TrainOptions o;
  o.max_epochs = 10;
  o.batch_size = 2;
  o.max_steps = 5;
  o.val_max_len = 2;
  const auto cs = train(m, ex, {}, s.vocab, o);
  EXPECT_EQ(cs.epochs.back().steps, 5u);
  EXPECT_EQ(cs.epochs.size(), 2u);
}

TEST(Training, HugeLearningRateAborts) {
  const auto& s = setup();
  Model m(s.config());
  const auto ex = prepare_examples(s.corpus, s.lex, s.vocab, m.config());
  TrainOptions o;
  o.max_epochs = 20;
  o.batch_size = 2;
  o.adam.lr = 1e6;
  o.val_max_len = 2;
  EXPECT_EQ(kind_of([&] { train(m, ex, {}, s.vocab, o); }), ErrorKind::training_diverged);
}

TEST(Training, NonFiniteParameterAborts) {
  const auto& s = setup();
  Model m(s.config());
  const auto ex = prepare_examples(s.corpus, s.lex, s.vocab, m.config());
  m.params().at("out.b").value.data[0] = std::numeric_limits<double>::quiet_NaN();
  Adam opt;
  EXPECT_EQ(kind_of([&] { train_step(m, opt, {&ex[0]}); }), ErrorKind::training_diverged);
  Model m2(s.config());
  m2.params().at("enc0.ff1.w").grad.data[0] = INFINITY;
  EXPECT_EQ(kind_of([&] { opt.step(m2.params().all()); }), ErrorKind::training_diverged);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ad::Parameter p("p", Matrix(1, 2, 1.0));
  p.grad.data = {0.3, -2.0};
  AdamOptions o;
  o.lr = 0.1;
  o.clip_norm = 0;
  Adam opt(o);
  opt.step({&p});
  // Bias-corrected first step is lr * g / |g| up to eps.
  EXPECT_NEAR(p.value.data[0], 0.9, 1e-7);
  EXPECT_NEAR(p.value.data[1], 1.1, 1e-7);
}

TEST(Generation, BeamOneIsIteratedArgmax) {
  const auto& s = setup();
  Model m(s.config({false, false, true}));
  const auto ex = prepare_examples(s.corpus, s.lex, s.vocab, m.config());
  GenerationOptions o;
  o.beam_size = 1;
  o.max_len = 12;
  const auto got = beam_decode(m, ex[0], o);
  std::vector<int> expect;
  ad::Tape t(false);
  auto mem = m.build_memory(t, ex[0].source, &ex[0].graph);
  while (expect.size() < 12) {
    std::vector<int> prefix{kBos};
    prefix.insert(prefix.end(), expect.begin(), expect.end());
    const Matrix logits = m.decode(t, prefix, mem).value();
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols; ++j)
      if (logits(prefix.size() - 1, j) > logits(prefix.size() - 1, best)) best = j;
    expect.push_back(static_cast<int>(best));
    if (static_cast<int>(best) == kEos) break;
  }
  EXPECT_EQ(got, expect);
}

TEST(Generation, BeamNeverScoresBelowGreedy) {
  const auto& s = setup();
  Model m(s.config());
  const auto ex = prepare_examples(s.corpus, s.lex, s.vocab, m.config());
  TrainOptions to;
  to.max_epochs = 2;
  to.batch_size = 2;
  to.adam.lr = 3e-3;
  to.val_max_len = 2;
  train(m, ex, {}, s.vocab, to);
  GenerationOptions o;
  o.max_len = 16;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto beam = beam_decode(m, ex[i], o);
    const auto greedy = greedy_decode(m, ex[i], o.max_len);
    EXPECT_GE(sequence_score(m, ex[i], beam).normalized + 1e-12,
              sequence_score(m, ex[i], greedy).normalized);
  }
  o.beam_size = 0;
  EXPECT_THROW(beam_decode(m, ex[0], o), Error);
}

TEST(Generation, SequenceScoreMatchesSumOfStepLogProbs) {
  const auto& s = setup();
  Model m(s.config());
  const auto ex = prepare_examples(s.corpus, s.lex, s.vocab, m.config());
  const std::vector<int> toks{5, 9, kEos};
  DecodeSession sess(m, ex[0]);
  double lp = 0;
  std::vector<int> prefix;
  for (int tk : toks) {
    lp += sess.next_log_probs(prefix)[static_cast<std::size_t>(tk)];
    prefix.push_back(tk);
  }
  const auto sc = sequence_score(m, ex[0], toks, 1.0);
  EXPECT_NEAR(sc.log_prob, lp, 1e-10);
  EXPECT_NEAR(sc.normalized, lp / 3.0, 1e-10);
}

TEST(Checkpoint, RoundTripRestoresExactWeights) {
  const auto& s = setup();
  Model m(s.config({false, true, true}));
  Rng rng(3);
  for (auto* p : m.params().all())
    for (double& v : p->value.data) v += rng.normal(0.0, 1e-3);
  const auto dir = ts::scratch_dir("ckpt");
  save_checkpoint((dir / "c.json").string(), m, s.vocab, 3);
  const auto c = load_checkpoint((dir / "c.json").string());
  EXPECT_EQ(c.epoch, 3u);
  EXPECT_EQ(c.vocab.tokens(), s.vocab.tokens());
  Model back = model_from_checkpoint(c);
  for (auto* p : m.params().all()) EXPECT_EQ(p->value, back.params().at(p->name).value);
  EXPECT_EQ(checkpoint_to_json(back, c.vocab, 3), checkpoint_to_json(m, s.vocab, 3));
  write_text(dir / "bad.json", "{\"format\":\"other\"}");
  EXPECT_THROW(load_checkpoint((dir / "bad.json").string()), Error);
}

TEST(Outputs, RoundTripAndDuplicates) {
  const auto dir = ts::scratch_dir("outputs");
  write_outputs(dir / "o.jsonl", {{"a", "One."}, {"b", "Two \"quoted\"."}});
  const auto back = read_outputs(dir / "o.jsonl");
  EXPECT_EQ(back.at("b"), "Two \"quoted\".");
  write_text(dir / "d.jsonl", "{\"id\":\"a\",\"summary\":\"x\"}\n{\"id\":\"a\",\"summary\":\"y\"}\n");
  EXPECT_THROW(read_outputs(dir / "d.jsonl"), ParseError);
}

TEST(Training, CombinationsRunWithFiniteLoss) {
  const auto& s = setup();
  for (const Enhancements e : {Enhancements{true, true, false}, Enhancements{true, false, true},
                               Enhancements{false, true, true}}) {
    Model m(s.config(e));
    const auto ex = prepare_examples(s.corpus, s.lex, s.vocab, m.config());
    Adam opt(AdamOptions{1e-3});
    for (int step = 0; step < 3; ++step)
      EXPECT_TRUE(std::isfinite(train_step(m, opt, {&ex[step], &ex[step + 1]}))) << e.name();
  }
}

TEST(Training, OverfitsTwoArticles) {
  const auto& s = setup();
  Model m(s.config());
  auto ex = prepare_examples(s.corpus, s.lex, s.vocab, m.config());
  ex.resize(2);
  TrainOptions o;
  o.max_epochs = 200;
  o.batch_size = 2;
  o.adam.lr = 3e-3;
  o.val_max_len = 48;
  const auto cs = train(m, ex, ex, s.vocab, o);
  EXPECT_GE(cs.epochs[cs.best_epoch - 1].val.r1, 95.0);
  const auto r = evaluate_rouge(m, ex, s.vocab, 48);
  EXPECT_GE(r.r1, 95.0);
}
