#pragma once

// Toy knowledge-enhanced encoder-decoder.
//
//   graph features --GAT--> H_G
//   source tokens  --windowed pre-norm encoder--> H_X
//   doc_enhance:   H* = p * EncoderLayer([H_X; H_G]) + (1 - p) * [H_X; H_G]
//   decoder layer: causal self-attn -> cross-attn(memory)
//                  [-> graph cross-attn(K = V = H_G), zero-initialised out proj]
//                  -> feed-forward
//
// Every parameter exists regardless of which enhancements are switched on, and
// parameters are created in a fixed order, so models that differ only in their
// enhancement set start from identical base weights for the same seed.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "graphlay/autodiff.hpp"
#include "graphlay/error.hpp"
#include "graphlay/matrix.hpp"
#include "graphlay/rng.hpp"

namespace graphlay {

struct Enhancements {
  bool text_aug = false;
  bool doc_enhance = false;
  bool decoder_attn = false;

  bool uses_graph() const { return doc_enhance || decoder_attn; }
  bool any() const { return text_aug || doc_enhance || decoder_attn; }
  bool operator==(const Enhancements&) const = default;

  /// "base" or names joined by '+', e.g. "text-aug+doc-enhance".
  std::string name() const {
    std::string out;
    auto add = [&](bool on, const char* n) {
      if (!on) return;
      if (!out.empty()) out += '+';
      out += n;
    };
    add(text_aug, "text-aug");
    add(doc_enhance, "doc-enhance");
    add(decoder_attn, "decoder-attn");
    return out.empty() ? "base" : out;
  }
};

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t n_enc_layers = 2;
  std::size_t n_dec_layers = 2;
  std::size_t attention_window = 128;  // 0 = full attention
  std::size_t max_input_tokens = 512;
  std::size_t gat_layers = 3;
  std::size_t gat_heads = 4;
  Enhancements enhancement;
  double p = 0.25;
  std::size_t d_text = 64;
  std::size_t rwpe_k = 8;
  std::uint64_t seed = 7;

  std::size_t node_feature_width() const { return d_text + 5 + rwpe_k; }

  /// Token budget for the encoder input; doubled when text augmentation is on.
  std::size_t input_budget() const {
    return enhancement.text_aug ? 2 * max_input_tokens : max_input_tokens;
  }

  void validate() const {
    auto fail = [](const std::string& w) {
      throw Error(ErrorKind::invalid_argument, "model config: " + w);
    };
    if (vocab_size < 5) fail("vocab_size too small");
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
      fail("d_model must be divisible by n_heads");
    if (gat_heads == 0 || d_model % gat_heads != 0)
      fail("d_model must be divisible by gat_heads");
    if (gat_layers == 0) fail("gat_layers must be >= 1");
    if (!(p >= 0.0 && p <= 1.0)) fail("p must lie in [0, 1]");
    if (attention_window % 2 != 0) fail("attention_window must be even or 0");
    if (d_text < 8) fail("d_text must be >= 8");
    if (rwpe_k < 1) fail("rwpe_k must be >= 1");
    if (max_input_tokens < 1) fail("max_input_tokens must be >= 1");
  }

  nlohmann::json to_json() const {
    return {{"vocab_size", vocab_size},
            {"d_model", d_model},
            {"n_heads", n_heads},
            {"d_ff", d_ff},
            {"n_enc_layers", n_enc_layers},
            {"n_dec_layers", n_dec_layers},
            {"attention_window", attention_window},
            {"max_input_tokens", max_input_tokens},
            {"gat_layers", gat_layers},
            {"gat_heads", gat_heads},
            {"enhancement",
             {{"text_aug", enhancement.text_aug},
              {"doc_enhance", enhancement.doc_enhance},
              {"decoder_attn", enhancement.decoder_attn}}},
            {"p", p},
            {"d_text", d_text},
            {"rwpe_k", rwpe_k},
            {"seed", seed}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size");
    c.d_model = j.at("d_model");
    c.n_heads = j.at("n_heads");
    c.d_ff = j.at("d_ff");
    c.n_enc_layers = j.at("n_enc_layers");
    c.n_dec_layers = j.at("n_dec_layers");
    c.attention_window = j.at("attention_window");
    c.max_input_tokens = j.at("max_input_tokens");
    c.gat_layers = j.at("gat_layers");
    c.gat_heads = j.at("gat_heads");
    c.enhancement.text_aug = j.at("enhancement").at("text_aug");
    c.enhancement.doc_enhance = j.at("enhancement").at("doc_enhance");
    c.enhancement.decoder_attn = j.at("enhancement").at("decoder_attn");
    c.p = j.at("p");
    c.d_text = j.at("d_text");
    c.rwpe_k = j.at("rwpe_k");
    c.seed = j.at("seed");
    return c;
  }
};

/// Named parameters in creation order.
class ParameterStore {
 public:
  ad::Parameter& add(const std::string& name, Matrix init) {
    if (index_.count(name))
      throw Error(ErrorKind::invalid_argument, "duplicate parameter " + name);
    index_[name] = params_.size();
    params_.push_back(std::make_unique<ad::Parameter>(name, std::move(init)));
    return *params_.back();
  }

  ad::Parameter& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error(ErrorKind::not_found, "no parameter " + name);
    return *params_[it->second];
  }
  const ad::Parameter& at(const std::string& name) const {
    return const_cast<ParameterStore*>(this)->at(name);
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<ad::Parameter*> all() const {
    std::vector<ad::Parameter*> out;
    for (const auto& p : params_) out.push_back(p.get());
    return out;
  }

  /// Parameters whose name starts with `prefix`.
  std::vector<ad::Parameter*> with_prefix(const std::string& prefix) const {
    std::vector<ad::Parameter*> out;
    for (const auto& p : params_)
      if (p->name.rfind(prefix, 0) == 0) out.push_back(p.get());
    return out;
  }

  std::size_t size() const { return params_.size(); }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

 private:
  std::vector<std::unique_ptr<ad::Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Boolean attention masks (rows * cols, 1 = may attend).
using AttentionMask = std::vector<unsigned char>;

/// Token i sees j iff |i - j| <= window / 2; window 0 means everything.
inline AttentionMask band_mask(std::size_t len, std::size_t window) {
  AttentionMask m(len * len, 1);
  if (window == 0) return m;
  const std::size_t half = window / 2;
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = 0; j < len; ++j)
      m[i * len + j] = (i > j ? i - j : j - i) <= half ? 1 : 0;
  return m;
}

inline AttentionMask causal_mask(std::size_t len) {
  AttentionMask m(len * len, 0);
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = 0; j <= i; ++j) m[i * len + j] = 1;
  return m;
}

/// In-neighbourhoods (including self) of a symmetrized graph.
inline AttentionMask graph_mask(const std::vector<std::vector<std::size_t>>& neighbors) {
  const std::size_t n = neighbors.size();
  AttentionMask m(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    m[i * n + i] = 1;
    for (auto j : neighbors[i]) m[i * n + j] = 1;
  }
  return m;
}

inline Matrix sinusoidal_positions(std::size_t len, std::size_t d) {
  Matrix pe(len, d);
  for (std::size_t pos = 0; pos < len; ++pos)
    for (std::size_t i = 0; i < d; ++i) {
      const double freq =
          std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) * freq;
      pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

/// Graph input for the GAT: features (nodes x feature width) and the
/// symmetrized neighbourhoods without self loops.
struct GraphInput {
  Matrix features;
  std::vector<std::vector<std::size_t>> neighbors;

  std::size_t size() const { return features.rows; }
};

class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    const std::size_t d = cfg_.d_model;
    auto linear = [&](const std::string& name, std::size_t in, std::size_t out) {
      Matrix w(in, out);
      const double sd = 1.0 / std::sqrt(static_cast<double>(in));
      for (double& x : w.data) x = rng.normal(0.0, sd);
      params_.add(name + ".w", std::move(w));
      params_.add(name + ".b", Matrix(1, out));
    };
    auto norm = [&](const std::string& name) {
      params_.add(name + ".g", Matrix(1, d, 1.0));
      params_.add(name + ".b", Matrix(1, d));
    };
    auto attention = [&](const std::string& name) {
      for (const char* proj : {".q", ".k", ".v", ".o"}) linear(name + proj, d, d);
    };
    auto encoder_layer = [&](const std::string& name) {
      norm(name + ".ln1");
      attention(name + ".attn");
      norm(name + ".ln2");
      linear(name + ".ff1", d, cfg_.d_ff);
      linear(name + ".ff2", cfg_.d_ff, d);
    };

    Matrix embed(cfg_.vocab_size, d);
    for (double& x : embed.data) x = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
    params_.add("embed", std::move(embed));

    for (std::size_t l = 0; l < cfg_.n_enc_layers; ++l)
      encoder_layer("enc" + std::to_string(l));
    norm("enc.ln");

    for (std::size_t l = 0; l < cfg_.n_dec_layers; ++l) {
      const std::string name = "dec" + std::to_string(l);
      norm(name + ".ln1");
      attention(name + ".self");
      norm(name + ".ln2");
      attention(name + ".cross");
      norm(name + ".lng");
      attention(name + ".graph");
      norm(name + ".ln3");
      linear(name + ".ff1", d, cfg_.d_ff);
      linear(name + ".ff2", cfg_.d_ff, d);
    }
    norm("dec.ln");
    linear("out", d, cfg_.vocab_size);

    // GAT: input projection, then per layer per head W, a_src, a_dst, and a
    // per-layer bias.
    linear("gat.in", cfg_.node_feature_width(), d);
    for (std::size_t l = 0; l < cfg_.gat_layers; ++l) {
      const bool last = l + 1 == cfg_.gat_layers;
      const std::size_t head_out = last ? d : d / cfg_.gat_heads;
      for (std::size_t h = 0; h < cfg_.gat_heads; ++h) {
        const std::string name = gat_name(l, h);
        Matrix w(d, head_out);
        const double sd = 1.0 / std::sqrt(static_cast<double>(d));
        for (double& x : w.data) x = rng.normal(0.0, sd);
        params_.add(name + ".w", std::move(w));
        for (const char* a : {".a_src", ".a_dst"}) {
          Matrix v(head_out, 1);
          for (double& x : v.data)
            x = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(head_out)));
          params_.add(name + a, std::move(v));
        }
      }
      params_.add("gat" + std::to_string(l) + ".bias", Matrix(1, d));
    }

    encoder_layer("enh");

    // The graph cross-attention starts as an exact no-op.
    for (std::size_t l = 0; l < cfg_.n_dec_layers; ++l) {
      auto& o = params_.at("dec" + std::to_string(l) + ".graph.o.w");
      std::fill(o.value.data.begin(), o.value.data.end(), 0.0);
    }
  }

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  // ----------------------------------------------------------- blocks

  ad::Var linear(ad::Tape& t, ad::Var x, const std::string& name) {
    return ad::add_row(ad::matmul(x, p(t, name + ".w")), p(t, name + ".b"));
  }

  ad::Var norm(ad::Tape& t, ad::Var x, const std::string& name) {
    return ad::layer_norm(x, p(t, name + ".g"), p(t, name + ".b"));
  }

  /// Multi-head scaled dot-product attention with output projection.
  ad::Var attention(ad::Tape& t, ad::Var query_in, ad::Var kv_in, const std::string& name,
                    const AttentionMask* mask) {
    const std::size_t d = cfg_.d_model;
    const std::size_t h = cfg_.n_heads;
    const std::size_t dh = d / h;
    ad::Var q = linear(t, query_in, name + ".q");
    ad::Var k = linear(t, kv_in, name + ".k");
    ad::Var v = linear(t, kv_in, name + ".v");
    const double s = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<ad::Var> heads;
    for (std::size_t i = 0; i < h; ++i) {
      ad::Var qi = ad::slice_cols(q, i * dh, dh);
      ad::Var ki = ad::slice_cols(k, i * dh, dh);
      ad::Var vi = ad::slice_cols(v, i * dh, dh);
      ad::Var probs = ad::softmax_rows(ad::scale(ad::matmul_nt(qi, ki), s), mask);
      heads.push_back(ad::matmul(probs, vi));
    }
    ad::Var joined = h == 1 ? heads.front() : ad::concat_cols(heads);
    return linear(t, joined, name + ".o");
  }

  /// Self-attention where token i attends to tokens within +-window/2.
  ad::Var windowed_self_attention(ad::Tape& t, ad::Var seq, std::size_t window,
                                  const std::string& name) {
    const AttentionMask mask = band_mask(seq.rows(), window);
    return attention(t, seq, seq, name, &mask);
  }

  ad::Var feed_forward(ad::Tape& t, ad::Var x, const std::string& name) {
    return linear(t, ad::gelu(linear(t, x, name + ".ff1")), name + ".ff2");
  }

  /// Pre-norm encoder layer; window 0 gives full attention.
  ad::Var encoder_layer(ad::Tape& t, ad::Var x, const std::string& name, std::size_t window) {
    const AttentionMask mask = band_mask(x.rows(), window);
    ad::Var n1 = norm(t, x, name + ".ln1");
    ad::Var h = ad::add(x, attention(t, n1, n1, name + ".attn", &mask));
    return ad::add(h, feed_forward(t, norm(t, h, name + ".ln2"), name));
  }

  // ----------------------------------------------------------- graph

  /// One graph-attention layer. Per head: e_ij = LeakyReLU(a_src.Wh_i +
  /// a_dst.Wh_j) over j in N(i) + {i}; alpha = softmax_j; h'_i = sum alpha Wh_j.
  /// Intermediate layers concatenate heads and apply ELU; the last averages.
  ad::Var gat_layer(ad::Tape& t, ad::Var h, const AttentionMask& mask, std::size_t layer) {
    const bool last = layer + 1 == cfg_.gat_layers;
    std::vector<ad::Var> heads;
    for (std::size_t k = 0; k < cfg_.gat_heads; ++k) {
      const std::string name = gat_name(layer, k);
      ad::Var wh = ad::matmul(h, p(t, name + ".w"));
      ad::Var src = ad::matmul(wh, p(t, name + ".a_src"));
      ad::Var dst = ad::matmul(wh, p(t, name + ".a_dst"));
      ad::Var alpha = ad::softmax_rows(ad::leaky_relu(ad::outer_sum(src, dst), 0.2), &mask);
      heads.push_back(ad::matmul(alpha, wh));
    }
    ad::Var bias = p(t, "gat" + std::to_string(layer) + ".bias");
    if (last) {
      ad::Var sum = heads.front();
      for (std::size_t k = 1; k < heads.size(); ++k) sum = ad::add(sum, heads[k]);
      return ad::add_row(ad::scale(sum, 1.0 / static_cast<double>(heads.size())), bias);
    }
    ad::Var joined = heads.size() == 1 ? heads.front() : ad::concat_cols(heads);
    return ad::elu(ad::add_row(joined, bias));
  }

  /// H_G: input projection to d_model followed by gat_layers layers.
  ad::Var gat_forward(ad::Tape& t, const GraphInput& graph) {
    if (graph.features.cols != cfg_.node_feature_width())
      throw Error(ErrorKind::shape_mismatch, "node feature width does not match config");
    if (graph.neighbors.size() != graph.features.rows)
      throw Error(ErrorKind::shape_mismatch, "graph neighbourhoods do not match features");
    const AttentionMask mask = graph_mask(graph.neighbors);
    ad::Var h = linear(t, t.constant(graph.features), "gat.in");
    for (std::size_t l = 0; l < cfg_.gat_layers; ++l) h = gat_layer(t, h, mask, l);
    return h;
  }

  // ----------------------------------------------------------- encoder

  ad::Var embed(ad::Tape& t, const std::vector<int>& ids) {
    const std::size_t d = cfg_.d_model;
    ad::Var x = ad::scale(ad::gather_rows(p(t, "embed"), ids), std::sqrt(static_cast<double>(d)));
    return ad::add(x, t.constant(sinusoidal_positions(ids.size(), d)));
  }

  /// H_X. Input must be non-empty and within the configured budget.
  ad::Var encode(ad::Tape& t, const std::vector<int>& ids) {
    if (ids.empty()) throw Error(ErrorKind::invalid_argument, "encoder input is empty");
    if (ids.size() > cfg_.input_budget())
      throw Error(ErrorKind::invalid_argument, "encoder input exceeds token budget");
    ad::Var x = embed(t, ids);
    for (std::size_t l = 0; l < cfg_.n_enc_layers; ++l)
      x = encoder_layer(t, x, "enc" + std::to_string(l), cfg_.attention_window);
    return norm(t, x, "enc.ln");
  }

  /// H* = p * EncoderLayer([H_X; H_G]) + (1 - p) * [H_X; H_G], full attention.
  ad::Var doc_enhance(ad::Tape& t, ad::Var hx, ad::Var hg, double p_mix) {
    if (hx.cols() != hg.cols())
      throw Error(ErrorKind::shape_mismatch, "document and graph embeddings differ in width");
    ad::Var hc = ad::concat_rows({hx, hg});
    ad::Var layer = encoder_layer(t, hc, "enh", 0);
    return ad::add(ad::scale(layer, p_mix), ad::scale(hc, 1.0 - p_mix));
  }

  // ----------------------------------------------------------- decoder

  /// Logits (prefix length x vocab) for every prefix position.
  ad::Var decode(ad::Tape& t, const std::vector<int>& prefix, ad::Var memory,
                 const ad::Var* graph, const Enhancements& flags) {
    if (prefix.empty()) throw Error(ErrorKind::invalid_argument, "decoder prefix is empty");
    if (flags.decoder_attn && (graph == nullptr || graph->rows() == 0))
      throw Error(ErrorKind::invalid_argument,
                  "graph cross-attention requires a non-empty graph embedding");
    const AttentionMask causal = causal_mask(prefix.size());
    ad::Var x = embed(t, prefix);
    for (std::size_t l = 0; l < cfg_.n_dec_layers; ++l) {
      const std::string name = "dec" + std::to_string(l);
      ad::Var n1 = norm(t, x, name + ".ln1");
      x = ad::add(x, attention(t, n1, n1, name + ".self", &causal));
      x = ad::add(x, attention(t, norm(t, x, name + ".ln2"), memory, name + ".cross", nullptr));
      if (flags.decoder_attn)
        x = ad::add(x, attention(t, norm(t, x, name + ".lng"), *graph, name + ".graph", nullptr));
      x = ad::add(x, feed_forward(t, norm(t, x, name + ".ln3"), name));
    }
    return linear(t, norm(t, x, "dec.ln"), "out");
  }

  /// Encoder memory for the configured variant: H* with doc_enhance, else H_X.
  struct Memory {
    ad::Var memory;
    ad::Var graph;
    bool has_graph = false;
  };

  Memory build_memory(ad::Tape& t, const std::vector<int>& source, const GraphInput* graph) {
    const Enhancements& e = cfg_.enhancement;
    Memory m;
    ad::Var hx = encode(t, source);
    m.memory = hx;
    if (e.uses_graph()) {
      if (graph == nullptr || graph->size() == 0)
        throw Error(ErrorKind::invalid_argument, "variant " + e.name() + " needs a graph");
      m.graph = gat_forward(t, *graph);
      m.has_graph = true;
      if (e.doc_enhance) m.memory = doc_enhance(t, hx, m.graph, cfg_.p);
    }
    return m;
  }

  ad::Var decode(ad::Tape& t, const std::vector<int>& prefix, const Memory& m) {
    return decode(t, prefix, m.memory, m.has_graph ? &m.graph : nullptr, cfg_.enhancement);
  }

  /// Sum of token negative log-likelihoods for one (source, target) pair under
  /// teacher forcing; returns the scalar and the number of target tokens.
  ad::Var sequence_nll(ad::Tape& t, const std::vector<int>& source,
                       const std::vector<int>& decoder_input, const std::vector<int>& targets,
                       const GraphInput* graph) {
    Memory m = build_memory(t, source, graph);
    return ad::nll_sum(decode(t, decoder_input, m), targets);
  }

  ad::Var p(ad::Tape& t, const std::string& name) { return t.param(params_.at(name)); }

  static std::string gat_name(std::size_t layer, std::size_t head) {
    return "gat" + std::to_string(layer) + ".h" + std::to_string(head);
  }

 private:
  ModelConfig cfg_;
  ParameterStore params_;
};

}  // namespace graphlay
