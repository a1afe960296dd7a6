#pragma once

// Reverse-mode automatic differentiation over dense double matrices.
//
// A Tape records every operation applied to its Vars together with a closure
// that propagates the output gradient to the inputs. Parameters live outside
// the tape; Tape::backward accumulates into Parameter::grad. A tape built with
// record=false only computes values (inference and finite differences).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "graphlay/error.hpp"
#include "graphlay/matrix.hpp"

namespace graphlay::ad {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  // Adam moments
  Matrix m;
  Matrix v;

  Parameter() = default;
  Parameter(std::string n, Matrix init)
      : name(std::move(n)),
        value(std::move(init)),
        grad(value.rows, value.cols),
        m(value.rows, value.cols),
        v(value.rows, value.cols) {}

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

class Tape;

/// Handle to a tape node. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  std::size_t rows() const { return value().rows; }
  std::size_t cols() const { return value().cols; }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix value) {
    nodes_.push_back({std::move(value), {}, false, false, {}, nullptr});
    return {this, nodes_.size() - 1};
  }

  Var param(Parameter& p) {
    nodes_.push_back({p.value, {}, false, record_, {}, &p});
    return {this, nodes_.size() - 1};
  }

  /// Adds an op result. `inputs` decide whether the node needs a gradient;
  /// the closure is dropped when none does.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
    bool needs = false;
    if (record_)
      for (const Var& in : inputs) needs = needs || nodes_[in.id()].requires_grad;
    nodes_.push_back(
        {std::move(value), {}, false, needs, needs ? std::move(backward) : Backward{},
         nullptr});
    return {this, nodes_.size() - 1};
  }

  Var record(Matrix value, const std::vector<Var>& inputs, Backward backward) {
    bool needs = false;
    if (record_)
      for (const Var& in : inputs) needs = needs || nodes_[in.id()].requires_grad;
    nodes_.push_back(
        {std::move(value), {}, false, needs, needs ? std::move(backward) : Backward{},
         nullptr});
    return {this, nodes_.size() - 1};
  }

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node, allocated on first use.
  Matrix& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Matrix(n.value.rows, n.value.cols);
      n.has_grad = true;
    }
    return n.grad;
  }

  /// Seeds d(out)/d(out) = 1 for a 1x1 output and propagates to parameters.
  void backward(Var out) {
    if (!record_) throw Error(ErrorKind::invalid_argument, "tape is not recording");
    if (out.rows() != 1 || out.cols() != 1)
      throw Error(ErrorKind::shape_mismatch, "backward needs a scalar output");
    grad(out.id())(0, 0) = 1.0;
    for (std::size_t i = out.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.requires_grad) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param != nullptr) {
        auto& dst = n.param->grad.data;
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad.data[k];
      }
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool has_grad = false;
    bool requires_grad = false;
    Backward backward;
    Parameter* param = nullptr;
  };
  std::deque<Node> nodes_;
  bool record_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }

// ------------------------------------------------------------- kernels

namespace kernel {

// C += A * B
inline void mm_acc(Matrix& c, const Matrix& a, const Matrix& b) {
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* ci = c.row(i);
    const double* ai = a.row(i);
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = ai[k];
      if (aik == 0.0) continue;
      const double* bk = b.row(k);
      for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aik * bk[j];
    }
  }
}

// C += A * B^T
inline void mm_nt_acc(Matrix& c, const Matrix& a, const Matrix& b) {
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ai = a.row(i);
    double* ci = c.row(i);
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* bj = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) s += ai[k] * bj[k];
      ci[j] += s;
    }
  }
}

// C += A^T * B
inline void mm_tn_acc(Matrix& c, const Matrix& a, const Matrix& b) {
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ai = a.row(i);
    const double* bi = b.row(i);
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = ai[k];
      if (aik == 0.0) continue;
      double* ck = c.row(k);
      for (std::size_t j = 0; j < b.cols; ++j) ck[j] += aik * bi[j];
    }
  }
}

}  // namespace kernel

namespace detail {

inline void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorKind::shape_mismatch, what);
}

inline void accumulate(Matrix& dst, const Matrix& src) {
  for (std::size_t k = 0; k < dst.data.size(); ++k) dst.data[k] += src.data[k];
}

}  // namespace detail

// ------------------------------------------------------------- ops

inline Var matmul(Var a, Var b) {
  detail::require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Matrix out(a.rows(), b.cols());
  kernel::mm_acc(out, a.value(), b.value());
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(a.id())) kernel::mm_nt_acc(t.grad(a.id()), g, b.value());
    if (t.requires_grad(b.id())) kernel::mm_tn_acc(t.grad(b.id()), a.value(), g);
  });
}

/// a * b^T
inline Var matmul_nt(Var a, Var b) {
  detail::require(a.cols() == b.cols(), "matmul_nt: widths differ");
  Matrix out(a.rows(), b.rows());
  kernel::mm_nt_acc(out, a.value(), b.value());
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(a.id())) kernel::mm_acc(t.grad(a.id()), g, b.value());
    if (t.requires_grad(b.id())) kernel::mm_tn_acc(t.grad(b.id()), g, a.value());
  });
}

inline Var add(Var a, Var b) {
  detail::require(a.value().same_shape(b.value()), "add: shapes differ");
  Matrix out = a.value();
  detail::accumulate(out, b.value());
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(a.id())) detail::accumulate(t.grad(a.id()), g);
    if (t.requires_grad(b.id())) detail::accumulate(t.grad(b.id()), g);
  });
}

/// Adds a 1 x c row to every row of a.
inline Var add_row(Var a, Var row) {
  detail::require(row.rows() == 1 && row.cols() == a.cols(), "add_row: bad bias shape");
  Matrix out = a.value();
  const double* r = row.value().row(0);
  for (std::size_t i = 0; i < out.rows; ++i) {
    double* o = out.row(i);
    for (std::size_t j = 0; j < out.cols; ++j) o[j] += r[j];
  }
  return a.tape()->record(std::move(out), {a, row}, [a, row](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(a.id())) detail::accumulate(t.grad(a.id()), g);
    if (t.requires_grad(row.id())) {
      double* dr = t.grad(row.id()).row(0);
      for (std::size_t i = 0; i < g.rows; ++i) {
        const double* gi = g.row(i);
        for (std::size_t j = 0; j < g.cols; ++j) dr[j] += gi[j];
      }
    }
  });
}

inline Var scale(Var a, double s) {
  Matrix out = a.value();
  for (double& x : out.data) x *= s;
  return a.tape()->record(std::move(out), {a}, [a, s](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& da = t.grad(a.id());
    for (std::size_t k = 0; k < g.data.size(); ++k) da.data[k] += s * g.data[k];
  });
}

/// Row-wise softmax. When `allowed` is given (rows*cols flags) disallowed
/// entries act as -inf logits and receive probability 0.
inline Var softmax_rows(Var a, const std::vector<unsigned char>* allowed = nullptr) {
  const Matrix& x = a.value();
  if (allowed) detail::require(allowed->size() == x.size(), "softmax: mask shape");
  Matrix out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double* xi = x.row(i);
    double* yi = out.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < x.cols; ++j)
      if (!allowed || (*allowed)[i * x.cols + j]) mx = std::max(mx, xi[j]);
    if (mx == -std::numeric_limits<double>::infinity()) continue;
    double sum = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) {
      if (allowed && !(*allowed)[i * x.cols + j]) continue;
      yi[j] = std::exp(xi[j] - mx);
      sum += yi[j];
    }
    for (std::size_t j = 0; j < x.cols; ++j) yi[j] /= sum;
  }
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    Matrix& da = t.grad(a.id());
    for (std::size_t i = 0; i < y.rows; ++i) {
      const double* yi = y.row(i);
      const double* gi = g.row(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols; ++j) dot += yi[j] * gi[j];
      double* di = da.row(i);
      for (std::size_t j = 0; j < y.cols; ++j) di[j] += yi[j] * (gi[j] - dot);
    }
  });
}

inline Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
  const Matrix& xv = x.value();
  const std::size_t n = xv.cols;
  detail::require(gamma.rows() == 1 && gamma.cols() == n && beta.rows() == 1 &&
                      beta.cols() == n,
                  "layer_norm: parameter shape");
  Matrix xhat(xv.rows, n);
  std::vector<double> inv(xv.rows);
  Matrix out(xv.rows, n);
  const double* gm = gamma.value().row(0);
  const double* bt = beta.value().row(0);
  for (std::size_t i = 0; i < xv.rows; ++i) {
    const double* xi = xv.row(i);
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xi[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<double>(n);
    inv[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat(i, j) = (xi[j] - mu) * inv[i];
      out(i, j) = gm[j] * xhat(i, j) + bt[j];
    }
  }
  return x.tape()->record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv = std::move(inv)](
          Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const std::size_t n = g.cols;
        const double* gm = gamma.value().row(0);
        if (t.requires_grad(gamma.id()) || t.requires_grad(beta.id())) {
          double* dg = t.grad(gamma.id()).row(0);
          double* db = t.grad(beta.id()).row(0);
          for (std::size_t i = 0; i < g.rows; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              dg[j] += g(i, j) * xhat(i, j);
              db[j] += g(i, j);
            }
        }
        if (!t.requires_grad(x.id())) return;
        Matrix& dx = t.grad(x.id());
        std::vector<double> dxhat(n);
        for (std::size_t i = 0; i < g.rows; ++i) {
          double sum = 0.0;
          double sum_x = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            dxhat[j] = g(i, j) * gm[j];
            sum += dxhat[j];
            sum_x += dxhat[j] * xhat(i, j);
          }
          const double nn = static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j)
            dx(i, j) += inv[i] / nn * (nn * dxhat[j] - sum - xhat(i, j) * sum_x);
        }
      });
}

namespace detail {

template <class F, class DF>
Var elementwise(Var a, F f, DF df) {
  Matrix out = a.value();
  for (double& v : out.data) v = f(v);
  return a.tape()->record(std::move(out), {a}, [a, df](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& x = a.value();
    Matrix& da = t.grad(a.id());
    for (std::size_t k = 0; k < g.data.size(); ++k) da.data[k] += g.data[k] * df(x.data[k]);
  });
}

}  // namespace detail

inline Var elu(Var a) {
  return detail::elementwise(
      a, [](double x) { return x > 0.0 ? x : std::expm1(x); },
      [](double x) { return x > 0.0 ? 1.0 : std::exp(x); });
}

inline Var leaky_relu(Var a, double slope = 0.2) {
  return detail::elementwise(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x) { return x > 0.0 ? 1.0 : slope; });
}

/// tanh approximation of GELU.
inline Var gelu(Var a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  return detail::elementwise(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x))); },
      [](double x) {
        const double th = std::tanh(c * (x + k * x * x * x));
        return 0.5 * (1.0 + th) +
               0.5 * x * (1.0 - th * th) * c * (1.0 + 3.0 * k * x * x);
      });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  detail::require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    detail::require(p.cols() == cols, "concat_rows: widths differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::size_t r = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data.begin(), p.value().data.end(), out.row(r));
    r += p.rows();
  }
  return parts.front().tape()->record(std::move(out), parts, [parts](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    std::size_t r = 0;
    for (const Var& p : parts) {
      if (t.requires_grad(p.id())) {
        Matrix& dp = t.grad(p.id());
        const double* src = g.row(r);
        for (std::size_t k = 0; k < dp.data.size(); ++k) dp.data[k] += src[k];
      }
      r += p.rows();
    }
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  detail::require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    detail::require(p.rows() == rows, "concat_cols: heights differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::size_t c0 = 0;
  for (const Var& p : parts) {
    for (std::size_t i = 0; i < rows; ++i)
      std::copy(p.value().row(i), p.value().row(i) + p.cols(), out.row(i) + c0);
    c0 += p.cols();
  }
  return parts.front().tape()->record(std::move(out), parts, [parts](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    std::size_t c0 = 0;
    for (const Var& p : parts) {
      if (t.requires_grad(p.id())) {
        Matrix& dp = t.grad(p.id());
        for (std::size_t i = 0; i < dp.rows; ++i)
          for (std::size_t j = 0; j < dp.cols; ++j) dp(i, j) += g(i, c0 + j);
      }
      c0 += p.cols();
    }
  });
}

inline Var slice_cols(Var a, std::size_t start, std::size_t width) {
  detail::require(start + width <= a.cols(), "slice_cols: out of range");
  Matrix out(a.rows(), width);
  for (std::size_t i = 0; i < out.rows; ++i)
    std::copy(a.value().row(i) + start, a.value().row(i) + start + width, out.row(i));
  return a.tape()->record(std::move(out), {a}, [a, start](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& da = t.grad(a.id());
    for (std::size_t i = 0; i < g.rows; ++i)
      for (std::size_t j = 0; j < g.cols; ++j) da(i, start + j) += g(i, j);
  });
}

/// out(i, j) = a(i, 0) + b(j, 0) for column vectors a (n x 1), b (m x 1).
inline Var outer_sum(Var a, Var b) {
  detail::require(a.cols() == 1 && b.cols() == 1, "outer_sum: needs column vectors");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < out.rows; ++i)
    for (std::size_t j = 0; j < out.cols; ++j)
      out(i, j) = a.value()(i, 0) + b.value()(j, 0);
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const bool ga = t.requires_grad(a.id());
    const bool gb = t.requires_grad(b.id());
    for (std::size_t i = 0; i < g.rows; ++i)
      for (std::size_t j = 0; j < g.cols; ++j) {
        if (ga) t.grad(a.id())(i, 0) += g(i, j);
        if (gb) t.grad(b.id())(j, 0) += g(i, j);
      }
  });
}

/// Rows of `table` selected by `ids` (embedding lookup).
inline Var gather_rows(Var table, std::vector<int> ids) {
  Matrix out(ids.size(), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    detail::require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < table.rows(),
                    "gather_rows: id out of range");
    const double* src = table.value().row(static_cast<std::size_t>(ids[i]));
    std::copy(src, src + table.cols(), out.row(i));
  }
  return table.tape()->record(
      std::move(out), {table}, [table, ids = std::move(ids)](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        Matrix& dt = t.grad(table.id());
        for (std::size_t i = 0; i < ids.size(); ++i) {
          double* d = dt.row(static_cast<std::size_t>(ids[i]));
          const double* gi = g.row(i);
          for (std::size_t j = 0; j < g.cols; ++j) d[j] += gi[j];
        }
      });
}

/// Sum over rows of -log softmax(logits)[target]. Negative targets are
/// padding and contribute nothing.
inline Var nll_sum(Var logits, std::vector<int> targets) {
  const Matrix& x = logits.value();
  detail::require(targets.size() == x.rows, "nll_sum: one target per row");
  Matrix probs(x.rows, x.cols);
  double loss = 0.0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    if (targets[i] < 0) continue;
    const double* xi = x.row(i);
    const double mx = *std::max_element(xi, xi + x.cols);
    double sum = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) {
      probs(i, j) = std::exp(xi[j] - mx);
      sum += probs(i, j);
    }
    for (std::size_t j = 0; j < x.cols; ++j) probs(i, j) /= sum;
    loss += mx + std::log(sum) - xi[static_cast<std::size_t>(targets[i])];
  }
  Matrix out(1, 1, loss);
  return logits.tape()->record(
      std::move(out), {logits},
      [logits, targets = std::move(targets), probs = std::move(probs)](Tape& t,
                                                                       std::size_t self) {
        const double g = t.grad(self)(0, 0);
        Matrix& dl = t.grad(logits.id());
        for (std::size_t i = 0; i < probs.rows; ++i) {
          if (targets[i] < 0) continue;
          for (std::size_t j = 0; j < probs.cols; ++j) dl(i, j) += g * probs(i, j);
          dl(i, static_cast<std::size_t>(targets[i])) -= g;
        }
      });
}

/// sum(a .* w) for a constant weight matrix; turns any tensor into a scalar
/// objective for gradient checks.
inline Var weighted_sum(Var a, const Matrix& w) {
  detail::require(a.value().same_shape(w), "weighted_sum: shapes differ");
  double s = 0.0;
  for (std::size_t k = 0; k < w.data.size(); ++k) s += a.value().data[k] * w.data[k];
  return a.tape()->record(Matrix(1, 1, s), {a}, [a, w](Tape& t, std::size_t self) {
    const double g = t.grad(self)(0, 0);
    Matrix& da = t.grad(a.id());
    for (std::size_t k = 0; k < w.data.size(); ++k) da.data[k] += g * w.data[k];
  });
}

// ------------------------------------------------------------- verification

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
};

/// Compares tape gradients with central finite differences on up to
/// `samples_per_param` randomly chosen coordinates of every parameter.
/// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, 1e-6).
template <class Objective, class Pick>
GradCheckResult grad_check(Objective&& objective, std::span<Parameter* const> params,
                           double eps, std::size_t samples_per_param, Pick&& pick) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape(true);
    tape.backward(objective(tape));
  }
  auto evaluate = [&] {
    Tape tape(false);
    return objective(tape).value()(0, 0);
  };
  GradCheckResult r;
  for (Parameter* p : params) {
    const std::size_t n = p->value.size();
    const std::size_t count = std::min(n, samples_per_param);
    for (std::size_t s = 0; s < count; ++s) {
      const std::size_t k = count == n ? s : pick(n);
      const double orig = p->value.data[k];
      p->value.data[k] = orig + eps;
      const double up = evaluate();
      p->value.data[k] = orig - eps;
      const double down = evaluate();
      p->value.data[k] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = p->grad.data[k];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      r.max_relative_error =
          std::max(r.max_relative_error, std::abs(analytic - numeric) / denom);
      ++r.coordinates;
    }
  }
  return r;
}

}  // namespace graphlay::ad
