#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "graphlay/autodiff.hpp"
#include "graphlay/rng.hpp"

using namespace graphlay;
using namespace graphlay::ad;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data) v = rng.normal(0.0, scale);
  return m;
}

constexpr double kTol = 1e-5;

// Checks every coordinate of every parameter against central differences.
double check(std::vector<Parameter*> params, const std::function<Var(Tape&)>& f) {
  Rng pick_rng(3);
  auto r = grad_check(f, std::span<Parameter* const>(params), 1e-6, 1000,
                      [&](std::size_t n) { return pick_rng.index(n); });
  return r.max_relative_error;
}

struct Fixture {
  Rng rng{11};
  Parameter a{"a", random_matrix(rng, 3, 4)};
  Parameter b{"b", random_matrix(rng, 4, 5)};
  Parameter c{"c", random_matrix(rng, 3, 4)};
  Parameter row{"row", random_matrix(rng, 1, 4)};
  Matrix w34 = random_matrix(rng, 3, 4);
  Matrix w35 = random_matrix(rng, 3, 5);
};

}  // namespace

TEST(Autodiff, Matmul) {
  Fixture f;
  EXPECT_LT(check({&f.a, &f.b}, [&](Tape& t) {
              return weighted_sum(matmul(t.param(f.a), t.param(f.b)), f.w35);
            }),
            kTol);
}

TEST(Autodiff, MatmulTransposed) {
  Fixture f;
  Matrix w(3, 3, 0.7);
  w(1, 2) = -1.3;
  EXPECT_LT(check({&f.a, &f.c}, [&](Tape& t) {
              return weighted_sum(matmul_nt(t.param(f.a), t.param(f.c)), w);
            }),
            kTol);
}

TEST(Autodiff, AddScaleAddRow) {
  Fixture f;
  EXPECT_LT(check({&f.a, &f.c, &f.row}, [&](Tape& t) {
              auto s = add(t.param(f.a), scale(t.param(f.c), -2.5));
              return weighted_sum(add_row(s, t.param(f.row)), f.w34);
            }),
            kTol);
}

TEST(Autodiff, SoftmaxWithAndWithoutMask) {
  Fixture f;
  std::vector<unsigned char> allowed(12, 1);
  allowed[1] = allowed[6] = allowed[7] = 0;
  EXPECT_LT(check({&f.a}, [&](Tape& t) { return weighted_sum(softmax_rows(t.param(f.a)), f.w34); }),
            kTol);
  EXPECT_LT(check({&f.a}, [&](Tape& t) {
              return weighted_sum(softmax_rows(t.param(f.a), &allowed), f.w34);
            }),
            kTol);
}

TEST(Autodiff, SoftmaxForwardMatchesFormula) {
  Tape t(false);
  Matrix x(1, 3);
  x.data = {1.0, 2.0, 3.0};
  std::vector<unsigned char> allowed{1, 0, 1};
  const Matrix y = softmax_rows(t.constant(x), &allowed).value();
  const double z = std::exp(1.0) + std::exp(3.0);
  EXPECT_NEAR(y(0, 0), std::exp(1.0) / z, 1e-15);
  EXPECT_EQ(y(0, 1), 0.0);
  EXPECT_NEAR(y(0, 2), std::exp(3.0) / z, 1e-15);
}

TEST(Autodiff, LayerNorm) {
  Fixture f;
  Parameter gamma{"g", random_matrix(f.rng, 1, 4)};
  Parameter beta{"b", random_matrix(f.rng, 1, 4)};
  EXPECT_LT(check({&f.a, &gamma, &beta}, [&](Tape& t) {
              return weighted_sum(layer_norm(t.param(f.a), t.param(gamma), t.param(beta)), f.w34);
            }),
            kTol);
}

TEST(Autodiff, LayerNormForward) {
  Tape t(false);
  Matrix x(1, 4);
  x.data = {1, 2, 3, 4};
  const Matrix y =
      layer_norm(t.constant(x), t.constant(Matrix(1, 4, 1.0)), t.constant(Matrix(1, 4, 0.0)))
          .value();
  const double sd = std::sqrt(1.25 + 1e-5);
  EXPECT_NEAR(y(0, 0), -1.5 / sd, 1e-12);
  EXPECT_NEAR(y(0, 3), 1.5 / sd, 1e-12);
}

TEST(Autodiff, Activations) {
  Fixture f;
  for (auto op : {+[](Var v) { return elu(v); }, +[](Var v) { return leaky_relu(v); },
                  +[](Var v) { return gelu(v); }})
    EXPECT_LT(check({&f.a}, [&](Tape& t) { return weighted_sum(op(t.param(f.a)), f.w34); }), kTol);
}

TEST(Autodiff, ConcatAndSlice) {
  Fixture f;
  Matrix w64 = random_matrix(f.rng, 6, 4);
  EXPECT_LT(check({&f.a, &f.c}, [&](Tape& t) {
              return weighted_sum(concat_rows({t.param(f.a), t.param(f.c)}), w64);
            }),
            kTol);
  Matrix w38 = random_matrix(f.rng, 3, 8);
  EXPECT_LT(check({&f.a, &f.c}, [&](Tape& t) {
              return weighted_sum(concat_cols({t.param(f.a), t.param(f.c)}), w38);
            }),
            kTol);
  Matrix w32 = random_matrix(f.rng, 3, 2);
  EXPECT_LT(check({&f.a}, [&](Tape& t) { return weighted_sum(slice_cols(t.param(f.a), 1, 2), w32); }),
            kTol);
}

TEST(Autodiff, OuterSum) {
  Rng rng(5);
  Parameter u{"u", random_matrix(rng, 3, 1)};
  Parameter v{"v", random_matrix(rng, 4, 1)};
  Matrix w = random_matrix(rng, 3, 4);
  EXPECT_LT(check({&u, &v}, [&](Tape& t) { return weighted_sum(outer_sum(t.param(u), t.param(v)), w); }),
            kTol);
}

TEST(Autodiff, GatherRowsRepeatedIds) {
  Fixture f;
  Matrix w = random_matrix(f.rng, 4, 4);
  EXPECT_LT(check({&f.a}, [&](Tape& t) {
              return weighted_sum(gather_rows(t.param(f.a), {2, 0, 2, 1}), w);
            }),
            kTol);
  Tape t;
  EXPECT_THROW(gather_rows(t.param(f.a), {3}), Error);
}

TEST(Autodiff, NllSumWithPadding) {
  Fixture f;
  EXPECT_LT(check({&f.a}, [&](Tape& t) { return nll_sum(t.param(f.a), {1, -1, 3}); }), kTol);
  Tape t(false);
  Matrix uniform(2, 4, 0.0);
  EXPECT_NEAR(nll_sum(t.constant(uniform), {0, 2}).value()(0, 0), 2.0 * std::log(4.0), 1e-14);
}

TEST(Autodiff, ComposedChainReusesNodes) {
  Fixture f;
  EXPECT_LT(check({&f.a, &f.b, &f.row}, [&](Tape& t) {
              Var a = t.param(f.a);
              Var h = gelu(add_row(a, t.param(f.row)));
              Var z = matmul(add(h, a), t.param(f.b));
              return nll_sum(z, {0, 4, 2});
            }),
            kTol);
}

TEST(Autodiff, GradientsAccumulateAcrossBackwardCalls) {
  Fixture f;
  f.a.zero_grad();
  for (int i = 0; i < 2; ++i) {
    Tape t;
    t.backward(weighted_sum(t.param(f.a), f.w34));
  }
  for (std::size_t k = 0; k < f.w34.size(); ++k) EXPECT_DOUBLE_EQ(f.a.grad.data[k], 2.0 * f.w34.data[k]);
}

TEST(Autodiff, BackwardGuards) {
  Fixture f;
  Tape off(false);
  EXPECT_THROW(off.backward(weighted_sum(off.param(f.a), f.w34)), Error);
  Tape t;
  EXPECT_THROW(t.backward(t.param(f.a)), Error);
  EXPECT_THROW(matmul(t.param(f.a), t.param(f.c)), Error);
}
