#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "cgmjepa/neural/tape.hpp"

using namespace cgmjepa;
using namespace cgmjepa::nn;

namespace {

using M = Mat<double>;
using Builder = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

M random_matrix(SplitMix64& r, int rows, int cols, double sd = 1.0) {
  M m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sd * r.normal();
  return m;
}

// Reduces any output to a scalar through a random bilinear form, so every
// output entry carries a distinct weight.
struct Harness {
  ParameterSet<double> ps;
  M left, right;
  Builder build;

  double loss(Gradients<double>* g) const {
    Tape<double> tp(&ps);
    std::vector<Var> in;
    for (int i = 0; i < ps.size(); ++i) in.push_back(tp.param(i));
    const Var out = build(tp, in);
    const Var l = tp.matmul(tp.matmul(tp.constant(left), out), tp.constant(right));
    if (g) tp.backward(l, *g);
    return tp.scalar(l);
  }
};

double worst_relative_error(Harness& h, double step = 1e-6) {
  Gradients<double> g(h.ps);
  h.loss(&g);
  double worst = 0;
  for (int p = 0; p < h.ps.size(); ++p) {
    auto& v = h.ps[p].value;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double orig = v.data()[i];
      v.data()[i] = orig + step;
      const double up = h.loss(nullptr);
      v.data()[i] = orig - step;
      const double dn = h.loss(nullptr);
      v.data()[i] = orig;
      const double fd = (up - dn) / (2 * step);
      const double an = g.g[p].data()[i];
      worst = std::max(worst, std::abs(fd - an) / std::max(1e-6, std::abs(fd) + std::abs(an)));
    }
  }
  return worst;
}

Harness make(std::uint64_t seed, std::vector<std::pair<int, int>> shapes, int out_rows, int out_cols, Builder b) {
  SplitMix64 r(seed);
  Harness h;
  for (std::size_t i = 0; i < shapes.size(); ++i)
    h.ps.add("p" + std::to_string(i), random_matrix(r, shapes[i].first, shapes[i].second));
  h.left = random_matrix(r, 1, out_rows);
  h.right = random_matrix(r, out_cols, 1);
  h.build = std::move(b);
  return h;
}

void expect_gradients(std::vector<std::pair<int, int>> shapes, int out_rows, int out_cols, Builder b,
                      double tol = 1e-6, double step = 1e-6) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto h = make(seed, shapes, out_rows, out_cols, b);
    EXPECT_LT(worst_relative_error(h, step), tol) << "seed " << seed;
  }
}

}  // namespace

TEST(TapeGrad, AddSubScale) {
  expect_gradients({{3, 4}, {3, 4}}, 3, 4, [](Tape<double>& t, const std::vector<Var>& v) {
    return t.add_scaled(t.sub(t.add(v[0], v[1]), t.scale(v[1], 0.3)), v[0], -1.7);
  });
}

TEST(TapeGrad, Matmul) {
  expect_gradients({{3, 5}, {5, 2}}, 3, 2,
                   [](Tape<double>& t, const std::vector<Var>& v) { return t.matmul(v[0], v[1]); });
}

TEST(TapeGrad, Linear) {
  expect_gradients({{4, 3}, {3, 6}, {1, 6}}, 4, 6,
                   [](Tape<double>& t, const std::vector<Var>& v) { return t.linear(v[0], v[1], v[2]); });
}

TEST(TapeGrad, Gelu) {
  expect_gradients({{4, 5}}, 4, 5, [](Tape<double>& t, const std::vector<Var>& v) { return t.gelu(v[0]); });
}

TEST(TapeGrad, LayerNorm) {
  expect_gradients({{3, 6}, {1, 6}, {1, 6}}, 3, 6, [](Tape<double>& t, const std::vector<Var>& v) {
    return t.layer_norm(v[0], v[1], v[2]);
  });
}

TEST(TapeGrad, AttentionSelfAndCross) {
  for (int heads : {1, 2, 3}) {
    expect_gradients({{4, 6}, {5, 6}, {5, 6}}, 4, 6, [heads](Tape<double>& t, const std::vector<Var>& v) {
      return t.attention(v[0], v[1], v[2], heads);
    });
  }
  expect_gradients({{4, 6}}, 4, 6,
                   [](Tape<double>& t, const std::vector<Var>& v) { return t.attention(v[0], v[0], v[0], 2); });
}

TEST(TapeGrad, GatherConcatRepeatMean) {
  expect_gradients({{5, 3}, {1, 3}}, 6, 3, [](Tape<double>& t, const std::vector<Var>& v) {
    const Var g = t.gather_rows(v[0], {4, 0, 0, 2});
    return t.concat_rows(g, t.repeat_rows(v[1], 2));
  });
  expect_gradients({{5, 3}}, 1, 3, [](Tape<double>& t, const std::vector<Var>& v) { return t.mean_rows(v[0]); });
}

TEST(TapeGrad, ConvPatchEmbed) {
  // Linear in each argument, so a large step is exact up to rounding.
  expect_gradients(
      {{4, 12}, {5, 3}, {1, 5}}, 4, 5,
      [](Tape<double>& t, const std::vector<Var>& v) { return t.conv_patch_embed(v[0], v[1], v[2]); }, 1e-9, 0.5);
}

TEST(TapeGrad, L1MeanAndSum) {
  expect_gradients({{3, 4}, {3, 4}}, 1, 1,
                   [](Tape<double>& t, const std::vector<Var>& v) { return t.l1_mean(v[0], v[1]); });
  expect_gradients({{3, 4}}, 1, 1, [](Tape<double>& t, const std::vector<Var>& v) { return t.sum(v[0]); });
}

TEST(TapeGrad, ReusedNodeAccumulates) {
  expect_gradients({{3, 3}}, 3, 3, [](Tape<double>& t, const std::vector<Var>& v) {
    const Var a = t.gelu(v[0]);
    return t.add(t.matmul(a, a), a);
  });
}

TEST(Tape, ConvMatchesDirectDefinition) {
  SplitMix64 r(9);
  const M x = random_matrix(r, 2, 7), w = random_matrix(r, 3, 3), b = random_matrix(r, 1, 3);
  Tape<double> tp;
  const M y = tp.value(tp.conv_patch_embed(tp.constant(x), tp.constant(w), tp.constant(b)));
  for (int p = 0; p < 2; ++p)
    for (int c = 0; c < 3; ++c) {
      double acc = 0;
      for (int pos = 0; pos < 7; ++pos) {
        double conv = 0;
        for (int k = 0; k < 3; ++k) {
          const int src = pos + k - 1;
          if (src >= 0 && src < 7) conv += w(c, k) * x(p, src);
        }
        acc += conv;
      }
      EXPECT_NEAR(y(p, c), b(0, c) + acc / 7, 1e-12);
    }
}

TEST(Tape, GeluIsExactErfForm) {
  Tape<double> tp;
  M x(1, 3);
  x << -1.0, 0.0, 2.0;
  const M y = tp.value(tp.gelu(tp.constant(x)));
  EXPECT_NEAR(y(0, 0), -0.15865525393145707, 1e-15);
  EXPECT_EQ(y(0, 1), 0.0);
  EXPECT_NEAR(y(0, 2), 1.9544997361036416, 1e-15);
}

TEST(Tape, AttentionRowsAreConvexCombinations) {
  SplitMix64 r(2);
  Tape<double> tp;
  std::vector<M> w;
  const M q = random_matrix(r, 3, 4), k = random_matrix(r, 5, 4);
  M v = M::Zero(5, 4);
  v.col(0).setOnes();
  const M y = tp.value(tp.attention(tp.constant(q), tp.constant(k), tp.constant(v), 2, &w));
  ASSERT_EQ(w.size(), 2u);
  for (const auto& a : w)
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(a.row(i).sum(), 1.0, 1e-12);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y(i, 0), 1.0, 1e-12);
}

TEST(Tape, DetachAndFrozenParamsGetNoGradient) {
  ParameterSet<double> ps;
  SplitMix64 r(4);
  ps.add("a", random_matrix(r, 2, 2));
  ps.add("frozen", random_matrix(r, 2, 2), false);
  Tape<double> tp(&ps);
  const Var a = tp.param(0), f = tp.param(1);
  const Var l = tp.sum(tp.add(tp.matmul(tp.detach(a), f), tp.matmul(a, f)));
  Gradients<double> g(ps);
  tp.backward(l, g);
  EXPECT_TRUE(g.g[1].isZero(0));
  EXPECT_FALSE(g.g[0].isZero(0));
  // Only the undetached path contributes: d sum(a f)/da = 1 f^T.
  EXPECT_TRUE(g.g[0].isApprox(M::Ones(2, 2) * ps[1].value.transpose(), 1e-14));
}

TEST(Tape, ShapeErrorsThrow) {
  Tape<double> tp;
  const Var a = tp.constant(M::Zero(2, 3)), b = tp.constant(M::Zero(3, 3));
  EXPECT_THROW(tp.add(a, b), Error);
  EXPECT_THROW(tp.matmul(a, a), Error);
  EXPECT_THROW(tp.attention(a, a, a, 2), Error);
  Gradients<double> g;
  EXPECT_THROW(tp.backward(a, g), Error);
}
