// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "common.hpp"

using namespace xatl;
using xatl::testing::uniform_tensor;
using xatl::testing::weighted_sum;

namespace {

Tensor<double> row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor<double>({1, n}, std::move(v));
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor basics

TEST(Tensor, ShapeAndIndexing) {
  Tensor<double> t({2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.at({1, 2}), 5.0);
  EXPECT_EQ(t.reshaped({3, 2}).at({2, 0}), 4.0);
  EXPECT_THROW(t.reshaped({4, 2}), ShapeError);
  EXPECT_THROW((Tensor<double>({2, 2}, std::vector<double>{1, 2, 3})), ShapeError);
}

TEST(Tensor, CastAndBitEquality) {
  std::mt19937_64 rng(3);
  auto a = uniform_tensor<double>({4, 5}, rng);
  auto b = a.cast<float>().cast<double>();
  EXPECT_LT(a.max_abs_diff(b), 1e-6);
  EXPECT_TRUE(a.bit_equal(a));
  b[0] = std::nextafter(a[0], 10.0);
  EXPECT_FALSE(a.bit_equal(b));
}

// ---------------------------------------------------------------------------
// Layer norm

TEST(LayerNorm, ConstantRowMapsToZero) {
  auto x = row({3, 3, 3, 3});
  auto y = kernels::layer_norm(x, Tensor<double>::ones({4}), Tensor<double>::zeros({4}), 1e-5);
  for (double v : y.span()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, ThreeElementExample) {
  // mean 2, variance 2/3 -> (x-2)/sqrt(2/3) = -sqrt(1.5), 0, sqrt(1.5)
  auto y = kernels::layer_norm(row({1, 2, 3}), Tensor<double>::ones({3}), Tensor<double>::zeros({3}), 0.0);
  EXPECT_NEAR(y[0], -std::sqrt(1.5), 1e-12);
  EXPECT_NEAR(y[1], 0.0, 1e-12);
  EXPECT_NEAR(y[2], std::sqrt(1.5), 1e-12);
}

TEST(LayerNorm, ZeroGainGivesBias) {
  auto y = kernels::layer_norm(row({1, -7, 2.5}), Tensor<double>::zeros({3}), Tensor<double>({3}, 5.0), 1e-5);
  for (double v : y.span()) EXPECT_EQ(v, 5.0);
}

TEST(LayerNorm, RowsHaveZeroMeanUnitVariance) {
  std::mt19937_64 rng(11);
  auto x = uniform_tensor<double>({6, 16}, rng, -5, 5);
  auto y = kernels::layer_norm(x, Tensor<double>::ones({16}), Tensor<double>::zeros({16}), 0.0);
  for (std::size_t r = 0; r < 6; ++r) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < 16; ++i) m += y[r * 16 + i];
    m /= 16;
    for (std::size_t i = 0; i < 16; ++i) v += (y[r * 16 + i] - m) * (y[r * 16 + i] - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 16, 1.0, 1e-12);
  }
}

TEST(LayerNorm, ShapeMismatchThrows) {
  EXPECT_THROW(kernels::layer_norm(row({1, 2, 3}), Tensor<double>::ones({4}), Tensor<double>::zeros({3}), 1e-5),
               ShapeError);
}

// ---------------------------------------------------------------------------
// Causal softmax

TEST(CausalSoftmax, LargeEqualLogitsSplitEvenly) {
  // second row of a 3x3 block: [1000, 1000, masked]
  std::vector<double> s{0, 0, 0, 1000, 1000, 1000, 0, 0, 0};
  kernels::causal_softmax_rows(s.data(), 3, 3);
  EXPECT_NEAR(s[3], 0.5, 1e-15);
  EXPECT_NEAR(s[4], 0.5, 1e-15);
  EXPECT_EQ(s[5], 0.0);
  EXPECT_EQ(s[0], 1.0);
}

TEST(CausalSoftmax, RowsSumToOneAndUpperTriangleIsZero) {
  std::mt19937_64 rng(5);
  auto s = uniform_tensor<double>({2, 7, 7}, rng, -30, 30);
  Tape<double> tape;
  auto p = tape.value(ops::causal_softmax(tape, tape.leaf(s)));
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t i = 0; i < 7; ++i) {
      double total = 0;
      for (std::size_t j = 0; j < 7; ++j) {
        const double v = p[(b * 7 + i) * 7 + j];
        if (j > i) {
          EXPECT_EQ(v, 0.0);
        }
        EXPECT_GE(v, 0.0);
        total += v;
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(CausalSoftmax, NonSquareThrows) {
  Tape<double> tape;
  EXPECT_THROW(ops::causal_softmax(tape, tape.leaf(Tensor<double>({2, 3}))), ShapeError);
}

// ---------------------------------------------------------------------------
// Cross entropy

TEST(CrossEntropy, UniformLogitsGiveLogVocab) {
  Tape<double> tape;
  Var l = tape.leaf(Tensor<double>({2, 256}, 0.25));
  TokenGrid t{2, 1, {7, 200}};
  EXPECT_NEAR(tape.value(ops::cross_entropy_mean(tape, l, t))[0], std::log(256.0), 1e-12);
}

TEST(CrossEntropy, TwoRowExample) {
  // row 0: logits [0, 0] target 0 -> ln 2
  // row 1: logits [ln 3, 0] target 0 -> ln(4/3)
  Tape<double> tape;
  Var l = tape.leaf(Tensor<double>({2, 2}, std::vector<double>{0, 0, std::log(3.0), 0}));
  const double got = tape.value(ops::cross_entropy_mean(tape, l, TokenGrid{2, 1, {0, 0}}))[0];
  EXPECT_NEAR(got, (std::log(2.0) + std::log(4.0 / 3.0)) / 2, 1e-12);
  EXPECT_NEAR(got, 0.49042, 1e-5);
}

TEST(CrossEntropy, LargeMarginApproachesZero) {
  Tape<double> tape;
  Var l = tape.leaf(Tensor<double>({1, 3}, std::vector<double>{800, 0, 0}));
  const double got = tape.value(ops::cross_entropy_mean(tape, l, TokenGrid{1, 1, {0}}))[0];
  EXPECT_GE(got, 0.0);
  EXPECT_LT(got, 1e-300 + 1e-12);
}

TEST(CrossEntropy, IgnoredTargetsAreSkipped) {
  Tape<double> tape;
  Var l = tape.leaf(Tensor<double>({2, 2}, std::vector<double>{0, 0, 50, 0}));
  const double got = tape.value(ops::cross_entropy_mean(tape, l, TokenGrid{2, 1, {0, kIgnoreIndex}}))[0];
  EXPECT_NEAR(got, std::log(2.0), 1e-12);
  EXPECT_THROW(ops::cross_entropy_mean(tape, l, TokenGrid{2, 1, {kIgnoreIndex, kIgnoreIndex}}), DomainError);
}

TEST(CrossEntropy, OutOfRangeTargetThrows) {
  Tape<double> tape;
  Var l = tape.leaf(Tensor<double>({1, 4}));
  EXPECT_THROW(ops::cross_entropy_mean(tape, l, TokenGrid{1, 1, {4}}), DomainError);
  EXPECT_THROW(ops::cross_entropy_mean(tape, l, TokenGrid{1, 1, {-3}}), DomainError);
  EXPECT_THROW(ops::cross_entropy_mean(tape, l, TokenGrid{2, 1, {0, 1}}), ShapeError);
}

// ---------------------------------------------------------------------------
// Tape mechanics

TEST(Backward, SumGivesOnes) {
  Tape<double> tape;
  Var x = tape.leaf(Tensor<double>({2, 3}, 4.0), true, "x");
  auto g = backward(tape, ops::sum(tape, x));
  for (double v : g.at("x").span()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, SquareGivesTwiceInput) {
  Tape<double> tape;
  Var x = tape.leaf(Tensor<double>({2}, std::vector<double>{1, 2}), true, "x");
  auto g = backward(tape, ops::sum(tape, ops::mul(tape, x, x)));
  EXPECT_EQ(g.at("x")[0], 2.0);
  EXPECT_EQ(g.at("x")[1], 4.0);
}

TEST(Backward, RejectsNonScalarAndSecondSweep) {
  Tape<double> tape;
  Var x = tape.leaf(Tensor<double>({3}, 1.0), true, "x");
  EXPECT_THROW(tape.backward(x), ValidationError);
  Var s = ops::sum(tape, x);
  tape.backward(s);
  EXPECT_THROW(tape.backward(s), ValidationError);
}

TEST(Backward, UnreachedLeafGetsZeros) {
  Tape<double> tape;
  Var x = tape.leaf(Tensor<double>({2}, 1.0), true, "x");
  tape.leaf(Tensor<double>({3}, 1.0), true, "unused");
  auto g = backward(tape, ops::sum(tape, x));
  ASSERT_TRUE(g.contains("unused"));
  for (double v : g.at("unused").span()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, ConstantLeavesReceiveNoGradient) {
  ParameterStore<double> s;
  s.set("a", Tensor<double>({2}, 3.0));
  s.set("b", Tensor<double>({2}, 5.0));
  std::set<std::string> frozen{"b"};
  Tape<double> tape;
  BoundParams<double> p(tape, s, true, &frozen);
  auto g = backward(tape, ops::sum(tape, ops::mul(tape, p("a"), p("b"))));
  EXPECT_TRUE(g.contains("a"));
  EXPECT_FALSE(g.contains("b"));
  EXPECT_EQ(g.at("a")[0], 5.0);
}

TEST(Backward, SharedLeafAccumulates) {
  ParameterStore<double> s;
  s.set("w", Tensor<double>({3}, 2.0));
  Tape<double> tape;
  BoundParams<double> p(tape, s);
  // w used twice: d/dw sum(w + w) = 2
  auto g = backward(tape, ops::sum(tape, ops::add(tape, p("w"), p("w"))));
  for (double v : g.at("w").span()) EXPECT_EQ(v, 2.0);
}

// ---------------------------------------------------------------------------
// Per-primitive finite-difference checks in float64 across 100 seeds

namespace {

struct Primitive {
  std::string name;
  std::function<void(ParameterStore<double>&, std::mt19937_64&)> init;
  std::function<Var(BoundParams<double>&)> out;  // output before the weighted sum
  Shape out_dims;
};

std::vector<Primitive> primitives() {
  auto put = [](ParameterStore<double>& s, const std::string& n, Shape d, std::mt19937_64& rng, double lo = -1.5,
                double hi = 1.5) { s.set(n, Tensor<double>::uniform(std::move(d), lo, hi, rng)); };
  std::vector<Primitive> ps;
  ps.push_back({"add",
                [=](auto& s, auto& r) {
                  put(s, "a", {2, 3, 4}, r);
                  put(s, "b", {2, 3, 4}, r);
                },
                [](auto& p) { return ops::add(p.tape(), p("a"), p("b")); },
                {2, 3, 4}});
  ps.push_back({"mul",
                [=](auto& s, auto& r) {
                  put(s, "a", {3, 4}, r);
                  put(s, "b", {3, 4}, r);
                },
                [](auto& p) { return ops::mul(p.tape(), p("a"), p("b")); },
                {3, 4}});
  ps.push_back({"scale", [=](auto& s, auto& r) { put(s, "a", {3, 4}, r); },
                [](auto& p) { return ops::scale(p.tape(), p("a"), -0.37); }, {3, 4}});
  ps.push_back({"add_bias",
                [=](auto& s, auto& r) {
                  put(s, "a", {2, 3, 4}, r);
                  put(s, "b", {4}, r);
                },
                [](auto& p) { return ops::add_bias(p.tape(), p("a"), p("b")); },
                {2, 3, 4}});
  ps.push_back({"matmul",
                [=](auto& s, auto& r) {
                  put(s, "a", {2, 3, 4}, r);
                  put(s, "w", {4, 5}, r);
                },
                [](auto& p) { return ops::matmul(p.tape(), p("a"), p("w")); },
                {2, 3, 5}});
  ps.push_back({"matmul_nt",
                [=](auto& s, auto& r) {
                  put(s, "a", {2, 3, 4}, r);
                  put(s, "w", {6, 4}, r);
                },
                [](auto& p) { return ops::matmul_nt(p.tape(), p("a"), p("w")); },
                {2, 3, 6}});
  ps.push_back({"embedding", [=](auto& s, auto& r) { put(s, "table", {5, 3}, r); },
                [](auto& p) { return ops::embedding(p.tape(), p("table"), TokenGrid{2, 3, {0, 4, 4, 2, 0, 1}}); },
                {2, 3, 3}});
  ps.push_back({"slice_last", [=](auto& s, auto& r) { put(s, "a", {3, 6}, r); },
                [](auto& p) { return ops::slice_last(p.tape(), p("a"), 2, 3); }, {3, 3}});
  ps.push_back({"layer_norm",
                [=](auto& s, auto& r) {
                  put(s, "x", {2, 3, 6}, r);
                  put(s, "g", {6}, r);
                  put(s, "b", {6}, r);
                },
                [](auto& p) { return ops::layer_norm(p.tape(), p("x"), p("g"), p("b")); },
                {2, 3, 6}});
  ps.push_back({"group_rms_norm",
                [=](auto& s, auto& r) {
                  put(s, "x", {2, 3, 8}, r);
                  put(s, "g", {8}, r);
                },
                [](auto& p) { return ops::group_rms_norm(p.tape(), p("x"), p("g"), 4); },
                {2, 3, 8}});
  ps.push_back({"gelu", [=](auto& s, auto& r) { put(s, "a", {3, 5}, r, -3, 3); },
                [](auto& p) { return ops::gelu(p.tape(), p("a")); }, {3, 5}});
  ps.push_back({"silu", [=](auto& s, auto& r) { put(s, "a", {3, 5}, r, -3, 3); },
                [](auto& p) { return ops::silu(p.tape(), p("a")); }, {3, 5}});
  ps.push_back({"softplus", [=](auto& s, auto& r) { put(s, "a", {3, 5}, r, -3, 3); },
                [](auto& p) { return ops::softplus(p.tape(), p("a")); }, {3, 5}});
  ps.push_back({"neg_exp", [=](auto& s, auto& r) { put(s, "a", {3, 5}, r); },
                [](auto& p) { return ops::neg_exp(p.tape(), p("a")); }, {3, 5}});
  ps.push_back({"causal_softmax", [=](auto& s, auto& r) { put(s, "a", {2, 4, 4}, r, -3, 3); },
                [](auto& p) { return ops::causal_softmax(p.tape(), p("a")); }, {2, 4, 4}});
  ps.push_back({"rotary", [=](auto& s, auto& r) { put(s, "a", {2, 5, 8}, r); },
                [](auto& p) { return ops::rotary(p.tape(), p("a"), 2); }, {2, 5, 8}});
  ps.push_back({"causal_attention",
                [=](auto& s, auto& r) {
                  put(s, "q", {2, 5, 8}, r);
                  put(s, "k", {2, 5, 8}, r);
                  put(s, "v", {2, 5, 8}, r);
                },
                [](auto& p) { return ops::causal_attention(p.tape(), p("q"), p("k"), p("v"), 2); },
                {2, 5, 8}});
  ps.push_back({"retention",
                [=](auto& s, auto& r) {
                  put(s, "q", {2, 5, 8}, r);
                  put(s, "k", {2, 5, 8}, r);
                  put(s, "v", {2, 5, 8}, r);
                },
                [](auto& p) { return ops::retention(p.tape(), p("q"), p("k"), p("v"), {0.96875, 0.984375}); },
                {2, 5, 8}});
  ps.push_back({"causal_conv1d",
                [=](auto& s, auto& r) {
                  put(s, "x", {2, 6, 3}, r);
                  put(s, "w", {3, 4}, r);
                  put(s, "b", {3}, r);
                },
                [](auto& p) { return ops::causal_conv1d(p.tape(), p("x"), p("w"), p("b")); },
                {2, 6, 3}});
  ps.push_back({"selective_scan",
                [=](auto& s, auto& r) {
                  put(s, "u", {2, 5, 3}, r);
                  put(s, "dt_raw", {2, 5, 3}, r);
                  put(s, "A_log", {3, 4}, r, -1, 1);
                  put(s, "B", {2, 5, 4}, r);
                  put(s, "C", {2, 5, 4}, r);
                  put(s, "D", {3}, r);
                },
                [](auto& p) {
                  auto& t = p.tape();
                  Var dt = ops::softplus(t, p("dt_raw"));
                  Var A = ops::neg_exp(t, p("A_log"));
                  return ops::selective_scan(t, p("u"), dt, A, p("B"), p("C"), p("D"));
                },
                {2, 5, 3}});
  return ps;
}

}  // namespace

TEST(GradientCheck, EveryPrimitiveMatchesFiniteDifferences) {
  for (const auto& prim : primitives()) {
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      std::mt19937_64 rng(seed * 7919 + 17);
      ParameterStore<double> s;
      prim.init(s, rng);
      s.set("__r", Tensor<double>::uniform(prim.out_dims, -1.0, 1.0, rng));
      LossBuilder f = [&](BoundParams<double>& p) { return weighted_sum(p, prim.out(p), "__r"); };
      auto res = grad_check(f, s, 1e-5, 12, seed);
      worst = std::max(worst, res.max_rel_err);
      ASSERT_LE(res.max_rel_err, 1e-6) << prim.name << " seed " << seed << " at " << res.worst_name << "["
                                        << res.worst_index << "]";
    }
    RecordProperty(prim.name, std::to_string(worst));
  }
}

TEST(GradientCheck, CrossEntropyMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    ParameterStore<double> s;
    s.set("logits", Tensor<double>::uniform({2, 3, 7}, -3.0, 3.0, rng));
    std::uniform_int_distribution<int> pick(0, 6);
    TokenGrid tg{2, 3, {}};
    for (int i = 0; i < 6; ++i) tg.ids.push_back(i == 4 ? kIgnoreIndex : pick(rng));
    LossBuilder f = [&](BoundParams<double>& p) { return ops::cross_entropy_mean(p.tape(), p("logits"), tg); };
    ASSERT_LE(grad_check(f, s, 1e-5, 50, seed).max_rel_err, 1e-6) << "seed " << seed;
  }
}

TEST(GradientCheck, LinearFunctionIsExact) {
  std::mt19937_64 rng(1);
  ParameterStore<double> only_x;
  only_x.set("x", Tensor<double>::uniform({4, 3}, -1.0, 1.0, rng));
  // f = sum(x * c) with c constant: finite differences are exact up to rounding
  const Tensor<double> c = Tensor<double>::uniform({4, 3}, -1.0, 1.0, rng);
  LossBuilder f = [&](BoundParams<double>& p) {
    Var cw = p.tape().leaf(c);
    return ops::sum(p.tape(), ops::mul(p.tape(), p("x"), cw));
  };
  EXPECT_LE(grad_check(f, only_x).max_rel_err, 1e-10);
}

TEST(GradientCheck, LayerNormFeedForwardComposite) {
  std::mt19937_64 rng(42);
  ParameterStore<double> s;
  const std::size_t d = 8;
  s.set("x", Tensor<double>::normal({2, 3, d}, 1.0, rng));
  s.set("g", Tensor<double>::uniform({d}, 0.5, 1.5, rng));
  s.set("b", Tensor<double>::normal({d}, 0.1, rng));
  s.set("w1", Tensor<double>::normal({d, 4 * d}, 0.3, rng));
  s.set("b1", Tensor<double>::normal({4 * d}, 0.1, rng));
  s.set("w2", Tensor<double>::normal({4 * d, d}, 0.3, rng));
  s.set("r", Tensor<double>::normal({2, 3, d}, 1.0, rng));
  LossBuilder f = [](BoundParams<double>& p) {
    auto& t = p.tape();
    Var h = ops::layer_norm(t, p("x"), p("g"), p("b"));
    h = ops::gelu(t, ops::add_bias(t, ops::matmul(t, h, p("w1")), p("b1")));
    h = ops::add(t, p("x"), ops::matmul(t, h, p("w2")));
    return weighted_sum(p, h, "r");
  };
  EXPECT_LE(grad_check(f, s, 1e-5, 30, 9).max_rel_err, 1e-6);
}

TEST(GradientCheck, StepSizeOutsideRangeThrows) {
  ParameterStore<double> s;
  s.set("x", Tensor<double>({2}, 1.0));
  LossBuilder f = [](BoundParams<double>& p) { return ops::sum(p.tape(), p("x")); };
  EXPECT_THROW(grad_check(f, s, 1e-7), DomainError);
  EXPECT_THROW(grad_check(f, s, 1e-2), DomainError);
  EXPECT_NO_THROW(grad_check(f, s, 1e-6));
  EXPECT_NO_THROW(grad_check(f, s, 1e-3));
}

TEST(GradientCheck, DetectsWrongGradient) {
  // a deliberately wrong backward rule must be caught
  ParameterStore<double> s;
  s.set("x", Tensor<double>({3}, std::vector<double>{0.5, -1.0, 2.0}));
  LossBuilder f = [](BoundParams<double>& p) {
    auto& t = p.tape();
    Var x = p("x");
    Tensor<double> sq = t.value(x);
    for (auto& v : sq.storage()) v = v * v;
    Var y = t.record(std::move(sq), {x}, [x](Tape<double>& tp, const Tensor<double>& g) {
      for (std::size_t i = 0; i < g.numel(); ++i) tp.grad_of(x)[i] += g[i] * tp.value(x)[i];  // missing factor 2
    });
    return ops::sum(t, y);
  };
  EXPECT_GT(grad_check(f, s).max_rel_err, 0.1);
}

TEST(Determinism, SameInputsGiveBitIdenticalOutputsAndGradients) {
  auto run = [] {
    std::mt19937_64 rng(77);
    ParameterStore<double> s;
    s.set("q", Tensor<double>::normal({2, 6, 8}, 1.0, rng));
    s.set("k", Tensor<double>::normal({2, 6, 8}, 1.0, rng));
    s.set("v", Tensor<double>::normal({2, 6, 8}, 1.0, rng));
    Tape<double> tape;
    BoundParams<double> p(tape, s);
    Var o = ops::causal_attention(tape, p("q"), p("k"), p("v"), 2);
    Tensor<double> out = tape.value(o);
    auto g = backward(tape, ops::sum(tape, ops::mul(tape, o, o)));
    return std::make_pair(out, g);
  };
  auto [o1, g1] = run();
  auto [o2, g2] = run();
  EXPECT_TRUE(o1.bit_equal(o2));
  for (const auto& [n, t] : g1) EXPECT_TRUE(t.bit_equal(g2.at(n))) << n;
}
