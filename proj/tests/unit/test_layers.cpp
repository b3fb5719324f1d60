// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include "../support/gradcheck.hpp"
#include "lpdt/layers.hpp"

using namespace lpdt;
using Catch::Approx;

namespace {

LayerParams<float> weights_only(Tensorf w) {
  LayerParams<float> p;
  p.weights = std::move(w);
  return p;
}

// Integer-valued tensor spanning exactly [-100, 155]: every element sits on
// the 8-bit grid with scale 1 and zero point 100.
Tensord on_grid(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dist(-100, 155);
  Tensord t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = dist(rng);
  t[0] = -100;
  t[t.size() - 1] = 155;
  return t;
}

}  // namespace

TEST_CASE("convolution known values", "[layers]") {
  const auto spec = LayerSpec::conv(1, 1, 1, 1, 0, 1);
  auto y = conv2d(Tensorf::from_values({1, 1, 1, 1}, {3}), spec,
                  weights_only(Tensorf::from_values({1, 1, 1, 1}, {2})));
  CHECK(y.output[0] == 6.0f);

  std::mt19937_64 rng(1);
  const auto x = testing::random_tensor({2, 3, 4, 4}, rng).cast<float>();
  LayerParams<float> ident;
  ident.weights = Tensorf({3, 3, 1, 1});
  for (Index c = 0; c < 3; ++c) ident.weights.at(c, c, 0, 0) = 1.0f;
  y = conv2d(x, LayerSpec::conv(3, 3, 1, 4, 0, 1), ident);
  CHECK(y.output.data() == x.data());

  y = conv2d(x, LayerSpec::conv(3, 2, 3, 4, 1, 2), weights_only(Tensorf({2, 3, 3, 3})));
  CHECK(y.output.shape() == Shape{2, 2, 2, 2});

  CHECK_THROWS_AS(conv2d(Tensorf({2, 3, 5, 5}), LayerSpec::conv(3, 3, 1, 4, 0, 1), ident),
                  ShapeError);
}

TEST_CASE("linear known values", "[layers]") {
  LayerParams<float> p = weights_only(Tensorf::from_values({2, 2}, {1, 1, 1, -1}));
  auto y = linear(Tensorf::from_values({1, 2}, {1, 2}), LayerSpec::linear(2, 2), p);
  CHECK(y.output.data() == Vector<float>{{3.0f, -1.0f}});

  p.weights = Tensorf::from_values({2, 2}, {1, 0, 0, 1});
  const auto x = Tensorf::from_values({3, 2}, {1, 2, 3, 4, 5, 6});
  CHECK(linear(x, LayerSpec::linear(2, 2), p).output.data() == x.data());
  CHECK_THROWS_AS(linear(Tensorf({3, 3}), LayerSpec::linear(2, 2), p), ShapeError);
}

TEST_CASE("hard sigmoid", "[layers]") {
  const auto y = hard_sigmoid(Tensord::from_values({5}, {-3, 0, 3, -10, 10}));
  CHECK(y.data() == Vector<double>{{0.0, 0.5, 1.0, 0.0, 1.0}});
  double prev = 0.0;
  for (int i = -1000; i <= 1000; ++i) {
    const double v = hard_sigmoid(Tensord::from_values({1}, {i / 100.0}))[0];
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
    REQUIRE(v >= prev);
    prev = v;
  }
}

TEST_CASE("range batch-norm known values", "[layers]") {
  const auto spec = LayerSpec::norm(LayerKind::RangeBN_ReLU, 1, 1, 1);
  const auto params = default_norm_params<double>(1, false);
  const auto x = Tensord::from_values({2, 1, 1, 1}, {-1, 1});
  const double expected = 1.0 / (2.0 / std::sqrt(2.0 * std::log(2.0)) + kEpsRange);
  CHECK(expected == Approx(0.58871).margin(1e-5));

  auto y = range_batchnorm(x, params, spec, Precision::FP32, false).output;
  CHECK(y[0] == Approx(-expected).epsilon(1e-12));
  CHECK(y[1] == Approx(expected).epsilon(1e-12));
  y = range_batchnorm(x, params, spec).output;
  CHECK(y[0] == 0.0);
  CHECK(y[1] == Approx(expected).epsilon(1e-12));

  auto shifted = params;
  shifted.gamma[0] = 0.0;
  shifted.beta[0] = 0.3;
  y = range_batchnorm(x, shifted, spec).output;
  CHECK(y[0] == 0.3);
  CHECK(y[1] == 0.3);

  auto biased = params;
  biased.beta[0] = 0.25;
  y = range_batchnorm(Tensord::constant({4, 1, 2, 2}, 7.0), biased, spec).output;
  CHECK((y.data().array() == 0.25).all());

  CHECK_THROWS_AS(range_batchnorm(Tensord({1, 1, 1, 1}), params, spec), ConfigError);
}

TEST_CASE("evonorm s0 known values", "[layers]") {
  const auto spec = LayerSpec::norm(LayerKind::EvoNormS0, 2, 1, 1);
  auto params = default_norm_params<double>(2, true);
  params.v.data().setZero();
  const auto y = evonorm_s0(Tensord::from_values({1, 2, 1, 1}, {1, 3}), params, spec).output;
  const double sd = std::sqrt(1.0 + kEpsVar);
  CHECK(y[0] == Approx(0.5 / sd).epsilon(1e-12));
  CHECK(y[1] == Approx(1.5 / sd).epsilon(1e-12));
  CHECK(y[0] == Approx(0.5).margin(1e-5));
  CHECK(y[1] == Approx(1.5).margin(1e-5));
}

TEST_CASE("range evonorm known values", "[layers]") {
  const auto spec = LayerSpec::norm(LayerKind::RangeEvoNorm, 2, 1, 1);
  auto params = default_norm_params<double>(2, true);
  params.v.data().setZero();
  auto y = range_evonorm(Tensord::from_values({1, 2, 1, 1}, {1, 3}), params, spec).output;
  CHECK(y[0] == Approx(0.29435).margin(1e-5));
  CHECK(y[1] == Approx(0.88306).margin(1e-5));

  params.gamma.data().setZero();
  params.beta.data() << 0.5, -0.5;
  y = range_evonorm(Tensord::from_values({1, 2, 1, 1}, {1, 3}), params, spec).output;
  CHECK(y.data() == params.beta.data());

  // A zero group has range 0; the guard keeps the output at beta.
  params = default_norm_params<double>(2, true);
  params.beta.data() << 0.5, -0.5;
  y = range_evonorm(Tensord({1, 2, 1, 1}), params, spec).output;
  CHECK(y.data() == params.beta.data());

  CHECK_THROWS_AS(range_evonorm(Tensord({1, 2, 1, 1}), params,
                                LayerSpec::norm(LayerKind::RangeEvoNorm, 2, 1, 2)),
                  ConfigError);
}

TEST_CASE("norm layers stay finite on constant inputs", "[layers]") {
  for (double value : {0.0, 1.0, -1e6, 1e6}) {
    const auto x = Tensord::constant({2, 4, 2, 2}, value);
    const auto rbn = range_batchnorm(x, default_norm_params<double>(4, false),
                                     LayerSpec::norm(LayerKind::RangeBN_ReLU, 4, 2, 1));
    const auto evo = evonorm_s0(x, default_norm_params<double>(4, true),
                                LayerSpec::norm(LayerKind::EvoNormS0, 4, 2, 2));
    const auto ren = range_evonorm(x, default_norm_params<double>(4, true),
                                   LayerSpec::norm(LayerKind::RangeEvoNorm, 4, 2, 2));
    CHECK(rbn.output.all_finite());
    CHECK(evo.output.all_finite());
    CHECK(ren.output.all_finite());
  }
}

TEST_CASE("range evonorm matches a naive reference", "[layers]") {
  // Same structure as EvoNorm-S0 with the sigmoid swapped for the hard
  // sigmoid and the standard deviation swapped for the scaled range.
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Index b = 2, c = 6, g = 2, L = 3, cpg = c / g;
    const auto x = testing::random_tensor({b, c, L, L}, rng, 2.0);
    auto params = default_norm_params<double>(c, true);
    params.gamma = testing::random_tensor({c}, rng);
    params.beta = testing::random_tensor({c}, rng);
    params.v = testing::random_tensor({c}, rng);
    const auto y = range_evonorm(x, params, LayerSpec::norm(LayerKind::RangeEvoNorm, c, L, g)).output;
    const double C = 1.0 / std::sqrt(2.0 * std::log(static_cast<double>(cpg)));
    for (Index n = 0; n < b; ++n)
      for (Index grp = 0; grp < g; ++grp) {
        double mx = -1e300, mn = 1e300;
        for (Index ch = grp * cpg; ch < (grp + 1) * cpg; ++ch)
          for (Index h = 0; h < L; ++h)
            for (Index w = 0; w < L; ++w) {
              mx = std::max(mx, x.at(n, ch, h, w));
              mn = std::min(mn, x.at(n, ch, h, w));
            }
        for (Index ch = grp * cpg; ch < (grp + 1) * cpg; ++ch)
          for (Index h = 0; h < L; ++h)
            for (Index w = 0; w < L; ++w) {
              const double xi = x.at(n, ch, h, w);
              const double gate = std::max(0.0, std::min(1.0, (params.v[ch] * xi + 3.0) / 6.0));
              const double ref = xi * gate / (C * (mx - mn) + kEpsRange) * params.gamma[ch] +
                                 params.beta[ch];
              REQUIRE(std::abs(y.at(n, ch, h, w) - ref) < 1e-6);
            }
      }
  }
}

TEST_CASE("average pooling and skip", "[layers]") {
  auto y = avgpool(Tensord::from_values({1, 1, 2, 2}, {1, 2, 3, 4}), LayerSpec::avgpool(1, 2, 2));
  CHECK(y.output.shape() == Shape{1, 1, 1, 1});
  CHECK(y.output[0] == 2.5);
  y = avgpool(Tensord::constant({2, 3, 4, 4}, 1.75), LayerSpec::avgpool(3, 4, 2));
  CHECK((y.output.data().array() == 1.75).all());

  std::mt19937_64 rng(2);
  const auto x = testing::random_tensor({2, 3}, rng);
  CHECK(skip_add(x, Tensord(x.shape())).data() == x.data());
  CHECK_THROWS_AS(skip_add(x, Tensord({3, 2})), ShapeError);
}

TEST_CASE("finite-difference gradient checks", "[layers][gradcheck]") {
  for (auto kind : {LayerKind::Linear, LayerKind::Conv, LayerKind::AvgPool, LayerKind::Skip,
                    LayerKind::RangeBN_ReLU, LayerKind::EvoNormS0, LayerKind::RangeEvoNorm}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto c = testing::smooth_case(kind, seed);
      INFO(to_string(kind) << " seed " << seed);
      CHECK(testing::gradcheck(c, seed) < 1e-4);
    }
  }
}

TEST_CASE("zero upstream gives zero gradients", "[layers]") {
  for (auto kind : {LayerKind::Linear, LayerKind::Conv, LayerKind::RangeBN_ReLU,
                    LayerKind::EvoNormS0, LayerKind::RangeEvoNorm}) {
    const auto c = testing::random_case(kind, 3);
    const auto fwd = testing::run_case(c);
    for (auto mode : {Precision::FP32, Precision::INT8}) {
      auto cache = forward(c.x, c.spec, c.params, mode).cache;
      const auto g = backward(cache, Tensord(fwd.output.shape()));
      CHECK(g.g_l.data().isZero());
      g.g_w.for_each([](const Tensord& t) { CHECK(t.data().isZero()); });
    }
  }
}

TEST_CASE("backward rejects mismatched upstream", "[layers]") {
  const auto c = testing::random_case(LayerKind::Linear, 1);
  const auto fwd = testing::run_case(c);
  CHECK_THROWS_AS(backward(fwd.cache, Tensord({7, 7})), ShapeError);
}

TEST_CASE("int8 forward is exact for on-grid inputs", "[layers][int8]") {
  const auto spec = LayerSpec::conv(2, 3, 3, 4, 1, 1);
  LayerParams<double> p;
  p.weights = on_grid({3, 2, 3, 3}, 1);
  const auto x = on_grid({2, 2, 4, 4}, 2);
  const auto fp = conv2d(x, spec, p, Precision::FP32).output;
  const auto lp = conv2d(x, spec, p, Precision::INT8).output;
  CHECK(fp.data() == lp.data());

  const auto lspec = LayerSpec::linear(6, 4);
  LayerParams<double> lpar;
  lpar.weights = on_grid({4, 6}, 3);
  lpar.bias = Tensord::from_values({4}, {0.5, -1, 2, 0});
  const auto xl = on_grid({3, 6}, 4);
  CHECK(linear(xl, lspec, lpar, Precision::FP32).output.data() ==
        linear(xl, lspec, lpar, Precision::INT8).output.data());
}

TEST_CASE("int8 convolution error stays within the accumulated bound", "[layers][int8]") {
  std::mt19937_64 rng(9);
  const auto spec = LayerSpec::conv(3, 4, 3, 5, 1, 1);
  for (int trial = 0; trial < 5; ++trial) {
    const auto x = testing::random_tensor({2, 3, 5, 5}, rng);
    LayerParams<double> p;
    p.weights = testing::random_tensor({4, 3, 3, 3}, rng, 0.3);
    const auto fp = conv2d(x, spec, p, Precision::FP32).output;
    const auto lp = conv2d(x, spec, p, Precision::INT8);
    const double sx = lp.cache.input_q.scale, sw = lp.cache.weight_q.scale;
    const double per_term = 0.5 * sx * lp.cache.weights.data().cwiseAbs().maxCoeff() +
                            0.5 * sw * x.data().cwiseAbs().maxCoeff();
    const double bound = static_cast<double>(spec.c_in * spec.K * spec.K) * per_term;
    CHECK((fp.data() - lp.output.data()).cwiseAbs().maxCoeff() <= bound);
  }
}

TEST_CASE("int8 backward quantizes only the layer gradient", "[layers][int8]") {
  std::mt19937_64 rng(12);
  const auto spec = LayerSpec::linear(6, 4);
  LayerParams<double> p;
  p.weights = on_grid({4, 6}, 5);
  p.bias = Tensord({4});
  const auto x = on_grid({3, 6}, 6);
  const auto up = testing::random_tensor({3, 4}, rng);

  const auto fp = backward(linear(x, spec, p, Precision::FP32).cache, up);
  const auto lp = backward(linear(x, spec, p, Precision::INT8).cache, up);
  // The weight gradient is untouched by quantization.
  CHECK(lp.g_w.weights.data() == fp.g_w.weights.data());
  CHECK(lp.g_w.bias.data() == fp.g_w.bias.data());
  // The layer gradient is the 8-bit version of the full-precision one.
  const auto gq = range_params(fp.g_l);
  CHECK(lp.g_l.data() == fake_quantize(fp.g_l).data());
  CHECK((lp.g_l.data() - fp.g_l.data()).cwiseAbs().maxCoeff() <= 0.5 * gq.scale + 1e-9);
}
