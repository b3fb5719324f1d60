// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <random>

#include "lpdt/quant.hpp"

using namespace lpdt;
using Catch::Approx;

TEST_CASE("quant params from range", "[quant]") {
  auto p = quant_params_from_range(0, 255);
  CHECK(p.scale == 1.0f);
  CHECK(p.zero_point == 0);

  p = quant_params_from_range(0, 0);
  CHECK(p.scale == static_cast<float>(kEpsScale));
  CHECK(p.zero_point == 0);

  p = quant_params_from_range(-1, 1);
  CHECK(p.scale == static_cast<float>(2.0 / 255.0));
  CHECK(p.zero_point == 128);

  CHECK_THROWS_AS(quant_params_from_range(1, -1), InvalidArgument);
  CHECK_THROWS_AS(quant_params_from_range(0, std::numeric_limits<double>::infinity()),
                  InvalidArgument);
  CHECK_THROWS_AS(quant_params_from_range(0, std::nan("")), InvalidArgument);
  CHECK_THROWS_AS(quant_params_from_range(0, 1, 4), InvalidArgument);
}

TEST_CASE("quantize and dequantize known values", "[quant]") {
  const QuantParams unit{1.0f, 0, 8};
  CHECK(quantize(Tensorf::from_values({1}, {0.0f}), unit).qdata[0] == 0);
  CHECK(quantize(Tensorf::from_values({1}, {1000.0f}), unit).qdata[0] == 255);

  const auto p = quant_params_from_range(-1, 1);
  const auto q = quantize(Tensorf::from_values({3}, {-1.0f, 0.0f, 1.0f}), p);
  CHECK(q.qdata == std::vector<std::uint8_t>{1, 128, 255});

  QuantTensor one{{1}, {128}, p};
  CHECK(dequantize<float>(one)[0] == 0.0f);
  one.qdata[0] = 255;
  CHECK(dequantize<double>(one)[0] == Approx(127.0 * 2.0 / 255.0).epsilon(1e-6));
}

TEST_CASE("round trip error is at most half a step", "[quant][property]") {
  const auto p = quant_params_from_range(-1, 1);
  const double bound = 0.5 * p.scale + 1e-7;
  for (int i = 0; i <= 10000; ++i) {
    const double x = -1.0 + 2.0 * i / 10000.0;
    const double back = dequantize_value(quantize_value(x, p), p);
    const double clamped = std::clamp(x, p.lower(), p.upper());
    REQUIRE(std::abs(back - clamped) <= bound);
  }
}

TEST_CASE("randomized quantization properties", "[quant][property]") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ends(-50.0, 50.0);
  for (int trial = 0; trial < 10000; ++trial) {
    double lo = ends(rng), hi = ends(rng);
    if (lo > hi) std::swap(lo, hi);
    const auto p = quant_params_from_range(lo, hi);
    std::uniform_real_distribution<double> inside(lo, hi);
    double a = inside(rng), b = inside(rng);
    // Error bound relative to the clamped value.
    const double ca = std::clamp(a, p.lower(), p.upper());
    REQUIRE(std::abs(dequantize_value(quantize_value(a, p), p) - ca) <=
            0.5 * p.scale + 1e-7 * std::max(1.0, std::abs(a)));
    // Monotonicity.
    if (a > b) std::swap(a, b);
    REQUIRE(quantize_value(a, p) <= quantize_value(b, p));
  }
}

TEST_CASE("quantization is deterministic", "[quant][property]") {
  std::mt19937_64 rng(11);
  std::normal_distribution<float> dist(0.0f, 3.0f);
  Tensorf x({10000});
  for (Index i = 0; i < x.size(); ++i) x[i] = dist(rng);
  const auto p = range_params(x);
  CHECK(quantize(x, p).qdata == quantize(x, p).qdata);
  CHECK(fake_quantize(x).data() == fake_quantize(x).data());
}

TEST_CASE("straight-through estimator", "[quant]") {
  const auto p = quant_params_from_range(-1, 1);
  CHECK(ste_grad(Tensorf::from_values({1}, {5}), Tensorf::from_values({1}, {0.2f}), p)[0] == 5);
  CHECK(ste_grad(Tensorf::from_values({1}, {5}), Tensorf::from_values({1}, {3.0f}), p)[0] == 0);
  CHECK(ste_grad(Tensorf::from_values({1}, {5}), Tensorf::from_values({1}, {3.0f}), p,
                 SteMode::Identity)[0] == 5);
  // Range end points are not saturated even though the zero point was rounded.
  CHECK(ste_grad(Tensorf::from_values({2}, {1, 1}), Tensorf::from_values({2}, {-1, 1}), p)
            .data()
            .sum() == 2);
  const Tensorf zeros({4});
  CHECK(ste_grad(zeros, Tensorf::from_values({4}, {0, 5, -5, 0.5f}), p).data().isZero());
  CHECK_THROWS_AS(ste_grad(zeros, Tensorf({3}), p), ShapeError);
}

TEST_CASE("straight-through estimator is linear", "[quant][property]") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> dist(0.0, 2.0);
  const auto p = quant_params_from_range(-1, 1);
  Tensord x({64}), u({64}), v({64});
  for (Index i = 0; i < 64; ++i) {
    x[i] = dist(rng);
    u[i] = dist(rng);
    v[i] = dist(rng);
  }
  const double a = 1.5, b = -0.25;
  const Tensord lhs = ste_grad(Tensord(u.shape(), a * u.data() + b * v.data()), x, p);
  const Vector<double> rhs = a * ste_grad(u, x, p).data() + b * ste_grad(v, x, p).data();
  CHECK((lhs.data() - rhs).cwiseAbs().maxCoeff() < 1e-12);
}
