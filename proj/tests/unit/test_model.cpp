// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include "../support/gradcheck.hpp"
#include "lpdt/model.hpp"

using namespace lpdt;
using Catch::Approx;

TEST_CASE("tiny mlp structure", "[model]") {
  const auto model = build_model<float>(Arch::TinyMLP, NormKind::RangeEvoNorm, {8}, 10, 1);
  const auto& nodes = model.nodes();
  REQUIRE(nodes.size() == 5);
  CHECK(nodes.back().spec.kind == LayerKind::Linear);
  CHECK(nodes.back().spec.c_out == 10);
  CHECK(nodes[1].spec.channels_per_group() == 8);

  Index analytic = 0;
  for (const auto& n : nodes) analytic += n.spec.param_count();
  CHECK(model.param_count() == analytic);
  CHECK(analytic == (8 * 32 + 32) + 3 * 32 + (32 * 64 + 64) + 3 * 64 + (64 * 10 + 10));

  Index sum = 0;
  for (Index s : model.layer_sizes()) sum += s;
  CHECK(sum == model.param_count());
}

TEST_CASE("mini cnn structure", "[model]") {
  for (auto norm : {NormKind::RangeBN, NormKind::EvoNormS0, NormKind::RangeEvoNorm}) {
    const auto model = build_model<float>(Arch::MiniCNN, norm, {3, 6, 6}, 4, 2);
    Index analytic = 0;
    int convs = 0, skips = 0;
    for (const auto& n : model.nodes()) {
      analytic += n.spec.param_count();
      convs += n.spec.kind == LayerKind::Conv;
      skips += n.spec.kind == LayerKind::Skip;
    }
    CHECK(model.param_count() == analytic);
    CHECK(convs == 3);
    CHECK(skips == 2);
    std::mt19937_64 rng(3);
    const auto x = testing::random_tensor({2, 3, 6, 6}, rng).cast<float>();
    CHECK(model.logits(x).shape() == Shape{2, 4});
  }
  CHECK_THROWS_AS(build_layers(Arch::MiniCNN, NormKind::RangeBN, {8}, 4), ConfigError);
  CHECK_THROWS_AS(build_layers(Arch::TinyMLP, NormKind::RangeBN, {3, 4, 4}, 4), ConfigError);
}

TEST_CASE("zero head gives uniform predictions", "[model]") {
  auto model = build_model<double>(Arch::TinyMLP, NormKind::RangeEvoNorm, {8}, 10, 1);
  auto& head = model.params().back();
  head.weights.data().setZero();
  head.bias.data().setZero();
  const double loss = model.loss_and_grad(Tensord({4, 8}), {0, 1, 2, 3}, Precision::FP32, nullptr);
  CHECK(loss == Approx(std::log(10.0)).epsilon(1e-12));
}

TEST_CASE("flatten and assign round trip", "[model]") {
  auto model = build_model<float>(Arch::MiniCNN, NormKind::RangeEvoNorm, {2, 4, 4}, 3, 5);
  const auto flat = model.flatten();
  auto other = build_model<float>(Arch::MiniCNN, NormKind::RangeEvoNorm, {2, 4, 4}, 3, 6);
  CHECK(other.flatten() != flat);
  other.assign(flat);
  CHECK(other.flatten() == flat);
  CHECK_THROWS_AS(other.assign(Vector<float>(3)), ShapeError);
}

TEST_CASE("same seed gives the same initialization", "[model]") {
  const auto a = build_model<float>(Arch::TinyMLP, NormKind::RangeBN, {5}, 3, 9);
  const auto b = build_model<float>(Arch::TinyMLP, NormKind::RangeBN, {5}, 3, 9);
  CHECK(a.flatten() == b.flatten());
}

TEST_CASE("whole-model gradient matches directional differences", "[model][gradcheck]") {
  struct Case {
    Arch arch;
    Shape sample;
  };
  for (const auto& c : {Case{Arch::TinyMLP, {6}}, Case{Arch::MiniCNN, {2, 4, 4}}}) {
    for (auto norm : {NormKind::RangeBN, NormKind::EvoNormS0, NormKind::RangeEvoNorm}) {
      auto model = build_model<double>(c.arch, norm, c.sample, 3, 17);
      std::mt19937_64 rng(21);
      Shape shape{4};
      shape.insert(shape.end(), c.sample.begin(), c.sample.end());
      const auto x = testing::random_tensor(shape, rng);
      const std::vector<int> labels{0, 1, 2, 1};
      Vector<double> grad;
      model.loss_and_grad(x, labels, Precision::FP32, &grad);
      const Vector<double> theta = model.flatten();
      const Vector<double> dir = testing::random_tensor({theta.size()}, rng).data();
      const double h = 1e-7;
      model.assign(theta + h * dir);
      const double up = model.loss_and_grad(x, labels, Precision::FP32, nullptr);
      model.assign(theta - h * dir);
      const double down = model.loss_and_grad(x, labels, Precision::FP32, nullptr);
      const double numeric = (up - down) / (2 * h);
      const double analytic = grad.dot(dir);
      INFO(to_string(c.arch) << " " << to_string(norm));
      CHECK(std::abs(numeric - analytic) <= 1e-4 * std::max(1.0, std::abs(analytic)));
    }
  }
}

TEST_CASE("int8 training path produces finite losses and gradients", "[model][int8]") {
  const auto model = build_model<float>(Arch::MiniCNN, NormKind::RangeEvoNorm, {2, 4, 4}, 3, 4);
  std::mt19937_64 rng(8);
  const auto x = testing::random_tensor({4, 2, 4, 4}, rng).cast<float>();
  Vector<float> g_fp, g_lp;
  const double fp = model.loss_and_grad(x, {0, 1, 2, 0}, Precision::FP32, &g_fp);
  const double lp = model.loss_and_grad(x, {0, 1, 2, 0}, Precision::INT8, &g_lp);
  CHECK(std::isfinite(lp));
  CHECK(g_lp.allFinite());
  CHECK(std::abs(fp - lp) < 0.1);
  CHECK(g_lp.size() == g_fp.size());
}
