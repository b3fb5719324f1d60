// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <sstream>

#include "lpdt/cost_model.hpp"

using namespace lpdt;
using Catch::Approx;

namespace {

LayerSpec make(LayerKind kind, Index b, Index c_in, Index L) {
  LayerSpec s;
  s.kind = kind;
  s.b = b;
  s.c_in = c_in;
  s.L = L;
  return s;
}

constexpr double kMiB = 1024.0 * 1024.0;

double efficiency(const std::vector<LayerSpec>& layers, Phase phase) {
  return network_energy_mj(layers, phase, Precision::FP32) / network_energy_mj(layers, phase, Precision::INT8);
}

}  // namespace

TEST_CASE("conv and linear rows", "[cost]") {
  CHECK(train_counts(LayerSpec::conv(1, 1, 1, 1, 0, 1, 1)) == OpCounts{3, 3});
  CHECK(infer_counts(LayerSpec::conv(1, 1, 1, 1, 0, 1, 1)) == OpCounts{1, 1});
  CHECK(train_counts(LayerSpec::conv(3, 8, 3, 32, 1, 1, 4)) == OpCounts{2654208, 2654208});
  CHECK(infer_counts(LayerSpec::conv(3, 8, 3, 32, 1, 1, 4)) == OpCounts{884736, 884736});
  CHECK(train_counts(LayerSpec::conv(16, 32, 3, 32, 1, 2, 32)) == OpCounts{113246208, 113246208});
  CHECK(infer_counts(LayerSpec::conv(16, 32, 3, 32, 1, 2, 32)) == OpCounts{37748736, 37748736});
  CHECK(train_counts(LayerSpec::linear(3, 4, 2)) == OpCounts{72, 72});
  CHECK(infer_counts(LayerSpec::linear(3, 4, 2)) == OpCounts{24, 24});

  for (const auto& s : {LayerSpec::conv(3, 8, 3, 32, 1, 1, 4), LayerSpec::conv(16, 32, 3, 32, 1, 2, 32),
                        LayerSpec::linear(512, 10, 7)}) {
    CHECK(train_counts(s).adds == 3 * infer_counts(s).adds);
    CHECK(train_counts(s).mults == 3 * infer_counts(s).mults);
  }
}

TEST_CASE("normalization, skip, pool and quantizer rows", "[cost]") {
  struct Row {
    Index b, c, L;
    OpCounts rbn_t, rbn_i, ren_t, ren_i, qa, skip, pool_t, pool_i;
  };
  const Row rows[] = {
      {1, 1, 1, {9, 13}, {3, 5}, {6, 15}, {2, 6}, {2, 4}, {2, 0}, {1, 2}, {1, 1}},
      {2, 3, 4, {864, 597}, {288, 201}, {576, 975}, {192, 390}, {192, 384}, {192, 0}, {96, 12}, {96, 6}},
      {32, 16, 32, {4718592, 3145840}, {1572864, 1048624}, {3145728, 5242960}, {1048576, 2097184},
       {1048576, 2097152}, {1048576, 0}, {524288, 1024}, {524288, 512}},
  };
  for (const auto& r : rows) {
    CHECK(train_counts(make(LayerKind::RangeBN_ReLU, r.b, r.c, r.L)) == r.rbn_t);
    CHECK(infer_counts(make(LayerKind::RangeBN_ReLU, r.b, r.c, r.L)) == r.rbn_i);
    CHECK(train_counts(make(LayerKind::RangeEvoNorm, r.b, r.c, r.L)) == r.ren_t);
    CHECK(infer_counts(make(LayerKind::RangeEvoNorm, r.b, r.c, r.L)) == r.ren_i);
    CHECK(train_counts(make(LayerKind::QuantAct, r.b, r.c, r.L)) == r.qa);
    CHECK(train_counts(make(LayerKind::Skip, r.b, r.c, r.L)) == r.skip);
    CHECK(infer_counts(make(LayerKind::Skip, r.b, r.c, r.L)) == r.skip);
    CHECK(train_counts(make(LayerKind::AvgPool, r.b, r.c, r.L)) == r.pool_t);
    CHECK(infer_counts(make(LayerKind::AvgPool, r.b, r.c, r.L)) == r.pool_i);
  }
  LayerSpec qw;
  qw.kind = LayerKind::QuantWeight;
  qw.c_in = 16;
  qw.c_out = 32;
  qw.K = 3;
  CHECK(train_counts(qw) == OpCounts{9216, 18432});
  CHECK(infer_counts(qw) == OpCounts{9216, 18432});
}

TEST_CASE("quantizer insertion", "[cost]") {
  const auto conv = LayerSpec::conv(16, 32, 3, 8, 1, 1, 4);
  const auto train = quantizers_for(conv, Phase::Training);
  REQUIRE(train.size() == 2);
  CHECK(train[0].kind == LayerKind::QuantAct);
  CHECK(train[0].L == 8);
  CHECK(train[1].kind == LayerKind::QuantWeight);
  CHECK(quantizers_for(conv, Phase::Inference).size() == 1);
  CHECK(quantizers_for(make(LayerKind::Skip, 1, 4, 4), Phase::Training).empty());
  const auto lin = quantizers_for(LayerSpec::linear(64, 10, 32), Phase::Training);
  CHECK(layer_counts(lin[0], Phase::Training) == OpCounts{2 * 32 * 64, 4 * 32 * 64});
  CHECK(layer_counts(lin[1], Phase::Training) == OpCounts{2 * 640, 4 * 640});
}

TEST_CASE("energy arithmetic", "[cost]") {
  const OpCounts balanced{1000000, 1000000};
  CHECK(energy_mj(balanced, Precision::FP32) / energy_mj(balanced, Precision::INT8) == Approx(20.0));
  CHECK(energy_mj(balanced, Precision::FP32) == Approx(4.6e-3));
  CHECK(energy_mj(OpCounts{}, Precision::FP32) == 0.0);
  CHECK(energy_mj(OpCounts{}, Precision::INT8) == 0.0);
  CHECK_NOTHROW(EnergyModel{}.validate());
  CHECK_THROWS_AS((EnergyModel{0.9, 3.7, 1.0, 0.2}.validate()), ConfigError);
}

TEST_CASE("network totals are sums of layers", "[cost]") {
  const auto layers = arch_spec(ArchName::ResNet20, NormKind::RangeEvoNorm, 32);
  for (auto phase : {Phase::Training, Phase::Inference}) {
    OpCounts fp, lp;
    for (const auto& l : layers) {
      fp += layer_counts(l, phase);
      lp += layer_counts(l, phase);
      for (const auto& q : quantizers_for(l, phase)) lp += layer_counts(q, phase);
    }
    CHECK(network_counts(layers, phase, Precision::FP32) == fp);
    CHECK(network_counts(layers, phase, Precision::INT8) == lp);
  }
  CHECK(network_counts({}, Phase::Training, Precision::INT8) == OpCounts{});
  CHECK(memory_bytes({}, Phase::Training, Precision::FP32) == 0);
}

TEST_CASE("tiny MLP counts by hand", "[cost]") {
  // Linear 16->32, norm(32), Linear 32->64, norm(64), Linear 64->10, batch 1.
  const auto layers = arch_spec(ArchName::TinyMLP, NormKind::RangeEvoNorm, 1);
  REQUIRE(layers.size() == 5);
  const Index lin = 3 * (16 * 32 + 32 * 64 + 64 * 10);
  const Index adds = lin + 6 * 32 + 6 * 64;
  const Index mults = lin + (10 * 32 + 5 * 32) + (10 * 64 + 5 * 64);
  CHECK(network_counts(layers, Phase::Training, Precision::FP32) == OpCounts{adds, mults});
  CHECK(param_count(layers) == (16 * 32 + 32) + 3 * 32 + (32 * 64 + 64) + 3 * 64 + (64 * 10 + 10));
}

TEST_CASE("parameter counts of the reference networks", "[cost]") {
  CHECK(param_count(arch_spec(ArchName::ResNet20, NormKind::RangeBN)) == 269722);
  CHECK(param_count(arch_spec(ArchName::ResNet20, NormKind::RangeEvoNorm)) == 270410);
  CHECK(param_count(arch_spec(ArchName::ResNet54, NormKind::RangeBN)) == 755802);
  CHECK(param_count(arch_spec(ArchName::ResNet54, NormKind::RangeEvoNorm)) == 757610);
  CHECK(param_count(arch_spec(ArchName::VGG11, NormKind::RangeBN)) == 9491018);
  CHECK(param_count(arch_spec(ArchName::VGG11, NormKind::RangeEvoNorm)) == 9493770);
  const double r18 = static_cast<double>(param_count(arch_spec(ArchName::ResNet18, NormKind::RangeBN)));
  CHECK(r18 == Approx(11.2e6).epsilon(0.02));
  for (auto norm : {NormKind::RangeBN, NormKind::RangeEvoNorm}) {
    CHECK(static_cast<double>(param_count(arch_spec(ArchName::ResNet20, norm))) == Approx(0.27e6).epsilon(0.02));
    CHECK(static_cast<double>(param_count(arch_spec(ArchName::ResNet54, norm))) == Approx(0.76e6).epsilon(0.02));
    CHECK(static_cast<double>(param_count(arch_spec(ArchName::VGG11, norm))) == Approx(9.49e6).epsilon(0.02));
  }
  for (const auto& l : arch_spec(ArchName::ResNet18, NormKind::RangeEvoNorm)) CHECK_NOTHROW(l.validate());
  CHECK(parse_arch_name("vgg11") == ArchName::VGG11);
  CHECK_THROWS_AS(parse_arch_name("alexnet"), ConfigError);
  CHECK_THROWS_AS(arch_spec(ArchName::ResNet20, NormKind::RangeBN, 0), ConfigError);
}

TEST_CASE("energy efficiency of the reference networks", "[cost]") {
  struct Row {
    ArchName arch;
    NormKind norm;
    double train, infer;
  };
  const Row table[] = {
      {ArchName::ResNet20, NormKind::RangeBN, 19.93, 19.93},     {ArchName::ResNet20, NormKind::RangeEvoNorm, 19.93, 19.78},
      {ArchName::ResNet54, NormKind::RangeBN, 19.94, 19.82},     {ArchName::ResNet54, NormKind::RangeEvoNorm, 19.90, 19.82},
      {ArchName::VGG11, NormKind::RangeBN, 19.97, 19.96},        {ArchName::VGG11, NormKind::RangeEvoNorm, 19.67, 19.96},
  };
  for (const auto& r : table) {
    INFO(to_string(r.arch) << " " << to_string(r.norm));
    const auto layers = arch_spec(r.arch, r.norm, 32);
    CHECK(efficiency(layers, Phase::Training) == Approx(r.train).margin(0.3));
    CHECK(efficiency(layers, Phase::Inference) == Approx(r.infer).margin(0.3));
    CHECK(static_cast<double>(memory_bytes(layers, Phase::Inference, Precision::FP32)) /
              static_cast<double>(memory_bytes(layers, Phase::Inference, Precision::INT8)) ==
          4.0);
  }
  const double r20 = efficiency(arch_spec(ArchName::ResNet20, NormKind::RangeEvoNorm, 32), Phase::Training);
  CHECK(r20 >= 19.6);
  CHECK(r20 <= 20.1);
}

TEST_CASE("training memory of the reference networks", "[cost]") {
  struct Row {
    ArchName arch;
    NormKind norm;
    double fp, lp;
  };
  const Row table[] = {
      {ArchName::ResNet20, NormKind::RangeBN, 170.60, 46.15}, {ArchName::ResNet20, NormKind::RangeEvoNorm, 124.60, 35.43},
      {ArchName::ResNet54, NormKind::RangeBN, 424.85, 117.05}, {ArchName::ResNet54, NormKind::RangeEvoNorm, 308.85, 88.05},
      {ArchName::VGG11, NormKind::RangeBN, 300.48, 210.95},    {ArchName::VGG11, NormKind::RangeEvoNorm, 263.48, 201.70},
  };
  for (const auto& r : table) {
    INFO(to_string(r.arch) << " " << to_string(r.norm));
    const auto layers = arch_spec(r.arch, r.norm, 32);
    const double fp = static_cast<double>(memory_bytes(layers, Phase::Training, Precision::FP32)) / kMiB;
    const double lp = static_cast<double>(memory_bytes(layers, Phase::Training, Precision::INT8)) / kMiB;
    CHECK(fp == Approx(r.fp).epsilon(0.15));
    CHECK(lp == Approx(r.lp).epsilon(0.15));
    CHECK(fp / lp == Approx(r.fp / r.lp).epsilon(0.15));
  }
  const auto r20 = arch_spec(ArchName::ResNet20, NormKind::RangeEvoNorm, 32);
  CHECK(memory_bytes(r20, Phase::Inference, Precision::FP32) == 4 * 270410);
  CHECK(memory_bytes(r20, Phase::Training, Precision::FP32, Algorithm::DPSGD) <
        memory_bytes(r20, Phase::Training, Precision::FP32, Algorithm::ChocoSGD));
  CHECK(model_buffers(Algorithm::DPSGD) == 4);
  CHECK(model_buffers(Algorithm::ChocoSGD) == 5);
  CHECK(model_buffers(Algorithm::QuantSGP) == 6);
}

TEST_CASE("cost report format", "[cost]") {
  const auto layers = arch_spec(ArchName::TinyMLP, NormKind::RangeEvoNorm, 1);
  std::ostringstream out;
  write_cost_report(layers, Phase::Training, EnergyModel{}, out);
  const std::string text = out.str();
  CHECK(text.find("layer,kind,adds,mults,energy_mj_fp,energy_mj_lp\n") != std::string::npos);
  CHECK(text.find("\n0,linear,1536,1536,") != std::string::npos);
  CHECK(text.find("# energy_mj: fp ") != std::string::npos);
  CHECK(text.find("efficiency") != std::string::npos);
  std::istringstream lines(text);
  std::string line;
  int rows = 0;
  while (std::getline(lines, line)) rows += !line.empty() && line[0] != '#' && line.rfind("layer,", 0) != 0;
  CHECK(rows == 5);
}
