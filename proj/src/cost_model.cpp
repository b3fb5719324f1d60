// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0

#include "lpdt/cost_model.hpp"

#include <iomanip>
#include <ostream>
#include <sstream>

#include "lpdt/error.hpp"

namespace lpdt {

namespace {

constexpr double kPicoToMilli = 1e-9;

Index area(const LayerSpec& s) { return s.b * s.c_in * s.L * s.L; }

OpCounts conv_like(const LayerSpec& s, Index factor) {
  Index v = 0;
  if (s.kind == LayerKind::Conv) {
    const Index out = s.out_L();
    v = factor * s.b * s.c_out * s.c_in * s.K * s.K * out * out;
  } else {
    v = factor * s.b * s.c_out * s.c_in;
  }
  return {v, v};
}

}  // namespace

void EnergyModel::validate() const {
  if (!(fp32_add > 0 && fp32_mul > 0 && int8_add > 0 && int8_mul > 0)) {
    throw ConfigError("per-operation energies must be positive");
  }
  if (!(int8_add < fp32_add && int8_mul < fp32_mul)) {
    throw ConfigError("int8 operations must cost less than fp32 operations");
  }
}

OpCounts train_counts(const LayerSpec& s) {
  switch (s.kind) {
    case LayerKind::Conv:
    case LayerKind::Linear: return conv_like(s, 3);
    case LayerKind::QuantAct: return {2 * area(s), 4 * area(s)};
    case LayerKind::QuantWeight: return {2 * s.c_out * s.c_in * s.K * s.K, 4 * s.c_out * s.c_in * s.K * s.K};
    case LayerKind::RangeBN_ReLU: return {9 * area(s), 6 * area(s) + 7 * s.c_in};
    case LayerKind::EvoNormS0:
    case LayerKind::RangeEvoNorm: return {6 * area(s), 10 * area(s) + 5 * s.c_in};
    case LayerKind::Skip: return {2 * area(s), 0};
    case LayerKind::AvgPool: return {area(s), 2 * s.b * s.c_in};
  }
  throw InvalidArgument("no cost formula for layer kind");
}

OpCounts infer_counts(const LayerSpec& s) {
  switch (s.kind) {
    case LayerKind::Conv:
    case LayerKind::Linear: return conv_like(s, 1);
    case LayerKind::QuantAct: return {2 * area(s), 4 * area(s)};
    case LayerKind::QuantWeight: return {2 * s.c_out * s.c_in * s.K * s.K, 4 * s.c_out * s.c_in * s.K * s.K};
    case LayerKind::RangeBN_ReLU: return {3 * area(s), 2 * area(s) + 3 * s.c_in};
    case LayerKind::EvoNormS0:
    case LayerKind::RangeEvoNorm: return {2 * area(s), 4 * area(s) + 2 * s.c_in};
    case LayerKind::Skip: return {2 * area(s), 0};
    case LayerKind::AvgPool: return {area(s), s.b * s.c_in};
  }
  throw InvalidArgument("no cost formula for layer kind");
}

OpCounts layer_counts(const LayerSpec& spec, Phase phase) {
  return phase == Phase::Training ? train_counts(spec) : infer_counts(spec);
}

std::vector<LayerSpec> quantizers_for(const LayerSpec& spec, Phase phase) {
  std::vector<LayerSpec> q;
  if (spec.kind != LayerKind::Conv && spec.kind != LayerKind::Linear) return q;
  const Index k = spec.kind == LayerKind::Conv ? spec.K : 1;
  const Index side = spec.kind == LayerKind::Conv ? spec.L : 1;
  if (phase == Phase::Training) {
    LayerSpec act{};
    act.kind = LayerKind::QuantAct;
    act.b = spec.b;
    act.c_in = spec.c_in;
    act.L = side;
    q.push_back(act);
  }
  LayerSpec w{};
  w.kind = LayerKind::QuantWeight;
  w.c_in = spec.c_in;
  w.c_out = spec.c_out;
  w.K = k;
  q.push_back(w);
  return q;
}

OpCounts network_counts(const std::vector<LayerSpec>& layers, Phase phase, Precision precision) {
  OpCounts total;
  for (const auto& l : layers) {
    total += layer_counts(l, phase);
    if (precision == Precision::INT8) {
      for (const auto& q : quantizers_for(l, phase)) total += layer_counts(q, phase);
    }
  }
  return total;
}

double energy_mj(const OpCounts& c, Precision precision, const EnergyModel& em) {
  const bool fp = precision == Precision::FP32;
  const double pj = static_cast<double>(c.adds) * (fp ? em.fp32_add : em.int8_add) +
                    static_cast<double>(c.mults) * (fp ? em.fp32_mul : em.int8_mul);
  return pj * kPicoToMilli;
}

double network_energy_mj(const std::vector<LayerSpec>& layers, Phase phase, Precision precision,
                         const EnergyModel& em) {
  return energy_mj(network_counts(layers, phase, precision), precision, em);
}

Index model_buffers(Algorithm a) {
  Index n = 4;
  if (a == Algorithm::DeepSqueeze || a == Algorithm::SparsePush) ++n;
  if (uses_proxy(a)) ++n;
  if (uses_push_sum(a)) ++n;
  return n;
}

Index norm_saved_tensors(LayerKind kind) {
  switch (kind) {
    case LayerKind::RangeBN_ReLU: return 6;
    case LayerKind::EvoNormS0:
    case LayerKind::RangeEvoNorm: return 4;
    default: return 0;
  }
}

Index activation_elements(const std::vector<LayerSpec>& layers) {
  Index total = 0;
  for (const auto& l : layers) {
    if (l.kind == LayerKind::Conv) total += area(l);
    if (l.kind == LayerKind::Linear) total += l.b * l.c_in;
    total += norm_saved_tensors(l.kind) * area(l);
  }
  return total;
}

Index param_count(const std::vector<LayerSpec>& layers) {
  Index p = 0;
  for (const auto& l : layers) p += l.param_count();
  return p;
}

Index memory_bytes(const std::vector<LayerSpec>& layers, Phase phase, Precision precision, Algorithm algorithm) {
  const Index width = precision == Precision::FP32 ? 4 : 1;
  const Index params = param_count(layers);
  if (phase == Phase::Inference) return width * params;
  return 4 * model_buffers(algorithm) * params + width * activation_elements(layers);
}

ArchName parse_arch_name(std::string_view text) {
  for (auto a : {ArchName::ResNet20, ArchName::ResNet54, ArchName::VGG11, ArchName::ResNet18, ArchName::TinyMLP,
                 ArchName::MiniCNN}) {
    if (text == to_string(a)) return a;
  }
  throw ConfigError("unknown architecture '" + std::string(text) +
                    "' (expected resnet20, resnet54, vgg11, resnet18, tinymlp or minicnn)");
}

std::string_view to_string(ArchName a) {
  switch (a) {
    case ArchName::ResNet20: return "resnet20";
    case ArchName::ResNet54: return "resnet54";
    case ArchName::VGG11: return "vgg11";
    case ArchName::ResNet18: return "resnet18";
    case ArchName::TinyMLP: return "tinymlp";
    case ArchName::MiniCNN: return "minicnn";
  }
  return "?";
}

namespace {

constexpr Index kClasses = 10;

struct Builder {
  LayerKind norm;
  Index b;
  std::vector<LayerSpec> layers;

  Index groups(Index c) const { return norm == LayerKind::RangeBN_ReLU ? 1 : std::max<Index>(1, c / 8); }

  /// Conv followed by its normalization; returns the output side.
  Index conv_norm(Index c_in, Index c_out, Index k, Index side, Index pad, Index stride) {
    layers.push_back(LayerSpec::conv(c_in, c_out, k, side, pad, stride, b));
    const Index out = layers.back().out_L();
    layers.push_back(LayerSpec::norm(norm, c_out, out, groups(c_out), b));
    return out;
  }
};

// CIFAR-style 6n+2 ResNet: 16/32/64 widths, identity shortcuts with
// parameter-free downsampling.
std::vector<LayerSpec> cifar_resnet(Index blocks, LayerKind norm, Index b) {
  Builder net{norm, b, {}};
  Index side = net.conv_norm(3, 16, 3, 32, 1, 1);
  Index c = 16;
  for (Index stage = 0; stage < 3; ++stage) {
    const Index width = 16 << stage;
    for (Index blk = 0; blk < blocks; ++blk) {
      const Index stride = stage > 0 && blk == 0 ? 2 : 1;
      side = net.conv_norm(c, width, 3, side, 1, stride);
      side = net.conv_norm(width, width, 3, side, 1, 1);
      net.layers.push_back(LayerSpec::skip(width, side, b));
      c = width;
    }
  }
  net.layers.push_back(LayerSpec::avgpool(c, side, side, b));
  net.layers.push_back(LayerSpec::linear(c, kClasses, b));
  return net.layers;
}

// VGG-11 with 512-wide hidden linear layer and a 10-way head.
std::vector<LayerSpec> vgg11(LayerKind norm, Index b) {
  Builder net{norm, b, {}};
  const Index plan[] = {64, 0, 128, 0, 256, 256, 0, 512, 512, 0, 512, 512, 0};
  Index side = 32, c = 3;
  for (Index width : plan) {
    if (width == 0) {
      side /= 2;  // 2x2 max-pool, no arithmetic in the cost tables
      continue;
    }
    side = net.conv_norm(c, width, 3, side, 1, 1);
    c = width;
  }
  net.layers.push_back(LayerSpec::linear(512, 512, b));
  net.layers.push_back(LayerSpec::linear(512, kClasses, b));
  return net.layers;
}

// ImageNet-style ResNet-18 with projection shortcuts. The 3x3/2 max-pool
// after the stem is costed as a 2x2 average pool with the same output size.
std::vector<LayerSpec> resnet18(LayerKind norm, Index b) {
  Builder net{norm, b, {}};
  Index side = net.conv_norm(3, 64, 7, 224, 3, 2);
  net.layers.push_back(LayerSpec::avgpool(64, side, 2, b));
  side = net.layers.back().out_L();
  Index c = 64;
  for (Index stage = 0; stage < 4; ++stage) {
    const Index width = 64 << stage;
    for (Index blk = 0; blk < 2; ++blk) {
      const Index stride = stage > 0 && blk == 0 ? 2 : 1;
      const Index in_side = side;
      side = net.conv_norm(c, width, 3, in_side, 1, stride);
      side = net.conv_norm(width, width, 3, side, 1, 1);
      if (stride != 1 || c != width) net.conv_norm(c, width, 1, in_side, 0, stride);
      net.layers.push_back(LayerSpec::skip(width, side, b));
      c = width;
    }
  }
  net.layers.push_back(LayerSpec::avgpool(c, side, side, b));
  net.layers.push_back(LayerSpec::linear(c, kClasses, b));
  return net.layers;
}

}  // namespace

std::vector<LayerSpec> arch_spec(ArchName name, NormKind norm, Index batch, const Shape& sample_shape) {
  if (batch < 1) throw ConfigError("batch size must be positive");
  const LayerKind kind = layer_kind(norm);
  switch (name) {
    case ArchName::ResNet20: return cifar_resnet(3, kind, batch);
    case ArchName::ResNet54: return cifar_resnet(8, kind, batch);
    case ArchName::VGG11: return vgg11(kind, batch);
    case ArchName::ResNet18: return resnet18(kind, batch);
    case ArchName::TinyMLP:
    case ArchName::MiniCNN: {
      const Arch arch = name == ArchName::TinyMLP ? Arch::TinyMLP : Arch::MiniCNN;
      Shape shape = sample_shape;
      if (shape.empty()) shape = arch == Arch::TinyMLP ? Shape{16} : Shape{1, 4, 4};
      std::vector<LayerSpec> layers;
      for (auto node : build_layers(arch, norm, shape, kClasses)) {
        node.spec.b = batch;
        layers.push_back(node.spec);
      }
      return layers;
    }
  }
  throw ConfigError("unknown architecture");
}

void write_cost_report(const std::vector<LayerSpec>& layers, Phase phase, const EnergyModel& em,
                       std::ostream& out) {
  std::ios saved(nullptr);
  saved.copyfmt(out);
  out.copyfmt(std::ios(nullptr));
  const bool train = phase == Phase::Training;
  out << "# phase: " << (train ? "training" : "inference") << "\n";
  out << "# energy per op (pJ): fp32 add " << em.fp32_add << ", fp32 mul " << em.fp32_mul << ", int8 add "
      << em.int8_add << ", int8 mul " << em.int8_mul << "\n";
  out << "# energy_mj_lp includes the layer's weight quantizer"
      << (train ? " and input activation quantizer" : "") << "\n";
  out << "# memory: inference = weights at 4 (fp) or 1 (lp) bytes; training = "
      << model_buffers(Algorithm::ChocoSGD)
      << " fp32 model buffers (weights, gradients, momentum, local update, proxy) + saved activations at 4 or 1 "
         "bytes\n";
  out << "layer,kind,adds,mults,energy_mj_fp,energy_mj_lp\n";
  out << std::setprecision(9);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const OpCounts c = layer_counts(l, phase);
    OpCounts lp = c;
    for (const auto& q : quantizers_for(l, phase)) lp += layer_counts(q, phase);
    out << i << ',' << to_string(l.kind) << ',' << c.adds << ',' << c.mults << ','
        << energy_mj(c, Precision::FP32, em) << ',' << energy_mj(lp, Precision::INT8, em) << '\n';
  }
  const double fp = network_energy_mj(layers, phase, Precision::FP32, em);
  const double lp = network_energy_mj(layers, phase, Precision::INT8, em);
  constexpr double kMiB = 1024.0 * 1024.0;
  const auto mem_fp = static_cast<double>(memory_bytes(layers, phase, Precision::FP32));
  const auto mem_lp = static_cast<double>(memory_bytes(layers, phase, Precision::INT8));
  const auto ratio = [](double a, double b) {
    std::ostringstream r;
    r << std::fixed << std::setprecision(4) << a / b;
    return r.str();
  };
  out << std::setprecision(6);
  out << "# params: " << param_count(layers) << "\n";
  out << "# energy_mj: fp " << fp << ", lp " << lp << ", efficiency " << ratio(fp, lp) << "\n";
  out << "# memory_mib: fp " << mem_fp / kMiB << ", lp " << mem_lp / kMiB << ", efficiency "
      << ratio(mem_fp, mem_lp) << "\n";
  out.copyfmt(saved);
}

}  // namespace lpdt
