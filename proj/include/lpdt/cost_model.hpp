// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0
//
// Analytic operation counts, energy and memory per node and iteration.
// Counts are exact integer evaluations of the per-layer formulas; energy
// multiplies them by per-operation costs.

#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "lpdt/algorithms.hpp"
#include "lpdt/layer_spec.hpp"
#include "lpdt/model.hpp"

namespace lpdt {

enum class Phase { Training, Inference };

struct OpCounts {
  Index adds = 0;
  Index mults = 0;

  OpCounts& operator+=(const OpCounts& o) {
    adds += o.adds;
    mults += o.mults;
    return *this;
  }
  friend OpCounts operator+(OpCounts a, const OpCounts& b) { return a += b; }
  friend bool operator==(const OpCounts&, const OpCounts&) = default;
};

/// Picojoules per operation.
struct EnergyModel {
  double fp32_add = 0.9;
  double fp32_mul = 3.7;
  double int8_add = 0.03;
  double int8_mul = 0.2;

  void validate() const;
};

OpCounts train_counts(const LayerSpec& spec);
OpCounts infer_counts(const LayerSpec& spec);
OpCounts layer_counts(const LayerSpec& spec, Phase phase);

/// Quantizer layers that an INT8 network adds in front of `spec`: one
/// weight quantizer per Conv/Linear, plus an activation quantizer during
/// training. Empty for every other kind.
std::vector<LayerSpec> quantizers_for(const LayerSpec& spec, Phase phase);

/// Sum over layers; INT8 includes the quantizer layers.
OpCounts network_counts(const std::vector<LayerSpec>& layers, Phase phase, Precision precision);

/// adds * E_add + mults * E_mul at the given precision, in millijoules.
double energy_mj(const OpCounts& counts, Precision precision, const EnergyModel& em = {});

double network_energy_mj(const std::vector<LayerSpec>& layers, Phase phase, Precision precision,
                         const EnergyModel& em = {});

/// Model-sized FP32 buffers a node keeps during training: weights,
/// gradients, momentum and the local update, plus the error residual
/// (Deep-Squeeze family), the proxy (CHOCO family) and the de-biased model
/// (push-sum variants).
Index model_buffers(Algorithm algorithm);

/// Tensors saved per element of a normalization layer's input for backward.
Index norm_saved_tensors(LayerKind kind);

/// Activation elements kept for backward: every Conv/Linear input plus the
/// normalization tensors.
Index activation_elements(const std::vector<LayerSpec>& layers);

/// Inference: weights only at the precision's width. Training: FP32 model
/// buffers plus activations at the precision's width.
Index memory_bytes(const std::vector<LayerSpec>& layers, Phase phase, Precision precision,
                   Algorithm algorithm = Algorithm::ChocoSGD);

Index param_count(const std::vector<LayerSpec>& layers);

enum class ArchName { ResNet20, ResNet54, VGG11, ResNet18, TinyMLP, MiniCNN };

ArchName parse_arch_name(std::string_view text);
std::string_view to_string(ArchName a);

/// Per-layer specs for batch size `batch`, 10 classes. The CIFAR-style
/// networks take 3x32x32 inputs and ResNet-18 takes 3x224x224. TinyMLP and
/// MiniCNN are the trainable models; `sample_shape` sets their input (empty
/// means 16 features for TinyMLP and 1x4x4 for MiniCNN) and is ignored by
/// the others.
std::vector<LayerSpec> arch_spec(ArchName name, NormKind norm, Index batch = 32,
                                 const Shape& sample_shape = {});

/// CSV "layer,kind,adds,mults,energy_mj_fp,energy_mj_lp" for one phase, with
/// '#' comment lines stating the accounting rules before the rows and a
/// summary with efficiency ratios after them.
void write_cost_report(const std::vector<LayerSpec>& layers, Phase phase, const EnergyModel& em,
                       std::ostream& out);

}  // namespace lpdt
