// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>

#include "lpdt/tensor.hpp"

namespace lpdt {

enum class LayerKind {
  Conv,
  Linear,
  RangeBN_ReLU,
  EvoNormS0,
  RangeEvoNorm,
  Skip,
  AvgPool,
  QuantAct,
  QuantWeight,
};

enum class Precision { FP32, INT8 };

std::string_view to_string(LayerKind kind);
std::string_view to_string(Precision precision);
Precision parse_precision(std::string_view text);

/// Shape description of one layer. Field names follow the usual cost-table
/// notation: b batch, c_in/c_out channels, K kernel, L input side, P padding,
/// S stride, g number of normalization groups.
struct LayerSpec {
  LayerKind kind = LayerKind::Linear;
  Index b = 1;
  Index c_in = 1;
  Index c_out = 1;
  Index K = 1;
  Index L = 1;
  Index P = 0;
  Index S = 1;
  Index g = 1;

  /// Output side length for Conv/AvgPool (floor division, as in common frameworks).
  Index out_L() const;
  Index channels_per_group() const { return c_in / g; }

  /// Number of trainable scalars owned by the layer.
  Index param_count() const;

  /// Throws ConfigError when the spec is not self-consistent.
  void validate() const;

  static LayerSpec conv(Index c_in, Index c_out, Index K, Index L, Index P, Index S, Index b = 1);
  static LayerSpec linear(Index c_in, Index c_out, Index b = 1);
  static LayerSpec norm(LayerKind kind, Index c, Index L, Index g, Index b = 1);
  static LayerSpec skip(Index c, Index L, Index b = 1);
  static LayerSpec avgpool(Index c, Index L, Index K, Index b = 1);
};

bool is_norm(LayerKind kind);

}  // namespace lpdt
