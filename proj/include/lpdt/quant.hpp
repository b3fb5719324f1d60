// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0
//
// Affine (asymmetric) per-tensor 8-bit quantization and the straight-through
// estimator used by the quantized training path.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "lpdt/tensor.hpp"

namespace lpdt {

inline constexpr double kEpsScale = 1e-8;
inline constexpr int kQuantBits = 8;

enum class SteMode { Clipped, Identity };

/// Affine mapping real = (q - zero_point) * scale. The scale is held in single
/// precision since that is what travels on the wire.
struct QuantParams {
  float scale = 1.0f;
  int zero_point = 0;
  int bits = kQuantBits;

  int qmax() const { return (1 << bits) - 1; }
  double lower() const { return (0 - zero_point) * static_cast<double>(scale); }
  double upper() const { return (qmax() - zero_point) * static_cast<double>(scale); }
};

struct QuantTensor {
  Shape shape;
  std::vector<std::uint8_t> qdata;
  QuantParams params;
};

QuantParams quant_params_from_range(double lo, double hi, int bits = kQuantBits);

/// Round half away from zero.
inline double round_half_away(double v) { return std::round(v); }

inline std::uint8_t quantize_value(double x, const QuantParams& p) {
  const double q = round_half_away(x / static_cast<double>(p.scale)) + p.zero_point;
  return static_cast<std::uint8_t>(std::clamp(q, 0.0, static_cast<double>(p.qmax())));
}

inline double dequantize_value(std::uint8_t q, const QuantParams& p) {
  return (static_cast<int>(q) - p.zero_point) * static_cast<double>(p.scale);
}

/// Min/max range of a tensor widened to contain zero, so that zero is exactly
/// representable and the zero point never needs clamping.
template <typename Scalar>
QuantParams range_params(const Tensor<Scalar>& x) {
  if (x.empty()) return quant_params_from_range(0.0, 0.0);
  const double lo = std::min(0.0, static_cast<double>(x.data().minCoeff()));
  const double hi = std::max(0.0, static_cast<double>(x.data().maxCoeff()));
  return quant_params_from_range(lo, hi);
}

template <typename Scalar>
QuantTensor quantize(const Tensor<Scalar>& x, const QuantParams& p) {
  QuantTensor q{x.shape(), std::vector<std::uint8_t>(static_cast<std::size_t>(x.size())), p};
  for (Index i = 0; i < x.size(); ++i) {
    q.qdata[static_cast<std::size_t>(i)] = quantize_value(static_cast<double>(x[i]), p);
  }
  return q;
}

template <typename Scalar>
Tensor<Scalar> dequantize(const QuantTensor& q) {
  Tensor<Scalar> out(q.shape);
  for (Index i = 0; i < out.size(); ++i) {
    out[i] = static_cast<Scalar>(dequantize_value(q.qdata[static_cast<std::size_t>(i)], q.params));
  }
  return out;
}

/// dequantize(quantize(x)) with the tensor's own range.
template <typename Scalar>
Tensor<Scalar> fake_quantize(const Tensor<Scalar>& x) {
  return dequantize<Scalar>(quantize(x, range_params(x)));
}

template <typename Scalar>
Tensor<Scalar> fake_quantize(const Tensor<Scalar>& x, const QuantParams& p) {
  return dequantize<Scalar>(quantize(x, p));
}

/// Gradient through the quantizer: identity inside the representable range,
/// zero on saturated elements (clipped mode). An element counts as saturated
/// only when the clamp changed its code, i.e. it lies more than half a step
/// outside the grid.
template <typename Scalar>
Tensor<Scalar> ste_grad(const Tensor<Scalar>& upstream, const Tensor<Scalar>& x,
                        const QuantParams& p, SteMode mode = SteMode::Clipped) {
  require_same_shape(upstream, x, "ste_grad");
  Tensor<Scalar> out = upstream;
  if (mode == SteMode::Identity) return out;
  const double half_step = 0.5 * static_cast<double>(p.scale);
  const double lo = p.lower() - half_step;
  const double hi = p.upper() + half_step;
  for (Index i = 0; i < x.size(); ++i) {
    const double v = static_cast<double>(x[i]);
    if (v < lo || v > hi) out[i] = Scalar(0);
  }
  return out;
}

}  // namespace lpdt
