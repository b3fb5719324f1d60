// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0

#include "lpdt/quant.hpp"

#include <cmath>
#include <string>

namespace lpdt {

QuantParams quant_params_from_range(double lo, double hi, int bits) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) {
    throw InvalidArgument("quantization range must be finite");
  }
  if (bits != kQuantBits) {
    throw InvalidArgument("only 8-bit quantization is supported, got " + std::to_string(bits));
  }
  if (lo > hi) {
    throw InvalidArgument("invalid quantization range: lo > hi");
  }
  QuantParams p;
  p.bits = bits;
  const int qmax = p.qmax();
  if (hi > lo) {
    p.scale = static_cast<float>((hi - lo) / qmax);
    // -lo / scale, written so that exact halves (e.g. 127.5) stay exact.
    const double zp = round_half_away(-lo * qmax / (hi - lo));
    p.zero_point = static_cast<int>(std::clamp(zp, 0.0, static_cast<double>(qmax)));
  } else {
    p.scale = static_cast<float>(kEpsScale);
    p.zero_point = 0;
  }
  return p;
}

}  // namespace lpdt
