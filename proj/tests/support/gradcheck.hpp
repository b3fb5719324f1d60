// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference gradient checks for single layers, shared by the
// unit tests and the acceptance runner. All arithmetic is in double.

#pragma once

#include <algorithm>
#include <cstdint>
#include <random>

#include "lpdt/layers.hpp"

namespace lpdt::testing {

struct LayerCase {
  LayerSpec spec;
  Tensord x;
  Tensord x2;  // second summand for Skip
  LayerParams<double> params;
};

inline Tensord random_tensor(Shape shape, std::mt19937_64& rng, double sd = 1.0) {
  Tensord t(std::move(shape));
  std::normal_distribution<double> dist(0.0, sd);
  for (Index i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

inline Index pick(std::mt19937_64& rng, Index lo, Index hi) {
  return std::uniform_int_distribution<Index>(lo, hi)(rng);
}

inline LayerCase random_case(LayerKind kind, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LayerCase c;
  switch (kind) {
    case LayerKind::Conv: {
      const Index K = pick(rng, 0, 1) ? 3 : 1;
      const Index L = pick(rng, 3, 5);
      c.spec = LayerSpec::conv(pick(rng, 1, 3), pick(rng, 1, 3), K, L, K == 3 ? pick(rng, 0, 1) : 0,
                               pick(rng, 1, 2));
      c.x = random_tensor({pick(rng, 1, 2), c.spec.c_in, L, L}, rng);
      c.params.weights = random_tensor({c.spec.c_out, c.spec.c_in, K, K}, rng, 0.5);
      break;
    }
    case LayerKind::Linear: {
      c.spec = LayerSpec::linear(pick(rng, 1, 4), pick(rng, 1, 4));
      c.x = random_tensor({pick(rng, 1, 3), c.spec.c_in}, rng);
      c.params.weights = random_tensor({c.spec.c_out, c.spec.c_in}, rng, 0.5);
      c.params.bias = random_tensor({c.spec.c_out}, rng, 0.5);
      break;
    }
    case LayerKind::AvgPool: {
      const Index K = pick(rng, 1, 2);
      c.spec = LayerSpec::avgpool(pick(rng, 1, 2), 2 * K, K);
      c.x = random_tensor({pick(rng, 1, 2), c.spec.c_in, 2 * K, 2 * K}, rng);
      break;
    }
    case LayerKind::Skip: {
      const Index L = pick(rng, 1, 3);
      c.spec = LayerSpec::skip(pick(rng, 1, 3), L);
      c.x = random_tensor({pick(rng, 1, 2), c.spec.c_in, L, L}, rng);
      c.x2 = random_tensor(c.x.shape(), rng);
      break;
    }
    case LayerKind::RangeBN_ReLU:
    case LayerKind::EvoNormS0:
    case LayerKind::RangeEvoNorm: {
      const Index L = pick(rng, 1, 3);
      const Index channels = kind == LayerKind::RangeBN_ReLU ? pick(rng, 1, 3) : 2 * pick(rng, 1, 2);
      Index groups = 1;
      if (kind == LayerKind::EvoNormS0) groups = pick(rng, 0, 1) ? channels / 2 : 1;
      if (kind == LayerKind::RangeEvoNorm) groups = channels / 2;
      c.spec = LayerSpec::norm(kind, channels, L, groups);
      const Index b = kind == LayerKind::RangeBN_ReLU ? pick(rng, 2, 4) : pick(rng, 1, 2);
      c.x = random_tensor({b, channels, L, L}, rng);
      c.params.gamma = random_tensor({channels}, rng, 0.5);
      c.params.gamma.data().array() += 1.0;
      c.params.beta = random_tensor({channels}, rng, 0.5);
      if (kind != LayerKind::RangeBN_ReLU) c.params.v = random_tensor({channels}, rng, 0.7);
      break;
    }
    default: throw ConfigError("no gradient check for this layer kind");
  }
  return c;
}

inline Forward<double> run_case(const LayerCase& c) {
  if (c.spec.kind == LayerKind::Skip) {
    Forward<double> fwd;
    fwd.output = skip_add(c.x, c.x2);
    fwd.cache.spec = c.spec;
    fwd.cache.output_shape = fwd.output.shape();
    return fwd;
  }
  return forward(c.x, c.spec, c.params, Precision::FP32);
}

/// True when no input or parameter perturbation of size `margin` can cross a
/// non-differentiable point (ReLU threshold, hard-sigmoid corner, range tie).
inline bool kink_free(const LayerCase& c, double margin = 1e-2) {
  const auto fwd = run_case(c);
  const auto& cache = fwd.cache;
  if (c.spec.kind == LayerKind::RangeBN_ReLU) {
    const auto& pre = cache.saved[1];
    for (Index i = 0; i < pre.size(); ++i)
      if (std::abs(pre[i]) < margin) return false;
  }
  if (c.spec.kind == LayerKind::RangeEvoNorm) {
    const Index hw = c.x.size() / (c.x.dim(0) * c.spec.c_in);
    for (Index i = 0; i < c.x.size(); ++i) {
      const Index ch = (i / hw) % c.spec.c_in;
      const double t = c.params.v[ch] * c.x[i];
      if (std::abs(std::abs(t) - 3.0) < margin) return false;
    }
  }
  if (c.spec.kind == LayerKind::RangeBN_ReLU || c.spec.kind == LayerKind::RangeEvoNorm) {
    // Extremes must be separated from the runner-up by more than the margin,
    // and the range itself must be wide enough that the 1/range curvature
    // does not swamp a step of size h.
    for (std::size_t s = 0; s < cache.arg_max.size(); ++s) {
      const double mx = c.x[cache.arg_max[s]];
      const double mn = c.x[cache.arg_min[s]];
      if (mx - mn < 25.0 * margin) return false;
      for (Index i = 0; i < c.x.size(); ++i) {
        if (i == cache.arg_max[s] || i == cache.arg_min[s]) continue;
        const double xi = c.x[i];
        if (xi <= mx && xi >= mn && (mx - xi < margin || xi - mn < margin)) return false;
      }
    }
  }
  return true;
}

/// Loss L = sum(r * y); returns the worst relative error between analytic
/// and central-difference gradients over the input(s) and every parameter.
inline double gradcheck(const LayerCase& base, std::uint64_t seed, double h = 1e-3) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const auto fwd = run_case(base);
  const Tensord r = random_tensor(fwd.output.shape(), rng);
  const auto grads = backward(fwd.cache, r);

  auto loss = [&](const LayerCase& c) { return run_case(c).output.data().dot(r.data()); };

  double worst = 0.0;
  auto compare = [&](Tensord LayerCase::*field_x, Tensord LayerParams<double>::*field_p,
                     const Tensord& analytic) {
    LayerCase c = base;
    Tensord& target = field_x ? c.*field_x : c.params.*field_p;
    if (target.size() == 0) return;
    Vector<double> numeric(target.size());
    for (Index i = 0; i < target.size(); ++i) {
      const double saved = target[i];
      target[i] = saved + h;
      const double up = loss(c);
      target[i] = saved - h;
      const double down = loss(c);
      target[i] = saved;
      numeric[i] = (up - down) / (2.0 * h);
    }
    const double scale = std::max({numeric.cwiseAbs().maxCoeff(),
                                   analytic.data().cwiseAbs().maxCoeff(), 1e-8});
    worst = std::max(worst, (numeric - analytic.data()).cwiseAbs().maxCoeff() / scale);
  };

  compare(&LayerCase::x, nullptr, grads.g_l);
  if (base.spec.kind == LayerKind::Skip) compare(&LayerCase::x2, nullptr, grads.g_l);
  compare(nullptr, &LayerParams<double>::weights, grads.g_w.weights);
  compare(nullptr, &LayerParams<double>::bias, grads.g_w.bias);
  compare(nullptr, &LayerParams<double>::gamma, grads.g_w.gamma);
  compare(nullptr, &LayerParams<double>::beta, grads.g_w.beta);
  compare(nullptr, &LayerParams<double>::v, grads.g_w.v);
  return worst;
}

/// Draws a kink-free case for (kind, seed), resampling with derived seeds.
inline LayerCase smooth_case(LayerKind kind, std::uint64_t seed) {
  for (std::uint64_t attempt = 0; attempt < 1000; ++attempt) {
    auto c = random_case(kind, seed * 1000003ULL + attempt);
    if (kink_free(c)) return c;
  }
  throw NumericalError("could not draw a kink-free gradient-check case");
}

}  // namespace lpdt::testing
