// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0
//
// Forward and backward passes for the layers used by the desk-scale models:
// convolution, linear, average pooling, skip connections and the three
// normalization-activation layers (range batch-norm + ReLU, EvoNorm-S0 and
// Range EvoNorm). Every layer is a free function templated on the scalar type
// so that gradients can be checked in double precision.
//
// In INT8 mode compute layers consume fake-quantized inputs and weights, and
// the backward pass bifurcates the gradients: the layer gradient g_l handed
// to the previous layer is 8-bit quantized while weight gradients stay at
// full precision.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "lpdt/error.hpp"
#include "lpdt/layer_spec.hpp"
#include "lpdt/quant.hpp"
#include "lpdt/tensor.hpp"

namespace lpdt {

inline constexpr double kEpsRange = 1e-5;
inline constexpr double kEpsVar = 1e-5;

/// 1 / sqrt(2 ln(count)): expected range-to-std ratio of `count` Gaussian samples.
inline double range_scale(Index count) {
  if (count < 2) throw ConfigError("range normalization needs at least 2 elements");
  return 1.0 / std::sqrt(2.0 * std::log(static_cast<double>(count)));
}

template <typename Scalar>
struct LayerParams {
  Tensor<Scalar> weights;
  Tensor<Scalar> bias;
  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;
  Tensor<Scalar> v;

  Index count() const {
    return weights.size() + bias.size() + gamma.size() + beta.size() + v.size();
  }

  /// Zero tensors with the same shapes.
  LayerParams zeros_like() const {
    return LayerParams{Tensor<Scalar>(weights.shape()), Tensor<Scalar>(bias.shape()),
                       Tensor<Scalar>(gamma.shape()), Tensor<Scalar>(beta.shape()),
                       Tensor<Scalar>(v.shape())};
  }

  template <typename F>
  void for_each(F&& f) {
    f(weights);
    f(bias);
    f(gamma);
    f(beta);
    f(v);
  }

  template <typename F>
  void for_each(F&& f) const {
    f(weights);
    f(bias);
    f(gamma);
    f(beta);
    f(v);
  }

  template <typename To>
  LayerParams<To> cast() const {
    return LayerParams<To>{weights.template cast<To>(), bias.template cast<To>(),
                           gamma.template cast<To>(), beta.template cast<To>(),
                           v.template cast<To>()};
  }
};

/// Per-channel affine/gate parameters with gamma = 1, beta = 0, v = 1.
template <typename Scalar>
LayerParams<Scalar> default_norm_params(Index channels, bool with_v) {
  LayerParams<Scalar> p;
  p.gamma = Tensor<Scalar>::constant({channels}, Scalar(1));
  p.beta = Tensor<Scalar>({channels});
  if (with_v) p.v = Tensor<Scalar>::constant({channels}, Scalar(1));
  return p;
}

template <typename Scalar>
struct ActivationCache {
  LayerSpec spec;
  Precision mode = Precision::FP32;
  SteMode ste = SteMode::Clipped;
  Tensor<Scalar> input_raw;  // as received
  Tensor<Scalar> input;      // as consumed (fake-quantized in INT8 mode)
  QuantParams input_q;
  Tensor<Scalar> weights_raw;
  Tensor<Scalar> weights;
  QuantParams weight_q;
  LayerParams<Scalar> params;
  std::vector<Tensor<Scalar>> saved;
  std::vector<double> denom;
  std::vector<double> mean;
  std::vector<Index> arg_max;
  std::vector<Index> arg_min;
  Shape output_shape;
  bool fuse_relu = true;
};

template <typename Scalar>
struct Forward {
  Tensor<Scalar> output;
  ActivationCache<Scalar> cache;
};

template <typename Scalar>
struct LayerGrads {
  Tensor<Scalar> g_l;
  LayerParams<Scalar> g_w;
};

namespace detail {

struct NormView {
  Index n = 0;
  Index c = 0;
  Index hw = 0;
  Index at(Index ni, Index ci, Index s) const { return (ni * c + ci) * hw + s; }
};

template <typename Scalar>
NormView norm_view(const Tensor<Scalar>& x, Index channels) {
  if (x.rank() < 2 || x.dim(1) != channels) {
    throw ShapeError("normalization input " + to_string(x.shape()) + " does not have " +
                     std::to_string(channels) + " channels");
  }
  const Index n = x.dim(0);
  return NormView{n, channels, x.size() / (n * channels)};
}

template <typename Scalar>
void prepare_input(const Tensor<Scalar>& x, Precision mode, ActivationCache<Scalar>& cache) {
  cache.mode = mode;
  if (mode == Precision::INT8) {
    cache.input_raw = x;
    cache.input_q = range_params(x);
    cache.input = fake_quantize(x, cache.input_q);
  } else {
    cache.input = x;
  }
}

template <typename Scalar>
void prepare_weights(const Tensor<Scalar>& w, Precision mode, ActivationCache<Scalar>& cache) {
  if (mode == Precision::INT8) {
    cache.weights_raw = w;
    cache.weight_q = range_params(w);
    cache.weights = fake_quantize(w, cache.weight_q);
  } else {
    cache.weights = w;
  }
}

inline double hard_sigmoid_value(double t) { return std::clamp((t + 3.0) / 6.0, 0.0, 1.0); }
inline double hard_sigmoid_slope(double t) { return (t > -3.0 && t < 3.0) ? 1.0 / 6.0 : 0.0; }
inline double sigmoid_value(double t) { return 1.0 / (1.0 + std::exp(-t)); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise helpers

template <typename Scalar>
Tensor<Scalar> hard_sigmoid(const Tensor<Scalar>& x) {
  Tensor<Scalar> y(x.shape());
  for (Index i = 0; i < x.size(); ++i) {
    y[i] = static_cast<Scalar>(detail::hard_sigmoid_value(static_cast<double>(x[i])));
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> skip_add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "skip_add");
  return Tensor<Scalar>(a.shape(), a.data() + b.data());
}

// ---------------------------------------------------------------------------
// Convolution (NCHW, square kernels, no bias)

template <typename Scalar>
Forward<Scalar> conv2d(const Tensor<Scalar>& x, const LayerSpec& spec,
                       const LayerParams<Scalar>& params, Precision mode = Precision::FP32) {
  spec.validate();
  if (x.rank() != 4 || x.dim(1) != spec.c_in || x.dim(2) != spec.L || x.dim(3) != spec.L) {
    throw ShapeError("conv2d: input " + to_string(x.shape()) + " does not match (b, " +
                     std::to_string(spec.c_in) + ", " + std::to_string(spec.L) + ", " +
                     std::to_string(spec.L) + ")");
  }
  if (params.weights.shape() != Shape{spec.c_out, spec.c_in, spec.K, spec.K}) {
    throw ShapeError("conv2d: weight shape " + to_string(params.weights.shape()));
  }
  Forward<Scalar> fwd;
  auto& cache = fwd.cache;
  cache.spec = spec;
  detail::prepare_input(x, mode, cache);
  detail::prepare_weights(params.weights, mode, cache);

  const Index n = x.dim(0);
  const Index out = spec.out_L();
  Tensor<Scalar> y({n, spec.c_out, out, out});
  const auto& xin = cache.input;
  const auto& w = cache.weights;
  for (Index b = 0; b < n; ++b) {
    for (Index co = 0; co < spec.c_out; ++co) {
      for (Index oh = 0; oh < out; ++oh) {
        for (Index ow = 0; ow < out; ++ow) {
          Scalar acc(0);
          for (Index ci = 0; ci < spec.c_in; ++ci) {
            for (Index kh = 0; kh < spec.K; ++kh) {
              const Index ih = oh * spec.S - spec.P + kh;
              if (ih < 0 || ih >= spec.L) continue;
              for (Index kw = 0; kw < spec.K; ++kw) {
                const Index iw = ow * spec.S - spec.P + kw;
                if (iw < 0 || iw >= spec.L) continue;
                acc += xin.at(b, ci, ih, iw) * w.at(co, ci, kh, kw);
              }
            }
          }
          y.at(b, co, oh, ow) = acc;
        }
      }
    }
  }
  cache.output_shape = y.shape();
  fwd.output = std::move(y);
  return fwd;
}

namespace detail {

template <typename Scalar>
LayerGrads<Scalar> conv2d_backward(const ActivationCache<Scalar>& cache,
                                   const Tensor<Scalar>& g) {
  const auto& spec = cache.spec;
  const auto& xin = cache.input;
  const auto& w = cache.weights;
  LayerGrads<Scalar> grads;
  grads.g_l = Tensor<Scalar>(xin.shape());
  grads.g_w.weights = Tensor<Scalar>(w.shape());
  const Index n = xin.dim(0);
  const Index out = spec.out_L();
  for (Index b = 0; b < n; ++b) {
    for (Index co = 0; co < spec.c_out; ++co) {
      for (Index oh = 0; oh < out; ++oh) {
        for (Index ow = 0; ow < out; ++ow) {
          const Scalar go = g.at(b, co, oh, ow);
          if (go == Scalar(0)) continue;
          for (Index ci = 0; ci < spec.c_in; ++ci) {
            for (Index kh = 0; kh < spec.K; ++kh) {
              const Index ih = oh * spec.S - spec.P + kh;
              if (ih < 0 || ih >= spec.L) continue;
              for (Index kw = 0; kw < spec.K; ++kw) {
                const Index iw = ow * spec.S - spec.P + kw;
                if (iw < 0 || iw >= spec.L) continue;
                grads.g_l.at(b, ci, ih, iw) += go * w.at(co, ci, kh, kw);
                grads.g_w.weights.at(co, ci, kh, kw) += go * xin.at(b, ci, ih, iw);
              }
            }
          }
        }
      }
    }
  }
  return grads;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear: y = x W^T + bias, x viewed as (b, c_in)

template <typename Scalar>
Forward<Scalar> linear(const Tensor<Scalar>& x, const LayerSpec& spec,
                       const LayerParams<Scalar>& params, Precision mode = Precision::FP32) {
  spec.validate();
  if (x.rank() < 1 || x.dim(0) == 0 || x.size() != x.dim(0) * spec.c_in) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " does not have " +
                     std::to_string(spec.c_in) + " features per sample");
  }
  if (params.weights.shape() != Shape{spec.c_out, spec.c_in}) {
    throw ShapeError("linear: weight shape " + to_string(params.weights.shape()));
  }
  Forward<Scalar> fwd;
  auto& cache = fwd.cache;
  cache.spec = spec;
  detail::prepare_input(x, mode, cache);
  detail::prepare_weights(params.weights, mode, cache);

  const Index n = x.dim(0);
  using Map = Eigen::Map<const RowMatrix<Scalar>>;
  Map xm(cache.input.data().data(), n, spec.c_in);
  Map wm(cache.weights.data().data(), spec.c_out, spec.c_in);
  RowMatrix<Scalar> ym = xm * wm.transpose();
  if (!params.bias.empty()) ym.rowwise() += params.bias.data().transpose();
  Tensor<Scalar> y({n, spec.c_out});
  Eigen::Map<RowMatrix<Scalar>>(y.data().data(), n, spec.c_out) = ym;
  cache.output_shape = y.shape();
  fwd.output = std::move(y);
  return fwd;
}

namespace detail {

template <typename Scalar>
LayerGrads<Scalar> linear_backward(const ActivationCache<Scalar>& cache,
                                   const Tensor<Scalar>& g) {
  const auto& spec = cache.spec;
  const Index n = cache.input.dim(0);
  using Map = Eigen::Map<const RowMatrix<Scalar>>;
  Map xm(cache.input.data().data(), n, spec.c_in);
  Map wm(cache.weights.data().data(), spec.c_out, spec.c_in);
  Map gm(g.data().data(), n, spec.c_out);

  LayerGrads<Scalar> grads;
  grads.g_l = Tensor<Scalar>(cache.input.shape());
  Eigen::Map<RowMatrix<Scalar>>(grads.g_l.data().data(), n, spec.c_in) = gm * wm;
  grads.g_w.weights = Tensor<Scalar>({spec.c_out, spec.c_in});
  Eigen::Map<RowMatrix<Scalar>>(grads.g_w.weights.data().data(), spec.c_out, spec.c_in) =
      gm.transpose() * xm;
  grads.g_w.bias = Tensor<Scalar>({spec.c_out});
  grads.g_w.bias.data() = gm.colwise().sum().transpose();
  return grads;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Average pooling with a K x K window and stride S

template <typename Scalar>
Forward<Scalar> avgpool(const Tensor<Scalar>& x, const LayerSpec& spec) {
  spec.validate();
  if (x.rank() != 4 || x.dim(1) != spec.c_in || x.dim(2) != spec.L || x.dim(3) != spec.L) {
    throw ShapeError("avgpool: input " + to_string(x.shape()) + " does not match spec");
  }
  Forward<Scalar> fwd;
  fwd.cache.spec = spec;
  fwd.cache.input = x;
  const Index n = x.dim(0);
  const Index out = spec.out_L();
  const Scalar inv = Scalar(1) / static_cast<Scalar>(spec.K * spec.K);
  Tensor<Scalar> y({n, spec.c_in, out, out});
  for (Index b = 0; b < n; ++b)
    for (Index c = 0; c < spec.c_in; ++c)
      for (Index oh = 0; oh < out; ++oh)
        for (Index ow = 0; ow < out; ++ow) {
          Scalar acc(0);
          for (Index kh = 0; kh < spec.K; ++kh)
            for (Index kw = 0; kw < spec.K; ++kw)
              acc += x.at(b, c, oh * spec.S + kh, ow * spec.S + kw);
          y.at(b, c, oh, ow) = acc * inv;
        }
  fwd.cache.output_shape = y.shape();
  fwd.output = std::move(y);
  return fwd;
}

namespace detail {

template <typename Scalar>
LayerGrads<Scalar> avgpool_backward(const ActivationCache<Scalar>& cache,
                                    const Tensor<Scalar>& g) {
  const auto& spec = cache.spec;
  LayerGrads<Scalar> grads;
  grads.g_l = Tensor<Scalar>(cache.input.shape());
  const Index n = cache.input.dim(0);
  const Index out = spec.out_L();
  const Scalar inv = Scalar(1) / static_cast<Scalar>(spec.K * spec.K);
  for (Index b = 0; b < n; ++b)
    for (Index c = 0; c < spec.c_in; ++c)
      for (Index oh = 0; oh < out; ++oh)
        for (Index ow = 0; ow < out; ++ow) {
          const Scalar share = g.at(b, c, oh, ow) * inv;
          for (Index kh = 0; kh < spec.K; ++kh)
            for (Index kw = 0; kw < spec.K; ++kw)
              grads.g_l.at(b, c, oh * spec.S + kh, ow * spec.S + kw) += share;
        }
  return grads;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Range batch-norm (+ fused ReLU). Statistics per channel over batch and
// spatial positions; denominator C(b) * range(x - mean) with C(b) = 1/sqrt(2 ln b).

template <typename Scalar>
Forward<Scalar> range_batchnorm(const Tensor<Scalar>& x, const LayerParams<Scalar>& params,
                                const LayerSpec& spec, Precision mode = Precision::FP32,
                                bool fuse_relu = true) {
  spec.validate();
  const auto view = detail::norm_view(x, spec.c_in);
  if (view.n < 2) throw ConfigError("range batch-norm needs a batch of at least 2");
  const double scale = range_scale(view.n);

  Forward<Scalar> fwd;
  auto& cache = fwd.cache;
  cache.spec = spec;
  cache.params = params;
  cache.fuse_relu = fuse_relu;
  detail::prepare_input(x, mode, cache);
  const auto& xin = cache.input;

  Tensor<Scalar> normalized(x.shape());
  Tensor<Scalar> pre(x.shape());
  Tensor<Scalar> y(x.shape());
  cache.denom.resize(view.c);
  cache.arg_max.resize(view.c);
  cache.arg_min.resize(view.c);
  const double count = static_cast<double>(view.n * view.hw);
  for (Index c = 0; c < view.c; ++c) {
    double sum = 0.0;
    Index amax = view.at(0, c, 0), amin = amax;
    for (Index b = 0; b < view.n; ++b)
      for (Index s = 0; s < view.hw; ++s) {
        const Index i = view.at(b, c, s);
        sum += static_cast<double>(xin[i]);
        if (xin[i] > xin[amax]) amax = i;
        if (xin[i] < xin[amin]) amin = i;
      }
    const double mu = sum / count;
    const double range = static_cast<double>(xin[amax]) - static_cast<double>(xin[amin]);
    const double denom = scale * range + kEpsRange;
    cache.denom[c] = denom;
    cache.arg_max[c] = amax;
    cache.arg_min[c] = amin;
    const double gamma = static_cast<double>(params.gamma[c]);
    const double beta = static_cast<double>(params.beta[c]);
    for (Index b = 0; b < view.n; ++b)
      for (Index s = 0; s < view.hw; ++s) {
        const Index i = view.at(b, c, s);
        const double nhat = (static_cast<double>(xin[i]) - mu) / denom;
        normalized[i] = static_cast<Scalar>(nhat);
        pre[i] = static_cast<Scalar>(nhat * gamma + beta);
        y[i] = fuse_relu ? std::max(pre[i], Scalar(0)) : pre[i];
      }
  }
  cache.saved = {std::move(normalized), std::move(pre)};
  cache.output_shape = y.shape();
  fwd.output = std::move(y);
  return fwd;
}

namespace detail {

template <typename Scalar>
LayerGrads<Scalar> range_batchnorm_backward(const ActivationCache<Scalar>& cache,
                                            const Tensor<Scalar>& g) {
  const auto view = norm_view(cache.input, cache.spec.c_in);
  const double scale = range_scale(view.n);
  const auto& normalized = cache.saved[0];
  const auto& pre = cache.saved[1];
  LayerGrads<Scalar> grads;
  grads.g_l = Tensor<Scalar>(cache.input.shape());
  grads.g_w = cache.params.zeros_like();
  const double count = static_cast<double>(view.n * view.hw);
  for (Index c = 0; c < view.c; ++c) {
    const double gamma = static_cast<double>(cache.params.gamma[c]);
    const double denom = cache.denom[c];
    double g_beta = 0.0, g_gamma = 0.0, sum_gn = 0.0, sum_gn_n = 0.0;
    for (Index b = 0; b < view.n; ++b)
      for (Index s = 0; s < view.hw; ++s) {
        const Index i = view.at(b, c, s);
        const double gp = (cache.fuse_relu && !(pre[i] > Scalar(0))) ? 0.0 : static_cast<double>(g[i]);
        g_beta += gp;
        g_gamma += gp * static_cast<double>(normalized[i]);
        sum_gn += gp * gamma;
        sum_gn_n += gp * gamma * static_cast<double>(normalized[i]);
      }
    const double mean_gn = sum_gn / count;
    // dL/dD = -sum(g_n * (x - mu)) / D^2 = -sum(g_n * nhat) / D
    const double g_denom = -sum_gn_n / denom;
    for (Index b = 0; b < view.n; ++b)
      for (Index s = 0; s < view.hw; ++s) {
        const Index i = view.at(b, c, s);
        const double gp = (cache.fuse_relu && !(pre[i] > Scalar(0))) ? 0.0 : static_cast<double>(g[i]);
        grads.g_l[i] = static_cast<Scalar>((gp * gamma - mean_gn) / denom);
      }
    grads.g_l[cache.arg_max[c]] += static_cast<Scalar>(g_denom * scale);
    grads.g_l[cache.arg_min[c]] -= static_cast<Scalar>(g_denom * scale);
    grads.g_w.gamma[c] = static_cast<Scalar>(g_gamma);
    grads.g_w.beta[c] = static_cast<Scalar>(g_beta);
  }
  return grads;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// EvoNorm-S0: y = x * sigmoid(v x) / sqrt(var_group(x) + eps) * gamma + beta,
// variance per sample over each group of c/g channels and all spatial positions.

template <typename Scalar>
Forward<Scalar> evonorm_s0(const Tensor<Scalar>& x, const LayerParams<Scalar>& params,
                           const LayerSpec& spec, Precision mode = Precision::FP32) {
  spec.validate();
  const auto view = detail::norm_view(x, spec.c_in);
  const Index cpg = spec.channels_per_group();
  const Index groups = spec.g;

  Forward<Scalar> fwd;
  auto& cache = fwd.cache;
  cache.spec = spec;
  cache.params = params;
  detail::prepare_input(x, mode, cache);
  const auto& xin = cache.input;

  Tensor<Scalar> gate(x.shape());
  Tensor<Scalar> y(x.shape());
  cache.denom.resize(static_cast<std::size_t>(view.n * groups));
  cache.mean.resize(static_cast<std::size_t>(view.n * groups));
  const double count = static_cast<double>(cpg * view.hw);
  for (Index b = 0; b < view.n; ++b) {
    for (Index grp = 0; grp < groups; ++grp) {
      double sum = 0.0;
      for (Index c = grp * cpg; c < (grp + 1) * cpg; ++c)
        for (Index s = 0; s < view.hw; ++s) sum += static_cast<double>(xin[view.at(b, c, s)]);
      const double m = sum / count;
      double sq = 0.0;
      for (Index c = grp * cpg; c < (grp + 1) * cpg; ++c)
        for (Index s = 0; s < view.hw; ++s) {
          const double d = static_cast<double>(xin[view.at(b, c, s)]) - m;
          sq += d * d;
        }
      const double std_dev = std::sqrt(sq / count + kEpsVar);
      const auto slot = static_cast<std::size_t>(b * groups + grp);
      cache.denom[slot] = std_dev;
      cache.mean[slot] = m;
      for (Index c = grp * cpg; c < (grp + 1) * cpg; ++c) {
        const double v = static_cast<double>(params.v[c]);
        const double gamma = static_cast<double>(params.gamma[c]);
        const double beta = static_cast<double>(params.beta[c]);
        for (Index s = 0; s < view.hw; ++s) {
          const Index i = view.at(b, c, s);
          const double xi = static_cast<double>(xin[i]);
          const double sg = detail::sigmoid_value(v * xi);
          gate[i] = static_cast<Scalar>(sg);
          y[i] = static_cast<Scalar>(xi * sg / std_dev * gamma + beta);
        }
      }
    }
  }
  cache.saved = {std::move(gate)};
  cache.output_shape = y.shape();
  fwd.output = std::move(y);
  return fwd;
}

namespace detail {

template <typename Scalar>
LayerGrads<Scalar> evonorm_s0_backward(const ActivationCache<Scalar>& cache,
                                       const Tensor<Scalar>& g) {
  const auto& spec = cache.spec;
  const auto view = norm_view(cache.input, spec.c_in);
  const Index cpg = spec.channels_per_group();
  const Index groups = spec.g;
  const auto& xin = cache.input;
  const auto& gate = cache.saved[0];
  const auto& params = cache.params;
  LayerGrads<Scalar> grads;
  grads.g_l = Tensor<Scalar>(xin.shape());
  grads.g_w = params.zeros_like();
  const double count = static_cast<double>(cpg * view.hw);
  for (Index b = 0; b < view.n; ++b) {
    for (Index grp = 0; grp < groups; ++grp) {
      const auto slot = static_cast<std::size_t>(b * groups + grp);
      const double sd = cache.denom[slot];
      const double m = cache.mean[slot];
      double g_sd = 0.0;
      for (Index c = grp * cpg; c < (grp + 1) * cpg; ++c) {
        const double gamma = static_cast<double>(params.gamma[c]);
        for (Index s = 0; s < view.hw; ++s) {
          const Index i = view.at(b, c, s);
          const double num = static_cast<double>(xin[i]) * static_cast<double>(gate[i]);
          g_sd -= static_cast<double>(g[i]) * gamma * num / (sd * sd);
        }
      }
      // d sd / d x_k = (x_k - m) / (count * sd)
      const double g_centered = g_sd / (count * sd);
      for (Index c = grp * cpg; c < (grp + 1) * cpg; ++c) {
        const double gamma = static_cast<double>(params.gamma[c]);
        const double v = static_cast<double>(params.v[c]);
        double g_gamma = 0.0, g_beta = 0.0, g_v = 0.0;
        for (Index s = 0; s < view.hw; ++s) {
          const Index i = view.at(b, c, s);
          const double xi = static_cast<double>(xin[i]);
          const double sg = static_cast<double>(gate[i]);
          const double gi = static_cast<double>(g[i]);
          const double g_num = gi * gamma / sd;
          const double dsg = sg * (1.0 - sg);
          grads.g_l[i] = static_cast<Scalar>(g_num * (sg + xi * dsg * v) + g_centered * (xi - m));
          g_gamma += gi * xi * sg / sd;
          g_beta += gi;
          g_v += g_num * xi * xi * dsg;
        }
        grads.g_w.gamma[c] += static_cast<Scalar>(g_gamma);
        grads.g_w.beta[c] += static_cast<Scalar>(g_beta);
        grads.g_w.v[c] += static_cast<Scalar>(g_v);
      }
    }
  }
  return grads;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Range EvoNorm: y = x * hsig(v x) / (C(c/g) * range_group(x)) * gamma + beta
// with hsig(t) = max(0, min(1, (t + 3) / 6)) and C(k) = 1/sqrt(2 ln k).
// The range gradient flows to the arg-max and arg-min element of each group
// (first occurrence on ties).

template <typename Scalar>
Forward<Scalar> range_evonorm(const Tensor<Scalar>& x, const LayerParams<Scalar>& params,
                              const LayerSpec& spec, Precision mode = Precision::FP32) {
  spec.validate();
  const auto view = detail::norm_view(x, spec.c_in);
  const Index cpg = spec.channels_per_group();
  const Index groups = spec.g;
  const double scale = range_scale(cpg);

  Forward<Scalar> fwd;
  auto& cache = fwd.cache;
  cache.spec = spec;
  cache.params = params;
  detail::prepare_input(x, mode, cache);
  const auto& xin = cache.input;

  Tensor<Scalar> gate(x.shape());
  Tensor<Scalar> y(x.shape());
  const auto slots = static_cast<std::size_t>(view.n * groups);
  cache.denom.resize(slots);
  cache.arg_max.resize(slots);
  cache.arg_min.resize(slots);
  for (Index b = 0; b < view.n; ++b) {
    for (Index grp = 0; grp < groups; ++grp) {
      Index amax = view.at(b, grp * cpg, 0), amin = amax;
      for (Index c = grp * cpg; c < (grp + 1) * cpg; ++c)
        for (Index s = 0; s < view.hw; ++s) {
          const Index i = view.at(b, c, s);
          if (xin[i] > xin[amax]) amax = i;
          if (xin[i] < xin[amin]) amin = i;
        }
      const double range = static_cast<double>(xin[amax]) - static_cast<double>(xin[amin]);
      const double denom = scale * range + kEpsRange;
      const auto slot = static_cast<std::size_t>(b * groups + grp);
      cache.denom[slot] = denom;
      cache.arg_max[slot] = amax;
      cache.arg_min[slot] = amin;
      for (Index c = grp * cpg; c < (grp + 1) * cpg; ++c) {
        const double v = static_cast<double>(params.v[c]);
        const double gamma = static_cast<double>(params.gamma[c]);
        const double beta = static_cast<double>(params.beta[c]);
        for (Index s = 0; s < view.hw; ++s) {
          const Index i = view.at(b, c, s);
          const double xi = static_cast<double>(xin[i]);
          const double hs = detail::hard_sigmoid_value(v * xi);
          gate[i] = static_cast<Scalar>(hs);
          y[i] = static_cast<Scalar>(xi * hs / denom * gamma + beta);
        }
      }
    }
  }
  cache.saved = {std::move(gate)};
  cache.output_shape = y.shape();
  fwd.output = std::move(y);
  return fwd;
}

namespace detail {

template <typename Scalar>
LayerGrads<Scalar> range_evonorm_backward(const ActivationCache<Scalar>& cache,
                                          const Tensor<Scalar>& g) {
  const auto& spec = cache.spec;
  const auto view = norm_view(cache.input, spec.c_in);
  const Index cpg = spec.channels_per_group();
  const Index groups = spec.g;
  const double scale = range_scale(cpg);
  const auto& xin = cache.input;
  const auto& gate = cache.saved[0];
  const auto& params = cache.params;
  LayerGrads<Scalar> grads;
  grads.g_l = Tensor<Scalar>(xin.shape());
  grads.g_w = params.zeros_like();
  for (Index b = 0; b < view.n; ++b) {
    for (Index grp = 0; grp < groups; ++grp) {
      const auto slot = static_cast<std::size_t>(b * groups + grp);
      const double denom = cache.denom[slot];
      double g_denom = 0.0;
      for (Index c = grp * cpg; c < (grp + 1) * cpg; ++c) {
        const double gamma = static_cast<double>(params.gamma[c]);
        const double v = static_cast<double>(params.v[c]);
        double g_gamma = 0.0, g_beta = 0.0, g_v = 0.0;
        for (Index s = 0; s < view.hw; ++s) {
          const Index i = view.at(b, c, s);
          const double xi = static_cast<double>(xin[i]);
          const double hs = static_cast<double>(gate[i]);
          const double gi = static_cast<double>(g[i]);
          const double num = xi * hs;
          const double g_num = gi * gamma / denom;
          const double slope = hard_sigmoid_slope(v * xi);
          grads.g_l[i] = static_cast<Scalar>(g_num * (hs + xi * v * slope));
          g_denom -= gi * gamma * num / (denom * denom);
          g_gamma += gi * num / denom;
          g_beta += gi;
          g_v += g_num * xi * xi * slope;
        }
        grads.g_w.gamma[c] += static_cast<Scalar>(g_gamma);
        grads.g_w.beta[c] += static_cast<Scalar>(g_beta);
        grads.g_w.v[c] += static_cast<Scalar>(g_v);
      }
      grads.g_l[cache.arg_max[slot]] += static_cast<Scalar>(g_denom * scale);
      grads.g_l[cache.arg_min[slot]] -= static_cast<Scalar>(g_denom * scale);
    }
  }
  return grads;
}

template <typename Scalar>
LayerGrads<Scalar> skip_backward(const ActivationCache<Scalar>&, const Tensor<Scalar>& g) {
  return LayerGrads<Scalar>{g, {}};
}

}  // namespace detail

/// Dispatches on the cached layer kind. For Skip, g_l is the gradient of both
/// summands.
template <typename Scalar>
LayerGrads<Scalar> backward(const ActivationCache<Scalar>& cache, const Tensor<Scalar>& upstream) {
  if (upstream.shape() != cache.output_shape) {
    throw ShapeError("backward: upstream " + to_string(upstream.shape()) +
                     " does not match layer output " + to_string(cache.output_shape));
  }
  LayerGrads<Scalar> grads;
  switch (cache.spec.kind) {
    case LayerKind::Conv: grads = detail::conv2d_backward(cache, upstream); break;
    case LayerKind::Linear: grads = detail::linear_backward(cache, upstream); break;
    case LayerKind::AvgPool: grads = detail::avgpool_backward(cache, upstream); break;
    case LayerKind::RangeBN_ReLU: grads = detail::range_batchnorm_backward(cache, upstream); break;
    case LayerKind::EvoNormS0: grads = detail::evonorm_s0_backward(cache, upstream); break;
    case LayerKind::RangeEvoNorm: grads = detail::range_evonorm_backward(cache, upstream); break;
    case LayerKind::Skip: grads = detail::skip_backward(cache, upstream); break;
    default:
      throw ConfigError("backward: " + std::string(to_string(cache.spec.kind)) +
                        " is not a trainable layer");
  }
  if (cache.mode == Precision::INT8) {
    // Gradient bifurcation: only the layer gradient is quantized.
    if (!cache.input_raw.empty()) {
      grads.g_l = ste_grad(grads.g_l, cache.input_raw, cache.input_q, cache.ste);
    }
    grads.g_l = fake_quantize(grads.g_l);
    if (!cache.weights_raw.empty()) {
      grads.g_w.weights = ste_grad(grads.g_w.weights, cache.weights_raw, cache.weight_q, cache.ste);
    }
  }
  return grads;
}

/// Forward pass for any trainable layer kind except Skip (which needs two inputs).
template <typename Scalar>
Forward<Scalar> forward(const Tensor<Scalar>& x, const LayerSpec& spec,
                        const LayerParams<Scalar>& params, Precision mode,
                        SteMode ste = SteMode::Clipped) {
  Forward<Scalar> fwd;
  switch (spec.kind) {
    case LayerKind::Conv: fwd = conv2d(x, spec, params, mode); break;
    case LayerKind::Linear: fwd = linear(x, spec, params, mode); break;
    case LayerKind::AvgPool: fwd = avgpool(x, spec); fwd.cache.mode = mode; break;
    case LayerKind::RangeBN_ReLU: fwd = range_batchnorm(x, params, spec, mode); break;
    case LayerKind::EvoNormS0: fwd = evonorm_s0(x, params, spec, mode); break;
    case LayerKind::RangeEvoNorm: fwd = range_evonorm(x, params, spec, mode); break;
    default:
      throw ConfigError("forward: " + std::string(to_string(spec.kind)) +
                        " is not a single-input trainable layer");
  }
  fwd.cache.ste = ste;
  return fwd;
}

}  // namespace lpdt
