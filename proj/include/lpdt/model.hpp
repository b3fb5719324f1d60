// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0
//
// Small sequential models with optional skip connections and a softmax
// cross-entropy head. Parameters can be exchanged as one flat vector, which
// is how the decentralized algorithms see a model.

#pragma once

#include <cmath>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "lpdt/layers.hpp"

namespace lpdt {

enum class Arch { TinyMLP, MiniCNN };
enum class NormKind { RangeBN, EvoNormS0, RangeEvoNorm };

Arch parse_arch(std::string_view text);
NormKind parse_norm(std::string_view text);
std::string_view to_string(Arch arch);
std::string_view to_string(NormKind norm);
LayerKind layer_kind(NormKind norm);

/// One layer of a model. Activation 0 is the model input and activation i+1
/// is the output of node i. A Skip node adds activation `skip_from` to its
/// input.
struct ModelNode {
  LayerSpec spec;
  int skip_from = -1;
};

struct ModelOptions {
  Index hidden1 = 32;
  Index hidden2 = 64;
  Index cnn_width = 8;
  Index channels_per_group = 8;
};

/// Layer list for one of the trainable desk-scale architectures. `sample_shape`
/// excludes the batch dimension: {features} for TinyMLP, {C, L, L} for MiniCNN.
std::vector<ModelNode> build_layers(Arch arch, NormKind norm, const Shape& sample_shape,
                                    Index classes, const ModelOptions& opts = {});

/// Numerically stable mean softmax cross-entropy. When `grad` is non-null it
/// receives d(loss)/d(logits), already divided by the batch size.
template <typename Scalar>
double softmax_cross_entropy(const Tensor<Scalar>& logits, const std::vector<int>& labels,
                             Tensor<Scalar>* grad) {
  const Index n = logits.dim(0);
  const Index k = logits.size() / n;
  if (static_cast<Index>(labels.size()) != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(n));
  }
  if (grad) *grad = Tensor<Scalar>(logits.shape());
  double total = 0.0;
  std::vector<double> p(static_cast<std::size_t>(k));
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw InvalidArgument("label out of range: " + std::to_string(y));
    double mx = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(logits[i * k + j]));
    double z = 0.0;
    for (Index j = 0; j < k; ++j) {
      p[static_cast<std::size_t>(j)] = std::exp(static_cast<double>(logits[i * k + j]) - mx);
      z += p[static_cast<std::size_t>(j)];
    }
    total += std::log(z) + mx - static_cast<double>(logits[i * k + y]);
    if (grad) {
      for (Index j = 0; j < k; ++j) {
        const double pj = p[static_cast<std::size_t>(j)] / z - (j == y ? 1.0 : 0.0);
        (*grad)[i * k + j] = static_cast<Scalar>(pj / static_cast<double>(n));
      }
    }
  }
  return total / static_cast<double>(n);
}

template <typename Scalar>
class Model {
 public:
  Model() = default;

  Model(std::vector<ModelNode> nodes, Shape sample_shape, Index classes)
      : nodes_(std::move(nodes)), sample_shape_(std::move(sample_shape)), classes_(classes) {
    params_.reserve(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const auto& node = nodes_[i];
      node.spec.validate();
      if (node.spec.kind == LayerKind::Skip &&
          (node.skip_from < 0 || node.skip_from > static_cast<int>(i))) {
        throw ConfigError("skip node " + std::to_string(i) + " has invalid source");
      }
      params_.push_back(shaped_params(node.spec));
    }
  }

  const std::vector<ModelNode>& nodes() const { return nodes_; }
  const Shape& sample_shape() const { return sample_shape_; }
  Index classes() const { return classes_; }
  std::vector<LayerParams<Scalar>>& params() { return params_; }
  const std::vector<LayerParams<Scalar>>& params() const { return params_; }

  /// Uniform +-sqrt(6 / (fan_in + fan_out)) for weights, zero biases,
  /// gamma = 1, beta = 0, v = 1.
  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const auto& spec = nodes_[i].spec;
      auto& p = params_[i];
      if (spec.kind == LayerKind::Conv || spec.kind == LayerKind::Linear) {
        const double k2 = static_cast<double>(spec.K * spec.K);
        const double bound = std::sqrt(6.0 / (k2 * static_cast<double>(spec.c_in + spec.c_out)));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (Index j = 0; j < p.weights.size(); ++j) p.weights[j] = static_cast<Scalar>(dist(rng));
        p.bias.data().setZero();
      } else if (is_norm(spec.kind)) {
        p = shaped_params(spec);
      }
    }
  }

  Index param_count() const {
    Index total = 0;
    for (const auto& p : params_) total += p.count();
    return total;
  }

  /// Parameter count of every node that owns parameters, in flattening order.
  std::vector<Index> layer_sizes() const {
    std::vector<Index> sizes;
    for (const auto& p : params_) {
      if (p.count() > 0) sizes.push_back(p.count());
    }
    return sizes;
  }

  Vector<Scalar> flatten() const {
    Vector<Scalar> flat(param_count());
    Index off = 0;
    for (const auto& p : params_) {
      p.for_each([&](const Tensor<Scalar>& t) {
        flat.segment(off, t.size()) = t.data();
        off += t.size();
      });
    }
    return flat;
  }

  void assign(const Vector<Scalar>& flat) {
    if (flat.size() != param_count()) {
      throw ShapeError("assign: " + std::to_string(flat.size()) + " values for " +
                       std::to_string(param_count()) + " parameters");
    }
    Index off = 0;
    for (auto& p : params_) {
      p.for_each([&](Tensor<Scalar>& t) {
        t.data() = flat.segment(off, t.size());
        off += t.size();
      });
    }
  }

  Tensor<Scalar> logits(const Tensor<Scalar>& x, Precision mode = Precision::FP32) const {
    std::vector<ActivationCache<Scalar>> caches;
    return run_forward(x, mode, caches);
  }

  /// Mean cross-entropy on the batch. When `grad` is non-null it receives the
  /// flat parameter gradient (same layout as flatten()).
  double loss_and_grad(const Tensor<Scalar>& x, const std::vector<int>& labels, Precision mode,
                       Vector<Scalar>* grad, SteMode ste = SteMode::Clipped) const {
    std::vector<ActivationCache<Scalar>> caches;
    const Tensor<Scalar> out = run_forward(x, mode, caches, ste);
    Tensor<Scalar> g_out;
    const double loss = softmax_cross_entropy(out, labels, grad ? &g_out : nullptr);
    if (grad) *grad = run_backward(caches, std::move(g_out));
    return loss;
  }

 private:
  static LayerParams<Scalar> shaped_params(const LayerSpec& spec) {
    LayerParams<Scalar> p;
    switch (spec.kind) {
      case LayerKind::Conv:
        p.weights = Tensor<Scalar>({spec.c_out, spec.c_in, spec.K, spec.K});
        break;
      case LayerKind::Linear:
        p.weights = Tensor<Scalar>({spec.c_out, spec.c_in});
        p.bias = Tensor<Scalar>({spec.c_out});
        break;
      case LayerKind::RangeBN_ReLU: p = default_norm_params<Scalar>(spec.c_in, false); break;
      case LayerKind::EvoNormS0:
      case LayerKind::RangeEvoNorm: p = default_norm_params<Scalar>(spec.c_in, true); break;
      default: break;
    }
    return p;
  }

  Tensor<Scalar> run_forward(const Tensor<Scalar>& x, Precision mode,
                             std::vector<ActivationCache<Scalar>>& caches,
                             SteMode ste = SteMode::Clipped) const {
    if (x.rank() != sample_shape_.size() + 1 ||
        !std::equal(sample_shape_.begin(), sample_shape_.end(), x.shape().begin() + 1)) {
      throw ShapeError("model input " + to_string(x.shape()) + " does not match sample shape " +
                       to_string(sample_shape_));
    }
    std::vector<Tensor<Scalar>> acts;
    acts.reserve(nodes_.size() + 1);
    acts.push_back(x);
    caches.clear();
    caches.reserve(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const auto& node = nodes_[i];
      if (node.spec.kind == LayerKind::Skip) {
        ActivationCache<Scalar> cache;
        cache.spec = node.spec;
        cache.mode = mode;
        Tensor<Scalar> y = skip_add(acts.back(), acts[static_cast<std::size_t>(node.skip_from)]);
        cache.output_shape = y.shape();
        caches.push_back(std::move(cache));
        acts.push_back(std::move(y));
        continue;
      }
      auto fwd = forward(acts.back(), node.spec, params_[i], mode, ste);
      caches.push_back(std::move(fwd.cache));
      acts.push_back(std::move(fwd.output));
    }
    return acts.back().reshaped({x.dim(0), classes_});
  }

  Vector<Scalar> run_backward(std::vector<ActivationCache<Scalar>>& caches,
                              Tensor<Scalar> g_out) const {
    const std::size_t count = nodes_.size();
    // Gradient contributions arriving at each activation from skip sources.
    std::vector<Tensor<Scalar>> pending(count + 1);
    std::vector<LayerParams<Scalar>> g_params(count);
    Tensor<Scalar> g = g_out.reshaped(caches.back().output_shape);
    for (std::size_t idx = count; idx-- > 0;) {
      if (!pending[idx + 1].empty()) g.data() += pending[idx + 1].data();
      auto grads = backward(caches[idx], g);
      const auto& node = nodes_[idx];
      if (node.spec.kind == LayerKind::Skip) {
        auto& slot = pending[static_cast<std::size_t>(node.skip_from)];
        if (slot.empty()) {
          slot = grads.g_l;
        } else {
          slot.data() += grads.g_l.data();
        }
      } else {
        g_params[idx] = std::move(grads.g_w);
      }
      g = std::move(grads.g_l);
    }

    Vector<Scalar> flat(param_count());
    Index off = 0;
    for (std::size_t i = 0; i < count; ++i) {
      const auto& p = params_[i];
      auto& gp = g_params[i];
      auto emit = [&](const Tensor<Scalar>& ref, const Tensor<Scalar>& got) {
        if (ref.size() == 0) return;
        if (got.size() == ref.size()) {
          flat.segment(off, ref.size()) = got.data();
        } else {
          flat.segment(off, ref.size()).setZero();
        }
        off += ref.size();
      };
      emit(p.weights, gp.weights);
      emit(p.bias, gp.bias);
      emit(p.gamma, gp.gamma);
      emit(p.beta, gp.beta);
      emit(p.v, gp.v);
    }
    return flat;
  }

  std::vector<ModelNode> nodes_;
  Shape sample_shape_;
  Index classes_ = 0;
  std::vector<LayerParams<Scalar>> params_;
};

/// Builds and initializes one of the desk-scale architectures.
template <typename Scalar>
Model<Scalar> build_model(Arch arch, NormKind norm, const Shape& sample_shape, Index classes,
                          std::uint64_t seed, const ModelOptions& opts = {}) {
  Model<Scalar> model(build_layers(arch, norm, sample_shape, classes, opts), sample_shape, classes);
  model.init(seed);
  return model;
}

}  // namespace lpdt
