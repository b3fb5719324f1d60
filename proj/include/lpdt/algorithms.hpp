// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synchronous round functions for decentralized training. Every round runs
// in phases separated by barriers: a node-local phase (local step and
// compression), then a gossip phase that only reads what other nodes
// published. Gossip uses the difference form
//   x_i <- x~_i + eta * sum_j (W_ij - I_ij) * m_j
// summed over j = i and the in-neighbours of i in ascending order.

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "lpdt/compression.hpp"
#include "lpdt/error.hpp"
#include "lpdt/executor.hpp"
#include "lpdt/layer_spec.hpp"
#include "lpdt/tensor.hpp"
#include "lpdt/topology.hpp"

namespace lpdt {

enum class Algorithm { DPSGD, DeepSqueeze, ChocoSGD, SparsePush, QuantSGP };
enum class MomentumKind { None, Nesterov, QuasiGlobal };

std::string_view to_string(Algorithm a);
std::string_view to_string(MomentumKind m);
Algorithm parse_algorithm(std::string_view text);
MomentumKind parse_momentum(std::string_view text);

/// Push-sum variants carry a bias weight and evaluate gradients at z = x/u.
inline bool uses_push_sum(Algorithm a) { return a == Algorithm::SparsePush || a == Algorithm::QuantSGP; }
/// Variants that keep public proxies x^ of every model.
inline bool uses_proxy(Algorithm a) { return a == Algorithm::ChocoSGD || a == Algorithm::QuantSGP; }

/// Averaging rate used when the configuration does not set one.
double default_avg_rate(const CompressorConfig& c);

struct AlgoConfig {
  Algorithm algorithm = Algorithm::DPSGD;
  double lr = 0.1;
  double avg_rate = 1.0;
  MomentumKind momentum_kind = MomentumKind::None;
  double momentum = 0.9;
  double weight_decay = 0.0;
  Precision precision = Precision::FP32;
  CompressorConfig compressor;

  /// Messages are additionally 8-bit when training in INT8.
  CompressorConfig effective_compressor() const {
    CompressorConfig c = compressor;
    c.quantize = c.quantize || precision == Precision::INT8;
    return c;
  }

  /// Throws ConfigError on out-of-range values or eta = 1 with a lossy compressor.
  void validate() const;
};

template <typename Scalar>
struct NodeState {
  Vector<Scalar> x;
  Vector<Scalar> proxy;  // x^_i; identical at every holder, so one copy per node
  Vector<Scalar> z;      // de-biased model (push-sum only)
  Vector<Scalar> momentum;
  ErrorFeedbackState<Scalar> error;
  double push_weight = 1.0;
  Index rounds = 0;

  /// Point where gradients are evaluated and the model that is reported.
  const Vector<Scalar>& model(Algorithm a) const { return uses_push_sum(a) ? z : x; }
};

/// n nodes that all start from the same parameters x0.
template <typename Scalar>
std::vector<NodeState<Scalar>> init_states(const Vector<Scalar>& x0, Index n, const AlgoConfig& cfg) {
  if (n < 1) throw ConfigError("need at least one node");
  NodeState<Scalar> s;
  s.x = x0;
  s.momentum = Vector<Scalar>::Zero(x0.size());
  s.error = ErrorFeedbackState<Scalar>(x0.size());
  if (uses_proxy(cfg.algorithm)) s.proxy = Vector<Scalar>::Zero(x0.size());
  if (uses_push_sum(cfg.algorithm)) s.z = x0;
  return std::vector<NodeState<Scalar>>(static_cast<std::size_t>(n), s);
}

/// Per-round communication summary.
struct RoundReport {
  std::vector<ByteBreakdown> sent;   // bytes each node sent this round
  std::vector<double> message_norm;  // L2 norm of each decompressed message
};

/// x~ = x - lr * d, where d is the gradient (plus weight decay) adjusted by
/// the configured momentum. Nesterov updates the buffer here; quasi-global
/// momentum only reads it.
template <typename Scalar>
Vector<Scalar> local_sgd_update(NodeState<Scalar>& state, const std::type_identity_t<Vector<Scalar>>& grad,
                                const AlgoConfig& cfg) {
  if (grad.size() != state.x.size()) {
    throw ShapeError("gradient has " + std::to_string(grad.size()) + " entries, model has " +
                     std::to_string(state.x.size()));
  }
  const auto lr = static_cast<Scalar>(cfg.lr);
  const auto beta = static_cast<Scalar>(cfg.momentum);
  Vector<Scalar> g = grad;
  if (cfg.weight_decay != 0.0) g += static_cast<Scalar>(cfg.weight_decay) * state.model(cfg.algorithm);
  switch (cfg.momentum_kind) {
    case MomentumKind::None: return state.x - lr * g;
    case MomentumKind::Nesterov:
      state.momentum = beta * state.momentum + g;
      return state.x - lr * (g + beta * state.momentum);
    case MomentumKind::QuasiGlobal: return state.x - lr * (g + beta * state.momentum);
  }
  return state.x;
}

/// m <- beta * m + (1 - beta) * (x_before - x_after) / lr, from the
/// displacement of the model across a whole round (local step plus gossip).
/// Under a constant gradient g the buffer settles at g / (1 - beta).
template <typename Scalar>
const Vector<Scalar>& qg_momentum_update(NodeState<Scalar>& state,
                                         const std::type_identity_t<Vector<Scalar>>& x_before,
                                         const std::type_identity_t<Vector<Scalar>>& x_after, const AlgoConfig& cfg) {
  const auto beta = static_cast<Scalar>(cfg.momentum);
  state.momentum = beta * state.momentum + (Scalar(1) - beta) * (x_before - x_after) / static_cast<Scalar>(cfg.lr);
  return state.momentum;
}

namespace detail {

template <typename Scalar>
void check_round(const std::vector<NodeState<Scalar>>& states, const MixingMatrix& w,
                 const std::vector<Vector<Scalar>>& grads, bool needs_proxy) {
  const auto n = static_cast<Index>(states.size());
  if (w.n != n) {
    throw ShapeError("mixing matrix has " + std::to_string(w.n) + " nodes, round has " + std::to_string(n));
  }
  if (static_cast<Index>(grads.size()) != n) throw ShapeError("one gradient per node required");
  for (const auto& s : states) {
    if (s.x.size() != states.front().x.size()) throw ShapeError("node models differ in size");
    if (needs_proxy && s.proxy.size() != s.x.size()) throw ShapeError("node is missing its proxy buffer");
  }
}

/// sum_j (W_ij - I_ij) * value(j) over j = i and the in-neighbours of i.
template <typename Coef, typename Out, typename Fn>
Out gossip_sum(const MixingMatrix& w, Index i, Out acc, Fn value) {
  acc += static_cast<Coef>(w.w(i, i) - 1.0) * value(i);
  for (Index j : w.in_neighbors(i)) acc += static_cast<Coef>(w.w(i, j)) * value(j);
  return acc;
}

inline ByteBreakdown times(ByteBreakdown b, Index copies) {
  b.values *= copies;
  b.indices *= copies;
  b.headers *= copies;
  b.push_weight *= copies;
  return b;
}

template <typename Scalar>
void finish_node(NodeState<Scalar>& s, const Vector<Scalar>& before, const AlgoConfig& cfg) {
  if (uses_push_sum(cfg.algorithm)) {
    if (!(s.push_weight > 0.0) || !std::isfinite(s.push_weight)) {
      throw NumericalError("push-sum weight became " + std::to_string(s.push_weight));
    }
    s.z = s.x / static_cast<Scalar>(s.push_weight);
  }
  if (cfg.momentum_kind == MomentumKind::QuasiGlobal) qg_momentum_update(s, before, s.model(cfg.algorithm), cfg);
  ++s.rounds;
}

/// Deep-Squeeze family: error-compensated messages C[x~ + delta]; with
/// push_sum the bias weight travels with them.
template <typename Scalar>
RoundReport error_feedback_round(std::vector<NodeState<Scalar>>& states, const MixingMatrix& w,
                                 const std::vector<Vector<Scalar>>& grads, const AlgoConfig& cfg,
                                 std::span<const Index> layer_sizes, const Executor& exec, bool push_sum) {
  check_round(states, w, grads, false);
  const auto n = static_cast<Index>(states.size());
  const CompressorConfig comp = cfg.effective_compressor();
  std::vector<Vector<Scalar>> local(states.size()), sent(states.size()), before(states.size());
  RoundReport report{std::vector<ByteBreakdown>(states.size()), std::vector<double>(states.size())};

  exec.run(n, [&](Index i) {
    const auto k = static_cast<std::size_t>(i);
    auto& s = states[k];
    before[k] = s.model(cfg.algorithm);
    local[k] = local_sgd_update(s, grads[k], cfg);
    auto msg = ef_compress(local[k], s.error, layer_sizes, comp);
    msg.has_push_weight = push_sum;
    report.sent[k] = times(byte_breakdown(msg), w.out_degree(i));
    sent[k] = decompress(msg);
    report.message_norm[k] = static_cast<double>(sent[k].norm());
  });

  const auto eta = static_cast<Scalar>(cfg.avg_rate);
  std::vector<double> u(states.size());
  for (std::size_t k = 0; k < states.size(); ++k) u[k] = states[k].push_weight;
  exec.run(n, [&](Index i) {
    const auto k = static_cast<std::size_t>(i);
    auto& s = states[k];
    const Vector<Scalar> zero = Vector<Scalar>::Zero(s.x.size());
    const Vector<Scalar> mix = gossip_sum<Scalar>(w, i, zero, [&](Index j) -> const Vector<Scalar>& {
      return sent[static_cast<std::size_t>(j)];
    });
    s.x = local[k] + eta * mix;
    if (push_sum) {
      s.push_weight = u[k] + cfg.avg_rate * gossip_sum<double>(w, i, 0.0, [&](Index j) { return u[static_cast<std::size_t>(j)]; });
    }
    finish_node(s, before[k], cfg);
  });
  return report;
}

/// CHOCO family: messages q = C[x~ - x^] move the public proxies; gossip
/// mixes proxy differences.
template <typename Scalar>
RoundReport proxy_round(std::vector<NodeState<Scalar>>& states, const MixingMatrix& w,
                        const std::vector<Vector<Scalar>>& grads, const AlgoConfig& cfg,
                        std::span<const Index> layer_sizes, const Executor& exec, bool push_sum) {
  check_round(states, w, grads, true);
  const auto n = static_cast<Index>(states.size());
  const CompressorConfig comp = cfg.effective_compressor();
  std::vector<Vector<Scalar>> local(states.size()), before(states.size());
  RoundReport report{std::vector<ByteBreakdown>(states.size()), std::vector<double>(states.size())};

  exec.run(n, [&](Index i) {
    const auto k = static_cast<std::size_t>(i);
    auto& s = states[k];
    before[k] = s.model(cfg.algorithm);
    local[k] = local_sgd_update(s, grads[k], cfg);
    auto msg = compress(Vector<Scalar>(local[k] - s.proxy), layer_sizes, comp);
    msg.has_push_weight = push_sum;
    report.sent[k] = times(byte_breakdown(msg), w.out_degree(i));
    const Vector<Scalar> q = decompress(msg);
    report.message_norm[k] = static_cast<double>(q.norm());
    s.proxy += q;
  });

  const auto eta = static_cast<Scalar>(cfg.avg_rate);
  std::vector<double> u(states.size());
  for (std::size_t k = 0; k < states.size(); ++k) u[k] = states[k].push_weight;
  exec.run(n, [&](Index i) {
    const auto k = static_cast<std::size_t>(i);
    auto& s = states[k];
    const Vector<Scalar> zero = Vector<Scalar>::Zero(s.x.size());
    const Vector<Scalar> mix = gossip_sum<Scalar>(w, i, zero, [&](Index j) {
      return states[static_cast<std::size_t>(j)].proxy - s.proxy;
    });
    s.x = local[k] + eta * mix;
    if (push_sum) {
      s.push_weight = u[k] + cfg.avg_rate * gossip_sum<double>(w, i, 0.0, [&](Index j) { return u[static_cast<std::size_t>(j)]; });
    }
  });
  // Proxies are read by neighbours above, so per-node bookkeeping waits for the barrier.
  exec.run(n, [&](Index i) {
    const auto k = static_cast<std::size_t>(i);
    finish_node(states[k], before[k], cfg);
  });
  return report;
}

}  // namespace detail

template <typename Scalar>
RoundReport deep_squeeze_round(std::vector<NodeState<Scalar>>& states, const MixingMatrix& w,
                               const std::vector<Vector<Scalar>>& grads, const AlgoConfig& cfg,
                               std::span<const Index> layer_sizes, const Executor& exec = Executor{}) {
  return detail::error_feedback_round(states, w, grads, cfg, layer_sizes, exec, false);
}

/// Deep-Squeeze without compression. Throws ConfigError for a top-k compressor.
template <typename Scalar>
RoundReport dpsgd_round(std::vector<NodeState<Scalar>>& states, const MixingMatrix& w,
                        const std::vector<Vector<Scalar>>& grads, const AlgoConfig& cfg,
                        std::span<const Index> layer_sizes, const Executor& exec = Executor{}) {
  if (cfg.compressor.kind != CompressorConfig::Kind::Identity) {
    throw ConfigError("D-PSGD does not compress messages; use Deep-Squeeze for top-k");
  }
  return detail::error_feedback_round(states, w, grads, cfg, layer_sizes, exec, false);
}

template <typename Scalar>
RoundReport choco_round(std::vector<NodeState<Scalar>>& states, const MixingMatrix& w,
                        const std::vector<Vector<Scalar>>& grads, const AlgoConfig& cfg,
                        std::span<const Index> layer_sizes, const Executor& exec = Executor{}) {
  return detail::proxy_round(states, w, grads, cfg, layer_sizes, exec, false);
}

template <typename Scalar>
RoundReport sparse_push_round(std::vector<NodeState<Scalar>>& states, const MixingMatrix& w,
                              const std::vector<Vector<Scalar>>& grads, const AlgoConfig& cfg,
                              std::span<const Index> layer_sizes, const Executor& exec = Executor{}) {
  return detail::error_feedback_round(states, w, grads, cfg, layer_sizes, exec, true);
}

template <typename Scalar>
RoundReport quant_sgp_round(std::vector<NodeState<Scalar>>& states, const MixingMatrix& w,
                            const std::vector<Vector<Scalar>>& grads, const AlgoConfig& cfg,
                            std::span<const Index> layer_sizes, const Executor& exec = Executor{}) {
  return detail::proxy_round(states, w, grads, cfg, layer_sizes, exec, true);
}

/// Dispatches on cfg.algorithm.
template <typename Scalar>
RoundReport run_round(std::vector<NodeState<Scalar>>& states, const MixingMatrix& w,
                      const std::vector<Vector<Scalar>>& grads, const AlgoConfig& cfg,
                      std::span<const Index> layer_sizes, const Executor& exec = Executor{}) {
  switch (cfg.algorithm) {
    case Algorithm::DPSGD: return dpsgd_round(states, w, grads, cfg, layer_sizes, exec);
    case Algorithm::DeepSqueeze: return deep_squeeze_round(states, w, grads, cfg, layer_sizes, exec);
    case Algorithm::ChocoSGD: return choco_round(states, w, grads, cfg, layer_sizes, exec);
    case Algorithm::SparsePush: return sparse_push_round(states, w, grads, cfg, layer_sizes, exec);
    case Algorithm::QuantSGP: return quant_sgp_round(states, w, grads, cfg, layer_sizes, exec);
  }
  throw ConfigError("unknown algorithm");
}

/// Largest L-infinity distance between any two node models.
template <typename Scalar>
double model_spread(const std::vector<NodeState<Scalar>>& states, Algorithm a) {
  double spread = 0.0;
  for (std::size_t i = 0; i < states.size(); ++i)
    for (std::size_t j = i + 1; j < states.size(); ++j)
      spread = std::max(spread, static_cast<double>((states[i].model(a) - states[j].model(a)).cwiseAbs().maxCoeff()));
  return spread;
}

}  // namespace lpdt
