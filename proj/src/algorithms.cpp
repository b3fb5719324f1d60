// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0

#include "lpdt/algorithms.hpp"

namespace lpdt {

std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::DPSGD: return "dpsgd";
    case Algorithm::DeepSqueeze: return "deep_squeeze";
    case Algorithm::ChocoSGD: return "choco";
    case Algorithm::SparsePush: return "sparse_push";
    case Algorithm::QuantSGP: return "quant_sgp";
  }
  return "?";
}

std::string_view to_string(MomentumKind m) {
  switch (m) {
    case MomentumKind::None: return "none";
    case MomentumKind::Nesterov: return "nesterov";
    case MomentumKind::QuasiGlobal: return "quasi_global";
  }
  return "?";
}

Algorithm parse_algorithm(std::string_view text) {
  for (auto a : {Algorithm::DPSGD, Algorithm::DeepSqueeze, Algorithm::ChocoSGD, Algorithm::SparsePush,
                 Algorithm::QuantSGP}) {
    if (text == to_string(a)) return a;
  }
  throw ConfigError("unknown algorithm '" + std::string(text) +
                    "' (expected dpsgd, deep_squeeze, choco, sparse_push or quant_sgp)");
}

MomentumKind parse_momentum(std::string_view text) {
  for (auto m : {MomentumKind::None, MomentumKind::Nesterov, MomentumKind::QuasiGlobal}) {
    if (text == to_string(m)) return m;
  }
  throw ConfigError("unknown momentum '" + std::string(text) + "' (expected none, nesterov or quasi_global)");
}

double default_avg_rate(const CompressorConfig& c) {
  if (c.lossless()) return 1.0;
  const double keep = c.kind == CompressorConfig::Kind::TopK ? c.fraction : 1.0;
  if (keep <= 0.01) return 0.1;
  return 0.5;
}

void AlgoConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be a non-negative number");
  if (!(avg_rate >= 0.0 && avg_rate <= 1.0)) {
    throw ConfigError("averaging rate must lie in [0, 1], got " + std::to_string(avg_rate));
  }
  if (avg_rate == 1.0 && !effective_compressor().lossless()) {
    throw ConfigError("averaging rate 1 requires uncompressed full-precision messages");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  if (compressor.kind == CompressorConfig::Kind::TopK && !(compressor.fraction > 0.0 && compressor.fraction <= 1.0)) {
    throw ConfigError("top-k fraction must lie in (0, 1]");
  }
  if (algorithm == Algorithm::DPSGD && compressor.kind != CompressorConfig::Kind::Identity) {
    throw ConfigError("D-PSGD does not compress messages; use deep_squeeze for top-k");
  }
  if (momentum_kind == MomentumKind::QuasiGlobal && lr == 0.0) {
    throw ConfigError("quasi-global momentum needs a positive learning rate");
  }
}

}  // namespace lpdt
