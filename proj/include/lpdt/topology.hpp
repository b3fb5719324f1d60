// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0
//
// Communication graphs and their mixing matrices. Entry w(i, j) is the weight
// node i applies to the message it receives from node j, so column j holds
// node j's outgoing weights and must sum to one.

#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lpdt/tensor.hpp"

namespace lpdt {

enum class TopologyKind { DirectedRing, UndirectedTorus, Complete, Custom };

std::string_view to_string(TopologyKind kind);

struct MixingMatrix {
  Index n = 0;
  Eigen::MatrixXd w;
  TopologyKind kind = TopologyKind::Custom;

  /// Nodes j != i with w(i, j) > 0, ascending.
  std::vector<Index> in_neighbors(Index i) const;
  /// Nodes i != j with w(i, j) > 0, ascending.
  std::vector<Index> out_neighbors(Index j) const;
  Index out_degree(Index j) const { return static_cast<Index>(out_neighbors(j).size()); }
};

/// Column-stochastic tolerance used by every check.
inline constexpr double kStochasticTol = 1e-12;

MixingMatrix build_directed_ring(Index n);
MixingMatrix build_undirected_torus(Index rows, Index cols);
MixingMatrix build_complete(Index n);
MixingMatrix from_weights(Eigen::MatrixXd w, TopologyKind kind = TopologyKind::Custom);

struct ValidationReport {
  std::vector<std::string> violations;  // invariant failures
  std::vector<std::string> notes;       // informational (symmetry, row sums)
  bool ok() const { return violations.empty(); }
};

/// Checks entries in [0,1], column sums, positive diagonal and strong
/// connectivity. Symmetry and row-stochasticity are reported as notes.
ValidationReport validate(const MixingMatrix& m);

bool strongly_connected(const Eigen::MatrixXd& w);

/// 1 - |lambda_2| with eigenvalues sorted by magnitude.
double spectral_gap(const MixingMatrix& m);

/// Reads "src dst weight" lines ('#' starts a comment). Node count is the
/// largest index + 1. Throws FormatError on malformed lines and ConfigError
/// when the result fails validation.
MixingMatrix load_adjacency(const std::filesystem::path& path);
MixingMatrix parse_adjacency(std::string_view text);

/// Mixing matrix per round; a single entry gives a static graph and longer
/// sequences are cycled.
class MixingSchedule {
 public:
  MixingSchedule() = default;
  explicit MixingSchedule(MixingMatrix m) : seq_{std::move(m)} {}
  explicit MixingSchedule(std::vector<MixingMatrix> seq);

  const MixingMatrix& at(std::size_t round) const { return seq_[round % seq_.size()]; }
  std::size_t period() const { return seq_.size(); }
  Index n() const { return seq_.empty() ? 0 : seq_.front().n; }
  bool empty() const { return seq_.empty(); }

 private:
  std::vector<MixingMatrix> seq_;
};

}  // namespace lpdt
