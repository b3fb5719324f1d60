// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0

#include "lpdt/topology.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "lpdt/error.hpp"

namespace lpdt {

std::string_view to_string(TopologyKind kind) {
  switch (kind) {
    case TopologyKind::DirectedRing: return "directed_ring";
    case TopologyKind::UndirectedTorus: return "torus";
    case TopologyKind::Complete: return "complete";
    case TopologyKind::Custom: return "custom";
  }
  return "unknown";
}

std::vector<Index> MixingMatrix::in_neighbors(Index i) const {
  std::vector<Index> out;
  for (Index j = 0; j < n; ++j)
    if (j != i && w(i, j) > 0.0) out.push_back(j);
  return out;
}

std::vector<Index> MixingMatrix::out_neighbors(Index j) const {
  std::vector<Index> out;
  for (Index i = 0; i < n; ++i)
    if (i != j && w(i, j) > 0.0) out.push_back(i);
  return out;
}

MixingMatrix build_directed_ring(Index n) {
  if (n < 2) throw ConfigError("directed ring needs n >= 2, got " + std::to_string(n));
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    w(i, i) += 0.5;
    w((i + 1) % n, i) += 0.5;
  }
  return MixingMatrix{n, std::move(w), TopologyKind::DirectedRing};
}

MixingMatrix build_undirected_torus(Index rows, Index cols) {
  if (rows < 2 || cols < 2) {
    throw ConfigError("torus needs rows, cols >= 2, got " + std::to_string(rows) + "x" +
                      std::to_string(cols));
  }
  const Index n = rows * cols;
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  auto id = [cols](Index r, Index c) { return r * cols + c; };
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      const Index j = id(r, c);
      // On a 2-wide dimension both neighbors coincide and their weights add up.
      const Index targets[] = {j, id((r + 1) % rows, c), id((r + rows - 1) % rows, c),
                               id(r, (c + 1) % cols), id(r, (c + cols - 1) % cols)};
      for (Index i : targets) w(i, j) += 0.2;
    }
  }
  return MixingMatrix{n, std::move(w), TopologyKind::UndirectedTorus};
}

MixingMatrix build_complete(Index n) {
  if (n < 1) throw ConfigError("complete graph needs n >= 1");
  return MixingMatrix{n, Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n)),
                      TopologyKind::Complete};
}

MixingMatrix from_weights(Eigen::MatrixXd w, TopologyKind kind) {
  if (w.rows() != w.cols() || w.rows() == 0) {
    throw ShapeError("mixing matrix must be square and non-empty");
  }
  const Index n = w.rows();
  return MixingMatrix{n, std::move(w), kind};
}

bool strongly_connected(const Eigen::MatrixXd& w) {
  const Index n = w.rows();
  auto reach_all = [&](bool transpose) {
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    std::vector<Index> stack{0};
    seen[0] = 1;
    while (!stack.empty()) {
      const Index u = stack.back();
      stack.pop_back();
      for (Index v = 0; v < n; ++v) {
        const double weight = transpose ? w(u, v) : w(v, u);
        if (weight > 0.0 && !seen[static_cast<std::size_t>(v)]) {
          seen[static_cast<std::size_t>(v)] = 1;
          stack.push_back(v);
        }
      }
    }
    return std::all_of(seen.begin(), seen.end(), [](char s) { return s != 0; });
  };
  return n > 0 && reach_all(false) && reach_all(true);
}

ValidationReport validate(const MixingMatrix& m) {
  ValidationReport report;
  const auto& w = m.w;
  if (w.rows() != m.n || w.cols() != m.n) {
    report.violations.push_back("matrix is not " + std::to_string(m.n) + "x" + std::to_string(m.n));
    return report;
  }
  if (!w.allFinite()) {
    report.violations.push_back("non-finite entries");
    return report;
  }
  if (w.minCoeff() < 0.0 || w.maxCoeff() > 1.0) {
    report.violations.push_back("entries outside [0, 1]");
  }
  for (Index j = 0; j < m.n; ++j) {
    const double s = w.col(j).sum();
    if (std::abs(s - 1.0) > kStochasticTol) {
      std::ostringstream os;
      os.precision(17);
      os << "column " << j << " sums to " << s << ", not 1";
      report.violations.push_back(os.str());
    }
  }
  for (Index i = 0; i < m.n; ++i) {
    if (!(w(i, i) > 0.0)) report.violations.push_back("node " + std::to_string(i) + " has no self-loop");
  }
  if (!strongly_connected(w)) report.violations.push_back("graph is not strongly connected");

  if ((w - w.transpose()).cwiseAbs().maxCoeff() > kStochasticTol) {
    report.notes.push_back("matrix is not symmetric");
  }
  for (Index i = 0; i < m.n; ++i) {
    if (std::abs(w.row(i).sum() - 1.0) > kStochasticTol) {
      report.notes.push_back("matrix is not row stochastic");
      break;
    }
  }
  return report;
}

double spectral_gap(const MixingMatrix& m) {
  if (m.n == 1) return 1.0;
  Eigen::EigenSolver<Eigen::MatrixXd> solver(m.w, /*computeEigenvectors=*/false);
  if (solver.info() != Eigen::Success) throw NumericalError("eigenvalue computation did not converge");
  std::vector<double> mags;
  mags.reserve(static_cast<std::size_t>(m.n));
  for (Index i = 0; i < m.n; ++i) mags.push_back(std::abs(solver.eigenvalues()[i]));
  std::sort(mags.begin(), mags.end(), std::greater<>());
  return 1.0 - mags[1];
}

MixingMatrix parse_adjacency(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::map<std::pair<Index, Index>, double> edges;
  Index n = 0;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    long long src = 0, dst = 0;
    double weight = 0.0;
    if (!(fields >> src)) continue;  // blank or comment-only line
    std::string extra;
    if (!(fields >> dst >> weight) || (fields >> extra)) {
      throw FormatError("adjacency line " + std::to_string(line_no) +
                        ": expected 'src dst weight'");
    }
    if (src < 0 || dst < 0) {
      throw FormatError("adjacency line " + std::to_string(line_no) + ": negative node index");
    }
    if (!edges.emplace(std::make_pair(static_cast<Index>(src), static_cast<Index>(dst)), weight).second) {
      throw FormatError("adjacency line " + std::to_string(line_no) + ": duplicate edge");
    }
    n = std::max<Index>(n, std::max<Index>(src, dst) + 1);
  }
  if (n == 0) throw FormatError("adjacency file has no edges");
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (const auto& [edge, weight] : edges) w(edge.second, edge.first) = weight;
  auto m = from_weights(std::move(w));
  const auto report = validate(m);
  if (!report.ok()) throw ConfigError("adjacency file: " + report.violations.front());
  return m;
}

MixingMatrix load_adjacency(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open adjacency file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_adjacency(buf.str());
}

MixingSchedule::MixingSchedule(std::vector<MixingMatrix> seq) : seq_(std::move(seq)) {
  if (seq_.empty()) throw ConfigError("mixing schedule needs at least one matrix");
  for (const auto& m : seq_) {
    if (m.n != seq_.front().n) throw ConfigError("mixing schedule mixes node counts");
  }
}

}  // namespace lpdt
