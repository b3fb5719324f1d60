// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synchronous multi-node training driver, its configuration file and the
// communication ledger.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lpdt/algorithms.hpp"
#include "lpdt/model.hpp"
#include "lpdt/partition.hpp"
#include "lpdt/topology.hpp"

namespace lpdt {

struct TopologyConfig {
  std::string kind = "directed_ring";  // directed_ring | torus | complete | file
  Index nodes = 8;
  Index rows = 0;  // torus only; 0 picks the most square factorization of nodes
  Index cols = 0;
  std::string file;  // adjacency list for kind = file
};

struct DataConfig {
  std::string source = "blobs";  // blobs | cifar10
  Index classes = 10;
  Index train_per_class = 100;
  Index test_per_class = 50;
  Index dim = 8;
  double separation = 3.0;
  std::uint64_t seed = 1;  // blob generation
  double skew = 0.0;
  std::string cifar_train;  // CIFAR-10 binary batch files, source = cifar10
  std::string cifar_test;
  bool augment = false;  // random horizontal flips (image inputs only)
};

struct ModelConfig {
  Arch arch = Arch::TinyMLP;
  NormKind norm = NormKind::RangeEvoNorm;
  ModelOptions options;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  Index epochs = 50;
  Index batch_size = 16;
  unsigned threads = 1;
  Index log_every = 1;  // metrics rows every this many rounds

  TopologyConfig topology;
  AlgoConfig algo;
  bool auto_avg_rate = true;  // pick the averaging rate from the compressor
  double lr_decay = 0.1;
  std::vector<Index> lr_decay_epochs;
  DataConfig data;
  ModelConfig model;

  /// Averaging rate and compressor settings after resolving "auto".
  AlgoConfig resolved_algo() const;
  /// Learning rate used during `epoch` (0-based).
  double lr_at(Index epoch) const;
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Parses the INI-style config. Unknown sections or keys are errors.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Applies "section.key=value" overrides on top of the file contents. A bare
/// key resolves to [run] first, then to the only section that has it.
ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides);
ExperimentConfig parse_config(const std::string& text, const std::vector<std::string>& overrides);
/// Writes every field; parse_config(serialize_config(c)) reproduces c.
std::string serialize_config(const ExperimentConfig& cfg);

MixingMatrix build_topology(const TopologyConfig& t);

/// Byte totals per round and node, split by payload part.
class CommLedger {
 public:
  CommLedger() = default;
  explicit CommLedger(Index nodes) : totals_(static_cast<std::size_t>(nodes)) {}

  void record(Index round, const std::vector<ByteBreakdown>& sent);

  Index nodes() const { return static_cast<Index>(totals_.size()); }
  Index rounds() const { return static_cast<Index>(rounds_.size()); }
  const ByteBreakdown& node_total(Index node) const { return totals_[static_cast<std::size_t>(node)]; }
  const std::vector<ByteBreakdown>& round(Index r) const { return rounds_[static_cast<std::size_t>(r)]; }
  Index total_bytes() const;

  /// CSV "round,node,values,indices,headers,push_weight,total".
  void write_csv(std::ostream& out) const;

 private:
  std::vector<ByteBreakdown> totals_;
  std::vector<std::vector<ByteBreakdown>> rounds_;
};

struct RoundMetrics {
  Index round = 0;
  std::vector<double> loss;  // minibatch loss per node at the start of the round
  double spread = 0.0;       // largest L-inf distance between models at the start of the round
  std::vector<Index> bytes_cum;  // cumulative bytes sent per node after the round
  double wall_seconds = 0.0;     // since the run started; not written to the CSV
};

/// Writes the header "round,node,loss,spread,bytes_cum".
void write_metrics_header(std::ostream& out);
void write_metrics_rows(const RoundMetrics& m, std::ostream& out);

struct ExperimentResult {
  Index rounds = 0;
  Index rounds_per_epoch = 0;
  std::vector<Vector<float>> models;  // reported model per node (z for push-sum)
  CommLedger ledger;
  double test_accuracy = 0.0;  // averaged model
  double final_loss = 0.0;     // mean over nodes, last round
  PartitionPlan partition;
};

struct Workload {
  Dataset train;
  Dataset test;
  Model<float> model;  // initialized prototype
};

/// Builds the datasets and initialized model described by cfg.
Workload make_workload(const ExperimentConfig& cfg);

/// Seed of the label partition used by a run with this master seed.
std::uint64_t partition_seed(std::uint64_t run_seed);

/// Largest ceil(local_size / batch) over nodes. Throws ConfigError when a
/// node has no data.
Index rounds_per_epoch(const PartitionPlan& plan, Index batch);

/// Runs the experiment. `on_metrics` receives one RoundMetrics every
/// log_every rounds. Throws ConfigError on an invalid config and
/// NumericalError when a loss becomes non-finite.
ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const std::function<void(const RoundMetrics&)>& on_metrics = {});
ExperimentResult run_experiment(const ExperimentConfig& cfg, Workload workload,
                                const std::function<void(const RoundMetrics&)>& on_metrics = {});

/// Mean of the models, then classification accuracy of the mean on `test`.
double evaluate_averaged_model(const std::vector<Vector<float>>& models, Model<float> prototype,
                               const Dataset& test, Precision mode = Precision::FP32);

/// Bytes each node sends in `rounds` rounds: message_bytes of one message
/// times the node's out-degree, per round.
std::vector<ByteBreakdown> predict_data_volume(const AlgoConfig& algo, const MixingMatrix& w,
                                               std::span<const Index> layer_sizes, Index rounds);

/// Binary dump: "LPDTMDL1", u32 node count, u32 parameter count, then each
/// node's parameters as little-endian float32.
void write_models(const std::vector<Vector<float>>& models, std::ostream& out);
std::vector<Vector<float>> read_models(std::istream& in);

}  // namespace lpdt
