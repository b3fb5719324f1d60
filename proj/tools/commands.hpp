// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0
//
// Subcommands of the lpdt command-line tool. Each returns the process exit
// code: 0 success, 2 usage or configuration error, 3 numerical failure.

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lpdt::tools {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;

struct TrainOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::string out_dir;  // empty: $LPDT_OUTPUT_ROOT (or ./runs) / <config stem>-seed<seed>
  bool force = false;   // reuse an existing run directory
  bool quiet = false;
};

struct CostOptions {
  std::string arch;
  long batch = 32;
  std::string norm = "range_evonorm";
  std::string phase = "both";      // training | inference | both
  std::string precision = "both";  // fp32 | int8 | both
  std::string out;                 // empty: stdout
};

struct PartitionOptions {
  std::string source = "blobs";  // blobs | cifar10
  std::string cifar_file;
  long classes = 10;
  long per_class = 100;
  long nodes = 8;
  double skew = 0.0;
  unsigned long long seed = 1;  // run seed; the partition seed is derived from it as in training
  std::string out;              // CSV; empty: stdout
  std::string svg;              // optional stacked-bar chart
};

struct PlotOptions {
  std::vector<std::string> inputs;
  std::vector<std::string> labels;  // defaults to the run directory or file name
  std::string out = "plot.svg";
};

struct ValidateOptions {
  std::string config;
  std::vector<std::string> overrides;
};

int cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& err);
int cmd_cost(const CostOptions& o, std::ostream& out, std::ostream& err);
int cmd_partition_report(const PartitionOptions& o, std::ostream& out, std::ostream& err);
int cmd_plot(const PlotOptions& o, std::ostream& out, std::ostream& err);
int cmd_validate_config(const ValidateOptions& o, std::ostream& out, std::ostream& err);

}  // namespace lpdt::tools
