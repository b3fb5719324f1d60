// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>

#include <iostream>

#include "commands.hpp"

using namespace lpdt::tools;

int main(int argc, char** argv) {
  CLI::App app{"Low-precision decentralized training simulator"};
  app.require_subcommand(1);
  app.set_version_flag("--version", LPDT_VERSION);

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Run an experiment from a config file");
  train_cmd->add_option("config", train.config, "Config file (INI)")->required();
  train_cmd->add_option("-o,--override", train.overrides, "section.key=value, repeatable");
  train_cmd->add_option("--out", train.out_dir, "Run directory (default: $LPDT_OUTPUT_ROOT/<config>-seed<seed>)");
  train_cmd->add_flag("--force", train.force, "Replace an existing run in the directory");
  train_cmd->add_flag("-q,--quiet", train.quiet, "No progress lines");

  CostOptions cost;
  auto* cost_cmd = app.add_subcommand("cost", "Op-count, energy and memory report for an architecture");
  cost_cmd->add_option("arch", cost.arch, "resnet20 | resnet54 | vgg11 | resnet18 | tinymlp | minicnn")->required();
  cost_cmd->add_option("--batch", cost.batch, "Batch size")->capture_default_str();
  cost_cmd->add_option("--norm", cost.norm, "range_bn | evonorm_s0 | range_evonorm")->capture_default_str();
  cost_cmd->add_option("--phase", cost.phase, "training | inference | both")->capture_default_str();
  cost_cmd->add_option("--precision", cost.precision, "fp32 | int8 | both")->capture_default_str();
  cost_cmd->add_option("--out", cost.out, "Write the report here instead of stdout");

  PartitionOptions part;
  auto* part_cmd = app.add_subcommand("partition-report", "Per-node class histograms of a skewed split");
  part_cmd->add_option("--source", part.source, "blobs | cifar10")->capture_default_str();
  part_cmd->add_option("--cifar-file", part.cifar_file, "CIFAR-10 binary batch (source cifar10)");
  part_cmd->add_option("--classes", part.classes, "Classes (blobs)")->capture_default_str();
  part_cmd->add_option("--per-class", part.per_class, "Samples per class (blobs)")->capture_default_str();
  part_cmd->add_option("--nodes", part.nodes, "Number of nodes")->capture_default_str();
  part_cmd->add_option("--skew", part.skew, "Degree of skew in [0, 1]")->capture_default_str();
  part_cmd->add_option("--seed", part.seed, "Run seed")->capture_default_str();
  part_cmd->add_option("--out", part.out, "CSV output (default stdout)");
  part_cmd->add_option("--svg", part.svg, "Also draw a stacked bar chart");

  PlotOptions plot;
  auto* plot_cmd = app.add_subcommand("plot", "Draw loss and spread curves from metrics CSVs");
  plot_cmd->add_option("inputs", plot.inputs, "metrics.csv files")->required();
  plot_cmd->add_option("--label", plot.labels, "Series label per input, in order");
  plot_cmd->add_option("--out", plot.out, "SVG output")->capture_default_str();

  ValidateOptions validate;
  auto* validate_cmd = app.add_subcommand("validate-config", "Check a config and print it fully resolved");
  validate_cmd->add_option("config", validate.config, "Config file (INI)")->required();
  validate_cmd->add_option("-o,--override", validate.overrides, "section.key=value, repeatable");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (*train_cmd) return cmd_train(train, std::cout, std::cerr);
  if (*cost_cmd) return cmd_cost(cost, std::cout, std::cerr);
  if (*part_cmd) return cmd_partition_report(part, std::cout, std::cerr);
  if (*plot_cmd) return cmd_plot(plot, std::cout, std::cerr);
  if (*validate_cmd) return cmd_validate_config(validate, std::cout, std::cerr);
  return kExitUsage;
}
