// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "lpdt/cost_model.hpp"
#include "lpdt/sim.hpp"
#include "svg_chart.hpp"

#ifndef LPDT_VERSION
#define LPDT_VERSION "unknown"
#endif

namespace lpdt::tools {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::ofstream open_output(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw ConfigError("cannot write " + path.string());
  return out;
}

fs::path default_run_dir(const TrainOptions& o, const ExperimentConfig& cfg) {
  const char* root = std::getenv("LPDT_OUTPUT_ROOT");
  const fs::path base = root && *root ? fs::path(root) : fs::path("runs");
  return base / (fs::path(o.config).stem().string() + "-seed" + std::to_string(cfg.seed));
}

// Runs `body`, mapping library errors onto the exit-code contract.
template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

}  // namespace

// ---------------------------------------------------------------------------

int cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = load_config(o.config, o.overrides);
    cfg.validate();

    const fs::path dir = o.out_dir.empty() ? default_run_dir(o, cfg) : fs::path(o.out_dir);
    if (fs::exists(dir / "manifest.json") && !o.force) {
      throw ConfigError("run directory " + dir.string() + " already holds a run (use --force to replace it)");
    }
    fs::create_directories(dir);
    for (const char* stale : {"completion.json", "metrics.csv", "ledger.csv", "models.bin"}) fs::remove(dir / stale);

    const std::string config_text = serialize_config(cfg);
    open_output(dir / "config.ini") << config_text;
    const json outputs = {{"config", "config.ini"},   {"metrics", "metrics.csv"},
                          {"ledger", "ledger.csv"},   {"models", "models.bin"},
                          {"completion", "completion.json"}};
    const json manifest = {{"version", LPDT_VERSION},
                           {"started_at", utc_timestamp()},
                           {"config_path", fs::absolute(o.config).string()},
                           {"overrides", o.overrides},
                           {"seed", cfg.seed},
                           {"threads", cfg.threads},
                           {"config", config_text},
                           {"run_dir", fs::absolute(dir).string()},
                           {"outputs", outputs}};
    write_json(dir / "manifest.json", manifest);

    json completion = {{"status", "failed"}};
    auto finish = [&](const std::string& status) {
      completion["status"] = status;
      completion["finished_at"] = utc_timestamp();
      write_json(dir / "completion.json", completion);
    };

    auto metrics = open_output(dir / "metrics.csv");
    write_metrics_header(metrics);
    ExperimentResult result;
    try {
      result = run_experiment(cfg, [&](const RoundMetrics& m) {
        write_metrics_rows(m, metrics);
        if (!o.quiet && m.round % 100 == 0) {
          double mean = 0.0;
          for (double l : m.loss) mean += l;
          err << "round " << m.round << ": mean loss " << mean / static_cast<double>(m.loss.size()) << ", spread "
              << m.spread << '\n';
        }
      });
    } catch (const Error& e) {
      metrics.close();
      completion["error"] = e.what();
      finish(dynamic_cast<const NumericalError*>(&e) ? "diverged" : "failed");
      throw;
    }
    metrics.close();

    auto ledger = open_output(dir / "ledger.csv");
    result.ledger.write_csv(ledger);
    auto models = open_output(dir / "models.bin", std::ios::out | std::ios::binary);
    write_models(result.models, models);

    completion["rounds"] = result.rounds;
    completion["rounds_per_epoch"] = result.rounds_per_epoch;
    completion["test_accuracy"] = result.test_accuracy;
    completion["final_loss"] = result.final_loss;
    completion["total_bytes"] = result.ledger.total_bytes();
    finish("ok");

    out << "run directory: " << dir.string() << '\n'
        << "rounds: " << result.rounds << '\n'
        << "test accuracy (averaged model): " << result.test_accuracy << '\n'
        << "bytes sent (all nodes): " << result.ledger.total_bytes() << '\n';
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------

int cmd_cost(const CostOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ArchName arch = parse_arch_name(o.arch);
    const NormKind norm = parse_norm(o.norm);
    if (o.batch < 1) throw ConfigError("--batch must be at least 1");
    std::vector<Phase> phases;
    if (o.phase == "training" || o.phase == "both") phases.push_back(Phase::Training);
    if (o.phase == "inference" || o.phase == "both") phases.push_back(Phase::Inference);
    if (phases.empty()) throw ConfigError("--phase must be training, inference or both");
    std::vector<Precision> selected;
    if (o.precision != "both") selected.push_back(parse_precision(o.precision));

    std::ofstream file;
    if (!o.out.empty()) file = open_output(o.out);
    std::ostream& dst = o.out.empty() ? out : file;

    const auto layers = arch_spec(arch, norm, o.batch);
    const EnergyModel em;
    dst << "# arch: " << to_string(arch) << ", norm: " << to_string(norm) << ", batch: " << o.batch << '\n';
    for (std::size_t i = 0; i < phases.size(); ++i) {
      if (i) dst << '\n';
      write_cost_report(layers, phases[i], em, dst);
      for (Precision p : selected) {
        std::ostringstream line;
        line << std::fixed << std::setprecision(4) << "# selected " << to_string(p) << ": energy_mj "
             << network_energy_mj(layers, phases[i], p, em) << ", memory_mib "
             << static_cast<double>(memory_bytes(layers, phases[i], p)) / (1024.0 * 1024.0) << '\n';
        dst << line.str();
      }
    }
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------

int cmd_partition_report(const PartitionOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (o.nodes < 1) throw ConfigError("--nodes must be at least 1");
    if (!(o.skew >= 0.0 && o.skew <= 1.0)) throw ConfigError("--skew must be in [0, 1]");
    Dataset data;
    if (o.source == "blobs") {
      if (o.classes < 2 || o.per_class < 1) throw ConfigError("--classes must be >= 2 and --per-class >= 1");
      data.classes = o.classes;
      for (long c = 0; c < o.classes; ++c) data.labels.insert(data.labels.end(), static_cast<std::size_t>(o.per_class), static_cast<int>(c));
    } else if (o.source == "cifar10") {
      if (o.cifar_file.empty()) throw ConfigError("--cifar-file is required for source cifar10");
      data = load_cifar10_binary(o.cifar_file);
    } else {
      throw ConfigError("--source must be blobs or cifar10");
    }

    const auto plan = partition_skewed(data.labels, o.nodes, o.skew, partition_seed(o.seed));
    const auto hist = class_histogram(plan, data.labels, data.classes);

    std::ofstream file;
    if (!o.out.empty()) file = open_output(o.out);
    std::ostream& dst = o.out.empty() ? out : file;
    dst << "# nodes: " << o.nodes << ", skew: " << o.skew << ", seed: " << o.seed << ", samples: " << data.size()
        << '\n';
    dst << "node";
    for (Index c = 0; c < data.classes; ++c) dst << ",class_" << c;
    dst << ",total\n";
    for (std::size_t i = 0; i < hist.size(); ++i) {
      Index total = 0;
      dst << i;
      for (Index v : hist[i]) {
        dst << ',' << v;
        total += v;
      }
      dst << ',' << total << '\n';
    }

    // Share of each class that landed on its dominant node.
    std::vector<Index> class_total(static_cast<std::size_t>(data.classes), 0);
    for (int y : data.labels) ++class_total[static_cast<std::size_t>(y)];
    double share_sum = 0.0;
    Index counted = 0;
    for (Index c = 0; c < data.classes; ++c) {
      const Index total = class_total[static_cast<std::size_t>(c)];
      if (total == 0) continue;
      const Index on_dominant =
          hist[static_cast<std::size_t>(dominant_node(static_cast<int>(c), o.nodes))][static_cast<std::size_t>(c)];
      share_sum += static_cast<double>(on_dominant) / static_cast<double>(total);
      ++counted;
    }
    dst << std::fixed << std::setprecision(4) << "# mean dominant share: "
        << (counted ? share_sum / static_cast<double>(counted) : 0.0) << " (expected "
        << o.skew + (1.0 - o.skew) / static_cast<double>(o.nodes) << ")\n";

    if (!o.svg.empty()) {
      std::vector<std::string> bars, segments;
      std::vector<std::vector<double>> counts;
      for (std::size_t i = 0; i < hist.size(); ++i) {
        bars.push_back(std::to_string(i));
        counts.emplace_back(hist[i].begin(), hist[i].end());
      }
      for (Index c = 0; c < data.classes; ++c) segments.push_back("class " + std::to_string(c));
      auto svg = open_output(o.svg);
      std::ostringstream title;
      title << "class histogram per node (skew " << o.skew << ")";
      write_stacked_bars(title.str(), bars, segments, counts, svg);
    }
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------

namespace {

struct MetricsSeries {
  std::vector<double> round, mean_loss, spread;
};

MetricsSeries read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path + " is empty");
  if (line != "round,node,loss,spread,bytes_cum") throw FormatError(path + ": unexpected header '" + line + "'");

  // Rows of one round are contiguous; average the loss over its nodes.
  std::map<long long, std::pair<double, int>> loss;
  std::map<long long, double> spread;
  Index row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell[5];
    for (auto& c : cell) std::getline(ss, c, ',');
    try {
      const long long r = std::stoll(cell[0]);
      auto& [sum, count] = loss[r];
      sum += std::stod(cell[2]);
      ++count;
      spread[r] = std::stod(cell[3]);
    } catch (const std::exception&) {
      throw FormatError(path + ": malformed row " + std::to_string(row));
    }
  }
  if (loss.empty()) throw ConfigError(path + " has no data rows");
  MetricsSeries s;
  for (const auto& [r, v] : loss) {
    s.round.push_back(static_cast<double>(r));
    s.mean_loss.push_back(v.first / v.second);
    s.spread.push_back(spread[r]);
  }
  return s;
}

std::string default_label(const std::string& path) {
  const fs::path p(path);
  if (p.stem() == "metrics" && p.has_parent_path() && !p.parent_path().filename().empty()) {
    return p.parent_path().filename().string();
  }
  return p.stem().string();
}

}  // namespace

int cmd_plot(const PlotOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (o.inputs.empty()) throw ConfigError("plot needs at least one metrics CSV");
    if (!o.labels.empty() && o.labels.size() != o.inputs.size()) {
      throw ConfigError("--label must be given once per input or not at all");
    }
    Panel loss{"mean training loss", "round", "loss", {}};
    Panel spread{"model spread (max pairwise L-inf distance)", "round", "spread", {}};
    for (std::size_t i = 0; i < o.inputs.size(); ++i) {
      const auto m = read_metrics(o.inputs[i]);
      const std::string label = o.labels.empty() ? default_label(o.inputs[i]) : o.labels[i];
      loss.series.push_back({label, m.round, m.mean_loss});
      spread.series.push_back({label, m.round, m.spread});
    }
    auto svg = open_output(o.out);
    write_line_chart({loss, spread}, svg);
    out << "wrote " << o.out << '\n';
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------

int cmd_validate_config(const ValidateOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = load_config(o.config, o.overrides);
    cfg.validate();
    build_topology(cfg.topology);
    out << serialize_config(cfg);
    err << "config ok\n";
    return kExitOk;
  });
}

}  // namespace lpdt::tools
