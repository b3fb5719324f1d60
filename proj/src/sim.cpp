// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0

#include "lpdt/sim.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <istream>
#include <ostream>
#include <sstream>

#include "lpdt/executor.hpp"

namespace lpdt {

namespace {

namespace pt = boost::property_tree;

// ---------------------------------------------------------------------------
// Value parsing and formatting

template <typename T>
T parse_number(const std::string& field, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end || text.empty()) {
    throw ConfigError(field + ": expected a number, got '" + text + "'");
  }
  return value;
}

bool parse_bool(const std::string& field, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError(field + ": expected true or false, got '" + text + "'");
}

std::vector<Index> parse_index_list(const std::string& field, const std::string& text) {
  std::vector<Index> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    out.push_back(parse_number<Index>(field, item));
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

template <typename T>
std::string format_int(T v) {
  return std::to_string(v);
}

std::string join(const std::vector<Index>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

// Enum parsers throw library errors without the field name; add it.
template <typename F>
auto with_field(const std::string& field, const std::string& text, F&& parse) {
  try {
    return parse(text);
  } catch (const Error& e) {
    throw ConfigError(field + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Schema: one entry per (section, key)

struct Field {
  const char* section;
  const char* key;
  std::function<void(ExperimentConfig&, const std::string& name, const std::string& text)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define LPDT_INT_FIELD(sec, k, member, type)                                                       \
  Field {                                                                                          \
    sec, k, [](ExperimentConfig& c, const std::string& f, const std::string& t) {                  \
      c.member = parse_number<type>(f, t);                                                         \
    },                                                                                             \
        [](const ExperimentConfig& c) { return format_int(c.member); }                             \
  }
#define LPDT_DOUBLE_FIELD(sec, k, member)                                                          \
  Field {                                                                                          \
    sec, k, [](ExperimentConfig& c, const std::string& f, const std::string& t) {                  \
      c.member = parse_number<double>(f, t);                                                       \
    },                                                                                             \
        [](const ExperimentConfig& c) { return format_double(c.member); }                          \
  }
#define LPDT_STRING_FIELD(sec, k, member)                                                          \
  Field {                                                                                          \
    sec, k, [](ExperimentConfig& c, const std::string&, const std::string& t) { c.member = t; },   \
        [](const ExperimentConfig& c) { return c.member; }                                         \
  }

const std::vector<Field>& schema() {
  static const std::vector<Field> fields = {
      LPDT_INT_FIELD("run", "seed", seed, std::uint64_t),
      LPDT_INT_FIELD("run", "epochs", epochs, Index),
      LPDT_INT_FIELD("run", "batch_size", batch_size, Index),
      LPDT_INT_FIELD("run", "threads", threads, unsigned),
      LPDT_INT_FIELD("run", "log_every", log_every, Index),

      LPDT_STRING_FIELD("topology", "kind", topology.kind),
      LPDT_INT_FIELD("topology", "nodes", topology.nodes, Index),
      LPDT_INT_FIELD("topology", "rows", topology.rows, Index),
      LPDT_INT_FIELD("topology", "cols", topology.cols, Index),
      LPDT_STRING_FIELD("topology", "file", topology.file),

      Field{"algorithm", "name",
            [](ExperimentConfig& c, const std::string& f, const std::string& t) {
              c.algo.algorithm = with_field(f, t, parse_algorithm);
            },
            [](const ExperimentConfig& c) { return std::string(to_string(c.algo.algorithm)); }},
      LPDT_DOUBLE_FIELD("algorithm", "lr", algo.lr),
      Field{"algorithm", "avg_rate",
            [](ExperimentConfig& c, const std::string& f, const std::string& t) {
              c.auto_avg_rate = t == "auto";
              if (!c.auto_avg_rate) c.algo.avg_rate = parse_number<double>(f, t);
            },
            [](const ExperimentConfig& c) {
              return c.auto_avg_rate ? std::string("auto") : format_double(c.algo.avg_rate);
            }},
      Field{"algorithm", "momentum",
            [](ExperimentConfig& c, const std::string& f, const std::string& t) {
              c.algo.momentum_kind = with_field(f, t, parse_momentum);
            },
            [](const ExperimentConfig& c) { return std::string(to_string(c.algo.momentum_kind)); }},
      LPDT_DOUBLE_FIELD("algorithm", "beta", algo.momentum),
      LPDT_DOUBLE_FIELD("algorithm", "weight_decay", algo.weight_decay),
      Field{"algorithm", "precision",
            [](ExperimentConfig& c, const std::string& f, const std::string& t) {
              c.algo.precision = with_field(f, t, parse_precision);
            },
            [](const ExperimentConfig& c) { return std::string(to_string(c.algo.precision)); }},
      LPDT_DOUBLE_FIELD("algorithm", "lr_decay", lr_decay),
      Field{"algorithm", "lr_decay_epochs",
            [](ExperimentConfig& c, const std::string& f, const std::string& t) {
              c.lr_decay_epochs = parse_index_list(f, t);
            },
            [](const ExperimentConfig& c) { return join(c.lr_decay_epochs); }},

      Field{"compression", "kind",
            [](ExperimentConfig& c, const std::string& f, const std::string& t) {
              if (t == "none") {
                c.algo.compressor.kind = CompressorConfig::Kind::Identity;
              } else if (t == "topk") {
                c.algo.compressor.kind = CompressorConfig::Kind::TopK;
              } else {
                throw ConfigError(f + ": expected none or topk, got '" + t + "'");
              }
            },
            [](const ExperimentConfig& c) {
              return std::string(c.algo.compressor.kind == CompressorConfig::Kind::TopK ? "topk" : "none");
            }},
      LPDT_DOUBLE_FIELD("compression", "fraction", algo.compressor.fraction),
      Field{"compression", "quantize",
            [](ExperimentConfig& c, const std::string& f, const std::string& t) {
              c.algo.compressor.quantize = parse_bool(f, t);
            },
            [](const ExperimentConfig& c) { return std::string(c.algo.compressor.quantize ? "true" : "false"); }},

      LPDT_STRING_FIELD("data", "source", data.source),
      LPDT_INT_FIELD("data", "classes", data.classes, Index),
      LPDT_INT_FIELD("data", "train_per_class", data.train_per_class, Index),
      LPDT_INT_FIELD("data", "test_per_class", data.test_per_class, Index),
      LPDT_INT_FIELD("data", "dim", data.dim, Index),
      LPDT_DOUBLE_FIELD("data", "separation", data.separation),
      LPDT_INT_FIELD("data", "seed", data.seed, std::uint64_t),
      LPDT_DOUBLE_FIELD("data", "skew", data.skew),
      LPDT_STRING_FIELD("data", "cifar_train", data.cifar_train),
      LPDT_STRING_FIELD("data", "cifar_test", data.cifar_test),
      Field{"data", "augment",
            [](ExperimentConfig& c, const std::string& f, const std::string& t) {
              c.data.augment = parse_bool(f, t);
            },
            [](const ExperimentConfig& c) { return std::string(c.data.augment ? "true" : "false"); }},

      Field{"model", "arch",
            [](ExperimentConfig& c, const std::string& f, const std::string& t) {
              c.model.arch = with_field(f, t, parse_arch);
            },
            [](const ExperimentConfig& c) { return std::string(to_string(c.model.arch)); }},
      Field{"model", "norm",
            [](ExperimentConfig& c, const std::string& f, const std::string& t) {
              c.model.norm = with_field(f, t, parse_norm);
            },
            [](const ExperimentConfig& c) { return std::string(to_string(c.model.norm)); }},
      LPDT_INT_FIELD("model", "hidden1", model.options.hidden1, Index),
      LPDT_INT_FIELD("model", "hidden2", model.options.hidden2, Index),
      LPDT_INT_FIELD("model", "width", model.options.cnn_width, Index),
      LPDT_INT_FIELD("model", "channels_per_group", model.options.channels_per_group, Index),
  };
  return fields;
}

#undef LPDT_INT_FIELD
#undef LPDT_DOUBLE_FIELD
#undef LPDT_STRING_FIELD

const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : schema())
    if (section == f.section && key == f.key) return &f;
  return nullptr;
}

// Resolves "section.key" or a bare key to a schema entry.
const Field& resolve_override_key(const std::string& path) {
  const auto dot = path.find('.');
  if (dot != std::string::npos) {
    if (const Field* f = find_field(path.substr(0, dot), path.substr(dot + 1))) return *f;
    throw ConfigError("override: unknown key '" + path + "'");
  }
  if (const Field* f = find_field("run", path)) return *f;
  const Field* match = nullptr;
  for (const auto& f : schema()) {
    if (path != f.key) continue;
    if (match) throw ConfigError("override: key '" + path + "' is ambiguous; use section." + path);
    match = &f;
  }
  if (!match) throw ConfigError("override: unknown key '" + path + "'");
  return *match;
}

void apply(ExperimentConfig& cfg, const Field& f, const std::string& value) {
  f.set(cfg, std::string(f.section) + "." + f.key, value);
}

ExperimentConfig parse_tree(const pt::ptree& tree) {
  ExperimentConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("key '" + section + "' is outside any section");
    bool known_section = false;
    for (const auto& f : schema()) known_section = known_section || section == f.section;
    if (!known_section) throw ConfigError("unknown section [" + section + "]");
    for (const auto& [key, value] : body) {
      const Field* f = find_field(section, key);
      if (!f) throw ConfigError("unknown key '" + key + "' in section [" + section + "]");
      apply(cfg, *f, value.data());
    }
  }
  return cfg;
}

std::string trim(std::string s) {
  s.erase(0, s.find_first_not_of(" \t"));
  s.erase(s.find_last_not_of(" \t") + 1);
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// ExperimentConfig

AlgoConfig ExperimentConfig::resolved_algo() const {
  AlgoConfig a = algo;
  if (auto_avg_rate) a.avg_rate = default_avg_rate(a.effective_compressor());
  return a;
}

double ExperimentConfig::lr_at(Index epoch) const {
  double lr = algo.lr;
  for (Index e : lr_decay_epochs)
    if (epoch >= e) lr *= lr_decay;
  return lr;
}

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(epochs >= 1, "run.epochs: must be at least 1");
  require(batch_size >= 1, "run.batch_size: must be at least 1");
  require(threads >= 1, "run.threads: must be at least 1");
  require(log_every >= 1, "run.log_every: must be at least 1");

  const auto& t = topology;
  require(t.nodes >= 1, "topology.nodes: must be at least 1");
  require(t.kind == "directed_ring" || t.kind == "torus" || t.kind == "complete" || t.kind == "file",
          "topology.kind: expected directed_ring, torus, complete or file, got '" + t.kind + "'");
  if (t.kind == "torus") {
    require(t.rows >= 0 && t.cols >= 0, "topology.rows/cols: must be non-negative");
    if (t.rows > 0 || t.cols > 0) {
      require(t.rows * t.cols == t.nodes, "topology.rows: rows * cols must equal nodes");
    }
  }
  require(t.kind != "file" || !t.file.empty(), "topology.file: required when kind = file");

  try {
    resolved_algo().validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("algorithm: ") + e.what());
  }
  require(lr_decay > 0.0 && lr_decay <= 1.0, "algorithm.lr_decay: must be in (0, 1]");
  for (std::size_t i = 0; i < lr_decay_epochs.size(); ++i) {
    require(lr_decay_epochs[i] >= 1, "algorithm.lr_decay_epochs: epochs must be positive");
    require(i == 0 || lr_decay_epochs[i] > lr_decay_epochs[i - 1],
            "algorithm.lr_decay_epochs: must be strictly increasing");
  }

  const auto& d = data;
  require(d.source == "blobs" || d.source == "cifar10",
          "data.source: expected blobs or cifar10, got '" + d.source + "'");
  require(d.skew >= 0.0 && d.skew <= 1.0, "data.skew: must be in [0, 1]");
  if (d.source == "blobs") {
    require(d.classes >= 2, "data.classes: need at least two classes");
    require(d.train_per_class >= 1, "data.train_per_class: must be at least 1");
    require(d.test_per_class >= 1, "data.test_per_class: must be at least 1");
    require(d.dim >= 1, "data.dim: must be at least 1");
    require(d.separation >= 0.0, "data.separation: must be non-negative");
    if (model.arch == Arch::MiniCNN) {
      const auto side = static_cast<Index>(std::lround(std::sqrt(static_cast<double>(d.dim))));
      require(side * side == d.dim, "data.dim: minicnn needs a square number of features");
    }
  } else {
    require(!d.cifar_train.empty(), "data.cifar_train: required when source = cifar10");
    require(!d.cifar_test.empty(), "data.cifar_test: required when source = cifar10");
  }

  const auto& o = model.options;
  require(o.hidden1 >= 1 && o.hidden2 >= 1, "model.hidden1/hidden2: must be at least 1");
  require(o.cnn_width >= 1, "model.width: must be at least 1");
  require(o.channels_per_group >= 1, "model.channels_per_group: must be at least 1");
}

// ---------------------------------------------------------------------------
// Config I/O

ExperimentConfig parse_config(const std::string& text) { return parse_config(text, {}); }

ExperimentConfig parse_config(const std::string& text, const std::vector<std::string>& overrides) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  ExperimentConfig cfg = parse_tree(tree);
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + item + "': expected key=value");
    apply(cfg, resolve_override_key(trim(item.substr(0, eq))), trim(item.substr(eq + 1)));
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) { return load_config(path, {}); }

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), overrides);
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  const char* current = nullptr;
  for (const auto& f : schema()) {
    if (!current || std::string(current) != f.section) {
      out << (current ? "\n" : "") << '[' << f.section << "]\n";
      current = f.section;
    }
    out << f.key << " = " << f.get(cfg) << '\n';
  }
  return out.str();
}

MixingMatrix build_topology(const TopologyConfig& t) {
  try {
    // A lone node has nothing to gossip with under any generated graph.
    if (t.nodes == 1 && t.kind != "file") return from_weights(Eigen::MatrixXd::Identity(1, 1));
    if (t.kind == "directed_ring") return build_directed_ring(t.nodes);
    if (t.kind == "complete") return build_complete(t.nodes);
    if (t.kind == "torus") {
      Index rows = t.rows, cols = t.cols;
      if (rows == 0 || cols == 0) {
        rows = static_cast<Index>(std::sqrt(static_cast<double>(t.nodes)));
        while (rows > 1 && t.nodes % rows != 0) --rows;
        cols = t.nodes / rows;
      }
      return build_undirected_torus(rows, cols);
    }
    if (t.kind == "file") {
      auto w = load_adjacency(t.file);
      if (w.n != t.nodes) {
        throw ConfigError("topology.file: graph has " + std::to_string(w.n) + " nodes but topology.nodes = " +
                          std::to_string(t.nodes));
      }
      return w;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("topology: ") + e.what());
  }
  throw ConfigError("topology.kind: unknown kind '" + t.kind + "'");
}

// ---------------------------------------------------------------------------
// Ledger and metrics

void CommLedger::record(Index round, const std::vector<ByteBreakdown>& sent) {
  if (sent.size() != totals_.size()) {
    throw ShapeError("ledger expects " + std::to_string(totals_.size()) + " nodes, got " +
                     std::to_string(sent.size()));
  }
  if (round != rounds()) {
    throw InvalidArgument("ledger rounds must be recorded in order; expected " + std::to_string(rounds()) +
                          ", got " + std::to_string(round));
  }
  for (std::size_t i = 0; i < sent.size(); ++i) totals_[i] += sent[i];
  rounds_.push_back(sent);
}

Index CommLedger::total_bytes() const {
  Index total = 0;
  for (const auto& b : totals_) total += b.total();
  return total;
}

void CommLedger::write_csv(std::ostream& out) const {
  out << "round,node,values,indices,headers,push_weight,total\n";
  for (std::size_t r = 0; r < rounds_.size(); ++r) {
    for (std::size_t i = 0; i < rounds_[r].size(); ++i) {
      const auto& b = rounds_[r][i];
      out << r << ',' << i << ',' << b.values << ',' << b.indices << ',' << b.headers << ',' << b.push_weight
          << ',' << b.total() << '\n';
    }
  }
}

void write_metrics_header(std::ostream& out) { out << "round,node,loss,spread,bytes_cum\n"; }

void write_metrics_rows(const RoundMetrics& m, std::ostream& out) {
  char buf[128];
  for (std::size_t i = 0; i < m.loss.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%lld,%zu,%.9g,%.9g,%lld\n", static_cast<long long>(m.round), i, m.loss[i],
                  m.spread, static_cast<long long>(m.bytes_cum[i]));
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// Workload and run loop

Workload make_workload(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto& d = cfg.data;
  Workload w;
  if (d.source == "blobs") {
    const Dataset all = generate_blobs(d.classes, d.train_per_class + d.test_per_class, d.dim, d.separation, d.seed);
    std::tie(w.train, w.test) = split_per_class(all, d.train_per_class);
  } else {
    w.train = load_cifar10_binary(d.cifar_train);
    w.test = load_cifar10_binary(d.cifar_test);
  }

  Shape shape = w.train.sample_shape();
  if (cfg.model.arch == Arch::MiniCNN && shape.size() == 1) {
    const auto side = static_cast<Index>(std::lround(std::sqrt(static_cast<double>(shape[0]))));
    shape = {1, side, side};
  } else if (cfg.model.arch == Arch::TinyMLP && shape.size() != 1) {
    shape = {numel(shape)};
  }
  if (shape != w.train.sample_shape()) {
    w.train = w.train.reshaped(shape);
    w.test = w.test.reshaped(shape);
  }

  try {
    w.model = build_model<float>(cfg.model.arch, cfg.model.norm, shape, w.train.classes, cfg.seed,
                                 cfg.model.options);
  } catch (const Error& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  return w;
}

std::uint64_t partition_seed(std::uint64_t run_seed) {
  Rng rng = derive_rng(run_seed, 0);
  return rng();
}

Index rounds_per_epoch(const PartitionPlan& plan, Index batch) {
  if (batch < 1) throw ConfigError("batch size must be at least 1");
  Index rounds = 0;
  for (Index i = 0; i < plan.nodes(); ++i) {
    const auto local = static_cast<Index>(plan.assignments[static_cast<std::size_t>(i)].size());
    if (local == 0) throw ConfigError("node " + std::to_string(i) + " received no training samples");
    rounds = std::max(rounds, (local + batch - 1) / batch);
  }
  return rounds;
}

namespace {

// Walks a node's samples in shuffled order, reshuffling at every wrap.
class BatchSampler {
 public:
  BatchSampler(std::vector<Index> samples, Rng rng) : order_(std::move(samples)), rng_(std::move(rng)) {
    shuffle();
  }

  std::vector<Index> next(Index batch) {
    std::vector<Index> out;
    out.reserve(static_cast<std::size_t>(batch));
    while (static_cast<Index>(out.size()) < batch) {
      if (pos_ == order_.size()) {
        shuffle();
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

  Rng& rng() { return rng_; }

 private:
  void shuffle() {
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[uniform_index(rng_, i)]);
  }

  std::vector<Index> order_;
  Rng rng_;
  std::size_t pos_ = 0;
};

// Stream 0 belongs to the partition.
constexpr std::uint64_t kFirstNodeStream = 1;

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const std::function<void(const RoundMetrics&)>& on_metrics) {
  return run_experiment(cfg, make_workload(cfg), on_metrics);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, Workload workload,
                                const std::function<void(const RoundMetrics&)>& on_metrics) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const MixingMatrix w = build_topology(cfg.topology);
  const Index n = w.n;
  AlgoConfig algo = cfg.resolved_algo();
  const Algorithm a = algo.algorithm;
  const Precision mode = algo.precision;

  ExperimentResult result;
  result.partition = partition_skewed(workload.train.labels, n, cfg.data.skew, partition_seed(cfg.seed));
  result.rounds_per_epoch = rounds_per_epoch(result.partition, cfg.batch_size);

  const Vector<float> x0 = workload.model.flatten();
  const std::vector<Index> layer_sizes = workload.model.layer_sizes();
  auto states = init_states(x0, n, algo);

  std::vector<BatchSampler> samplers;
  samplers.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    samplers.emplace_back(result.partition.assignments[static_cast<std::size_t>(i)],
                          derive_rng(cfg.seed, kFirstNodeStream + static_cast<std::uint64_t>(i)));
  }
  std::vector<Model<float>> models(static_cast<std::size_t>(n), workload.model);
  std::vector<Vector<float>> grads(static_cast<std::size_t>(n));
  std::vector<double> losses(static_cast<std::size_t>(n));
  const bool flip = cfg.data.augment && workload.train.sample_shape().size() == 3;

  const Executor exec(cfg.threads);
  result.ledger = CommLedger(n);
  RoundMetrics metrics;
  metrics.bytes_cum.assign(static_cast<std::size_t>(n), 0);

  const Index total_rounds = cfg.epochs * result.rounds_per_epoch;
  Index round = 0;
  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    algo.lr = cfg.lr_at(epoch);
    for (Index r = 0; r < result.rounds_per_epoch; ++r, ++round) {
      const bool log = round % cfg.log_every == 0 || round + 1 == total_rounds;
      if (log && on_metrics) metrics.spread = model_spread(states, a);

      const auto check_finite = [&](const char* phase) {
        for (Index i = 0; i < n; ++i) {
          const auto& s = states[static_cast<std::size_t>(i)];
          if (!s.x.allFinite() || !s.model(a).allFinite()) {
            throw NumericalError("training diverged: node " + std::to_string(i) + " has non-finite parameters " +
                                 phase + " round " + std::to_string(round) + " (epoch " + std::to_string(epoch) +
                                 ")");
          }
        }
      };
      check_finite("at the start of");

      exec.run(n, [&](Index i) {
        const auto s = static_cast<std::size_t>(i);
        const auto idx = samplers[s].next(cfg.batch_size);
        Tensorf x = workload.train.gather(idx);
        if (flip) random_hflip(x, samplers[s].rng());
        models[s].assign(states[s].model(a));
        try {
          losses[s] = models[s].loss_and_grad(x, workload.train.gather_labels(idx), mode, &grads[s]);
        } catch (const InvalidArgument&) {
          // Shapes and labels are fixed at setup, so this is an overflowed
          // activation reaching a quantizer.
          losses[s] = std::numeric_limits<double>::quiet_NaN();
        }
      });
      for (Index i = 0; i < n; ++i) {
        const double loss = losses[static_cast<std::size_t>(i)];
        if (!std::isfinite(loss)) {
          throw NumericalError("training diverged: node " + std::to_string(i) + " has loss " +
                               std::to_string(loss) + " in round " + std::to_string(round) + " (epoch " +
                               std::to_string(epoch) + ")");
        }
      }

      RoundReport report;
      try {
        report = run_round(states, w, grads, algo, layer_sizes, exec);
      } catch (const InvalidArgument&) {
        // Quantizing an overflowed message fails before the loss can show it.
        check_finite("during");
        throw;
      }
      result.ledger.record(round, report.sent);
      for (std::size_t i = 0; i < report.sent.size(); ++i) metrics.bytes_cum[i] += report.sent[i].total();

      if (log && on_metrics) {
        metrics.round = round;
        metrics.loss = losses;
        metrics.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        on_metrics(metrics);
      }
    }
  }

  result.rounds = round;
  double loss_sum = 0.0;
  for (double l : losses) loss_sum += l;
  result.final_loss = loss_sum / static_cast<double>(n);
  for (const auto& s : states) {
    if (!s.model(a).allFinite()) throw NumericalError("training diverged: final model has non-finite parameters");
    result.models.push_back(s.model(a));
  }
  result.test_accuracy = evaluate_averaged_model(result.models, workload.model, workload.test, mode);
  return result;
}

double evaluate_averaged_model(const std::vector<Vector<float>>& models, Model<float> prototype,
                               const Dataset& test, Precision mode) {
  if (models.empty()) throw InvalidArgument("no models to average");
  Vector<double> mean = Vector<double>::Zero(models.front().size());
  for (const auto& m : models) {
    if (m.size() != mean.size()) throw ShapeError("models to average differ in size");
    mean += m.cast<double>();
  }
  mean /= static_cast<double>(models.size());
  prototype.assign(mean.cast<float>());

  constexpr Index kChunk = 500;
  Index correct = 0;
  for (Index begin = 0; begin < test.size(); begin += kChunk) {
    std::vector<Index> idx;
    for (Index i = begin; i < std::min(test.size(), begin + kChunk); ++i) idx.push_back(i);
    const auto logits = prototype.logits(test.gather(idx), mode);
    const Index k = prototype.classes();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      Index best = 0;
      for (Index j = 1; j < k; ++j)
        if (logits[static_cast<Index>(r) * k + j] > logits[static_cast<Index>(r) * k + best]) best = j;
      correct += best == test.labels[static_cast<std::size_t>(idx[r])];
    }
  }
  return test.size() == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(test.size());
}

std::vector<ByteBreakdown> predict_data_volume(const AlgoConfig& algo, const MixingMatrix& w,
                                               std::span<const Index> layer_sizes, Index rounds) {
  const ByteBreakdown one = expected_breakdown(algo.effective_compressor(), layer_sizes, uses_push_sum(algo.algorithm));
  std::vector<ByteBreakdown> out(static_cast<std::size_t>(w.n));
  for (Index i = 0; i < w.n; ++i) {
    const Index copies = w.out_degree(i) * rounds;
    auto& b = out[static_cast<std::size_t>(i)];
    b.values = one.values * copies;
    b.indices = one.indices * copies;
    b.headers = one.headers * copies;
    b.push_weight = one.push_weight * copies;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model dump

namespace {

constexpr char kModelMagic[8] = {'L', 'P', 'D', 'T', 'M', 'D', 'L', '1'};

void write_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("model dump is truncated");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace

void write_models(const std::vector<Vector<float>>& models, std::ostream& out) {
  const Index params = models.empty() ? 0 : models.front().size();
  out.write(kModelMagic, sizeof(kModelMagic));
  write_u32(out, static_cast<std::uint32_t>(models.size()));
  write_u32(out, static_cast<std::uint32_t>(params));
  for (const auto& m : models) {
    if (m.size() != params) throw ShapeError("models to dump differ in size");
    for (Index j = 0; j < params; ++j) {
      std::uint32_t bits;
      std::memcpy(&bits, &m[j], 4);
      write_u32(out, bits);
    }
  }
}

std::vector<Vector<float>> read_models(std::istream& in) {
  char magic[sizeof(kModelMagic)];
  if (!in.read(magic, sizeof(magic)) || !std::equal(magic, magic + sizeof(magic), kModelMagic)) {
    throw FormatError("not a model dump (bad magic)");
  }
  const std::uint32_t nodes = read_u32(in);
  const std::uint32_t params = read_u32(in);
  std::vector<Vector<float>> models(nodes, Vector<float>(params));
  for (auto& m : models) {
    for (Index j = 0; j < static_cast<Index>(params); ++j) {
      const std::uint32_t bits = read_u32(in);
      std::memcpy(&m[j], &bits, 4);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("model dump has trailing bytes");
  return models;
}

}  // namespace lpdt
