// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0

#include "lpdt/partition.hpp"

#include <array>
#include <fstream>
#include <ostream>

#include "lpdt/error.hpp"

namespace lpdt {

Shape Dataset::sample_shape() const {
  return Shape(features.shape().begin() + 1, features.shape().end());
}

Tensorf Dataset::gather(const std::vector<Index>& idx) const {
  const Index d = sample_size();
  Shape shape = sample_shape();
  shape.insert(shape.begin(), static_cast<Index>(idx.size()));
  Tensorf out(shape);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    out.data().segment(static_cast<Index>(r) * d, d) = features.data().segment(idx[r] * d, d);
  }
  return out;
}

std::vector<int> Dataset::gather_labels(const std::vector<Index>& idx) const {
  std::vector<int> out;
  out.reserve(idx.size());
  for (Index i : idx) out.push_back(labels[static_cast<std::size_t>(i)]);
  return out;
}

Dataset Dataset::subset(const std::vector<Index>& idx) const {
  return Dataset{gather(idx), gather_labels(idx), classes};
}

Dataset Dataset::reshaped(const Shape& sample_shape) const {
  Shape shape = sample_shape;
  shape.insert(shape.begin(), size());
  return Dataset{features.reshaped(shape), labels, classes};
}

Dataset generate_blobs(Index classes, Index per_class, Index dim, double separation,
                       std::uint64_t seed) {
  if (classes < 2) throw ConfigError("blobs need at least 2 classes");
  if (per_class < 1) throw ConfigError("blobs need at least 1 sample per class");
  if (dim < 1) throw ConfigError("blobs need dim >= 1");
  if (!(separation >= 0.0)) throw ConfigError("blob separation must be non-negative");
  Rng rng(seed);

  std::vector<Eigen::VectorXd> means;
  double half_width = std::max(separation, 1.0);
  int rejected = 0;
  while (static_cast<Index>(means.size()) < classes) {
    Eigen::VectorXd m(dim);
    for (Index k = 0; k < dim; ++k) m[k] = (2.0 * uniform01(rng) - 1.0) * half_width;
    bool far = true;
    for (const auto& other : means) far = far && (m - other).norm() >= separation;
    if (far) {
      means.push_back(std::move(m));
      rejected = 0;
    } else if (++rejected == 1000) {
      half_width *= 1.5;
      rejected = 0;
    }
  }

  Dataset data;
  data.classes = classes;
  data.features = Tensorf({classes * per_class, dim});
  data.labels.reserve(static_cast<std::size_t>(classes * per_class));
  std::normal_distribution<double> noise(0.0, 1.0);
  Index row = 0;
  for (Index c = 0; c < classes; ++c) {
    for (Index s = 0; s < per_class; ++s, ++row) {
      for (Index k = 0; k < dim; ++k) {
        data.features[row * dim + k] = static_cast<float>(means[static_cast<std::size_t>(c)][k] + noise(rng));
      }
      data.labels.push_back(static_cast<int>(c));
    }
  }
  return data;
}

std::pair<Dataset, Dataset> split_per_class(const Dataset& data, Index first_per_class) {
  std::vector<Index> first, second;
  std::vector<Index> seen(static_cast<std::size_t>(data.classes), 0);
  for (Index i = 0; i < data.size(); ++i) {
    auto& count = seen[static_cast<std::size_t>(data.labels[static_cast<std::size_t>(i)])];
    (count++ < first_per_class ? first : second).push_back(i);
  }
  return {data.subset(first), data.subset(second)};
}

double nearest_centroid_accuracy(const Dataset& fit, const Dataset& eval) {
  const Index d = fit.sample_size();
  Eigen::MatrixXd centroids = Eigen::MatrixXd::Zero(fit.classes, d);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(fit.classes);
  for (Index i = 0; i < fit.size(); ++i) {
    const int y = fit.labels[static_cast<std::size_t>(i)];
    centroids.row(y) += fit.features.data().segment(i * d, d).cast<double>().transpose();
    counts[y] += 1.0;
  }
  for (Index c = 0; c < fit.classes; ++c) {
    if (counts[c] > 0) centroids.row(c) /= counts[c];
  }
  Index correct = 0;
  for (Index i = 0; i < eval.size(); ++i) {
    const Eigen::RowVectorXd x = eval.features.data().segment(i * d, d).cast<double>().transpose();
    Index best = 0;
    (centroids.rowwise() - x).rowwise().squaredNorm().minCoeff(&best);
    correct += best == eval.labels[static_cast<std::size_t>(i)];
  }
  return eval.size() == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(eval.size());
}

PartitionPlan partition_skewed(const std::vector<int>& labels, Index n, double skew,
                               std::uint64_t seed) {
  if (!(skew >= 0.0 && skew <= 1.0)) {
    throw ConfigError("skew must lie in [0, 1], got " + std::to_string(skew));
  }
  if (n < 1) throw ConfigError("partition needs at least one node");
  PartitionPlan plan;
  plan.skew = skew;
  plan.seed = seed;
  plan.assignments.resize(static_cast<std::size_t>(n));
  Rng rng(seed);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) throw InvalidArgument("negative label");
    // Two draws per sample regardless of the branch taken, so the stream
    // position never depends on earlier routing decisions.
    const double route = uniform01(rng);
    const auto any = static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(n)));
    const Index node = route < skew ? dominant_node(labels[i], n) : any;
    plan.assignments[static_cast<std::size_t>(node)].push_back(static_cast<Index>(i));
  }
  return plan;
}

std::vector<std::vector<Index>> class_histogram(const PartitionPlan& plan,
                                                const std::vector<int>& labels, Index classes) {
  std::vector<std::vector<Index>> hist(plan.assignments.size(),
                                       std::vector<Index>(static_cast<std::size_t>(classes), 0));
  for (std::size_t node = 0; node < plan.assignments.size(); ++node) {
    for (Index i : plan.assignments[node]) {
      ++hist[node][static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    }
  }
  return hist;
}

void write_partition_csv(const PartitionPlan& plan, std::ostream& out) {
  out << "node,sample_index\n";
  for (std::size_t node = 0; node < plan.assignments.size(); ++node) {
    for (Index i : plan.assignments[node]) out << node << ',' << i << '\n';
  }
}

Dataset parse_cifar10_binary(const std::vector<unsigned char>& bytes) {
  const auto total = static_cast<Index>(bytes.size());
  if (total == 0 || total % kCifarRecordBytes != 0) {
    throw FormatError("CIFAR-10 file size " + std::to_string(total) +
                      " is not a positive multiple of " + std::to_string(kCifarRecordBytes));
  }
  constexpr std::array<double, 3> mean{0.4914, 0.4822, 0.4465};
  constexpr std::array<double, 3> stddev{0.2470, 0.2435, 0.2616};
  const Index records = total / kCifarRecordBytes;
  Dataset data;
  data.classes = 10;
  data.features = Tensorf({records, 3, 32, 32});
  data.labels.resize(static_cast<std::size_t>(records));
  for (Index r = 0; r < records; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] >= 10) {
      throw FormatError("record " + std::to_string(r) + " has label " + std::to_string(rec[0]));
    }
    data.labels[static_cast<std::size_t>(r)] = rec[0];
    for (Index p = 0; p < 3072; ++p) {
      const auto ch = static_cast<std::size_t>(p / 1024);
      const double v = rec[1 + p] / 255.0;
      data.features[r * 3072 + p] = static_cast<float>((v - mean[ch]) / stddev[ch]);
    }
  }
  return data;
}

Dataset load_cifar10_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open CIFAR-10 file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return parse_cifar10_binary(bytes);
}

void random_hflip(Tensorf& batch, Rng& rng) {
  if (batch.rank() != 4) throw ShapeError("random_hflip expects (N, C, H, W)");
  const Index n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  for (Index i = 0; i < n; ++i) {
    if (uniform01(rng) >= 0.5) continue;
    for (Index ch = 0; ch < c; ++ch)
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w / 2; ++x) std::swap(batch.at(i, ch, y, x), batch.at(i, ch, y, w - 1 - x));
  }
}

}  // namespace lpdt
