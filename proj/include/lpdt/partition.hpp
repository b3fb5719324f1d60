// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0
//
// Datasets, synthetic data and label-skewed splits across nodes.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "lpdt/random.hpp"
#include "lpdt/tensor.hpp"

namespace lpdt {

struct Dataset {
  Tensorf features;  // (N, sample dims...)
  std::vector<int> labels;
  Index classes = 0;

  Index size() const { return static_cast<Index>(labels.size()); }
  Shape sample_shape() const;
  Index sample_size() const { return size() == 0 ? 0 : features.size() / size(); }

  /// Gathers the given rows into a batch tensor of shape (idx.size(), sample dims...).
  Tensorf gather(const std::vector<Index>& idx) const;
  std::vector<int> gather_labels(const std::vector<Index>& idx) const;
  Dataset subset(const std::vector<Index>& idx) const;
  /// Same samples viewed with a different per-sample shape.
  Dataset reshaped(const Shape& sample_shape) const;
};

/// Gaussian clusters with unit-variance noise, one mean per class; means are
/// drawn uniformly in a cube and rejected until every pair is at least
/// `separation` apart. Samples are ordered class by class.
Dataset generate_blobs(Index classes, Index per_class, Index dim, double separation,
                       std::uint64_t seed);

/// Splits each class: its first `first_per_class` samples go to the first set.
std::pair<Dataset, Dataset> split_per_class(const Dataset& data, Index first_per_class);

/// Fraction of samples whose nearest class centroid (estimated on `fit`) is
/// their own class, evaluated on `eval`.
double nearest_centroid_accuracy(const Dataset& fit, const Dataset& eval);

struct PartitionPlan {
  double skew = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::vector<Index>> assignments;  // per node, ascending

  Index nodes() const { return static_cast<Index>(assignments.size()); }
};

/// Class c is dominated by node c mod n. Each sample goes to its class's
/// dominant node with probability skew, otherwise to a uniformly random node
/// (which may also be the dominant one).
PartitionPlan partition_skewed(const std::vector<int>& labels, Index n, double skew,
                               std::uint64_t seed);

inline Index dominant_node(int label, Index n) { return static_cast<Index>(label) % n; }

/// counts[node][class]
std::vector<std::vector<Index>> class_histogram(const PartitionPlan& plan,
                                                const std::vector<int>& labels, Index classes);

/// CSV "node,sample_index", one row per assignment.
void write_partition_csv(const PartitionPlan& plan, std::ostream& out);

/// CIFAR-10 binary batch: 3073-byte records (label byte, then 3072 pixel
/// bytes R, G, B planes). Pixels are scaled to [0,1] and normalized per
/// channel with the usual CIFAR-10 training-set mean and standard deviation.
Dataset load_cifar10_binary(const std::filesystem::path& path);
Dataset parse_cifar10_binary(const std::vector<unsigned char>& bytes);

inline constexpr Index kCifarRecordBytes = 3073;

/// Horizontally flips each (C, H, W) image of the batch with probability 1/2.
void random_hflip(Tensorf& batch, Rng& rng);

}  // namespace lpdt
