// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0

#include "lpdt/model.hpp"

namespace lpdt {

Arch parse_arch(std::string_view text) {
  if (text == "tinymlp") return Arch::TinyMLP;
  if (text == "minicnn") return Arch::MiniCNN;
  throw ConfigError("unknown trainable architecture '" + std::string(text) +
                    "' (expected tinymlp|minicnn)");
}

NormKind parse_norm(std::string_view text) {
  if (text == "range_bn" || text == "rbn") return NormKind::RangeBN;
  if (text == "evonorm_s0" || text == "evonorm") return NormKind::EvoNormS0;
  if (text == "range_evonorm" || text == "ren") return NormKind::RangeEvoNorm;
  throw ConfigError("unknown norm '" + std::string(text) +
                    "' (expected range_bn|evonorm_s0|range_evonorm)");
}

std::string_view to_string(Arch arch) {
  return arch == Arch::TinyMLP ? "tinymlp" : "minicnn";
}

std::string_view to_string(NormKind norm) {
  switch (norm) {
    case NormKind::RangeBN: return "range_bn";
    case NormKind::EvoNormS0: return "evonorm_s0";
    case NormKind::RangeEvoNorm: return "range_evonorm";
  }
  return "unknown";
}

LayerKind layer_kind(NormKind norm) {
  switch (norm) {
    case NormKind::RangeBN: return LayerKind::RangeBN_ReLU;
    case NormKind::EvoNormS0: return LayerKind::EvoNormS0;
    case NormKind::RangeEvoNorm: return LayerKind::RangeEvoNorm;
  }
  throw ConfigError("unknown norm kind");
}

namespace {

LayerSpec norm_spec(NormKind norm, Index channels, Index L, Index channels_per_group) {
  Index groups = 1;
  if (norm != NormKind::RangeBN) {
    if (channels_per_group < 1 || channels % channels_per_group != 0) {
      throw ConfigError("channels " + std::to_string(channels) +
                        " not divisible by channels_per_group " +
                        std::to_string(channels_per_group));
    }
    groups = channels / channels_per_group;
  }
  return LayerSpec::norm(layer_kind(norm), channels, L, groups);
}

}  // namespace

std::vector<ModelNode> build_layers(Arch arch, NormKind norm, const Shape& sample_shape,
                                    Index classes, const ModelOptions& opts) {
  if (classes < 2) throw ConfigError("need at least 2 classes");
  std::vector<ModelNode> nodes;
  if (arch == Arch::TinyMLP) {
    if (sample_shape.size() != 1) {
      throw ConfigError("tinymlp expects flat samples, got " + to_string(sample_shape));
    }
    const Index in = sample_shape[0];
    nodes.push_back({LayerSpec::linear(in, opts.hidden1)});
    nodes.push_back({norm_spec(norm, opts.hidden1, 1, opts.channels_per_group)});
    nodes.push_back({LayerSpec::linear(opts.hidden1, opts.hidden2)});
    nodes.push_back({norm_spec(norm, opts.hidden2, 1, opts.channels_per_group)});
    nodes.push_back({LayerSpec::linear(opts.hidden2, classes)});
    return nodes;
  }

  if (sample_shape.size() != 3 || sample_shape[1] != sample_shape[2]) {
    throw ConfigError("minicnn expects square (C, L, L) samples, got " + to_string(sample_shape));
  }
  const Index c = sample_shape[0];
  const Index L = sample_shape[1];
  const Index w = opts.cnn_width;
  // Stem block, then two residual blocks; activation indices follow ModelNode.
  nodes.push_back({LayerSpec::conv(c, w, 3, L, 1, 1)});
  nodes.push_back({norm_spec(norm, w, L, opts.channels_per_group)});
  for (int block = 0; block < 2; ++block) {
    const int block_input = static_cast<int>(nodes.size());
    nodes.push_back({LayerSpec::conv(w, w, 3, L, 1, 1)});
    nodes.push_back({norm_spec(norm, w, L, opts.channels_per_group)});
    nodes.push_back({LayerSpec::skip(w, L), block_input});
  }
  nodes.push_back({LayerSpec::avgpool(w, L, L)});
  nodes.push_back({LayerSpec::linear(w, classes)});
  return nodes;
}

}  // namespace lpdt
