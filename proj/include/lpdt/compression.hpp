// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0
//
// Message compression: layer-wise top-k sparsification, 8-bit quantization,
// their composition, error feedback and the byte accounting used by the
// communication ledger.
//
// Byte rule (values on the wire are 32-bit floats or 8-bit codes, indices
// are 32-bit):
//   Dense      4 * N
//   Sparse     4 * k (indices) + 4 * k (values)
//   Quantized  N + kHeaderBytes
//   Composite  4 * k (indices) + k + kHeaderBytes
//   plus 8 bytes when a push-sum weight rides along.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "lpdt/error.hpp"
#include "lpdt/quant.hpp"
#include "lpdt/tensor.hpp"

namespace lpdt {

inline constexpr Index kHeaderBytes = 8;
inline constexpr Index kPushWeightBytes = 8;
/// Serialization frame: tag byte, total_params u32, entry count u32.
inline constexpr Index kFrameBytes = 9;

enum class PayloadKind : std::uint8_t { Dense = 1, Sparse = 2, Quantized = 3, Composite = 4 };

template <typename Scalar>
struct CompressedMessage {
  PayloadKind kind = PayloadKind::Dense;
  Index total_params = 0;
  std::vector<std::uint32_t> indices;  // Sparse, Composite
  Vector<Scalar> values;               // Dense, Sparse
  std::vector<std::uint8_t> codes;     // Quantized, Composite
  QuantParams qparams;
  bool has_push_weight = false;
  double push_weight = 0.0;

  /// Number of transmitted entries (k for sparse payloads, N for dense ones).
  Index entries() const {
    switch (kind) {
      case PayloadKind::Dense: return values.size();
      case PayloadKind::Sparse: return static_cast<Index>(indices.size());
      case PayloadKind::Quantized: return static_cast<Index>(codes.size());
      case PayloadKind::Composite: return static_cast<Index>(indices.size());
    }
    return 0;
  }
};

struct ByteBreakdown {
  Index values = 0;
  Index indices = 0;
  Index headers = 0;
  Index push_weight = 0;

  Index total() const { return values + indices + headers + push_weight; }
  ByteBreakdown& operator+=(const ByteBreakdown& o) {
    values += o.values;
    indices += o.indices;
    headers += o.headers;
    push_weight += o.push_weight;
    return *this;
  }
};

template <typename Scalar>
ByteBreakdown byte_breakdown(const CompressedMessage<Scalar>& m) {
  ByteBreakdown b;
  const Index k = m.entries();
  switch (m.kind) {
    case PayloadKind::Dense: b.values = 4 * k; break;
    case PayloadKind::Sparse:
      b.indices = 4 * k;
      b.values = 4 * k;
      break;
    case PayloadKind::Quantized:
      b.values = k;
      b.headers = kHeaderBytes;
      break;
    case PayloadKind::Composite:
      b.indices = 4 * k;
      b.values = k;
      b.headers = kHeaderBytes;
      break;
  }
  if (m.has_push_weight) b.push_weight = kPushWeightBytes;
  return b;
}

template <typename Scalar>
Index message_bytes(const CompressedMessage<Scalar>& m) {
  return byte_breakdown(m).total();
}

/// Number of entries kept from a segment of `len` values: ceil(fraction * len),
/// guarded against products such as 0.1 * 30 landing just above an integer.
inline Index topk_count(double fraction, Index len) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw InvalidArgument("top-k fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
  if (len == 0) return 0;
  const double exact = fraction * static_cast<double>(len);
  const auto k = static_cast<Index>(std::ceil(exact - 1e-9 * std::max(1.0, exact)));
  return std::clamp<Index>(k, 1, len);
}

inline void check_layers(std::span<const Index> layer_sizes, Index total) {
  Index sum = 0;
  for (Index s : layer_sizes) {
    if (s < 0) throw InvalidArgument("negative layer size");
    sum += s;
  }
  if (sum != total) {
    throw ShapeError("layer sizes sum to " + std::to_string(sum) + " but vector has " +
                     std::to_string(total) + " entries");
  }
}

/// Keeps the ceil(fraction * len) largest-magnitude entries of every layer
/// segment; ties go to the lower index. Indices come out ascending.
template <typename Scalar>
CompressedMessage<Scalar> topk_layerwise(const Vector<Scalar>& v, std::span<const Index> layer_sizes,
                                         double fraction) {
  check_layers(layer_sizes, v.size());
  CompressedMessage<Scalar> m;
  m.kind = PayloadKind::Sparse;
  m.total_params = v.size();
  std::vector<std::uint32_t> order;
  Index offset = 0;
  for (Index len : layer_sizes) {
    const Index k = topk_count(fraction, len);
    order.resize(static_cast<std::size_t>(len));
    std::iota(order.begin(), order.end(), static_cast<std::uint32_t>(offset));
    auto larger = [&v](std::uint32_t a, std::uint32_t b) {
      const auto ma = std::abs(v[a]), mb = std::abs(v[b]);
      return ma > mb || (ma == mb && a < b);
    };
    if (k < len) {
      std::nth_element(order.begin(), order.begin() + (k - 1), order.end(), larger);
      order.resize(static_cast<std::size_t>(k));
    }
    std::sort(order.begin(), order.end());
    m.indices.insert(m.indices.end(), order.begin(), order.end());
    offset += len;
  }
  m.values.resize(static_cast<Index>(m.indices.size()));
  for (std::size_t i = 0; i < m.indices.size(); ++i) m.values[static_cast<Index>(i)] = v[m.indices[i]];
  return m;
}

template <typename Scalar>
CompressedMessage<Scalar> dense_message(const Vector<Scalar>& v) {
  CompressedMessage<Scalar> m;
  m.kind = PayloadKind::Dense;
  m.total_params = v.size();
  m.values = v;
  return m;
}

template <typename Scalar>
CompressedMessage<Scalar> quantize8_message(const Vector<Scalar>& v) {
  CompressedMessage<Scalar> m;
  m.kind = PayloadKind::Quantized;
  m.total_params = v.size();
  const Tensor<Scalar> t({v.size()}, v);
  m.qparams = range_params(t);
  m.codes = quantize(t, m.qparams).qdata;
  return m;
}

/// Top-k selection in full precision, then 8-bit codes for the kept values.
template <typename Scalar>
CompressedMessage<Scalar> topk_quantized(const Vector<Scalar>& v, std::span<const Index> layer_sizes,
                                         double fraction) {
  auto m = topk_layerwise(v, layer_sizes, fraction);
  m.kind = PayloadKind::Composite;
  const Tensor<Scalar> kept({m.values.size()}, m.values);
  m.qparams = range_params(kept);
  m.codes = quantize(kept, m.qparams).qdata;
  m.values.resize(0);
  return m;
}

template <typename Scalar>
Vector<Scalar> decompress(const CompressedMessage<Scalar>& m) {
  Vector<Scalar> out = Vector<Scalar>::Zero(m.total_params);
  switch (m.kind) {
    case PayloadKind::Dense: out = m.values; break;
    case PayloadKind::Sparse:
      for (std::size_t i = 0; i < m.indices.size(); ++i) out[m.indices[i]] = m.values[static_cast<Index>(i)];
      break;
    case PayloadKind::Quantized:
      for (std::size_t i = 0; i < m.codes.size(); ++i)
        out[static_cast<Index>(i)] = static_cast<Scalar>(dequantize_value(m.codes[i], m.qparams));
      break;
    case PayloadKind::Composite:
      for (std::size_t i = 0; i < m.indices.size(); ++i)
        out[m.indices[i]] = static_cast<Scalar>(dequantize_value(m.codes[i], m.qparams));
      break;
  }
  return out;
}

/// Which compressor a node applies before sending.
struct CompressorConfig {
  enum class Kind { Identity, TopK };
  Kind kind = Kind::Identity;
  double fraction = 1.0;   // TopK only
  bool quantize = false;   // 8-bit values (LP messages)

  /// True when decompress(compress(v)) == v for every v.
  bool lossless() const { return kind == Kind::Identity && !quantize; }
};

template <typename Scalar>
CompressedMessage<Scalar> compress(const Vector<Scalar>& v, std::span<const Index> layer_sizes,
                                   const CompressorConfig& cfg) {
  if (cfg.kind == CompressorConfig::Kind::TopK) {
    return cfg.quantize ? topk_quantized(v, layer_sizes, cfg.fraction)
                        : topk_layerwise(v, layer_sizes, cfg.fraction);
  }
  return cfg.quantize ? quantize8_message(v) : dense_message(v);
}

/// Byte breakdown of any message `compress` produces for a vector with
/// these layer sizes; top-k keeps the same count every time, so this is exact.
inline ByteBreakdown expected_breakdown(const CompressorConfig& cfg, std::span<const Index> layer_sizes,
                                        bool push_weight) {
  Index total = 0, kept = 0;
  for (Index len : layer_sizes) {
    total += len;
    if (cfg.kind == CompressorConfig::Kind::TopK) kept += topk_count(cfg.fraction, len);
  }
  ByteBreakdown b;
  if (cfg.kind == CompressorConfig::Kind::TopK) {
    b.indices = 4 * kept;
    b.values = cfg.quantize ? kept : 4 * kept;
  } else {
    b.values = cfg.quantize ? total : 4 * total;
  }
  if (cfg.quantize) b.headers = kHeaderBytes;
  if (push_weight) b.push_weight = kPushWeightBytes;
  return b;
}

/// Error-feedback residual delta, one per node.
template <typename Scalar>
struct ErrorFeedbackState {
  Vector<Scalar> residual;

  ErrorFeedbackState() = default;
  explicit ErrorFeedbackState(Index size) : residual(Vector<Scalar>::Zero(size)) {}
};

/// v = x + delta; sends C[v]; delta <- v - C[v].
template <typename Scalar>
CompressedMessage<Scalar> ef_compress(const Vector<Scalar>& x, ErrorFeedbackState<Scalar>& state,
                                      std::span<const Index> layer_sizes,
                                      const CompressorConfig& cfg) {
  if (state.residual.size() != x.size()) {
    throw ShapeError("error-feedback residual has " + std::to_string(state.residual.size()) +
                     " entries, model has " + std::to_string(x.size()));
  }
  const Vector<Scalar> v = x + state.residual;
  auto m = compress(v, layer_sizes, cfg);
  state.residual = v - decompress(m);
  return m;
}

// ---------------------------------------------------------------------------
// Canonical little-endian serialization:
//   tag u8 (payload kind, high bit set when a push weight follows)
//   total_params u32, entries u32
//   payload laid out per the byte rule; the 8-byte quantization header is
//   scale f32, zero_point u8, bits u8, two zero bytes.

namespace detail {

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

template <typename T>
T take(std::span<const std::uint8_t> in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw FormatError("serialized message is truncated");
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  pos += sizeof(T);
  T value;
  std::memcpy(&value, raw, sizeof(T));
  return value;
}

}  // namespace detail

template <typename Scalar>
std::vector<std::uint8_t> serialize(const CompressedMessage<Scalar>& m) {
  std::vector<std::uint8_t> out;
  out.reserve(static_cast<std::size_t>(kFrameBytes + message_bytes(m)));
  const auto tag = static_cast<std::uint8_t>(static_cast<std::uint8_t>(m.kind) |
                                             (m.has_push_weight ? 0x80 : 0x00));
  detail::put<std::uint8_t>(out, tag);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.total_params));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.entries()));
  auto header = [&] {
    detail::put<float>(out, m.qparams.scale);
    detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(m.qparams.zero_point));
    detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(m.qparams.bits));
    detail::put<std::uint16_t>(out, 0);
  };
  switch (m.kind) {
    case PayloadKind::Dense:
      for (Index i = 0; i < m.values.size(); ++i) detail::put<float>(out, static_cast<float>(m.values[i]));
      break;
    case PayloadKind::Sparse:
      for (auto idx : m.indices) detail::put<std::uint32_t>(out, idx);
      for (Index i = 0; i < m.values.size(); ++i) detail::put<float>(out, static_cast<float>(m.values[i]));
      break;
    case PayloadKind::Quantized:
      header();
      out.insert(out.end(), m.codes.begin(), m.codes.end());
      break;
    case PayloadKind::Composite:
      for (auto idx : m.indices) detail::put<std::uint32_t>(out, idx);
      header();
      out.insert(out.end(), m.codes.begin(), m.codes.end());
      break;
  }
  if (m.has_push_weight) detail::put<double>(out, m.push_weight);
  return out;
}

template <typename Scalar>
CompressedMessage<Scalar> deserialize(std::span<const std::uint8_t> in) {
  std::size_t pos = 0;
  const auto tag = detail::take<std::uint8_t>(in, pos);
  CompressedMessage<Scalar> m;
  m.has_push_weight = (tag & 0x80) != 0;
  const auto kind = static_cast<std::uint8_t>(tag & 0x7f);
  if (kind < 1 || kind > 4) throw FormatError("unknown message tag " + std::to_string(kind));
  m.kind = static_cast<PayloadKind>(kind);
  m.total_params = detail::take<std::uint32_t>(in, pos);
  const Index count = detail::take<std::uint32_t>(in, pos);
  if (count > m.total_params) throw FormatError("entry count exceeds total_params");
  auto header = [&] {
    m.qparams.scale = detail::take<float>(in, pos);
    m.qparams.zero_point = detail::take<std::uint8_t>(in, pos);
    m.qparams.bits = detail::take<std::uint8_t>(in, pos);
    detail::take<std::uint16_t>(in, pos);
    if (m.qparams.bits != kQuantBits || !(m.qparams.scale > 0.0f)) {
      throw FormatError("invalid quantization header");
    }
  };
  auto indices = [&] {
    m.indices.resize(static_cast<std::size_t>(count));
    for (auto& idx : m.indices) {
      idx = detail::take<std::uint32_t>(in, pos);
      if (idx >= m.total_params) throw FormatError("sparse index out of range");
    }
    for (std::size_t i = 1; i < m.indices.size(); ++i) {
      if (m.indices[i] <= m.indices[i - 1]) throw FormatError("sparse indices not strictly increasing");
    }
  };
  auto codes = [&] {
    if (pos + static_cast<std::size_t>(count) > in.size()) throw FormatError("serialized message is truncated");
    m.codes.assign(in.begin() + static_cast<std::ptrdiff_t>(pos),
                   in.begin() + static_cast<std::ptrdiff_t>(pos + static_cast<std::size_t>(count)));
    pos += static_cast<std::size_t>(count);
  };
  auto values = [&] {
    m.values.resize(count);
    for (Index i = 0; i < count; ++i) m.values[i] = static_cast<Scalar>(detail::take<float>(in, pos));
  };
  switch (m.kind) {
    case PayloadKind::Dense:
      if (count != m.total_params) throw FormatError("dense message count mismatch");
      values();
      break;
    case PayloadKind::Sparse:
      indices();
      values();
      break;
    case PayloadKind::Quantized:
      if (count != m.total_params) throw FormatError("quantized message count mismatch");
      header();
      codes();
      break;
    case PayloadKind::Composite:
      indices();
      header();
      codes();
      break;
  }
  if (m.has_push_weight) m.push_weight = detail::take<double>(in, pos);
  if (pos != in.size()) throw FormatError("trailing bytes after message");
  return m;
}

}  // namespace lpdt
