#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "teasq/model.hpp"

namespace teasq {

// p_s: percentage of entries kept per tensor, in (0, 100].
// p_q: bits per kept value, one of {32, 16, 8, 6, 4, 2}, or 0 for none.
struct CompressionParams {
  double p_s = 100.0;
  int p_q = 0;

  void validate() const;
  bool lossless() const { return p_s >= 100.0 && is_raw(); }
  bool is_raw() const { return p_q == 0 || p_q == 32; }

  friend bool operator==(const CompressionParams&, const CompressionParams&) = default;
};

bool is_allowed_bits(int p_q);

// Quantization levels per side, 2^(p_q-1) - 1.
std::int32_t quant_levels(int p_q);

struct SparseSelection {
  std::vector<std::uint32_t> indices;  // ascending
  std::vector<float> values;
};

// Number of entries Top-K keeps: max(1, ceil(p_s/100 * n)).
std::size_t topk_count(std::size_t n, double p_s);

// Keeps the largest-magnitude entries; equal magnitudes go to the lower index.
SparseSelection topk_sparsify(std::span<const float> tensor, double p_s);

struct Quantized {
  std::vector<std::int32_t> codes;  // quantized modes
  std::vector<float> raw;           // p_q in {0, 32}
  float scale = 1.0f;
  int p_q = 0;
};

// Symmetric max-abs quantization with stochastic rounding. The rounding draw
// for entry i is a pure function of (seed, keys[i]), so the same element
// rounds the same way regardless of which other entries are present.
Quantized quantize(std::span<const float> values, int p_q, std::uint64_t seed,
                   std::span<const std::uint32_t> keys = {});

// Throws CorruptPayload if a code lies outside [-L, L].
std::vector<float> dequantize(const Quantized& q);

struct CompressedTensor {
  std::string name;
  std::vector<std::size_t> original_shape;
  std::vector<std::uint32_t> indices;
  std::vector<std::int32_t> codes;  // quantized modes
  std::vector<float> raw;           // p_q in {0, 32}
  float scale = 1.0f;
  int p_q = 0;

  std::size_t entries() const { return indices.size(); }
  // Exact size of this tensor in the wire format.
  std::int64_t wire_bits() const;
};

struct CompressedUpdate {
  std::vector<CompressedTensor> tensors;
  std::int64_t timestamp = 0;
  std::int64_t sender = -1;
  std::int64_t bit_size = 0;
};

// Top-K then quantize each tensor; entries whose decoded value is zero are
// dropped, so a tensor may carry fewer than topk_count entries.
CompressedUpdate compress(const ParamVector& w, const CompressionParams& params,
                          std::uint64_t seed);

ParamVector decompress(const CompressedUpdate& u, const ParamLayout& layout);
ParamVector decompress(const CompressedUpdate& u, const ModelSpec& spec);

// Wire format, per tensor, little-endian:
//   u16 name length, name bytes, u8 rank, u32 per dim, u8 p_q, f32 scale,
//   u32 entry count, u32 index per entry, then codes packed p_q bits each
//   (padded to a byte), or f32 raw values when p_q is 0 or 32.
std::vector<std::uint8_t> encode_tensors(const CompressedUpdate& u);
CompressedUpdate decode_tensors(std::span<const std::uint8_t> bytes);

}  // namespace teasq
