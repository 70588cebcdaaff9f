#include "teasq/compression.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>

#include "teasq/errors.hpp"
#include "teasq/rng.hpp"

namespace teasq {

bool is_allowed_bits(int p_q) {
  switch (p_q) {
    case 0: case 2: case 4: case 6: case 8: case 16: case 32: return true;
    default: return false;
  }
}

void CompressionParams::validate() const {
  if (!(p_s > 0.0 && p_s <= 100.0))
    throw ConfigError("p_s must lie in (0, 100], got " + std::to_string(p_s));
  if (!is_allowed_bits(p_q))
    throw ConfigError("p_q must be one of {0, 2, 4, 6, 8, 16, 32}, got " + std::to_string(p_q));
}

std::int32_t quant_levels(int p_q) {
  if (!is_allowed_bits(p_q) || p_q == 0 || p_q == 32)
    throw ConfigError("no quantization levels for p_q = " + std::to_string(p_q));
  return (std::int32_t{1} << (p_q - 1)) - 1;
}

std::size_t topk_count(std::size_t n, double p_s) {
  const double k = std::ceil(p_s * static_cast<double>(n) / 100.0);
  return std::clamp<std::size_t>(static_cast<std::size_t>(k), 1, n);
}

SparseSelection topk_sparsify(std::span<const float> tensor, double p_s) {
  if (tensor.empty()) throw ContractViolation("topk_sparsify on an empty tensor");
  if (!(p_s > 0.0 && p_s <= 100.0)) throw ContractViolation("p_s must lie in (0, 100]");
  const std::size_t n = tensor.size();
  const std::size_t k = topk_count(n, p_s);
  SparseSelection out;
  if (k == n) {
    out.indices.resize(n);
    std::iota(out.indices.begin(), out.indices.end(), std::uint32_t{0});
    out.values.assign(tensor.begin(), tensor.end());
    return out;
  }
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), std::uint32_t{0});
  auto before = [&](std::uint32_t a, std::uint32_t b) {
    const float ma = std::fabs(tensor[a]);
    const float mb = std::fabs(tensor[b]);
    return ma > mb || (ma == mb && a < b);
  };
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                   before);
  order.resize(k);
  std::sort(order.begin(), order.end());
  out.indices = std::move(order);
  out.values.reserve(k);
  for (auto i : out.indices) out.values.push_back(tensor[i]);
  return out;
}

Quantized quantize(std::span<const float> values, int p_q, std::uint64_t seed,
                   std::span<const std::uint32_t> keys) {
  if (!is_allowed_bits(p_q))
    throw ConfigError("p_q must be one of {0, 2, 4, 6, 8, 16, 32}, got " + std::to_string(p_q));
  if (!keys.empty() && keys.size() != values.size())
    throw ContractViolation("quantize keys must align with values");
  Quantized q;
  q.p_q = p_q;
  if (p_q == 0 || p_q == 32) {
    q.raw.assign(values.begin(), values.end());
    q.scale = 1.0f;
    return q;
  }
  float scale = 0.0f;
  for (float v : values) {
    if (!std::isfinite(v)) throw ContractViolation("quantize received a non-finite value");
    scale = std::max(scale, std::fabs(v));
  }
  q.scale = scale;
  q.codes.assign(values.size(), 0);
  if (scale == 0.0f) return q;
  const std::int32_t L = quant_levels(p_q);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double x = static_cast<double>(values[i]) / scale * L;
    const double lower = std::floor(x);
    const double u = hashed_uniform01(seed, keys.empty() ? i : keys[i]);
    auto code = static_cast<std::int32_t>(lower) + (u < x - lower ? 1 : 0);
    q.codes[i] = std::clamp(code, -L, L);
  }
  return q;
}

namespace {

float decode_code(std::int32_t code, std::int32_t L, float scale) {
  if (code < -L || code > L) throw CorruptPayload("quantized code out of range");
  return static_cast<float>(static_cast<double>(code) / L * scale);
}

}  // namespace

std::vector<float> dequantize(const Quantized& q) {
  if (q.p_q == 0 || q.p_q == 32) return q.raw;
  const std::int32_t L = quant_levels(q.p_q);
  std::vector<float> out;
  out.reserve(q.codes.size());
  for (auto c : q.codes) out.push_back(decode_code(c, L, q.scale));
  return out;
}

std::int64_t CompressedTensor::wire_bits() const {
  const auto n = static_cast<std::int64_t>(entries());
  std::int64_t header = 16 + 8 * static_cast<std::int64_t>(name.size()) + 8 +
                        32 * static_cast<std::int64_t>(original_shape.size()) + 8 + 32 + 32;
  std::int64_t body = 32 * n;
  if (p_q == 0 || p_q == 32)
    body += 32 * n;
  else
    body += ((n * p_q + 7) / 8) * 8;
  return header + body;
}

CompressedUpdate compress(const ParamVector& w, const CompressionParams& params,
                          std::uint64_t seed) {
  params.validate();
  CompressedUpdate out;
  out.tensors.reserve(w.tensors.size());
  for (std::size_t t = 0; t < w.tensors.size(); ++t) {
    const auto& src = w.tensors[t];
    CompressedTensor ct;
    ct.name = src.name;
    ct.original_shape = src.shape;
    ct.p_q = params.p_q;
    if (src.values.empty()) {
      out.bit_size += ct.wire_bits();
      out.tensors.push_back(std::move(ct));
      continue;
    }
    auto sel = topk_sparsify(src.values, params.p_s);
    auto q = quantize(sel.values, params.p_q, derive_seed(seed, {0xC0DE, t}), sel.indices);
    ct.scale = q.scale;
    const bool raw = params.is_raw();
    for (std::size_t i = 0; i < sel.indices.size(); ++i) {
      if (raw) {
        if (std::bit_cast<std::uint32_t>(q.raw[i]) == 0) continue;
        ct.raw.push_back(q.raw[i]);
      } else {
        if (q.codes[i] == 0) continue;
        ct.codes.push_back(q.codes[i]);
      }
      ct.indices.push_back(sel.indices[i]);
    }
    out.bit_size += ct.wire_bits();
    out.tensors.push_back(std::move(ct));
  }
  return out;
}

ParamVector decompress(const CompressedUpdate& u, const ParamLayout& layout) {
  if (u.tensors.size() != layout.size())
    throw CorruptPayload("compressed update has " + std::to_string(u.tensors.size()) +
                         " tensors, layout expects " + std::to_string(layout.size()));
  ParamVector out;
  out.tensors.reserve(layout.size());
  for (std::size_t t = 0; t < layout.size(); ++t) {
    const auto& ct = u.tensors[t];
    if (ct.name != layout[t].name || ct.original_shape != layout[t].shape)
      throw CorruptPayload("tensor '" + ct.name + "' does not match expected layout");
    Tensor dst{ct.name, ct.original_shape, {}};
    const std::size_t n = dst.num_elements();
    dst.values.assign(n, 0.0f);
    const bool raw = ct.p_q == 0 || ct.p_q == 32;
    if (!is_allowed_bits(ct.p_q)) throw CorruptPayload("invalid p_q in payload");
    const std::size_t entries = ct.indices.size();
    if ((raw ? ct.raw.size() : ct.codes.size()) != entries)
      throw CorruptPayload("tensor '" + ct.name + "' has mismatched index/value counts");
    const std::int32_t L = raw ? 0 : quant_levels(ct.p_q);
    for (std::size_t i = 0; i < entries; ++i) {
      const auto idx = ct.indices[i];
      if (idx >= n) throw CorruptPayload("index out of range in tensor '" + ct.name + "'");
      if (i > 0 && idx <= ct.indices[i - 1])
        throw CorruptPayload("duplicate or unsorted index in tensor '" + ct.name + "'");
      dst.values[idx] = raw ? ct.raw[i] : decode_code(ct.codes[i], L, ct.scale);
    }
    out.tensors.push_back(std::move(dst));
  }
  return out;
}

ParamVector decompress(const CompressedUpdate& u, const ModelSpec& spec) {
  return decompress(u, layout_of(spec));
}

namespace {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const std::string& s) { out_.insert(out_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(out_); }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}
  bool done() const { return pos_ == in_.size(); }
  std::size_t pos() const { return pos_; }
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw CorruptPayload("truncated compressed payload");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{in_[pos_ + i]} << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_tensors(const CompressedUpdate& u) {
  ByteWriter w;
  for (const auto& ct : u.tensors) {
    if (ct.name.size() > 0xFFFF) throw ContractViolation("tensor name too long for wire format");
    w.u16(static_cast<std::uint16_t>(ct.name.size()));
    w.bytes(ct.name);
    w.u8(static_cast<std::uint8_t>(ct.original_shape.size()));
    for (auto d : ct.original_shape) w.u32(static_cast<std::uint32_t>(d));
    w.u8(static_cast<std::uint8_t>(ct.p_q));
    w.f32(ct.scale);
    w.u32(static_cast<std::uint32_t>(ct.entries()));
    for (auto idx : ct.indices) w.u32(idx);
    if (ct.p_q == 0 || ct.p_q == 32) {
      for (float v : ct.raw) w.f32(v);
      continue;
    }
    const std::int32_t L = quant_levels(ct.p_q);
    auto& buf = w.buffer();
    const std::size_t start = buf.size();
    buf.resize(start + (ct.codes.size() * static_cast<std::size_t>(ct.p_q) + 7) / 8, 0);
    std::size_t bit = 0;
    for (auto c : ct.codes) {
      const auto biased = static_cast<std::uint32_t>(c + L);
      for (int b = 0; b < ct.p_q; ++b, ++bit)
        if ((biased >> b) & 1u) buf[start + bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
    }
  }
  return w.take();
}

CompressedUpdate decode_tensors(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  CompressedUpdate u;
  while (!r.done()) {
    CompressedTensor ct;
    const auto start = r.pos();
    ct.name = r.str(r.u16());
    const auto rank = r.u8();
    for (int i = 0; i < rank; ++i) ct.original_shape.push_back(r.u32());
    ct.p_q = r.u8();
    if (!is_allowed_bits(ct.p_q)) throw CorruptPayload("invalid p_q in payload");
    ct.scale = r.f32();
    const auto n = r.u32();
    ct.indices.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) ct.indices.push_back(r.u32());
    if (ct.p_q == 0 || ct.p_q == 32) {
      for (std::uint32_t i = 0; i < n; ++i) ct.raw.push_back(r.f32());
    } else {
      const std::int32_t L = quant_levels(ct.p_q);
      auto packed = r.take((std::size_t{n} * static_cast<std::size_t>(ct.p_q) + 7) / 8);
      std::size_t bit = 0;
      for (std::uint32_t i = 0; i < n; ++i) {
        std::uint32_t biased = 0;
        for (int b = 0; b < ct.p_q; ++b, ++bit)
          if ((packed[bit / 8] >> (bit % 8)) & 1u) biased |= 1u << b;
        const auto code = static_cast<std::int32_t>(biased) - L;
        if (code > L) throw CorruptPayload("quantized code out of range");
        ct.codes.push_back(code);
      }
    }
    u.bit_size += static_cast<std::int64_t>(8 * (r.pos() - start));
    u.tensors.push_back(std::move(ct));
  }
  return u;
}

}  // namespace teasq
