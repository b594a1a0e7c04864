// SPDX-License-Identifier: Apache-2.0
/**
 * @file   checkpoint.hpp
 * @brief  Binary model checkpoints.
 *
 * Full precision ("FKLM"):
 *   magic[4] version:u32 V:u32 D:u32 H:u32, then the 11 tensors in the order
 *   W Wi Ui bi Wc Uc bc Wo Uo bo P as row-major f32.
 * Quantized ("FKLQ"):
 *   same header, then per tensor: scale:f32 zero_point:f32 int8[size].
 * All integers and floats are little-endian.
 */
#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <string_view>

#include "fedlm/cifg.hpp"
#include "fedlm/quantize.hpp"

namespace fedlm {

inline constexpr std::string_view checkpoint_magic = "FKLM";
inline constexpr std::string_view quantized_magic = "FKLQ";
inline constexpr std::uint32_t checkpoint_version = 1;

namespace detail {

inline void put_u32(std::string &out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b)
    out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

inline void put_f32(std::string &out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

class Reader {
public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n) {
    if (bytes_.size() - pos_ < n)
      throw Error("truncated checkpoint");
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    const auto s = take(4);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[b])) << (8 * b);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  bool done() const { return pos_ == bytes_.size(); }

private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

inline void put_header(std::string &out, std::string_view magic, const CifgConfig &c) {
  require(c.V <= std::numeric_limits<std::uint32_t>::max() &&
              c.D <= std::numeric_limits<std::uint32_t>::max() &&
              c.H <= std::numeric_limits<std::uint32_t>::max(),
          "model dimensions exceed checkpoint range");
  out.append(magic);
  put_u32(out, checkpoint_version);
  put_u32(out, static_cast<std::uint32_t>(c.V));
  put_u32(out, static_cast<std::uint32_t>(c.D));
  put_u32(out, static_cast<std::uint32_t>(c.H));
}

inline CifgConfig get_header(Reader &in, std::string_view magic) {
  if (in.take(4) != magic)
    throw Error("bad checkpoint magic (expected " + std::string(magic) + ")");
  if (in.u32() != checkpoint_version)
    throw Error("unsupported checkpoint version");
  CifgConfig c;
  c.V = in.u32();
  c.D = in.u32();
  c.H = in.u32();
  c.validate();
  return c;
}

} // namespace detail

template <class T> std::string encode_checkpoint(const CifgModel<T> &model) {
  std::string out;
  out.reserve(20 + 4 * model.size());
  detail::put_header(out, checkpoint_magic, model.config());
  for (std::size_t t = 0; t < num_tensors; ++t)
    for (T x : model.tensor(static_cast<TensorId>(t)).flat())
      detail::put_f32(out, static_cast<float>(x));
  return out;
}

template <class T> CifgModel<T> decode_checkpoint(std::string_view bytes) {
  detail::Reader in(bytes);
  CifgModel<T> model(detail::get_header(in, checkpoint_magic));
  for (std::size_t t = 0; t < num_tensors; ++t)
    for (T &x : model.tensor(static_cast<TensorId>(t)).flat())
      x = static_cast<T>(in.f32());
  if (!in.done())
    throw Error("trailing bytes in checkpoint");
  return model;
}

inline std::string encode_quantized(const QuantizedModel &qm) {
  std::string out;
  detail::put_header(out, quantized_magic, qm.config);
  for (const auto &t : qm.tensors) {
    detail::put_f32(out, t.scale);
    detail::put_f32(out, t.zero_point);
    for (std::int8_t q : t.q)
      out.push_back(static_cast<char>(q));
  }
  return out;
}

inline QuantizedModel decode_quantized(std::string_view bytes) {
  detail::Reader in(bytes);
  QuantizedModel qm{detail::get_header(in, quantized_magic), {}};
  const auto shapes = tensor_shapes(qm.config);
  for (std::size_t t = 0; t < num_tensors; ++t) {
    auto &qt = qm.tensors[t];
    qt.scale = in.f32();
    qt.zero_point = in.f32();
    const auto raw = in.take(shapes[t].size());
    qt.q.resize(raw.size());
    for (std::size_t n = 0; n < raw.size(); ++n)
      qt.q[n] = static_cast<std::int8_t>(raw[n]);
  }
  if (!in.done())
    throw Error("trailing bytes in checkpoint");
  return qm;
}

inline std::string read_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string &path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw Error("write failed: " + path);
}

/// Loads either format; quantized checkpoints are dequantized.
template <class T> CifgModel<T> load_model(const std::string &path) {
  const auto bytes = read_file(path);
  if (std::string_view(bytes).starts_with(quantized_magic))
    return dequantize<T>(decode_quantized(bytes));
  return decode_checkpoint<T>(bytes);
}

} // namespace fedlm
