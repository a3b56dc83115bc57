#pragma once

// Binary checkpoint layout (all integers and floats little-endian):
//
//   magic      8 bytes  "GECOFLD\0"
//   version    u32      = 1
//   input_dim  u32
//   output_dim u32
//   activation u32      0 = tanh, 1 = softplus
//   n_hidden   u32, then n_hidden x u32 hidden widths
//   n_meta     u32, then n_meta x (u32 len, key bytes, u32 len, value bytes)
//   per layer: weights f64[out*in] row-major, bias f64[out]

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "geco/errors.hpp"
#include "geco/net.hpp"

namespace geco {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

inline constexpr std::array<char, 8> kCheckpointMagic{'G', 'E', 'C', 'O', 'F', 'L', 'D', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using Metadata = std::map<std::string, std::string>;

struct Checkpoint {
  FieldParams params;
  Metadata metadata;
};

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view in) : in_(in) {}
  void raw(void* p, std::size_t n) {
    if (in_.size() - pos_ < n) throw FormatError("checkpoint truncated");
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    raw(&v, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    if (in_.size() - pos_ < n) throw FormatError("checkpoint truncated");
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == in_.size(); }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string save_checkpoint(const FieldParams& params, const Metadata& metadata = {}) {
  params.spec.validate();
  if (!params.same_shape(FieldParams::zeros(params.spec)))
    throw DimensionError("parameters inconsistent with their network spec");

  detail::ByteWriter w;
  w.raw(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.u32(kCheckpointVersion);
  const NetworkSpec& spec = params.spec;
  w.u32(static_cast<std::uint32_t>(spec.input_dim));
  w.u32(static_cast<std::uint32_t>(spec.output_dim));
  w.u32(static_cast<std::uint32_t>(spec.activation));
  w.u32(static_cast<std::uint32_t>(spec.hidden_dims.size()));
  for (std::size_t h : spec.hidden_dims) w.u32(static_cast<std::uint32_t>(h));
  w.u32(static_cast<std::uint32_t>(metadata.size()));
  for (const auto& [k, v] : metadata) {
    w.str(k);
    w.str(v);
  }
  for (auto block : params.blocks())
    for (double x : block) w.f64(x);
  return w.take();
}

inline Checkpoint load_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes);
  std::array<char, 8> magic{};
  r.raw(magic.data(), magic.size());
  if (magic != kCheckpointMagic) throw FormatError("bad checkpoint magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));

  NetworkSpec spec;
  spec.input_dim = r.u32();
  spec.output_dim = r.u32();
  const std::uint32_t act = r.u32();
  if (act > 1) throw FormatError("unknown activation code in checkpoint");
  spec.activation = static_cast<Activation>(act);
  const std::uint32_t n_hidden = r.u32();
  if (n_hidden > 1024) throw FormatError("implausible hidden layer count");
  spec.hidden_dims.clear();
  for (std::uint32_t i = 0; i < n_hidden; ++i) spec.hidden_dims.push_back(r.u32());
  constexpr std::size_t kMaxWidth = std::size_t{1} << 24;
  if (spec.input_dim > kMaxWidth || spec.output_dim > kMaxWidth)
    throw FormatError("implausible layer width in checkpoint");
  for (std::size_t h : spec.hidden_dims)
    if (h > kMaxWidth) throw FormatError("implausible layer width in checkpoint");
  try {
    spec.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad network spec in checkpoint: ") + e.what());
  }

  Checkpoint ck;
  const std::uint32_t n_meta = r.u32();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    ck.metadata[std::move(k)] = r.str();
  }
  std::size_t expected = 0;
  for (std::size_t l = 0; l < spec.layer_count(); ++l)
    expected += spec.layer_out(l) * (spec.layer_in(l) + 1);
  if (r.remaining() < expected * sizeof(double)) throw FormatError("checkpoint truncated");
  ck.params = FieldParams::zeros(spec);
  for (auto block : ck.params.blocks())
    for (double& x : block) x = r.f64();
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint payload");
  return ck;
}

inline void write_checkpoint_file(const std::string& path, const FieldParams& params,
                                  const Metadata& metadata = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  const std::string bytes = save_checkpoint(params, metadata);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path);
}

inline Checkpoint read_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_checkpoint(ss.str());
}

/// 64-bit FNV-1a, used for config hashes and checkpoint digests.
inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

}  // namespace geco
