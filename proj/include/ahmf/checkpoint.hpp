#pragma once

// Checkpoint file layout (all integers and reals little-endian):
//
//   "AHMF"  u32 version = 1
//   u32 scale, u32 m, u32 n, u8 gru_shared, u32 guidance_channels
//   u32 tensor_count, then per tensor:
//     u16 name_length, name bytes (UTF-8), u8 ndim, ndim x u32 dims,
//     prod(dims) x f32 values
//   optional optimizer section:
//     u32 tensor_count, records as above (names end in .adam_m / .adam_v),
//     u64 step
//
// The ablation wiring is not stored; it is recovered from the parameter
// names on load.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "ahmf/image_io.hpp"
#include "ahmf/model.hpp"

namespace ahmf {

inline constexpr char kCheckpointMagic[4] = {'A', 'H', 'M', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensorf tensor;
};

struct OptimizerSection {
  std::vector<NamedTensor> moments;
  std::uint64_t step = 0;
};

struct Checkpoint {
  ModelConfig config;
  std::vector<NamedTensor> params;
  std::optional<OptimizerSection> optimizer;
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  void tensor(const NamedTensor& t) {
    if (t.name.size() > 0xFFFF) throw FormatError("checkpoint: name too long");
    u16(static_cast<std::uint16_t>(t.name.size()));
    raw(t.name);
    const Shape& s = t.tensor.shape();
    u8(4);
    u32(static_cast<std::uint32_t>(s.n));
    u32(static_cast<std::uint32_t>(s.c));
    u32(static_cast<std::uint32_t>(s.h));
    u32(static_cast<std::uint32_t>(s.w));
    for (float v : t.tensor.data()) f32(v);
  }

  const std::vector<unsigned char>& bytes() const { return bytes_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::vector<unsigned char> bytes, std::string path)
      : bytes_(std::move(bytes)), path_(std::move(path)) {}

  bool at_end() const { return pos_ == bytes_.size(); }
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + pos_, bytes_.begin() + pos_ + n);
    pos_ += n;
    return s;
  }

  NamedTensor tensor() {
    NamedTensor t;
    t.name = raw(u16());
    const int ndim = u8();
    if (ndim < 1 || ndim > 4) fail("tensor " + t.name + " has ndim " + std::to_string(ndim));
    int dims[4] = {1, 1, 1, 1};
    for (int i = 0; i < ndim; ++i) {
      const std::uint32_t d = u32();
      if (d == 0 || d > (1u << 28)) fail("tensor " + t.name + " has a bad dimension");
      dims[4 - ndim + i] = static_cast<int>(d);
    }
    const Shape s{dims[0], dims[1], dims[2], dims[3]};
    need(s.numel() * 4);
    std::vector<float> values(s.numel());
    for (float& v : values) v = f32();
    t.tensor = Tensorf(s, std::move(values));
    return t;
  }

  [[noreturn]] void fail(const std::string& why) const {
    throw FormatError(path_ + ": " + why);
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) fail("truncated checkpoint");
  }
  std::uint64_t get(int n) {
    need(n);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += n;
    return v;
  }

  std::vector<unsigned char> bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.raw(std::string(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ck.config.scale));
  w.u32(static_cast<std::uint32_t>(ck.config.depth));
  w.u32(static_cast<std::uint32_t>(ck.config.width));
  w.u8(ck.config.gru_shared ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(ck.config.guidance_channels));
  w.u32(static_cast<std::uint32_t>(ck.params.size()));
  for (const auto& t : ck.params) w.tensor(t);
  if (ck.optimizer) {
    w.u32(static_cast<std::uint32_t>(ck.optimizer->moments.size()));
    for (const auto& t : ck.optimizer->moments) w.tensor(t);
    w.u64(ck.optimizer->step);
  }
  return w.bytes();
}

inline void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  const auto bytes = encode_checkpoint(ck);
  // Write to a sibling file first so a failed write never clobbers the
  // previous checkpoint.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw FormatError(tmp + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError(tmp + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open checkpoint");
  detail::ByteReader r(std::vector<unsigned char>((std::istreambuf_iterator<char>(in)),
                                                  std::istreambuf_iterator<char>()),
                       path);
  if (r.raw(4) != std::string(kCheckpointMagic, 4)) r.fail("bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    r.fail("unsupported version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.config.scale = static_cast<int>(r.u32());
  ck.config.depth = static_cast<int>(r.u32());
  ck.config.width = static_cast<int>(r.u32());
  ck.config.gru_shared = r.u8() != 0;
  ck.config.guidance_channels = static_cast<int>(r.u32());
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) ck.params.push_back(r.tensor());
  if (!r.at_end()) {
    OptimizerSection opt;
    const std::uint32_t moments = r.u32();
    for (std::uint32_t i = 0; i < moments; ++i) opt.moments.push_back(r.tensor());
    opt.step = r.u64();
    ck.optimizer = std::move(opt);
    if (!r.at_end()) r.fail("trailing bytes after optimizer section");
  }
  try {
    ck.config.validate();
  } catch (const std::invalid_argument& e) {
    r.fail(e.what());
  }
  return ck;
}

template <typename T>
Checkpoint make_checkpoint(const AhmfModel<T>& model) {
  Checkpoint ck;
  ck.config = model.config();
  for (const auto& e : model.parameters()) {
    ck.params.push_back({e.name, e.tensor.template cast<float>()});
  }
  return ck;
}

// Recovers the ablation wiring from the parameter names.
inline ModelConfig infer_variant(const Checkpoint& ck) {
  ModelConfig cfg = ck.config;
  bool has_mmaf = false, has_concat = false, has_fgru = false, has_bgru = false;
  for (const auto& t : ck.params) {
    has_mmaf = has_mmaf || t.name.rfind("mmaf.", 0) == 0;
    has_concat = has_concat || t.name.rfind("concat.", 0) == 0;
    has_fgru = has_fgru || t.name.rfind("bhfc.fgru.", 0) == 0;
    has_bgru = has_bgru || t.name.rfind("bhfc.bgru.", 0) == 0;
  }
  cfg.fusion = has_mmaf     ? FusionKind::mmaf
               : has_concat ? FusionKind::concatenation
                            : FusionKind::addition;
  cfg.collaboration = has_fgru && has_bgru ? Collaboration::bidirectional
                      : has_fgru           ? Collaboration::forward_only
                      : has_bgru           ? Collaboration::backward_only
                                           : Collaboration::none;
  return cfg;
}

template <typename T = float>
AhmfModel<T> model_from_checkpoint(const Checkpoint& ck) {
  auto model = AhmfModel<T>::build(infer_variant(ck), 0);
  auto& store = model.parameters();
  if (store.size() != ck.params.size()) {
    throw FormatError("checkpoint: holds " + std::to_string(ck.params.size()) +
                      " tensors, configuration expects " +
                      std::to_string(store.size()));
  }
  for (const auto& t : ck.params) {
    if (!store.contains(t.name)) {
      throw FormatError("checkpoint: unexpected parameter " + t.name);
    }
    Tensor<T>& dst = store.get(t.name);
    if (dst.shape() != t.tensor.shape()) {
      throw FormatError("checkpoint: " + t.name + " has shape " +
                        t.tensor.shape().str() + ", expected " +
                        dst.shape().str());
    }
    auto out = dst.mutable_data();
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = static_cast<T>(t.tensor.data()[i]);
    }
  }
  return model;
}

}  // namespace ahmf
