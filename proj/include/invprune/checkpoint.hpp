#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "invprune/mask.hpp"
#include "invprune/network.hpp"
#include "invprune/prune.hpp"

namespace invprune {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Self-describing little-endian container:
//   magic "IVP1" | format u32 | dtype u8 (4|8) | flags u8 | reserved u16
//   layer_count u32 | encoder_end u32 | output_classes u32
//   seed_count u32 | seeds u64[...]
//   per layer: kind u8 (0 linear, 1 batchnorm, 2 relu) | in u32 | out u32
//   parameter payload per layer in declaration order
//     linear: weight, bias          batchnorm: gamma, beta, run_mean, run_var
//   flags bit0: the same payload again for the theta0 snapshot
//   flags bit1: requested_r f64, then per linear layer a keep bitmap,
//               LSB-first, ceil(weights/8) bytes
// dtype 4 stores parameters as IEEE f32 (values round through float on save).
namespace ckpt_detail {

constexpr std::uint32_t kMagic = 0x31505649;  // "IVP1"
constexpr std::uint32_t kFormat = 1;

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}
inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

class Reader {
 public:
  Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(byte()); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(byte()) | (static_cast<std::uint16_t>(byte()) << 8); }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte()) << (8 * i);
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  bool done() const { return pos_ == data_.size(); }
  [[noreturn]] void fail(const std::string& what) const {
    throw CheckpointError("checkpoint " + path_ + ": " + what);
  }

 private:
  unsigned char byte() {
    if (pos_ >= data_.size()) fail("truncated payload");
    return static_cast<unsigned char>(data_[pos_++]);
  }
  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

inline void put_layers(std::string& out, const std::vector<LayerState>& layers, int dtype) {
  for (const LayerState& layer : layers) {
    auto emit = [&](const Tensor& t) {
      for (double v : t.values())
        dtype == 4 ? put_f32(out, static_cast<float>(v)) : put_f64(out, v);
    };
    for (const Tensor& p : layer.params) emit(p);
    for (const Tensor& b : layer.buffers) emit(b);
  }
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::string& path, const ModelState& model, int dtype = 8,
                            const std::vector<std::uint64_t>& seeds = {}) {
  if (dtype != 4 && dtype != 8)
    throw std::invalid_argument("save_checkpoint: dtype must be 4 or 8 bytes");
  using namespace ckpt_detail;
  std::string out;
  put_u32(out, kMagic);
  put_u32(out, kFormat);
  out.push_back(static_cast<char>(dtype));
  std::uint8_t flags = 0;
  if (!model.init_snapshot.empty()) flags |= 1;
  if (model.mask) flags |= 2;
  out.push_back(static_cast<char>(flags));
  put_u16(out, 0);
  put_u32(out, static_cast<std::uint32_t>(model.spec.layers.size()));
  put_u32(out, static_cast<std::uint32_t>(model.spec.encoder_end));
  put_u32(out, static_cast<std::uint32_t>(model.spec.output_classes));
  put_u32(out, static_cast<std::uint32_t>(seeds.size()));
  for (std::uint64_t s : seeds) put_u64(out, s);
  for (const LayerSpec& l : model.spec.layers) {
    out.push_back(static_cast<char>(l.kind == LayerKind::linear      ? 0
                                    : l.kind == LayerKind::batchnorm ? 1
                                                                     : 2));
    put_u32(out, static_cast<std::uint32_t>(l.in_dim));
    put_u32(out, static_cast<std::uint32_t>(l.out_dim));
  }
  put_layers(out, model.layers, dtype);
  if (flags & 1) put_layers(out, model.init_snapshot, dtype);
  if (flags & 2) {
    put_f64(out, model.mask->requested_r);
    for (std::size_t i = 0; i < model.mask->keep.size(); ++i) {
      const auto& keep = model.mask->keep[i];
      if (keep.empty()) continue;
      for (std::size_t base = 0; base < keep.size(); base += 8) {
        std::uint8_t b = 0;
        for (std::size_t bit = 0; bit < 8 && base + bit < keep.size(); ++bit)
          if (keep[base + bit]) b |= static_cast<std::uint8_t>(1u << bit);
        out.push_back(static_cast<char>(b));
      }
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw CheckpointError("checkpoint: write failed for " + path);
}

struct CheckpointMeta {
  std::vector<std::uint64_t> seeds;
  int dtype = 8;
};

inline ModelState load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  ckpt_detail::Reader r(std::move(data), path);
  if (r.u32() != ckpt_detail::kMagic) r.fail("bad magic, not a checkpoint");
  std::uint32_t format = r.u32();
  if (format != ckpt_detail::kFormat)
    r.fail("unsupported format version " + std::to_string(format));
  int dtype = r.u8();
  if (dtype != 4 && dtype != 8) r.fail("unsupported dtype " + std::to_string(dtype));
  std::uint8_t flags = r.u8();
  r.u16();
  std::uint32_t layer_count = r.u32();
  std::uint32_t encoder_end = r.u32();
  std::uint32_t classes = r.u32();
  std::uint32_t seed_count = r.u32();
  std::vector<std::uint64_t> seeds;
  for (std::uint32_t i = 0; i < seed_count; ++i) seeds.push_back(r.u64());

  NetworkSpec spec;
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    std::uint8_t kind = r.u8();
    if (kind > 2) r.fail("unknown layer kind " + std::to_string(kind));
    LayerSpec l;
    l.kind = kind == 0 ? LayerKind::linear : kind == 1 ? LayerKind::batchnorm : LayerKind::relu;
    l.in_dim = r.u32();
    l.out_dim = r.u32();
    spec.layers.push_back(l);
  }
  spec.encoder_end = encoder_end;
  spec.output_classes = classes;
  try {
    spec.validate();
  } catch (const std::exception& e) {
    r.fail(std::string("inconsistent network description: ") + e.what());
  }

  auto read_layers = [&]() {
    std::vector<LayerState> layers;
    for (const LayerSpec& l : spec.layers) {
      LayerState st;
      auto pull = [&](Tensor t) {
        for (auto& v : t.values()) v = dtype == 4 ? static_cast<double>(r.f32()) : r.f64();
        return t;
      };
      if (l.kind == LayerKind::linear) {
        st.params.push_back(pull(Tensor({l.out_dim, l.in_dim})));
        st.params.push_back(pull(Tensor({l.out_dim})));
      } else if (l.kind == LayerKind::batchnorm) {
        st.params.push_back(pull(Tensor({l.in_dim})));
        st.params.push_back(pull(Tensor({l.in_dim})));
        st.buffers.push_back(pull(Tensor({l.in_dim})));
        st.buffers.push_back(pull(Tensor({l.in_dim})));
      }
      layers.push_back(std::move(st));
    }
    return layers;
  };

  ModelState model;
  model.spec = spec;
  model.layers = read_layers();
  if (flags & 1) model.init_snapshot = read_layers();
  if (flags & 2) {
    PruneMask mask;
    mask.requested_r = r.f64();
    mask.keep.resize(spec.layers.size());
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      if (spec.layers[i].kind != LayerKind::linear) continue;
      std::size_t n = spec.layers[i].in_dim * spec.layers[i].out_dim;
      mask.keep[i].resize(n);
      for (std::size_t base = 0; base < n; base += 8) {
        std::uint8_t b = r.u8();
        for (std::size_t bit = 0; bit < 8 && base + bit < n; ++bit)
          mask.keep[i][base + bit] = (b >> bit) & 1u;
      }
    }
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      if (!prunable_layer(spec, i)) continue;
      mask.prunable += mask.keep[i].size();
      for (std::uint8_t k : mask.keep[i]) mask.kept += k ? 1 : 0;
    }
    model.mask = std::move(mask);
  }
  if (!r.done()) r.fail("trailing bytes after payload");
  model.alloc_grads();
  if (meta) {
    meta->seeds = seeds;
    meta->dtype = dtype;
  }
  return model;
}

}  // namespace invprune
