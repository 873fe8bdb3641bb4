#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "ahmf/ahmf.hpp"

namespace ahmf::testing {

inline Tensorf random_tensorf(Rng& rng, Shape s, double lo = 0.0, double hi = 1.0,
                              bool requires_grad = false) {
  std::vector<float> v(s.numel());
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensorf(s, std::move(v), requires_grad);
}

inline Tensord random_tensord(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0,
                              bool requires_grad = false) {
  std::vector<double> v(s.numel());
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensord(s, std::move(v), requires_grad);
}

// Direct seven-loop cross-correlation, accumulated in double.
inline std::vector<double> conv_oracle(const Tensorf& x, const Tensorf& w, const Tensorf& b,
                                       int stride, int pad, Shape* out_shape) {
  const Shape xs = x.shape(), ws = w.shape();
  const int oh = (xs.h + 2 * pad - ws.h) / stride + 1;
  const int ow = (xs.w + 2 * pad - ws.w) / stride + 1;
  *out_shape = Shape{xs.n, ws.n, oh, ow};
  std::vector<double> out(out_shape->numel());
  std::size_t i = 0;
  for (int n = 0; n < xs.n; ++n)
    for (int co = 0; co < ws.n; ++co)
      for (int y = 0; y < oh; ++y)
        for (int xo = 0; xo < ow; ++xo, ++i) {
          double acc = b.data()[co];
          for (int ci = 0; ci < xs.c; ++ci)
            for (int ky = 0; ky < ws.h; ++ky)
              for (int kx = 0; kx < ws.w; ++kx) {
                const int iy = y * stride + ky - pad, ix = xo * stride + kx - pad;
                if (iy < 0 || ix < 0 || iy >= xs.h || ix >= xs.w) continue;
                acc += static_cast<double>(x.at(n, ci, iy, ix)) * w.at(co, ci, ky, kx);
              }
          out[i] = acc;
        }
  return out;
}

struct Scene {
  Tensorf depth;     // 1 x 1 x size x size in [0, 1]
  Tensorf guidance;  // 1 x 3 x size x size in [0, 1]
};

// Tilted background plane with a few fronto-parallel boxes and a disk.
// The guidance colors each object and adds mild texture.
inline Scene synthetic_scene(int size, std::uint64_t seed) {
  Rng rng(seed);
  struct Box { double y0, x0, y1, x1, z; double r, g, b; };
  std::vector<Box> boxes;
  for (int i = 0; i < 3; ++i) {
    const double y0 = rng.uniform(0.05, 0.6), x0 = rng.uniform(0.05, 0.6);
    boxes.push_back({y0, x0, y0 + rng.uniform(0.2, 0.35), x0 + rng.uniform(0.2, 0.35),
                     rng.uniform(0.55, 0.95), rng.uniform(), rng.uniform(), rng.uniform()});
  }
  const double cy = rng.uniform(0.3, 0.7), cx = rng.uniform(0.3, 0.7);
  const double rad = rng.uniform(0.1, 0.2), cz = rng.uniform(0.1, 0.3);
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  std::vector<float> depth(plane), guide(3 * plane);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double u = (x + 0.5) / size, v = (y + 0.5) / size;
      double z = 0.3 + 0.15 * u + 0.1 * v;
      double c[3] = {0.4 + 0.2 * u, 0.5, 0.6 - 0.2 * v};
      for (const auto& b : boxes) {
        if (v >= b.y0 && v < b.y1 && u >= b.x0 && u < b.x1) {
          z = b.z;
          c[0] = b.r; c[1] = b.g; c[2] = b.b;
        }
      }
      if ((u - cx) * (u - cx) + (v - cy) * (v - cy) < rad * rad) {
        z = cz;
        c[0] = 0.9; c[1] = 0.2; c[2] = 0.1;
      }
      const std::size_t i = static_cast<std::size_t>(y) * size + x;
      depth[i] = static_cast<float>(z);
      for (int k = 0; k < 3; ++k) {
        const double texture = 0.05 * std::sin(0.7 * x + 1.3 * k) * std::cos(0.5 * y);
        guide[k * plane + i] = static_cast<float>(std::clamp(c[k] + texture, 0.0, 1.0));
      }
    }
  }
  return {Tensorf(Shape{1, 1, size, size}, std::move(depth)),
          Tensorf(Shape{1, 3, size, size}, std::move(guide))};
}

inline TrainingBatch scene_batch(const Scene& s, int scale) {
  DegradationSpec spec;
  spec.scale = scale;
  return {s.guidance, degrade(s.depth, spec), s.depth};
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("ahmf_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace ahmf::testing
