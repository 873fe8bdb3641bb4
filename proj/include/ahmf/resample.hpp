#pragma once

// Separable bicubic resampling with the Catmull-Rom kernel (a = -0.5).
// Pixel centers sit at i + 0.5 (align-corners = false). When shrinking, the
// kernel is stretched by the scale factor so it acts as a low-pass filter.
// Taps that fall outside the image read the nearest edge pixel.

#include <algorithm>
#include <cmath>
#include <vector>

#include "ahmf/tensor.hpp"

namespace ahmf {

inline constexpr double kCubicA = -0.5;

inline double cubic_weight(double x, double a = kCubicA) {
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

struct ResampleTaps {
  std::vector<std::vector<double>> weights;  // normalized, per output sample
  std::vector<std::vector<int>> index;       // clamped source indices
};

inline ResampleTaps make_taps(int in_size, int out_size) {
  ResampleTaps taps;
  taps.weights.resize(out_size);
  taps.index.resize(out_size);
  const double scale = static_cast<double>(in_size) / out_size;
  const double filter_scale = std::max(scale, 1.0);
  const double support = 2.0 * filter_scale;
  for (int i = 0; i < out_size; ++i) {
    const double center = (i + 0.5) * scale;
    const int lo = static_cast<int>(std::floor(center - support));
    const int hi = static_cast<int>(std::ceil(center + support));
    double total = 0.0;
    auto& w = taps.weights[i];
    auto& idx = taps.index[i];
    for (int j = lo; j <= hi; ++j) {
      const double v = cubic_weight((j + 0.5 - center) / filter_scale);
      if (v == 0.0) continue;
      w.push_back(v);
      idx.push_back(std::clamp(j, 0, in_size - 1));
      total += v;
    }
    for (double& v : w) v /= total;
  }
  return taps;
}

// Resizes every (n, c) plane of img to out_h x out_w. The result is a
// constant tensor (no tape history).
template <typename T>
Tensor<T> bicubic_resize(const Tensor<T>& img, int out_h, int out_w) {
  const Shape& s = img.shape();
  if (out_h < 1 || out_w < 1) {
    throw ShapeError("bicubic_resize: output size must be positive, got " +
                     std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  const ResampleTaps tx = make_taps(s.w, out_w);
  const ResampleTaps ty = make_taps(s.h, out_h);
  const Shape os{s.n, s.c, out_h, out_w};
  std::vector<T> out(os.numel());
  std::vector<double> tmp(static_cast<std::size_t>(s.h) * out_w);
  for (int plane = 0; plane < s.n * s.c; ++plane) {
    const T* src = img.data().data() + plane * s.plane();
    for (int y = 0; y < s.h; ++y) {
      const T* row = src + static_cast<std::size_t>(y) * s.w;
      for (int x = 0; x < out_w; ++x) {
        double acc = 0.0;
        for (std::size_t t = 0; t < tx.weights[x].size(); ++t) {
          acc += tx.weights[x][t] * row[tx.index[x][t]];
        }
        tmp[static_cast<std::size_t>(y) * out_w + x] = acc;
      }
    }
    T* dst = out.data() + plane * os.plane();
    for (int y = 0; y < out_h; ++y) {
      for (int x = 0; x < out_w; ++x) {
        double acc = 0.0;
        for (std::size_t t = 0; t < ty.weights[y].size(); ++t) {
          acc += ty.weights[y][t] *
                 tmp[static_cast<std::size_t>(ty.index[y][t]) * out_w + x];
        }
        dst[static_cast<std::size_t>(y) * out_w + x] = static_cast<T>(acc);
      }
    }
  }
  return Tensor<T>(os, std::move(out));
}

}  // namespace ahmf
