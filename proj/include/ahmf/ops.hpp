#pragma once

// Differentiable tensor operations. All ops are pure: the output depends only
// on the input values, and summation order is fixed, so repeated calls give
// bit-identical results.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ahmf/parallel.hpp"
#include "ahmf/tensor.hpp"

namespace ahmf {

namespace kernels {

// Eight independent partial sums, combined pairwise. Fixed order, and
// amenable to vectorization without reassociation flags.
template <typename T>
inline T dot(const T* a, const T* b, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  }
  for (; i < n; ++i) acc[i & 7] += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) +
         ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

template <typename T>
inline T sum(const T* a, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int l = 0; l < 8; ++l) acc[l] += a[i + l];
  }
  for (; i < n; ++i) acc[i & 7] += a[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) +
         ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

template <typename T>
inline void axpy(T* y, T alpha, const T* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

struct ConvGeometry {
  int channels, height, width;
  int kernel, stride, padding;
  int out_h, out_w;

  std::size_t rows() const {
    return static_cast<std::size_t>(channels) * kernel * kernel;
  }
  std::size_t cols() const { return static_cast<std::size_t>(out_h) * out_w; }
  bool is_pointwise() const {
    return kernel == 1 && stride == 1 && padding == 0;
  }
};

// col[(ci*k + ky)*k + kx][oy*out_w + ox] = x[ci][oy*s - p + ky][ox*s - p + kx]
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const int k = g.kernel;
  for (int ci = 0; ci < g.channels; ++ci) {
    const T* plane = x + static_cast<std::size_t>(ci) * g.height * g.width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) *
                           g.cols();
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          T* dst = row + static_cast<std::size_t>(oy) * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.padding + kx;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* dx) {
  const int k = g.kernel;
  for (int ci = 0; ci < g.channels; ++ci) {
    T* plane = dx + static_cast<std::size_t>(ci) * g.height * g.width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row =
            col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) *
                      g.cols();
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.height) continue;
          const T* src = row + static_cast<std::size_t>(oy) * g.out_w;
          T* dst = plane + static_cast<std::size_t>(iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.padding + kx;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace kernels

namespace detail {

inline void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

// Index divisor mapping an output element onto an operand: 1 for a
// same-shape operand, H*W for an N x C x 1 x 1 operand broadcast over space.
struct BroadcastPlan {
  Shape out;
  std::size_t div_a = 1;
  std::size_t div_b = 1;
};

inline BroadcastPlan plan_broadcast(const Shape& a, const Shape& b,
                                    const char* op) {
  auto spatial_bcast = [](const Shape& small, const Shape& big) {
    return small.n == big.n && small.c == big.c && small.h == 1 &&
           small.w == 1;
  };
  BroadcastPlan p;
  if (a == b) {
    p.out = a;
  } else if (spatial_bcast(b, a)) {
    p.out = a;
    p.div_b = a.plane();
  } else if (spatial_bcast(a, b)) {
    p.out = b;
    p.div_a = b.plane();
  } else {
    throw ShapeError(std::string(op) + ": incompatible shapes " + a.str() +
                     " and " + b.str());
  }
  return p;
}

}  // namespace detail

// Cross-correlation with zero padding. weight is Cout x Cin x k x k, bias is
// 1 x Cout x 1 x 1 (or undefined for no bias).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias, int stride = 1, int padding = 0) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  detail::require(ws.c == xs.c, "conv2d: input " + xs.str() + " has " +
                                    std::to_string(xs.c) +
                                    " channels, weight " + ws.str() +
                                    " expects " + std::to_string(ws.c));
  detail::require(ws.h == ws.w && ws.h % 2 == 1,
                  "conv2d: kernel must be square with odd size, got " +
                      ws.str());
  detail::require(stride >= 1, "conv2d: stride must be positive");
  detail::require(padding >= 0, "conv2d: padding must be non-negative");
  if (bias.defined()) {
    detail::require(bias.shape() == Shape{1, ws.n, 1, 1},
                    "conv2d: bias shape " + bias.shape().str() +
                        " does not match " + std::to_string(ws.n) +
                        " output channels");
  }
  const int k = ws.h;
  detail::require(xs.h + 2 * padding >= k && xs.w + 2 * padding >= k,
                  "conv2d: kernel " + std::to_string(k) +
                      " larger than padded input " + xs.str());

  kernels::ConvGeometry g{xs.c,     xs.h,     xs.w,
                          k,        stride,   padding,
                          (xs.h + 2 * padding - k) / stride + 1,
                          (xs.w + 2 * padding - k) / stride + 1};
  const int cout = ws.n;
  const std::size_t K = g.rows();
  const std::size_t P = g.cols();
  const std::size_t in_plane = static_cast<std::size_t>(xs.c) * xs.plane();
  const Shape out_shape{xs.n, cout, g.out_h, g.out_w};

  std::vector<T> out(out_shape.numel());
  std::vector<T> col(g.is_pointwise() ? 0 : K * P);
  const T* wd = weight.data().data();
  const T* bd = bias.defined() ? bias.data().data() : nullptr;
  for (int n = 0; n < xs.n; ++n) {
    const T* xn = x.data().data() + n * in_plane;
    const T* cols = xn;
    if (!g.is_pointwise()) {
      kernels::im2col(xn, g, col.data());
      cols = col.data();
    }
    T* on = out.data() + static_cast<std::size_t>(n) * cout * P;
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
      T* o = on + co * P;
      std::fill(o, o + P, bd ? bd[co] : T(0));
      const T* wr = wd + co * K;
      for (std::size_t q = 0; q < K; ++q) {
        kernels::axpy(o, wr[q], cols + q * P, P);
      }
    }
  }

  return make_op_result<T>(
      out_shape, std::move(out), {&x, &weight, &bias},
      [x, weight, bias, g, cout, K, P, in_plane](std::span<const T> gout) {
        T* gx = grad_sink(x);
        T* gw = grad_sink(weight);
        T* gb = bias.defined() ? grad_sink(bias) : nullptr;
        const T* wd = weight.data().data();
        const int batch = x.shape().n;
        std::vector<T> col(g.is_pointwise() ? 0 : K * P);
        std::vector<T> dcol(gx ? K * P : 0);
        for (int n = 0; n < batch; ++n) {
          const T* go = gout.data() + static_cast<std::size_t>(n) * cout * P;
          if (gw) {
            const T* xn = x.data().data() + n * in_plane;
            const T* cols = xn;
            if (!g.is_pointwise()) {
              kernels::im2col(xn, g, col.data());
              cols = col.data();
            }
#pragma omp parallel for schedule(static)
            for (int co = 0; co < cout; ++co) {
              for (std::size_t q = 0; q < K; ++q) {
                gw[co * K + q] += kernels::dot(go + co * P, cols + q * P, P);
              }
            }
          }
          if (gb) {
            for (int co = 0; co < cout; ++co) {
              gb[co] += kernels::sum(go + co * P, P);
            }
          }
          if (gx) {
            T* target = g.is_pointwise() ? gx + n * in_plane : dcol.data();
#pragma omp parallel for schedule(static)
            for (std::ptrdiff_t q = 0; q < static_cast<std::ptrdiff_t>(K);
                 ++q) {
              T* row = target + q * P;
              if (!g.is_pointwise()) std::fill(row, row + P, T(0));
              for (int co = 0; co < cout; ++co) {
                kernels::axpy(row, wd[co * K + q], go + co * P, P);
              }
            }
            if (!g.is_pointwise()) {
              kernels::col2im_add(dcol.data(), g, gx + n * in_plane);
            }
          }
        }
      });
}

// out[n, c, r*h + dy, r*w + dx] = in[n, c*r*r + dy*r + dx, h, w]
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int r) {
  const Shape& s = x.shape();
  detail::require(r >= 1, "pixel_shuffle: factor must be positive");
  detail::require(s.c % (r * r) == 0,
                  "pixel_shuffle: channels " + std::to_string(s.c) +
                      " not divisible by r^2 = " + std::to_string(r * r));
  const Shape os{s.n, s.c / (r * r), s.h * r, s.w * r};
  // src_index[out_index] for the whole tensor; shared by forward and backward.
  auto index = std::make_shared<std::vector<std::size_t>>(os.numel());
  std::size_t o = 0;
  for (int n = 0; n < os.n; ++n) {
    for (int c = 0; c < os.c; ++c) {
      for (int y = 0; y < os.h; ++y) {
        for (int xx = 0; xx < os.w; ++xx) {
          const int ic = c * r * r + (y % r) * r + (xx % r);
          (*index)[o++] =
              ((static_cast<std::size_t>(n) * s.c + ic) * s.h + y / r) * s.w +
              xx / r;
        }
      }
    }
  }
  std::vector<T> out(os.numel());
  const T* in = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[(*index)[i]];
  return make_op_result<T>(os, std::move(out), {&x},
                           [x, index](std::span<const T> gout) {
                             T* gx = grad_sink(x);
                             for (std::size_t i = 0; i < gout.size(); ++i) {
                               gx[(*index)[i]] += gout[i];
                             }
                           });
}

// Exact inverse of pixel_shuffle with the same channel layout.
template <typename T>
Tensor<T> inverse_pixel_shuffle(const Tensor<T>& x, int r) {
  const Shape& s = x.shape();
  detail::require(r >= 1, "inverse_pixel_shuffle: factor must be positive");
  detail::require(s.h % r == 0 && s.w % r == 0,
                  "inverse_pixel_shuffle: spatial dims of " + s.str() +
                      " not divisible by " + std::to_string(r));
  const Shape os{s.n, s.c * r * r, s.h / r, s.w / r};
  auto index = std::make_shared<std::vector<std::size_t>>(os.numel());
  std::size_t o = 0;
  for (int n = 0; n < os.n; ++n) {
    for (int c = 0; c < os.c; ++c) {
      const int src_c = c / (r * r);
      const int dy = (c % (r * r)) / r;
      const int dx = c % r;
      for (int y = 0; y < os.h; ++y) {
        for (int xx = 0; xx < os.w; ++xx) {
          (*index)[o++] =
              ((static_cast<std::size_t>(n) * s.c + src_c) * s.h + y * r +
               dy) * s.w +
              xx * r + dx;
        }
      }
    }
  }
  std::vector<T> out(os.numel());
  const T* in = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[(*index)[i]];
  return make_op_result<T>(os, std::move(out), {&x},
                           [x, index](std::span<const T> gout) {
                             T* gx = grad_sink(x);
                             for (std::size_t i = 0; i < gout.size(); ++i) {
                               gx[(*index)[i]] += gout[i];
                             }
                           });
}

// Per-(n, c) spatial mean -> N x C x 1 x 1.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const Shape& s = x.shape();
  const std::size_t P = s.plane();
  const Shape os{s.n, s.c, 1, 1};
  std::vector<T> out(os.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = kernels::sum(x.data().data() + i * P, P) / static_cast<T>(P);
  }
  return make_op_result<T>(os, std::move(out), {&x},
                           [x, P](std::span<const T> gout) {
                             T* gx = grad_sink(x);
                             for (std::size_t i = 0; i < gout.size(); ++i) {
                               const T g = gout[i] / static_cast<T>(P);
                               T* row = gx + i * P;
                               for (std::size_t j = 0; j < P; ++j) row[j] += g;
                             }
                           });
}

// Per-(n, c) population variance (divides by H*W), two-pass.
template <typename T>
Tensor<T> global_var_pool(const Tensor<T>& x) {
  const Shape& s = x.shape();
  const std::size_t P = s.plane();
  const Shape os{s.n, s.c, 1, 1};
  std::vector<T> out(os.numel());
  std::vector<T> means(os.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T* row = x.data().data() + i * P;
    const T mu = kernels::sum(row, P) / static_cast<T>(P);
    T acc[8] = {};
    for (std::size_t j = 0; j < P; ++j) {
      const T d = row[j] - mu;
      acc[j & 7] += d * d;
    }
    means[i] = mu;
    out[i] = kernels::sum(acc, 8) / static_cast<T>(P);
  }
  return make_op_result<T>(
      os, std::move(out), {&x},
      [x, P, means = std::move(means)](std::span<const T> gout) {
        T* gx = grad_sink(x);
        for (std::size_t i = 0; i < gout.size(); ++i) {
          const T g = T(2) * gout[i] / static_cast<T>(P);
          const T* row = x.data().data() + i * P;
          T* grow = gx + i * P;
          for (std::size_t j = 0; j < P; ++j) grow[j] += g * (row[j] - means[i]);
        }
      });
}

// a + b; either operand may be N x C x 1 x 1 and is broadcast over H x W.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const auto p = detail::plan_broadcast(a.shape(), b.shape(), "add");
  std::vector<T> out(p.out.numel());
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = ad[i / p.div_a] + bd[i / p.div_b];
  }
  return make_op_result<T>(p.out, std::move(out), {&a, &b},
                           [a, b, p](std::span<const T> gout) {
                             if (T* ga = grad_sink(a)) {
                               for (std::size_t i = 0; i < gout.size(); ++i)
                                 ga[i / p.div_a] += gout[i];
                             }
                             if (T* gb = grad_sink(b)) {
                               for (std::size_t i = 0; i < gout.size(); ++i)
                                 gb[i / p.div_b] += gout[i];
                             }
                           });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  const auto p = detail::plan_broadcast(a.shape(), b.shape(), "sub");
  std::vector<T> out(p.out.numel());
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = ad[i / p.div_a] - bd[i / p.div_b];
  }
  return make_op_result<T>(p.out, std::move(out), {&a, &b},
                           [a, b, p](std::span<const T> gout) {
                             if (T* ga = grad_sink(a)) {
                               for (std::size_t i = 0; i < gout.size(); ++i)
                                 ga[i / p.div_a] += gout[i];
                             }
                             if (T* gb = grad_sink(b)) {
                               for (std::size_t i = 0; i < gout.size(); ++i)
                                 gb[i / p.div_b] -= gout[i];
                             }
                           });
}

// Hadamard product with the same broadcast rule as add().
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto p = detail::plan_broadcast(a.shape(), b.shape(), "mul");
  std::vector<T> out(p.out.numel());
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = ad[i / p.div_a] * bd[i / p.div_b];
  }
  return make_op_result<T>(p.out, std::move(out), {&a, &b},
                           [a, b, p](std::span<const T> gout) {
                             const T* ad = a.data().data();
                             const T* bd = b.data().data();
                             if (T* ga = grad_sink(a)) {
                               for (std::size_t i = 0; i < gout.size(); ++i)
                                 ga[i / p.div_a] += gout[i] * bd[i / p.div_b];
                             }
                             if (T* gb = grad_sink(b)) {
                               for (std::size_t i = 0; i < gout.size(); ++i)
                                 gb[i / p.div_b] += gout[i] * ad[i / p.div_a];
                             }
                           });
}

// scale * x + shift
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift) {
  std::vector<T> out(x.numel());
  const T* xd = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * xd[i] + shift;
  return make_op_result<T>(x.shape(), std::move(out), {&x},
                           [x, scale](std::span<const T> gout) {
                             T* gx = grad_sink(x);
                             for (std::size_t i = 0; i < gout.size(); ++i)
                               gx[i] += scale * gout[i];
                           });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return affine(x, s, T(0));
}

template <typename T>
inline T sigmoid_scalar(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const T* xd = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(xd[i]);
  auto y = std::make_shared<std::vector<T>>(out);
  return make_op_result<T>(x.shape(), std::move(out), {&x},
                           [x, y](std::span<const T> gout) {
                             T* gx = grad_sink(x);
                             for (std::size_t i = 0; i < gout.size(); ++i) {
                               const T s = (*y)[i];
                               gx[i] += gout[i] * s * (T(1) - s);
                             }
                           });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const T* xd = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xd[i]);
  auto y = std::make_shared<std::vector<T>>(out);
  return make_op_result<T>(x.shape(), std::move(out), {&x},
                           [x, y](std::span<const T> gout) {
                             T* gx = grad_sink(x);
                             for (std::size_t i = 0; i < gout.size(); ++i) {
                               const T t = (*y)[i];
                               gx[i] += gout[i] * (T(1) - t * t);
                             }
                           });
}

// x if x > 0 else slope * x, with one trainable slope (1 x 1 x 1 x 1).
template <typename T>
Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& slope) {
  detail::require(slope.shape() == Shape{1, 1, 1, 1},
                  "prelu: slope must be 1x1x1x1, got " + slope.shape().str());
  const T a = slope.data()[0];
  std::vector<T> out(x.numel());
  const T* xd = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = xd[i] > T(0) ? xd[i] : a * xd[i];
  }
  if (KinkLog* log = kink_log()) {
    for (std::size_t i = 0; i < out.size(); ++i) log->mix(xd[i] > T(0));
  }
  return make_op_result<T>(x.shape(), std::move(out), {&x, &slope},
                           [x, slope, a](std::span<const T> gout) {
                             const T* xd = x.data().data();
                             if (T* gx = grad_sink(x)) {
                               for (std::size_t i = 0; i < gout.size(); ++i)
                                 gx[i] += xd[i] > T(0) ? gout[i] : a * gout[i];
                             }
                             if (T* ga = grad_sink(slope)) {
                               T acc = 0;
                               for (std::size_t i = 0; i < gout.size(); ++i)
                                 if (!(xd[i] > T(0))) acc += gout[i] * xd[i];
                               ga[0] += acc;
                             }
                           });
}

// Concatenation along channels; all parts share N, H, W.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  detail::require(!parts.empty(), "concat_channels: no inputs");
  const Shape& s0 = parts.front().shape();
  int channels = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    detail::require(s.n == s0.n && s.h == s0.h && s.w == s0.w,
                    "concat_channels: shape " + s.str() +
                        " does not match " + s0.str() + " outside channels");
    channels += s.c;
  }
  const Shape os{s0.n, channels, s0.h, s0.w};
  const std::size_t P = s0.plane();
  std::vector<T> out(os.numel());
  for (int n = 0; n < os.n; ++n) {
    T* dst = out.data() + static_cast<std::size_t>(n) * channels * P;
    for (const auto& p : parts) {
      const std::size_t len = static_cast<std::size_t>(p.shape().c) * P;
      const T* src = p.data().data() + n * len;
      dst = std::copy(src, src + len, dst);
    }
  }
  return make_op_result<T>(
      os, std::move(out), parts, [parts, channels, P](std::span<const T> gout) {
        const int batch = parts.front().shape().n;
        std::size_t offset = 0;
        for (const auto& p : parts) {
          const std::size_t len = static_cast<std::size_t>(p.shape().c) * P;
          if (T* gp = grad_sink(p)) {
            for (int n = 0; n < batch; ++n) {
              const T* src = gout.data() +
                             static_cast<std::size_t>(n) * channels * P +
                             offset;
              T* dst = gp + n * len;
              for (std::size_t j = 0; j < len; ++j) dst[j] += src[j];
            }
          }
          offset += len;
        }
      });
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  return concat_channels(std::vector<Tensor<T>>{a, b});
}

// Sum of all entries -> 1 x 1 x 1 x 1.
template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  std::vector<T> out{kernels::sum(x.data().data(), x.numel())};
  return make_op_result<T>(Shape{1, 1, 1, 1}, std::move(out), {&x},
                           [x](std::span<const T> gout) {
                             T* gx = grad_sink(x);
                             for (std::size_t i = 0; i < x.numel(); ++i)
                               gx[i] += gout[0];
                           });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// Mean absolute error with subgradient sign(0) = 0.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  detail::require(pred.shape() == target.shape(),
                  "l1_loss: prediction " + pred.shape().str() +
                      " vs target " + target.shape().str());
  const std::size_t count = pred.numel();
  const T* p = pred.data().data();
  const T* t = target.data().data();
  T acc[8] = {};
  for (std::size_t i = 0; i < count; ++i) acc[i & 7] += std::abs(p[i] - t[i]);
  if (KinkLog* log = kink_log()) {
    for (std::size_t i = 0; i < count; ++i) log->mix(p[i] > t[i]);
  }
  std::vector<T> out{kernels::sum(acc, 8) / static_cast<T>(count)};
  return make_op_result<T>(
      Shape{1, 1, 1, 1}, std::move(out), {&pred, &target},
      [pred, target, count](std::span<const T> gout) {
        const T* p = pred.data().data();
        const T* t = target.data().data();
        const T g = gout[0] / static_cast<T>(count);
        T* gp = grad_sink(pred);
        T* gt = grad_sink(target);
        for (std::size_t i = 0; i < count; ++i) {
          const T d = p[i] - t[i];
          const T sgn = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
          if (gp) gp[i] += g * sgn;
          if (gt) gt[i] -= g * sgn;
        }
      });
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  detail::require(pred.shape() == target.shape(),
                  "mse_loss: prediction " + pred.shape().str() +
                      " vs target " + target.shape().str());
  const std::size_t count = pred.numel();
  const T* p = pred.data().data();
  const T* t = target.data().data();
  T acc[8] = {};
  for (std::size_t i = 0; i < count; ++i) {
    const T d = p[i] - t[i];
    acc[i & 7] += d * d;
  }
  std::vector<T> out{kernels::sum(acc, 8) / static_cast<T>(count)};
  return make_op_result<T>(
      Shape{1, 1, 1, 1}, std::move(out), {&pred, &target},
      [pred, target, count](std::span<const T> gout) {
        const T* p = pred.data().data();
        const T* t = target.data().data();
        const T g = T(2) * gout[0] / static_cast<T>(count);
        T* gp = grad_sink(pred);
        T* gt = grad_sink(target);
        for (std::size_t i = 0; i < count; ++i) {
          const T d = p[i] - t[i];
          if (gp) gp[i] += g * d;
          if (gt) gt[i] -= g * d;
        }
      });
}

}  // namespace ahmf
