#pragma once

// Finite-difference gradient checks in double precision.
//
// Each check builds a scalar probe L = sum(f(inputs) * R) with a fixed random
// R, runs backward once, then compares every checked coordinate against the
// central difference (L(x + eps) - L(x - eps)) / (2 eps). The error is
// ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-8) over all
// checked coordinates; the tensor with the largest mismatch is reported.
//
// A coordinate whose perturbed evaluations take a different PReLU or |.|
// branch than the base evaluation straddles a kink, where the difference
// quotient does not estimate the derivative. Such coordinates are retried
// with eps / 10, eps / 100 and eps / 1000; if every step still crosses a
// kink the coordinate is skipped. A check fails if more than a quarter of
// its coordinates are skipped.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ahmf/model.hpp"
#include "ahmf/ops.hpp"
#include "ahmf/nn_blocks.hpp"
#include "ahmf/random.hpp"

namespace ahmf {

inline constexpr double kGradEps = 1e-3;
inline constexpr double kOpTolerance = 1e-4;
inline constexpr double kBlockTolerance = 1e-3;
inline constexpr double kMaxSkippedFraction = 0.25;

struct GradCheckResult {
  std::string name;
  std::uint64_t seed = 0;
  double error = 0;      // norm-wise relative error
  double tolerance = 0;
  std::size_t coordinates = 0;
  std::size_t refined = 0;  // coordinates that needed a smaller step
  std::size_t skipped = 0;  // coordinates straddling a kink at every step
  std::string worst;     // tensor with the largest absolute mismatch
  bool passed() const {
    return std::isfinite(error) && error <= tolerance && coordinates > 0 &&
           skipped <= kMaxSkippedFraction * static_cast<double>(coordinates + skipped);
  }
};

struct GradInput {
  std::string name;
  Tensord tensor;
  // Coordinates checked per tensor; 0 checks all of them.
  std::size_t sample = 0;
};

namespace detail {

inline Tensord random_tensor(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(s.numel());
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensord(s, std::move(v), true);
}

// Values bounded away from zero, for inputs that sit in front of a kink.
inline Tensord away_from_zero(Rng& rng, Shape s, double margin = 0.05) {
  std::vector<double> v(s.numel());
  for (auto& x : v) {
    const double mag = rng.uniform(margin, 1.0);
    x = rng.uniform() < 0.5 ? -mag : mag;
  }
  return Tensord(s, std::move(v), true);
}

inline std::vector<std::size_t> pick(Rng& rng, std::size_t count, std::size_t sample) {
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = i;
  if (sample == 0 || sample >= count) return idx;
  for (std::size_t i = 0; i < sample; ++i) {
    std::swap(idx[i], idx[i + rng.below(count - i)]);
  }
  idx.resize(sample);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace detail

inline GradCheckResult check_gradients(const std::string& name, std::uint64_t seed,
                                       std::vector<GradInput> inputs,
                                       const std::function<Tensord()>& f,
                                       double tolerance, double eps = kGradEps) {
  Rng rng(seed ^ 0x5DEECE66DULL);
  GradCheckResult result;
  result.name = name;
  result.seed = seed;
  result.tolerance = tolerance;

  for (auto& in : inputs) in.tensor.clear_grad();
  Tensord weights;
  auto probe = [&](const Tensord& out) {
    if (!weights.defined()) weights = detail::random_tensor(rng, out.shape()).detach();
    return sum(mul(out, weights));
  };
  // Installs a fresh branch log for one evaluation and returns its hash.
  auto evaluate = [&](double* value, bool record_grad) {
    KinkLog log;
    kink_log() = &log;
    try {
      const Tensord loss = probe(f());
      kink_log() = nullptr;
      if (record_grad) loss.backward();
      *value = loss.item();
    } catch (...) {
      kink_log() = nullptr;
      throw;
    }
    return log.hash;
  };
  double base = 0;
  const std::uint64_t branches = evaluate(&base, true);

  NoGradGuard no_grad;
  double diff2 = 0, a2 = 0, n2 = 0, worst = -1;
  for (auto& in : inputs) {
    std::vector<double> analytic(in.tensor.numel(), 0.0);
    if (in.tensor.has_grad()) {
      std::copy(in.tensor.grad().begin(), in.tensor.grad().end(), analytic.begin());
    }
    auto values = in.tensor.mutable_data();
    double tensor_diff2 = 0;
    for (std::size_t i : detail::pick(rng, values.size(), in.sample)) {
      const double saved = values[i];
      double numeric = 0;
      bool smooth = false;
      double step = eps;
      for (int attempt = 0; attempt < 4 && !smooth; ++attempt, step /= 10) {
        double up = 0, down = 0;
        values[i] = saved + step;
        const bool same_up = evaluate(&up, false) == branches;
        values[i] = saved - step;
        const bool same_down = evaluate(&down, false) == branches;
        values[i] = saved;
        smooth = same_up && same_down;
        if (smooth) {
          numeric = (up - down) / (2 * step);
          if (attempt > 0) ++result.refined;
        }
      }
      if (!smooth) {
        ++result.skipped;
        continue;
      }
      tensor_diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
      ++result.coordinates;
    }
    diff2 += tensor_diff2;
    if (tensor_diff2 > worst) {
      worst = tensor_diff2;
      result.worst = in.name;
    }
  }
  result.error = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-8});
  return result;
}

namespace detail {

inline Shape small_shape(Rng& rng, int c = 0) {
  return Shape{1 + static_cast<int>(rng.below(2)),
               c > 0 ? c : 1 + static_cast<int>(rng.below(3)),
               3 + static_cast<int>(rng.below(3)), 3 + static_cast<int>(rng.below(3))};
}

inline std::vector<GradInput> params_of(const ParameterStore<double>& store,
                                        std::size_t sample = 0) {
  std::vector<GradInput> out;
  for (const auto& e : store) out.push_back({e.name, e.tensor, sample});
  return out;
}

inline GradCheckResult check_op(const std::string& name, std::uint64_t seed) {
  Rng rng(seed);
  const double tol = kOpTolerance;
  if (name == "conv2d") {
    const int cin = 1 + static_cast<int>(rng.below(3));
    const int cout = 1 + static_cast<int>(rng.below(3));
    const int k = 1 + 2 * static_cast<int>(rng.below(2));
    const int stride = 1 + static_cast<int>(rng.below(2));
    const int pad = static_cast<int>(rng.below(2));
    auto x = random_tensor(rng, Shape{1 + static_cast<int>(rng.below(2)), cin,
                                      5 + static_cast<int>(rng.below(2)), 5});
    auto w = random_tensor(rng, Shape{cout, cin, k, k});
    auto b = random_tensor(rng, Shape{1, cout, 1, 1});
    return check_gradients(name, seed, {{"x", x}, {"weight", w}, {"bias", b}},
                           [=] { return conv2d(x, w, b, stride, pad); }, tol);
  }
  if (name == "pixel_shuffle") {
    auto x = random_tensor(rng, Shape{1 + static_cast<int>(rng.below(2)), 8, 2, 3});
    return check_gradients(name, seed, {{"x", x}},
                           [=] { return pixel_shuffle(x, 2); }, tol);
  }
  if (name == "inverse_pixel_shuffle") {
    auto x = random_tensor(rng, Shape{1 + static_cast<int>(rng.below(2)), 2, 4, 6});
    return check_gradients(name, seed, {{"x", x}},
                           [=] { return inverse_pixel_shuffle(x, 2); }, tol);
  }
  if (name == "global_avg_pool" || name == "global_var_pool") {
    auto x = random_tensor(rng, small_shape(rng));
    const bool var = name == "global_var_pool";
    return check_gradients(name, seed, {{"x", x}}, [=] {
      return var ? global_var_pool(x) : global_avg_pool(x);
    }, tol);
  }
  if (name == "add" || name == "sub" || name == "mul") {
    const Shape s = small_shape(rng);
    auto a = random_tensor(rng, s);
    auto b = random_tensor(rng, s);
    return check_gradients(name, seed, {{"a", a}, {"b", b}}, [=] {
      return name == "add" ? add(a, b) : name == "sub" ? sub(a, b) : mul(a, b);
    }, tol);
  }
  if (name == "broadcast_add" || name == "broadcast_mul") {
    const Shape s = small_shape(rng);
    auto a = random_tensor(rng, s);
    auto b = random_tensor(rng, Shape{s.n, s.c, 1, 1});
    const bool is_mul = name == "broadcast_mul";
    const bool swap = rng.below(2) == 1;
    return check_gradients(name, seed, {{"full", a}, {"channel", b}}, [=] {
      if (is_mul) return swap ? mul(b, a) : mul(a, b);
      return swap ? add(b, a) : add(a, b);
    }, tol);
  }
  if (name == "affine" || name == "scale") {
    auto x = random_tensor(rng, small_shape(rng));
    const double s = rng.uniform(-2, 2);
    const double t = rng.uniform(-1, 1);
    const bool aff = name == "affine";
    return check_gradients(name, seed, {{"x", x}}, [=] {
      return aff ? affine(x, s, t) : scale(x, s);
    }, tol);
  }
  if (name == "sigmoid" || name == "tanh") {
    auto x = random_tensor(rng, small_shape(rng), -3, 3);
    const bool sig = name == "sigmoid";
    return check_gradients(name, seed, {{"x", x}}, [=] {
      return sig ? sigmoid(x) : ahmf::tanh(x);
    }, tol);
  }
  if (name == "prelu") {
    auto x = away_from_zero(rng, small_shape(rng));
    auto slope = random_tensor(rng, Shape{1, 1, 1, 1}, 0.05, 0.5);
    return check_gradients(name, seed, {{"x", x}, {"slope", slope}},
                           [=] { return prelu(x, slope); }, tol);
  }
  if (name == "concat_channels") {
    const Shape s = small_shape(rng);
    auto a = random_tensor(rng, s);
    auto b = random_tensor(rng, Shape{s.n, 1 + static_cast<int>(rng.below(3)), s.h, s.w});
    auto c = random_tensor(rng, Shape{s.n, 1, s.h, s.w});
    return check_gradients(name, seed, {{"a", a}, {"b", b}, {"c", c}},
                           [=] { return concat_channels<double>({a, b, c}); }, tol);
  }
  if (name == "sum" || name == "mean") {
    auto x = random_tensor(rng, small_shape(rng));
    const bool is_sum = name == "sum";
    return check_gradients(name, seed, {{"x", x}}, [=] {
      return is_sum ? sum(x) : mean(x);
    }, tol);
  }
  if (name == "l1_loss" || name == "mse_loss") {
    const Shape s = small_shape(rng);
    auto gt = random_tensor(rng, s).detach();
    // pred - gt kept at least 0.05 away from the |.| kink
    auto offset = away_from_zero(rng, s);
    std::vector<double> p(s.numel());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = gt.data()[i] + offset.data()[i];
    Tensord pred(s, std::move(p), true);
    const bool l1 = name == "l1_loss";
    return check_gradients(name, seed, {{"pred", pred}}, [=] {
      return l1 ? l1_loss(pred, gt) : mse_loss(pred, gt);
    }, tol);
  }
  throw std::invalid_argument("gradcheck: unknown check '" + name + "'");
}

inline ModelConfig mini_config(const std::string& ablation = "full") {
  ModelConfig cfg;
  cfg.scale = 4;
  cfg.depth = 2;
  cfg.width = 4;
  return with_ablation(cfg, ablation);
}

inline GradCheckResult check_block(const std::string& name, std::uint64_t seed) {
  Rng rng(seed);
  const double tol = kBlockTolerance;
  const int n = 3;
  const Shape s{1 + static_cast<int>(rng.below(2)), n, 4, 4};
  ParameterStore<double> store;
  Rng init(rng.next_u64());
  ParamFactory<double> f(store, init);
  if (name == "feb") {
    auto block = Feb<double>::create(f, n);
    auto x = random_tensor(rng, s);
    auto inputs = params_of(store);
    inputs.push_back({"x", x});
    return check_gradients(name, seed, inputs, [=] { return block(x); }, tol);
  }
  if (name == "frb" || name == "mmaf") {
    auto fd = random_tensor(rng, s);
    auto fy = random_tensor(rng, s);
    std::function<Tensord()> fn;
    if (name == "frb") {
      auto block = Frb<double>::create(f, n);
      fn = [=] { return block(fd, fy); };
    } else {
      auto block = Mmaf<double>::create(f, n);
      fn = [=] { return block(fd, fy); };
    }
    auto inputs = params_of(store);
    inputs.push_back({"fd", fd});
    inputs.push_back({"fy", fy});
    return check_gradients(name, seed, inputs, fn, tol);
  }
  if (name == "conv_gru") {
    auto cell = ConvGru<double>::create(f, n);
    auto x = random_tensor(rng, s);
    auto h = random_tensor(rng, s);
    auto inputs = params_of(store);
    inputs.push_back({"input", x});
    inputs.push_back({"hidden", h});
    return check_gradients(name, seed, inputs, [=] { return cell(x, h); }, tol);
  }
  if (name == "res_block") {
    auto block = ResBlock<double>::create(f, n);
    auto x = random_tensor(rng, s);
    auto inputs = params_of(store);
    inputs.push_back({"x", x});
    return check_gradients(name, seed, inputs, [=] { return block(x); }, tol);
  }
  if (name == "bhfc") {
    ModelConfig cfg = mini_config();
    cfg.width = n;
    cfg.depth = 3;
    auto block = Bhfc<double>::create(f, cfg);
    std::vector<Tensord> levels;
    auto inputs = params_of(store, 8);
    for (int i = 0; i < cfg.depth; ++i) {
      levels.push_back(random_tensor(rng, s));
      inputs.push_back({"level." + std::to_string(i), levels.back()});
    }
    return check_gradients(name, seed, inputs, [=] {
      return concat_channels(block(levels));
    }, tol);
  }
  if (name == "reconstruct") {
    ModelConfig cfg = mini_config();
    cfg.width = n;
    auto block = Reconstruction<double>::create(f, cfg, false);
    std::vector<Tensord> levels;
    auto inputs = params_of(store, 8);
    for (int i = 0; i < cfg.depth; ++i) {
      levels.push_back(random_tensor(rng, s));
      inputs.push_back({"level." + std::to_string(i), levels.back()});
    }
    auto up = random_tensor(rng, Shape{s.n, 1, 4 * s.h, 4 * s.w}, 0, 1);
    inputs.push_back({"depth_up", up, 8});
    return check_gradients(name, seed, inputs, [=] { return block(levels, up); }, tol);
  }
  if (name == "guidance_downsample") {
    ModelConfig cfg = mini_config();
    cfg.width = n;
    auto block = GuidanceDownsampler<double>::create(f, cfg);
    auto y = random_tensor(rng, Shape{s.n, 3, 16, 16}, 0, 1);
    auto inputs = params_of(store, 8);
    inputs.push_back({"guidance", y, 16});
    return check_gradients(name, seed, inputs, [=] { return block(y); }, tol);
  }
  throw std::invalid_argument("gradcheck: unknown check '" + name + "'");
}

// End-to-end miniature network (m=2, n=4, scale 4, 8x8 LR). The bicubic
// residual of the LR input is constant data, so the checked inputs are the
// parameters and the guidance image.
inline GradCheckResult check_model(const std::string& ablation, std::uint64_t seed,
                                   std::size_t sample = 4) {
  Rng rng(seed);
  BuildOptions opts;
  opts.zero_output = false;
  auto model = std::make_shared<AhmfModel<double>>(
      AhmfModel<double>::build(mini_config(ablation), rng.next_u64(), opts));
  auto lr = random_tensor(rng, Shape{1, 1, 8, 8}, 0, 1).detach();
  auto guidance = random_tensor(rng, Shape{1, 3, 32, 32}, 0, 1);
  auto inputs = params_of(model->parameters(), sample);
  inputs.push_back({"guidance", guidance, 4 * sample});
  const std::string name = ablation == "full" ? "model" : "model:" + ablation;
  return check_gradients(name, seed, inputs,
                         [=] { return model->forward(lr, guidance); },
                         kBlockTolerance);
}

}  // namespace detail

inline const std::vector<std::string>& gradcheck_op_names() {
  static const std::vector<std::string> names = {
      "conv2d", "pixel_shuffle", "inverse_pixel_shuffle", "global_avg_pool",
      "global_var_pool", "add", "sub", "mul", "broadcast_add", "broadcast_mul",
      "affine", "scale", "sigmoid", "tanh", "prelu", "concat_channels", "sum",
      "mean", "l1_loss", "mse_loss"};
  return names;
}

inline const std::vector<std::string>& gradcheck_block_names() {
  static const std::vector<std::string> names = {
      "feb", "frb", "mmaf", "conv_gru", "res_block", "bhfc", "reconstruct",
      "guidance_downsample"};
  return names;
}

// Every check name: ops, blocks, "model" and "model:<ablation>".
inline std::vector<std::string> gradcheck_names() {
  std::vector<std::string> all = gradcheck_op_names();
  const auto& blocks = gradcheck_block_names();
  all.insert(all.end(), blocks.begin(), blocks.end());
  for (const char* a : kAblations) {
    all.push_back(std::string(a) == "full" ? "model" : "model:" + std::string(a));
  }
  return all;
}

inline GradCheckResult run_gradcheck(const std::string& name, std::uint64_t seed) {
  const auto& ops = gradcheck_op_names();
  if (std::find(ops.begin(), ops.end(), name) != ops.end()) {
    return detail::check_op(name, seed);
  }
  const auto& blocks = gradcheck_block_names();
  if (std::find(blocks.begin(), blocks.end(), name) != blocks.end()) {
    return detail::check_block(name, seed);
  }
  if (name == "model") return detail::check_model("full", seed);
  if (name.rfind("model:", 0) == 0) {
    const std::string ablation = name.substr(6);
    with_ablation(ModelConfig{}, ablation);  // validates the name
    return detail::check_model(ablation, seed);
  }
  throw std::invalid_argument("gradcheck: unknown check '" + name + "'");
}

}  // namespace ahmf
