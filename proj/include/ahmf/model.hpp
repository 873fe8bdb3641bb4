#pragma once

// Full network: guidance downsampler -> feature extractors -> m fusion levels
// -> bi-directional collaboration -> reconstruction with a bicubic residual.

#include <cstdint>
#include <string>
#include <vector>

#include "ahmf/config.hpp"
#include "ahmf/nn_blocks.hpp"
#include "ahmf/resample.hpp"

namespace ahmf {

struct BuildOptions {
  // Zero weights/bias on the output conv make a fresh model return exactly
  // the bicubic upsample. Gradient checks turn this off.
  bool zero_output = true;
};

template <typename T>
class AhmfModel {
 public:
  AhmfModel(const AhmfModel&) = delete;
  AhmfModel& operator=(const AhmfModel&) = delete;
  AhmfModel(AhmfModel&&) noexcept = default;
  AhmfModel& operator=(AhmfModel&&) noexcept = default;

  static AhmfModel build(const ModelConfig& cfg, std::uint64_t seed,
                         BuildOptions opts = {}) {
    cfg.validate();
    AhmfModel model;
    model.cfg_ = cfg;
    Rng rng(seed);
    ParamFactory<T> root(model.store_, rng);
    model.down = GuidanceDownsampler<T>::create(root.child("down"), cfg);
    model.extract = FeatureExtractor<T>::create(root.child("extract"), cfg);
    for (int i = 0; i < cfg.depth; ++i) {
      model.fusion.push_back(Fusion<T>::create(root, cfg, i));
    }
    model.bhfc = Bhfc<T>::create(root.child("bhfc"), cfg);
    model.recon = Reconstruction<T>::create(root.child("recon"), cfg,
                                            opts.zero_output);
    return model;
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }

  void check_inputs(const Shape& depth, const Shape& guidance) const {
    const Shape want_guidance{depth.n, cfg_.guidance_channels,
                              depth.h * cfg_.scale, depth.w * cfg_.scale};
    if (depth.c != 1) {
      throw ShapeError("forward: depth must have 1 channel, got " + depth.str());
    }
    if (guidance != want_guidance) {
      throw ShapeError("forward: guidance " + guidance.str() +
                       " inconsistent with depth " + depth.str() +
                       " at scale " + std::to_string(cfg_.scale) +
                       "; expected " + want_guidance.str());
    }
  }

  Tensor<T> forward(const Tensor<T>& depth_lr, const Tensor<T>& guidance) const {
    check_inputs(depth_lr.shape(), guidance.shape());
    const Shape& s = depth_lr.shape();
    const Tensor<T> depth_up =
        bicubic_resize(depth_lr, s.h * cfg_.scale, s.w * cfg_.scale);
    const Tensor<T> guidance_init = down(guidance);
    const auto [fd, fy] = extract(depth_lr, guidance_init);
    std::vector<Tensor<T>> fused;
    for (int i = 0; i < cfg_.depth; ++i) fused.push_back(fusion[i](fd[i], fy[i]));
    return recon(bhfc(fused), depth_up);
  }

  GuidanceDownsampler<T> down;
  FeatureExtractor<T> extract;
  std::vector<Fusion<T>> fusion;
  Bhfc<T> bhfc;
  Reconstruction<T> recon;

 private:
  AhmfModel() = default;

  ModelConfig cfg_;
  ParameterStore<T> store_;
};

// Closed-form parameter count for a configuration; independent of H, W.
inline std::size_t count_params(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.width;
  const std::size_t m = cfg.depth;
  const std::size_t c = cfg.guidance_channels;
  const std::size_t stages = cfg.stages();
  auto conv = [](std::size_t cout, std::size_t cin, std::size_t k) {
    return cout * cin * k * k + cout;
  };
  const std::size_t prelu = 1;

  std::size_t total = conv(n, c, 3) +
                      stages * (conv(n, 4 * n, cfg.down_kernel()) + prelu);
  total += conv(n, 1, 3) + prelu + (m - 1) * (conv(n, n, 3) + prelu);
  total += m * (conv(n, n, 3) + prelu);

  std::size_t fusion = 0;
  switch (cfg.fusion) {
    case FusionKind::mmaf:
      fusion = 2 * (conv(n, n, 3) + prelu + conv(n, n, 3)) + conv(n, 2 * n, 3) +
               prelu + 2 * conv(n, n, 1);
      break;
    case FusionKind::concatenation:
      fusion = conv(n, 2 * n, 1);
      break;
    case FusionKind::addition:
      break;
  }
  total += m * fusion;

  std::size_t directions = 0;
  switch (cfg.collaboration) {
    case Collaboration::bidirectional: directions = 2; break;
    case Collaboration::forward_only:
    case Collaboration::backward_only: directions = 1; break;
    case Collaboration::none: break;
  }
  const std::size_t cells = cfg.gru_shared ? 1 : m;
  total += directions * cells * 3 * conv(n, 2 * n, 3);
  total += m * (2 * conv(n, n, 3) + prelu);

  total += conv(n, m * n, 1) + prelu;
  total += stages * (conv(4 * n, n, cfg.up_kernel()) + prelu);
  total += conv(1, n, 3) + prelu;
  return total;
}

// Copies parameter values by name; shapes must match.
template <typename Dst, typename Src>
void copy_parameters(const ParameterStore<Src>& from, ParameterStore<Dst>& to) {
  if (from.size() != to.size()) {
    throw std::invalid_argument("copy_parameters: stores hold " +
                                std::to_string(from.size()) + " vs " +
                                std::to_string(to.size()) + " tensors");
  }
  for (auto& entry : to) {
    const Tensor<Src>& src = from.get(entry.name);
    if (src.shape() != entry.tensor.shape()) {
      throw ShapeError("copy_parameters: " + entry.name + " has shape " +
                       src.shape().str() + " vs " + entry.tensor.shape().str());
    }
    auto dst = entry.tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i] = static_cast<Dst>(src.data()[i]);
    }
  }
}

}  // namespace ahmf
