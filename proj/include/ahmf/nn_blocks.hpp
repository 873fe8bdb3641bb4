#pragma once

// Building blocks of the network: parameter registry, convolution units,
// guidance downsampler, feature extractors, attention fusion (FEB + FRB),
// convolutional GRU, bi-directional collaboration and the reconstruction head.

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ahmf/config.hpp"
#include "ahmf/ops.hpp"
#include "ahmf/random.hpp"

namespace ahmf {

// Ordered name -> tensor map of trainable parameters (insertion order).
template <typename T>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
  };

  Tensor<T> add(const std::string& name, Shape shape, std::vector<T> values) {
    if (index_.count(name)) {
      throw std::invalid_argument("parameter store: duplicate name " + name);
    }
    index_.emplace(name, entries_.size());
    entries_.push_back({name, Tensor<T>(shape, std::move(values), true)});
    return entries_.back().tensor;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const Tensor<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw std::out_of_range("parameter store: no parameter named " + name);
    }
    return entries_[it->second].tensor;
  }
  Tensor<T>& get(const std::string& name) {
    return const_cast<Tensor<T>&>(std::as_const(*this).get(name));
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const {
    std::size_t total = 0;
    for (const auto& e : entries_) total += e.tensor.numel();
    return total;
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

inline constexpr double kPreluInit = 0.25;

template <typename T>
struct Conv {
  Tensor<T> weight;
  Tensor<T> bias;
  int padding = 0;

  Tensor<T> operator()(const Tensor<T>& x) const {
    return conv2d(x, weight, bias, 1, padding);
  }
};

template <typename T>
struct ConvPRelu {
  Conv<T> conv;
  Tensor<T> slope;

  Tensor<T> operator()(const Tensor<T>& x) const {
    return prelu(conv(x), slope);
  }
};

// Registers parameters under a hierarchical prefix and draws their initial
// values: weights and biases uniform in +-1/sqrt(fan_in), PReLU slopes 0.25.
template <typename T>
class ParamFactory {
 public:
  ParamFactory(ParameterStore<T>& store, Rng& rng, std::string prefix = "")
      : store_(&store), rng_(&rng), prefix_(std::move(prefix)) {}

  ParamFactory child(const std::string& name) const {
    return ParamFactory(*store_, *rng_, join(name));
  }
  ParamFactory child(const std::string& name, int index) const {
    return child(name + "." + std::to_string(index));
  }

  Conv<T> conv(const std::string& name, int cout, int cin, int k,
               bool zero = false) const {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin) * k * k);
    Conv<T> c;
    c.padding = k / 2;
    c.weight = store_->add(join(name + ".weight"), Shape{cout, cin, k, k},
                           draw(static_cast<std::size_t>(cout) * cin * k * k,
                                zero ? 0.0 : bound));
    c.bias = store_->add(join(name + ".bias"), Shape{1, cout, 1, 1},
                         draw(cout, zero ? 0.0 : bound));
    return c;
  }

  Tensor<T> prelu_slope(const std::string& name) const {
    return store_->add(join(name), Shape{1, 1, 1, 1},
                       {static_cast<T>(kPreluInit)});
  }

  ConvPRelu<T> conv_prelu(const std::string& name, int cout, int cin, int k,
                          bool zero = false) const {
    ConvPRelu<T> u;
    u.conv = conv(name, cout, cin, k, zero);
    u.slope = prelu_slope(name + ".prelu");
    return u;
  }

 private:
  std::string join(const std::string& name) const {
    return prefix_.empty() ? name : prefix_ + "." + name;
  }
  std::vector<T> draw(std::size_t count, double bound) const {
    std::vector<T> v(count);
    for (auto& x : v) {
      const double u = rng_->uniform(-bound, bound);
      x = bound == 0.0 ? T(0) : static_cast<T>(u);
    }
    return v;
  }

  ParameterStore<T>* store_;
  Rng* rng_;
  std::string prefix_;
};

// Expands the guidance to n channels with a 3x3 conv, then halves the
// resolution log2(scale) times: inverse pixel-shuffle (x2) + conv(4n -> n)
// + PReLU per stage.
template <typename T>
struct GuidanceDownsampler {
  Conv<T> expand;
  std::vector<ConvPRelu<T>> stages;

  static GuidanceDownsampler create(const ParamFactory<T>& f,
                                    const ModelConfig& cfg) {
    GuidanceDownsampler d;
    d.expand = f.conv("expand", cfg.width, cfg.guidance_channels, 3);
    for (int s = 0; s < cfg.stages(); ++s) {
      d.stages.push_back(f.child("stage", s).conv_prelu(
          "conv", cfg.width, 4 * cfg.width, cfg.down_kernel()));
    }
    return d;
  }

  Tensor<T> operator()(const Tensor<T>& guidance) const {
    Tensor<T> x = expand(guidance);
    for (const auto& stage : stages) x = stage(inverse_pixel_shuffle(x, 2));
    return x;
  }
};

// Two parallel chains of 3x3 conv + PReLU, m layers each.
template <typename T>
struct FeatureExtractor {
  std::vector<ConvPRelu<T>> depth;
  std::vector<ConvPRelu<T>> guidance;

  static FeatureExtractor create(const ParamFactory<T>& f,
                                 const ModelConfig& cfg) {
    FeatureExtractor e;
    for (int i = 0; i < cfg.depth; ++i) {
      e.depth.push_back(f.child("depth", i).conv_prelu(
          "conv", cfg.width, i == 0 ? 1 : cfg.width, 3));
    }
    for (int i = 0; i < cfg.depth; ++i) {
      e.guidance.push_back(
          f.child("guidance", i).conv_prelu("conv", cfg.width, cfg.width, 3));
    }
    return e;
  }

  std::pair<std::vector<Tensor<T>>, std::vector<Tensor<T>>> operator()(
      const Tensor<T>& depth_lr, const Tensor<T>& guidance_init) const {
    std::vector<Tensor<T>> fd;
    std::vector<Tensor<T>> fy;
    Tensor<T> d = depth_lr;
    Tensor<T> y = guidance_init;
    for (std::size_t i = 0; i < depth.size(); ++i) {
      d = depth[i](d);
      y = guidance[i](y);
      fd.push_back(d);
      fy.push_back(y);
    }
    return {std::move(fd), std::move(fy)};
  }
};

// Feature enhancement: PReLU(conv1 x) * sigmoid(conv2 x).
template <typename T>
struct Feb {
  ConvPRelu<T> value;
  Conv<T> gate;

  static Feb create(const ParamFactory<T>& f, int n) {
    return Feb{f.conv_prelu("value", n, n, 3), f.conv("gate", n, n, 3)};
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    return mul(value(x), sigmoid(gate(x)));
  }
};

template <typename T>
struct FrbTrace {
  Tensor<T> joint;       // PReLU(conv [Fd, Fy])
  Tensor<T> embedding;   // avg + var pooled, N x n x 1 x 1
  Tensor<T> excite_depth;
  Tensor<T> excite_guidance;
  Tensor<T> fused;
};

// Feature recalibration: a joint squeeze of both modalities drives
// per-channel excitation of each one; fused = 0.5 Ed*Fd + 0.5 Ey*Fy.
template <typename T>
struct Frb {
  ConvPRelu<T> squeeze;
  Conv<T> excite_depth;
  Conv<T> excite_guidance;

  static Frb create(const ParamFactory<T>& f, int n) {
    Frb r;
    r.squeeze = f.conv_prelu("squeeze", n, 2 * n, 3);
    r.excite_depth = f.conv("excite_depth", n, n, 1);
    r.excite_guidance = f.conv("excite_guidance", n, n, 1);
    return r;
  }

  FrbTrace<T> trace(const Tensor<T>& fd, const Tensor<T>& fy) const {
    FrbTrace<T> t;
    t.joint = squeeze(concat_channels(fd, fy));
    t.embedding = add(global_avg_pool(t.joint), global_var_pool(t.joint));
    t.excite_depth = sigmoid(excite_depth(t.embedding));
    t.excite_guidance = sigmoid(excite_guidance(t.embedding));
    t.fused = add(scale(mul(t.excite_depth, fd), T(0.5)),
                  scale(mul(t.excite_guidance, fy), T(0.5)));
    return t;
  }

  Tensor<T> operator()(const Tensor<T>& fd, const Tensor<T>& fy) const {
    return trace(fd, fy).fused;
  }
};

template <typename T>
struct Mmaf {
  Feb<T> depth;
  Feb<T> guidance;
  Frb<T> frb;

  static Mmaf create(const ParamFactory<T>& f, int n) {
    Mmaf m;
    m.depth = Feb<T>::create(f.child("feb.depth"), n);
    m.guidance = Feb<T>::create(f.child("feb.guidance"), n);
    m.frb = Frb<T>::create(f.child("frb"), n);
    return m;
  }

  Tensor<T> operator()(const Tensor<T>& fd, const Tensor<T>& fy) const {
    return frb(depth(fd), guidance(fy));
  }
};

// One fusion level. MMAF by default; addition and concatenation + 1x1 conv
// are the ablation baselines.
template <typename T>
struct Fusion {
  FusionKind kind = FusionKind::mmaf;
  Mmaf<T> mmaf;
  Conv<T> concat;

  static Fusion create(const ParamFactory<T>& f, const ModelConfig& cfg,
                       int level) {
    Fusion u;
    u.kind = cfg.fusion;
    const int n = cfg.width;
    if (u.kind == FusionKind::mmaf) {
      u.mmaf = Mmaf<T>::create(f.child("mmaf", level), n);
    } else if (u.kind == FusionKind::concatenation) {
      u.concat = f.child("concat", level).conv("fuse", n, 2 * n, 1);
    }
    return u;
  }

  Tensor<T> operator()(const Tensor<T>& fd, const Tensor<T>& fy) const {
    switch (kind) {
      case FusionKind::addition: return add(fd, fy);
      case FusionKind::concatenation: return concat(concat_channels(fd, fy));
      case FusionKind::mmaf: break;
    }
    return mmaf(fd, fy);
  }
};

template <typename T>
struct GruTrace {
  Tensor<T> update;     // Z
  Tensor<T> reset;      // R
  Tensor<T> candidate;  // H-hat
  Tensor<T> hidden;     // H
};

// Convolutional GRU cell over [hidden, input] with 3x3 kernels (2n -> n).
template <typename T>
struct ConvGru {
  Conv<T> update;
  Conv<T> reset;
  Conv<T> candidate;

  static ConvGru create(const ParamFactory<T>& f, int n) {
    ConvGru g;
    g.update = f.conv("update", n, 2 * n, 3);
    g.reset = f.conv("reset", n, 2 * n, 3);
    g.candidate = f.conv("candidate", n, 2 * n, 3);
    return g;
  }

  GruTrace<T> trace(const Tensor<T>& input, const Tensor<T>& hidden) const {
    GruTrace<T> t;
    const Tensor<T> joint = concat_channels(hidden, input);
    t.update = sigmoid(update(joint));
    t.reset = sigmoid(reset(joint));
    t.candidate =
        tanh(candidate(concat_channels(mul(t.reset, hidden), input)));
    t.hidden = add(mul(t.update, t.candidate),
                   mul(affine(t.update, T(-1), T(1)), hidden));
    return t;
  }

  Tensor<T> operator()(const Tensor<T>& input, const Tensor<T>& hidden) const {
    return trace(input, hidden).hidden;
  }
};

// x + conv2(PReLU(conv1 x)), 3x3 n -> n, no normalization.
template <typename T>
struct ResBlock {
  ConvPRelu<T> first;
  Conv<T> second;

  static ResBlock create(const ParamFactory<T>& f, int n) {
    ResBlock r;
    r.first = f.conv_prelu("conv1", n, n, 3);
    r.second = f.conv("conv2", n, n, 3);
    return r;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    return add(x, second(first(x)));
  }
};

// Hidden-state trajectory of a GRU scan over levels. Entry i is the state
// after consuming inputs[i]; a reverse scan consumes inputs m-1, ..., 0.
// cells holds one shared cell or one cell per level.
template <typename T>
std::vector<Tensor<T>> gru_scan(const std::vector<Tensor<T>>& inputs,
                                const std::vector<ConvGru<T>>& cells,
                                bool reverse) {
  const int m = static_cast<int>(inputs.size());
  std::vector<Tensor<T>> states(m);
  if (m == 0) return states;
  Tensor<T> h = Tensor<T>::zeros(inputs.front().shape());
  for (int step = 0; step < m; ++step) {
    const int level = reverse ? m - 1 - step : step;
    const ConvGru<T>& cell = cells.size() == 1 ? cells.front() : cells[level];
    h = cell(inputs[level], h);
    states[level] = h;
  }
  return states;
}

// Bi-directional hierarchical collaboration:
// F_g^i = Res_i(FGRU state at i + BGRU state at i).
template <typename T>
struct Bhfc {
  Collaboration mode = Collaboration::bidirectional;
  std::vector<ConvGru<T>> forward_cells;
  std::vector<ConvGru<T>> backward_cells;
  std::vector<ResBlock<T>> res;

  static Bhfc create(const ParamFactory<T>& f, const ModelConfig& cfg) {
    Bhfc b;
    b.mode = cfg.collaboration;
    const int n = cfg.width;
    const int cells = cfg.gru_shared ? 1 : cfg.depth;
    auto make_cells = [&](const std::string& name) {
      std::vector<ConvGru<T>> out;
      for (int i = 0; i < cells; ++i) {
        out.push_back(ConvGru<T>::create(
            cfg.gru_shared ? f.child(name) : f.child(name, i), n));
      }
      return out;
    };
    if (b.mode == Collaboration::bidirectional ||
        b.mode == Collaboration::forward_only) {
      b.forward_cells = make_cells("fgru");
    }
    if (b.mode == Collaboration::bidirectional ||
        b.mode == Collaboration::backward_only) {
      b.backward_cells = make_cells("bgru");
    }
    for (int i = 0; i < cfg.depth; ++i) {
      b.res.push_back(ResBlock<T>::create(f.child("res", i), n));
    }
    return b;
  }

  std::vector<Tensor<T>> operator()(const std::vector<Tensor<T>>& fused) const {
    std::vector<Tensor<T>> combined;
    switch (mode) {
      case Collaboration::none:
        combined = fused;
        break;
      case Collaboration::forward_only:
        combined = gru_scan(fused, forward_cells, false);
        break;
      case Collaboration::backward_only:
        combined = gru_scan(fused, backward_cells, true);
        break;
      case Collaboration::bidirectional: {
        const auto fwd = gru_scan(fused, forward_cells, false);
        const auto bwd = gru_scan(fused, backward_cells, true);
        for (std::size_t i = 0; i < fused.size(); ++i) {
          combined.push_back(add(fwd[i], bwd[i]));
        }
        break;
      }
    }
    std::vector<Tensor<T>> out;
    for (std::size_t i = 0; i < combined.size(); ++i) {
      out.push_back(res[i](combined[i]));
    }
    return out;
  }
};

// Concatenated levels -> 1x1 conv + PReLU -> log2(scale) x [conv(n -> 4n),
// pixel-shuffle x2, PReLU] -> 3x3 conv(n -> 1) + PReLU -> + bicubic residual.
template <typename T>
struct Reconstruction {
  ConvPRelu<T> reduce;
  std::vector<ConvPRelu<T>> stages;
  ConvPRelu<T> output;

  static Reconstruction create(const ParamFactory<T>& f,
                               const ModelConfig& cfg,
                               bool zero_output = true) {
    Reconstruction r;
    const int n = cfg.width;
    r.reduce = f.conv_prelu("reduce", n, cfg.depth * n, 1);
    for (int s = 0; s < cfg.stages(); ++s) {
      r.stages.push_back(
          f.child("stage", s).conv_prelu("conv", 4 * n, n, cfg.up_kernel()));
    }
    r.output = f.conv_prelu("output", 1, n, 3, zero_output);
    return r;
  }

  Tensor<T> operator()(const std::vector<Tensor<T>>& levels,
                       const Tensor<T>& depth_up) const {
    if (levels.size() * static_cast<std::size_t>(levels.front().shape().c) !=
        static_cast<std::size_t>(reduce.conv.weight.shape().c)) {
      throw ShapeError("reconstruct: expected " +
                       std::to_string(reduce.conv.weight.shape().c) +
                       " concatenated channels");
    }
    Tensor<T> x = reduce(concat_channels(levels));
    for (const auto& stage : stages) {
      x = prelu(pixel_shuffle(stage.conv(x), 2), stage.slope);
    }
    const Tensor<T> residual = output(x);
    if (residual.shape() != depth_up.shape()) {
      throw ShapeError("reconstruct: upsampled features " +
                       residual.shape().str() + " vs bicubic depth " +
                       depth_up.shape().str() + " (scale / stage mismatch)");
    }
    return add(residual, depth_up);
  }
};

}  // namespace ahmf
