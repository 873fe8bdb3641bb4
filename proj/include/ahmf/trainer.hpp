#pragma once

// Loss, Adam, learning-rate schedule and the training loop.

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "ahmf/checkpoint.hpp"
#include "ahmf/data.hpp"
#include "ahmf/model.hpp"

namespace ahmf {

enum class LossKind { l1, l2 };

inline LossKind parse_loss(const std::string& s) {
  if (s == "l1") return LossKind::l1;
  if (s == "l2") return LossKind::l2;
  throw std::invalid_argument("unknown loss '" + s + "' (expected l1|l2)");
}

template <typename T>
Tensor<T> reconstruction_loss(const Tensor<T>& pred, const Tensor<T>& gt,
                              LossKind kind) {
  return kind == LossKind::l1 ? l1_loss(pred, gt) : mse_loss(pred, gt);
}

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First / second moments per parameter, in store order.
template <typename T>
struct AdamState {
  AdamHyper hyper;
  std::vector<std::vector<T>> first;
  std::vector<std::vector<T>> second;
  std::uint64_t step = 0;

  static AdamState for_store(const ParameterStore<T>& store) {
    AdamState s;
    for (const auto& e : store) {
      s.first.emplace_back(e.tensor.numel(), T(0));
      s.second.emplace_back(e.tensor.numel(), T(0));
    }
    return s;
  }

  OptimizerSection to_section(const ParameterStore<T>& store) const {
    OptimizerSection sec;
    sec.step = step;
    std::size_t i = 0;
    for (const auto& e : store) {
      const Shape& s = e.tensor.shape();
      std::vector<float> m(first[i].begin(), first[i].end());
      std::vector<float> v(second[i].begin(), second[i].end());
      sec.moments.push_back({e.name + ".adam_m", Tensorf(s, std::move(m))});
      sec.moments.push_back({e.name + ".adam_v", Tensorf(s, std::move(v))});
      ++i;
    }
    return sec;
  }

  static AdamState from_section(const OptimizerSection& sec,
                                const ParameterStore<T>& store) {
    AdamState s = for_store(store);
    s.step = sec.step;
    std::map<std::string, const Tensorf*> by_name;
    for (const auto& t : sec.moments) by_name[t.name] = &t.tensor;
    std::size_t i = 0;
    for (const auto& e : store) {
      for (int which = 0; which < 2; ++which) {
        const std::string key = e.name + (which == 0 ? ".adam_m" : ".adam_v");
        auto it = by_name.find(key);
        if (it == by_name.end() || it->second->shape() != e.tensor.shape()) {
          throw FormatError("checkpoint: missing or misshapen moment " + key);
        }
        auto& dst = which == 0 ? s.first[i] : s.second[i];
        for (std::size_t j = 0; j < dst.size(); ++j) {
          dst[j] = static_cast<T>(it->second->data()[j]);
        }
      }
      ++i;
    }
    return s;
  }
};

// Bias-corrected Adam: theta -= lr * m_hat / (sqrt(v_hat) + eps).
template <typename T>
void adam_step(ParameterStore<T>& store, AdamState<T>& state, double lr) {
  if (state.first.size() != store.size()) {
    throw std::invalid_argument("adam_step: optimizer state does not match store");
  }
  for (const auto& e : store) {
    if (!e.tensor.has_grad()) {
      throw std::logic_error("adam_step: parameter " + e.name +
                             " has no gradient");
    }
  }
  ++state.step;
  const AdamHyper& h = state.hyper;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  std::size_t i = 0;
  for (auto& e : store) {
    auto values = e.tensor.mutable_data();
    const auto grad = e.tensor.grad();
    auto& m = state.first[i];
    auto& v = state.second[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad[j];
      const double mj = h.beta1 * m[j] + (1.0 - h.beta1) * g;
      const double vj = h.beta2 * v[j] + (1.0 - h.beta2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = lr * (mj / c1) / (std::sqrt(vj / c2) + h.eps);
      values[j] = static_cast<T>(values[j] - update);
    }
    ++i;
  }
}

struct TrainConfig {
  double lr0 = 2e-4;
  int halve_every = 100;  // epochs
  int epochs = 1;
  int steps_per_epoch = 1000;
  int batch = 32;
  int patch = 256;
  std::uint64_t seed = 0;
  int checkpoint_every = 1;  // epochs; 0 disables periodic checkpoints
  LossKind loss = LossKind::l1;
  std::string checkpoint_dir;  // empty: no checkpoints written

  void validate() const {
    if (lr0 <= 0 || halve_every < 1 || epochs < 0 || steps_per_epoch < 1 ||
        batch < 1 || patch < 1 || checkpoint_every < 0) {
      throw std::invalid_argument("train config: non-positive setting");
    }
  }
};

// lr0 * 0.5^floor(epoch / halve_every)
inline double learning_rate(const TrainConfig& cfg, int epoch) {
  return cfg.lr0 * std::pow(0.5, epoch / cfg.halve_every);
}

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One optimization step on `batch`; returns the loss before the update.
template <typename T>
double train_step(AhmfModel<T>& model, AdamState<T>& state,
                  const TrainingBatch& batch, double lr, LossKind loss_kind) {
  auto& store = model.parameters();
  store.zero_grad();
  const Tensor<T> lr_depth = batch.lr_depth.template cast<T>();
  const Tensor<T> guidance = batch.guidance.template cast<T>();
  const Tensor<T> gt = batch.gt_depth.template cast<T>();
  const Tensor<T> pred = model.forward(lr_depth, guidance);
  const Tensor<T> loss = reconstruction_loss(pred, gt, loss_kind);
  const double value = static_cast<double>(loss.item());
  if (!std::isfinite(value)) {
    throw NonFiniteLoss("training: non-finite loss at step " +
                        std::to_string(state.step));
  }
  loss.backward();
  adam_step(store, state, lr);
  return value;
}

inline std::string format_log_line(std::uint64_t step, int epoch, double lr,
                                   double loss) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%" PRIu64 "\t%d\t%.9g\t%.9g", step, epoch,
                lr, loss);
  return buf;
}

struct TrainResult {
  std::vector<double> losses;
  std::vector<std::string> checkpoints;
  bool aborted = false;
  std::string abort_reason;
};

using BatchSource = std::function<TrainingBatch()>;

inline Checkpoint checkpoint_with_state(const AhmfModel<float>& model,
                                        const AdamState<float>& state) {
  Checkpoint ck = make_checkpoint(model);
  ck.optimizer = state.to_section(model.parameters());
  return ck;
}

// Runs epochs x steps_per_epoch Adam steps. Each step appends
// "step<TAB>epoch<TAB>lr<TAB>loss" to `log`. On a non-finite loss the run
// stops without touching the checkpoints already written.
inline TrainResult train(AhmfModel<float>& model, const BatchSource& next_batch,
                         const TrainConfig& cfg, std::ostream* log,
                         AdamState<float>* resume = nullptr) {
  cfg.validate();
  TrainResult result;
  AdamState<float> state =
      resume ? *resume : AdamState<float>::for_store(model.parameters());
  auto save = [&](const std::string& file) {
    if (cfg.checkpoint_dir.empty()) return;
    std::filesystem::create_directories(cfg.checkpoint_dir);
    const std::string path =
        (std::filesystem::path(cfg.checkpoint_dir) / file).string();
    write_checkpoint(path, checkpoint_with_state(model, state));
    result.checkpoints.push_back(path);
  };
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = learning_rate(cfg, epoch);
    for (int s = 0; s < cfg.steps_per_epoch; ++s, ++step) {
      double loss = 0;
      try {
        loss = train_step(model, state, next_batch(), lr, cfg.loss);
      } catch (const NonFiniteLoss& e) {
        result.aborted = true;
        result.abort_reason = e.what();
        return result;
      }
      result.losses.push_back(loss);
      if (log) *log << format_log_line(step, epoch, lr, loss) << '\n';
    }
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04d.ahmf", epoch + 1);
      save(name);
    }
  }
  save("final.ahmf");
  if (resume) *resume = state;
  return result;
}

// Repeatedly fits one fixed batch; returns the per-step losses.
template <typename T>
std::vector<double> overfit(AhmfModel<T>& model, const TrainingBatch& batch,
                            int steps, double lr, LossKind loss = LossKind::l1) {
  AdamState<T> state = AdamState<T>::for_store(model.parameters());
  std::vector<double> losses;
  losses.reserve(steps);
  for (int i = 0; i < steps; ++i) {
    losses.push_back(train_step(model, state, batch, lr, loss));
  }
  return losses;
}

}  // namespace ahmf
