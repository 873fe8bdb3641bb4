#include <gtest/gtest.h>

#include <sstream>

#include "test_support.hpp"

using namespace ahmf;
using ahmf::testing::read_bytes;
using ahmf::testing::scene_batch;
using ahmf::testing::synthetic_scene;
using ahmf::testing::temp_dir;

namespace {

ModelConfig small() {
  ModelConfig cfg;
  cfg.scale = 4;
  cfg.depth = 2;
  cfg.width = 4;
  return cfg;
}

}  // namespace

TEST(Adam, FirstStepOracle) {
  ParameterStore<double> store;
  store.add("w", Shape{1, 1, 1, 2}, {0.0, 1.0});
  auto state = AdamState<double>::for_store(store);
  store.get("w").zero_grad();
  // Unit gradient on w[0], none on w[1].
  sum(mul(store.get("w"), Tensord(Shape{1, 1, 1, 2}, {1.0, 0.0}))).backward();
  adam_step(store, state, 0.1);
  EXPECT_NEAR(store.get("w").data()[0], -0.1 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(store.get("w").data()[1], 1.0);
  EXPECT_EQ(state.step, 1u);
  EXPECT_NEAR(state.first[0][0], 0.1, 1e-15);
  EXPECT_NEAR(state.second[0][0], 0.001, 1e-15);
}

TEST(Adam, SecondStepBiasCorrection) {
  ParameterStore<double> store;
  store.add("w", Shape{1, 1, 1, 1}, {0.0});
  auto state = AdamState<double>::for_store(store);
  const double g[2] = {1.0, -2.0};
  for (double gi : g) {
    store.get("w").zero_grad();
    sum(scale(store.get("w"), gi)).backward();
    adam_step(store, state, 0.01);
  }
  const double m = 0.9 * 0.1 * 1.0 + 0.1 * -2.0;
  const double v = 0.999 * 0.001 * 1.0 + 0.001 * 4.0;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  const double expected = -0.01 / (1 + 1e-8) - 0.01 * mh / (std::sqrt(vh) + 1e-8);
  EXPECT_NEAR(store.get("w").data()[0], expected, 1e-14);
}

TEST(Adam, MissingGradientThrows) {
  ParameterStore<float> store;
  store.add("a", Shape{1, 1, 1, 1}, {1});
  auto state = AdamState<float>::for_store(store);
  EXPECT_THROW(adam_step(store, state, 0.1), std::logic_error);
  EXPECT_EQ(state.step, 0u);
}

TEST(Schedule, HalvesEveryInterval) {
  TrainConfig cfg;
  cfg.lr0 = 2e-4;
  cfg.halve_every = 100;
  EXPECT_DOUBLE_EQ(learning_rate(cfg, 0), 2e-4);
  EXPECT_DOUBLE_EQ(learning_rate(cfg, 99), 2e-4);
  EXPECT_DOUBLE_EQ(learning_rate(cfg, 100), 1e-4);
  EXPECT_DOUBLE_EQ(learning_rate(cfg, 250), 5e-5);
  EXPECT_THROW(parse_loss("huber"), std::invalid_argument);
}

TEST(Training, StepZeroLossIsBicubicBaseline) {
  const auto scene = synthetic_scene(32, 3);
  const TrainingBatch batch = scene_batch(scene, 4);
  auto model = AhmfModel<float>::build(small(), 1);
  const Tensorf up = bicubic_resize(batch.lr_depth, 32, 32);
  const double baseline = l1_loss(up, batch.gt_depth).item();
  AdamState<float> state = AdamState<float>::for_store(model.parameters());
  const double first = train_step(model, state, batch, 1e-4, LossKind::l1);
  EXPECT_EQ(first, baseline);
  const double l2 = mse_loss(up, batch.gt_depth).item();
  auto model2 = AhmfModel<float>::build(small(), 1);
  AdamState<float> s2 = AdamState<float>::for_store(model2.parameters());
  EXPECT_EQ(train_step(model2, s2, batch, 1e-4, LossKind::l2), l2);
}

TEST(Training, ShortOverfitKeepsImproving) {
  const TrainingBatch batch = scene_batch(synthetic_scene(32, 4), 4);
  auto model = AhmfModel<float>::build(small(), 2);
  const auto losses = overfit(model, batch, 200, 1e-3);
  double first = 0, last = 0;
  for (int i = 0; i < 50; ++i) {
    first += losses[i];
    last += losses[150 + i];
  }
  EXPECT_LT(last, first);
  EXPECT_LT(losses.back(), losses.front());
}

TEST(Training, LogsAndCheckpointsAreDeterministic) {
  std::vector<HrPair> set;
  const auto scene = synthetic_scene(32, 5);
  set.push_back({"s", scene.guidance, scene.depth, 255});
  auto run = [&](const std::filesystem::path& dir) {
    auto model = AhmfModel<float>::build(small(), 9);
    PatchSampler sampler(set, 16, 2, DegradationSpec{DegradationKind::tof_like, 4, 5, 0}, 3);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.steps_per_epoch = 4;
    cfg.checkpoint_every = 2;
    cfg.halve_every = 2;
    cfg.checkpoint_dir = dir.string();
    std::ostringstream log;
    const TrainResult r = train(model, [&] { return sampler.next(); }, cfg, &log);
    EXPECT_FALSE(r.aborted);
    EXPECT_EQ(r.losses.size(), 12u);
    return std::pair{log.str(), r};
  };
  const auto d1 = temp_dir("train_a");
  const auto d2 = temp_dir("train_b");
  const auto [log1, r1] = run(d1);
  const auto [log2, r2] = run(d2);
  EXPECT_EQ(log1, log2);
  ASSERT_EQ(r1.checkpoints.size(), 2u);
  EXPECT_TRUE(std::filesystem::exists(d1 / "epoch_0002.ahmf"));
  EXPECT_TRUE(std::filesystem::exists(d1 / "final.ahmf"));
  EXPECT_FALSE(std::filesystem::exists(d1 / "epoch_0001.ahmf"));
  EXPECT_EQ(read_bytes(d1 / "final.ahmf"), read_bytes(d2 / "final.ahmf"));
  EXPECT_EQ(read_bytes(d1 / "epoch_0002.ahmf"), read_bytes(d2 / "epoch_0002.ahmf"));
  // step, epoch, lr, loss per line; lr halves after epoch 2.
  std::istringstream in(log1);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::uint64_t step;
    int epoch;
    double lr, loss;
    fields >> step >> epoch >> lr >> loss;
    EXPECT_EQ(step, static_cast<std::uint64_t>(lines));
    EXPECT_EQ(epoch, lines / 4);
    EXPECT_DOUBLE_EQ(lr, epoch < 2 ? 2e-4 : 1e-4);
    ++lines;
  }
  EXPECT_EQ(lines, 12);
  const Checkpoint ck = read_checkpoint((d1 / "final.ahmf").string());
  ASSERT_TRUE(ck.optimizer.has_value());
  EXPECT_EQ(ck.optimizer->step, 12u);
}

TEST(Training, ResumeMatchesUninterruptedRun) {
  const TrainingBatch batch = scene_batch(synthetic_scene(16, 6), 4);
  TrainConfig cfg;
  cfg.steps_per_epoch = 3;
  cfg.epochs = 2;
  auto straight = AhmfModel<float>::build(small(), 4);
  AdamState<float> s = AdamState<float>::for_store(straight.parameters());
  train(straight, [&] { return batch; }, cfg, nullptr, &s);

  cfg.epochs = 1;
  auto first = AhmfModel<float>::build(small(), 4);
  AdamState<float> s1 = AdamState<float>::for_store(first.parameters());
  train(first, [&] { return batch; }, cfg, nullptr, &s1);
  const Checkpoint ck = checkpoint_with_state(first, s1);
  auto resumed = model_from_checkpoint(ck);
  auto state = AdamState<float>::from_section(*ck.optimizer, resumed.parameters());
  train(resumed, [&] { return batch; }, cfg, nullptr, &state);
  EXPECT_EQ(state.step, s.step);
  for (const auto& e : straight.parameters()) {
    const auto& other = resumed.parameters().get(e.name);
    for (std::size_t i = 0; i < e.tensor.numel(); ++i)
      ASSERT_EQ(e.tensor.data()[i], other.data()[i]) << e.name;
  }
}

TEST(Training, NonFiniteLossAbortsAndKeepsCheckpoints) {
  const auto dir = temp_dir("train_nan");
  const TrainingBatch good = scene_batch(synthetic_scene(16, 7), 4);
  TrainingBatch bad = good;
  std::vector<float> g(bad.gt_depth.data().begin(), bad.gt_depth.data().end());
  g[0] = std::numeric_limits<float>::quiet_NaN();
  bad.gt_depth = Tensorf(bad.gt_depth.shape(), g);
  auto model = AhmfModel<float>::build(small(), 1);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.steps_per_epoch = 2;
  cfg.checkpoint_dir = dir.string();
  int calls = 0;
  std::ostringstream log;
  const TrainResult r = train(model, [&] { return ++calls > 3 ? bad : good; }, cfg, &log);
  EXPECT_TRUE(r.aborted);
  EXPECT_NE(r.abort_reason.find("non-finite"), std::string::npos);
  EXPECT_EQ(r.losses.size(), 3u);
  EXPECT_TRUE(std::filesystem::exists(dir / "epoch_0001.ahmf"));
  EXPECT_FALSE(std::filesystem::exists(dir / "epoch_0002.ahmf"));
  EXPECT_FALSE(std::filesystem::exists(dir / "final.ahmf"));
  EXPECT_NO_THROW(read_checkpoint((dir / "epoch_0001.ahmf").string()));
}

TEST(Training, ZeroEpochsWritesUntrainedFinal) {
  const auto dir = temp_dir("train_zero");
  auto model = AhmfModel<float>::build(small(), 1);
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.checkpoint_dir = dir.string();
  const TrainResult r = train(model, [] { return TrainingBatch{}; }, cfg, nullptr);
  EXPECT_TRUE(r.losses.empty());
  ASSERT_EQ(r.checkpoints.size(), 1u);
  const auto loaded = model_from_checkpoint(read_checkpoint(r.checkpoints[0]));
  const TrainingBatch b = scene_batch(synthetic_scene(16, 1), 4);
  const Tensorf out = loaded.forward(b.lr_depth, b.guidance);
  const Tensorf up = bicubic_resize(b.lr_depth, 16, 16);
  for (std::size_t i = 0; i < up.numel(); ++i) ASSERT_EQ(out.data()[i], up.data()[i]);
}
