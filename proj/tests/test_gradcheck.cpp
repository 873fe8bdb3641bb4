#include <gtest/gtest.h>

#include <chrono>
#include <set>

#include "test_support.hpp"

using namespace ahmf;

TEST(GradCheck, NameRegistry) {
  const auto names = gradcheck_names();
  const std::set<std::string> unique(names.begin(), names.end());
  EXPECT_EQ(unique.size(), names.size());
  EXPECT_EQ(names.size(), gradcheck_op_names().size() + gradcheck_block_names().size() + 6);
  for (const char* n : {"conv2d", "pixel_shuffle", "inverse_pixel_shuffle", "global_avg_pool",
                        "global_var_pool", "sigmoid", "tanh", "prelu", "concat_channels",
                        "l1_loss", "mse_loss", "mmaf", "bhfc", "model", "model:bwd-only"}) {
    EXPECT_TRUE(unique.count(n)) << n;
  }
  EXPECT_THROW(run_gradcheck("softmax", 0), std::invalid_argument);
  EXPECT_THROW(run_gradcheck("model:bogus", 0), std::invalid_argument);
}

TEST(GradCheck, DetectsWrongGradient) {
  // d/dx sum(x * stop(x)) is reported as x while the true derivative is 2x.
  Rng rng(1);
  const Tensord x = ahmf::testing::random_tensord(rng, Shape{1, 1, 3, 3});
  Tensord leaf = x.detach(true);
  const auto r = check_gradients("broken", 0, {{"x", leaf}},
                                 [=] { return mul(leaf, leaf.detach()); }, kOpTolerance);
  EXPECT_FALSE(r.passed());
  EXPECT_GT(r.error, 0.1);
  EXPECT_EQ(r.worst, "x");
}

TEST(GradCheck, RefinesStepNearKink) {
  Tensord x(Shape{1, 1, 1, 2}, {2e-4, -0.7}, true);
  Tensord slope(Shape{1, 1, 1, 1}, {0.25}, true);
  const auto r = check_gradients("kink", 0, {{"x", x}, {"slope", slope}},
                                 [=] { return prelu(x, slope); }, kOpTolerance);
  EXPECT_TRUE(r.passed()) << r.error;
  EXPECT_GE(r.refined, 1u);
  EXPECT_EQ(r.skipped, 0u);
  EXPECT_EQ(r.coordinates, 3u);
}

TEST(GradCheck, SkipsCoordinateOnKinkAndCapsSkips) {
  Tensord x(Shape{1, 1, 1, 1}, {0.0}, true);
  Tensord slope(Shape{1, 1, 1, 1}, {0.25}, true);
  const auto r = check_gradients("at_kink", 0, {{"x", x}},
                                 [=] { return prelu(x, slope); }, kOpTolerance);
  EXPECT_EQ(r.skipped, 1u);
  EXPECT_FALSE(r.passed());
}

TEST(GradCheck, ProbeIsSeededAndRepeatable) {
  const auto a = run_gradcheck("conv2d", 3);
  const auto b = run_gradcheck("conv2d", 3);
  EXPECT_EQ(a.error, b.error);
  EXPECT_EQ(a.coordinates, b.coordinates);
}

TEST(GradCheck, ModelVariantsOver20Seeds) {
  const auto start = std::chrono::steady_clock::now();
  for (const auto& name : gradcheck_names()) {
    if (name.rfind("model", 0) != 0) continue;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto r = run_gradcheck(name, seed);
      EXPECT_TRUE(r.passed()) << name << " seed " << seed << " error " << r.error
                              << " worst " << r.worst << " skipped " << r.skipped << "/"
                              << r.coordinates + r.skipped;
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << "model gradient checks: " << secs << " s\n";
}
