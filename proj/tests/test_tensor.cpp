#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace ahmf;

TEST(Shape, NumelAndValidity) {
  EXPECT_EQ((Shape{2, 3, 4, 5}).numel(), 120u);
  EXPECT_TRUE((Shape{1, 1, 1, 1}).valid());
  EXPECT_FALSE((Shape{1, 0, 1, 1}).valid());
  EXPECT_THROW(Tensorf(Shape{1, 0, 2, 2}, {}), ShapeError);
  EXPECT_THROW(Tensorf(Shape{1, 1, 2, 2}, {1, 2, 3}), ShapeError);
}

TEST(Tensor, LeafAccessors) {
  Tensorf t(Shape{1, 2, 1, 2}, {1, 2, 3, 4}, true);
  EXPECT_TRUE(t.is_leaf());
  EXPECT_TRUE(t.requires_grad());
  EXPECT_FLOAT_EQ(t.at(0, 1, 0, 1), 4.0f);
  t.mutable_data()[0] = 7;
  EXPECT_FLOAT_EQ(t.data()[0], 7.0f);
  EXPECT_FALSE(t.has_grad());
  EXPECT_THROW(t.item(), ShapeError);
}

TEST(Tensor, OpOutputsAreImmutable) {
  Tensorf a(Shape{1, 1, 1, 2}, {1, 2}, true);
  Tensorf b = add(a, a);
  EXPECT_FALSE(b.is_leaf());
  EXPECT_THROW(b.mutable_data(), std::logic_error);
  EXPECT_THROW(b.set_requires_grad(false), std::logic_error);
}

TEST(Tensor, DetachAndCast) {
  Tensorf a(Shape{1, 1, 1, 2}, {1.5f, -2.0f}, true);
  Tensorf d = a.detach();
  EXPECT_FALSE(d.requires_grad());
  Tensord c = a.cast<double>();
  EXPECT_DOUBLE_EQ(c.data()[1], -2.0);
  EXPECT_FALSE(c.requires_grad());
}

TEST(Backward, AccumulatesThroughSharedUse) {
  // L = sum(x * x + x) -> dL/dx = 2x + 1
  Tensord x(Shape{1, 1, 1, 3}, {1, -2, 0.5}, true);
  Tensord loss = sum(add(mul(x, x), x));
  loss.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], -3.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], 2.0);
}

TEST(Backward, DiamondGraph) {
  // y = a + a; z = y * y; dz/da = 8a
  Tensord a(Shape{1, 1, 1, 1}, {1.5}, true);
  Tensord y = add(a, a);
  Tensord z = mul(y, y);
  z.backward();
  EXPECT_DOUBLE_EQ(a.grad()[0], 12.0);
}

TEST(Backward, LeafGradientsAccumulateAcrossCalls) {
  Tensord x(Shape{1, 1, 1, 1}, {2.0}, true);
  sum(scale(x, 3.0)).backward();
  sum(scale(x, 3.0)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  x.zero_grad();
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.0);
}

TEST(Backward, SecondReplayRejected) {
  Tensord x(Shape{1, 1, 1, 1}, {2.0}, true);
  Tensord l = sum(mul(x, x));
  l.backward();
  EXPECT_THROW(l.backward(), std::logic_error);
}

TEST(Backward, RejectsNonScalarAndConstantLoss) {
  Tensord x(Shape{1, 1, 1, 2}, {1, 2}, true);
  EXPECT_THROW(add(x, x).backward(), ShapeError);
  Tensord c(Shape{1, 1, 1, 1}, {1.0});
  EXPECT_THROW(c.backward(), std::logic_error);
}

TEST(Backward, ConstantInputsReceiveNoGradient) {
  Tensord x(Shape{1, 1, 1, 2}, {1, 2}, true);
  Tensord k(Shape{1, 1, 1, 2}, {3, 4}, false);
  sum(mul(x, k)).backward();
  EXPECT_FALSE(k.has_grad());
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(NoGrad, SuppressesTape) {
  Tensord x(Shape{1, 1, 1, 1}, {2.0}, true);
  Tensord y;
  {
    NoGradGuard guard;
    y = mul(x, x);
  }
  EXPECT_FALSE(y.requires_grad());
  Tensord z = mul(x, x);
  EXPECT_TRUE(z.requires_grad());
}

TEST(Tensor, AllFinite) {
  Tensorf a(Shape{1, 1, 1, 2}, {1.0f, std::nanf("")});
  EXPECT_FALSE(all_finite(a));
  EXPECT_TRUE(all_finite(Tensorf::zeros(Shape{1, 1, 2, 2})));
}
