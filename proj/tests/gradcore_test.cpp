// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "tai/error.hpp"
#include "tai/gradcore.hpp"

namespace {

using namespace tai::grad;

TEST(Softmax, TwoLogits) {
  const std::vector<double> logits{1.0, 0.0};
  const auto p = softmax_with_temperature(logits, 1.0);
  EXPECT_NEAR(p[0], 0.73106, 1e-5);
  EXPECT_NEAR(p[1], 0.26894, 1e-5);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  Rng rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    Tensor x = Tensor::randn({3, 7}, rng, 5.0);
    Tensor shifted = x;
    for (double& v : shifted.data()) v += 123.0;
    const Var a = softmax(Var(x), 0.3);
    const Var b = softmax(Var(shifted), 0.3);
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 7; ++c) s += a.value()(r, c);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(a.value().data()[i], b.value().data()[i], 1e-12);
  }
}

TEST(Softmax, ExtremeLogitsStayFinite) {
  const std::vector<double> logits{1000.0, -1000.0, 999.0};
  const auto p = softmax_with_temperature(logits, 1e-3);
  for (double v : p) EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(p[0], 1.0, 1e-12);
}

TEST(Cosine, ParallelAndOrthogonal) {
  const std::vector<double> a{1.0, 2.0, 3.0}, b{2.0, 4.0, 6.0}, c{-2.0, 1.0, 0.0};
  EXPECT_NEAR(cosine_similarity(a, b), 1.0, 1e-12);
  EXPECT_NEAR(cosine_similarity(a, c), 0.0, 1e-12);
}

TEST(L2Normalize, ZeroRowRejected) {
  EXPECT_THROW(l2_normalize(Var(Tensor::matrix(1, 2, {0.0, 0.0}))), tai::ValidationError);
}

TEST(Matmul, ShapeMismatchRejected) {
  EXPECT_THROW(matmul(Var(Tensor({2, 3})), Var(Tensor({2, 3}))), tai::ValidationError);
}

TEST(CosineLr, Endpoints) {
  OptimState s{0.5, 10, 0};
  EXPECT_DOUBLE_EQ(cosine_lr(s, 0), 0.5);
  EXPECT_NEAR(cosine_lr(s, 5), 0.25, 1e-15);
  EXPECT_NEAR(cosine_lr(s, 10), 0.0, 1e-15);
  EXPECT_THROW(cosine_lr(s, 11), tai::ValidationError);
}

TEST(Sgd, StepsAgainstGradientAndAdvances) {
  Tensor p = Tensor::matrix(1, 2, {1.0, -1.0});
  Tensor* params[] = {&p};
  const Tensor g = Tensor::matrix(1, 2, {2.0, -4.0});
  OptimState s{0.1, 4, 0};
  sgd_step(params, std::span<const Tensor>(&g, 1), s);
  EXPECT_DOUBLE_EQ(p.data()[0], 0.8);
  EXPECT_DOUBLE_EQ(p.data()[1], -0.6);
  EXPECT_EQ(s.current_step, 1u);
}

TEST(Tape, SharedSubexpressionVisitedOnce) {
  Tape tape;
  Var x = tape.leaf(Tensor::matrix(1, 2, {1.0, 2.0}));
  Var y = mul(x, x);
  Var z = sum(add(y, y));
  tape.backward(z);
  const auto g = tape.grad(x);
  ASSERT_TRUE(g);
  EXPECT_DOUBLE_EQ(g->data()[0], 4.0);
  EXPECT_DOUBLE_EQ(g->data()[1], 8.0);
  for (std::size_t i = 0; i < tape.size(); ++i) EXPECT_LE(tape.visits(i), 1u);
}

TEST(Tape, ConstantsHaveNoGradient) {
  Tape tape;
  Var c(Tensor::matrix(1, 1, {3.0}));
  Var x = tape.leaf(Tensor::matrix(1, 1, {2.0}));
  tape.backward(sum(mul(x, c)));
  EXPECT_FALSE(tape.grad(c));
  EXPECT_DOUBLE_EQ(tape.grad(x)->item(), 3.0);
}

TEST(Tape, NonScalarRootRejected) {
  Tape tape;
  Var x = tape.leaf(Tensor::matrix(1, 2, {1.0, 2.0}));
  EXPECT_THROW(tape.backward(x), tai::ValidationError);
}

TEST(SegmentSoftmaxPool, AggregatesColumns) {
  const Tensor x = Tensor::matrix(3, 1, {0.2, 0.6, 0.1});
  const Segment seg{0, 3};
  const Var y = segment_softmax_pool(Var(x), std::span<const Segment>(&seg, 1), 0.02);
  EXPECT_NEAR(y.value().item(), 0.6, 1e-8);
}

TEST(GradientCheck, EveryOpAndPipeline) {
  const auto cases = tai::testing::gradient_suite(11);
  EXPECT_GE(cases.size(), 100u);
  for (const auto& c : cases) EXPECT_LE(c.max_rel_err, 1e-4) << c.name;
}

TEST(Determinism, SameSeedSameTensor) {
  Rng a(5), b(5);
  EXPECT_EQ(Tensor::randn({4, 4}, a, 1.0), Tensor::randn({4, 4}, b, 1.0));
}

}  // namespace
