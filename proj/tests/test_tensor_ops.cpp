/* Copyright 2026 the rornet authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License. */

#include <gtest/gtest.h>

#include <cmath>

#include "rornet/ops.hpp"
#include "rornet/rng.hpp"
#include "rornet/tape.hpp"
#include "support.hpp"

using namespace rornet;

namespace {

TEST(Conv2d, IdentityKernel) {
  auto x = Tensor<float>::from_data({1, 1, 3, 3},
                                    {1, 2, 3, 4, 5, 6, 7, 8, 9});
  auto k = Tensor<float>::from_data({1, 1, 1, 1}, {1});
  auto y = ops::conv2d<float>(nullptr, x, k, 1, 0);
  EXPECT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv2d, CountingWindow) {
  Tensor<float> x({1, 1, 4, 4}, 1.0f);
  Tensor<float> k({1, 1, 2, 2}, 1.0f);
  auto y = ops::conv2d<float>(nullptr, x, k, 2, 0);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (float v : y.data()) EXPECT_FLOAT_EQ(v, 4.0f);
}

TEST(Conv2d, MatchesNaiveLoopOracle) {
  Rng rng(7);
  auto x = random_normal<double>({2, 3, 8, 8}, rng);
  auto k = random_normal<double>({4, 3, 3, 3}, rng);
  for (int stride : {1, 2})
    for (int pad : {0, 1}) {
      auto got = ops::conv2d<double>(nullptr, x, k, stride, pad);
      auto want = oracle::naive_conv2d(x, k, stride, pad);
      EXPECT_EQ(got.shape(), want.shape());
      EXPECT_LT(oracle::max_rel_diff(got, want), 1e-6)
          << "stride=" << stride << " pad=" << pad;
    }
}

TEST(Conv2d, MatchesNaiveLoopOracleSinglePrecision) {
  // Float accumulation differs between the blocked product and the plain
  // loop; agreement is bounded by rounding, not exact.
  Rng rng(7);
  auto x = random_normal<float>({2, 3, 8, 8}, rng);
  auto k = random_normal<float>({4, 3, 3, 3}, rng);
  auto got = ops::conv2d<float>(nullptr, x, k, 1, 1);
  auto want = oracle::naive_conv2d(x, k, 1, 1);
  EXPECT_LT(oracle::max_rel_diff(got, want), 1e-4);
  EXPECT_LT(oracle::max_abs_diff(got, want), 1e-5);
}

TEST(Conv2d, RejectsChannelMismatchNamingBothShapes) {
  Tensor<float> x({1, 3, 8, 8}, 0.5f);
  Tensor<float> k({4, 4, 3, 3}, 0.5f);
  try {
    ops::conv2d<float>(nullptr, x, k, 1, 1);
    FAIL() << "expected invalid_argument";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("1x3x8x8"), std::string::npos) << msg;
    EXPECT_NE(msg.find("4x4x3x3"), std::string::npos) << msg;
  }
}

TEST(Conv2d, RejectsKernelLargerThanPaddedInput) {
  Tensor<float> x({1, 1, 2, 2}, 1.0f);
  Tensor<float> k({1, 1, 5, 5}, 1.0f);
  EXPECT_THROW(ops::conv2d<float>(nullptr, x, k, 1, 0), std::invalid_argument);
}

TEST(BatchNorm, ConstantChannelIsBetaEverywhere) {
  Tensor<float> x({4, 2, 3, 3}, 2.5f);
  Tensor<float> gamma({2}, 1.0f);
  auto beta = Tensor<float>::from_data({2}, {0.75f, -1.25f});
  RunningStats<float> stats;
  auto y = ops::batch_norm<float>(nullptr, x, gamma, beta, BnMode::kTrain,
                                  stats);
  for (std::size_t b = 0; b < 4; ++b)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < 9; ++i)
        EXPECT_NEAR(y.data()[(b * 2 + c) * 9 + i], beta.data()[c], 1e-5f);
  EXPECT_TRUE(stats.populated);
}

TEST(BatchNorm, MatchesHandNormalization) {
  // 2x1x1x2 batch holding {1,2,3,4}: mean 2.5, biased variance 1.25.
  auto x = Tensor<float>::from_data({2, 1, 1, 2}, {1, 2, 3, 4});
  Tensor<float> gamma({1}, 1.0f);
  Tensor<float> beta({1}, 0.0f);
  RunningStats<float> stats;
  auto y = ops::batch_norm<float>(nullptr, x, gamma, beta, BnMode::kTrain,
                                  stats);
  const double invstd = 1.0 / std::sqrt(1.25 + 1e-5);
  const double expect[4] = {(1 - 2.5) * invstd, (2 - 2.5) * invstd,
                            (3 - 2.5) * invstd, (4 - 2.5) * invstd};
  for (int i = 0; i < 4; ++i)
    EXPECT_NEAR(y.data()[static_cast<std::size_t>(i)], expect[i], 1e-6);
  // EMA with momentum 0.1 from the identity initialization (0, 1).
  EXPECT_NEAR(stats.mean[0], 0.1 * 2.5, 1e-6);
  EXPECT_NEAR(stats.var[0], 0.9 * 1.0 + 0.1 * 1.25, 1e-6);
}

TEST(BatchNorm, EvalWithUnitStatsIsIdentity) {
  Rng rng(3);
  auto x = random_normal<float>({2, 3, 4, 4}, rng);
  Tensor<float> gamma({3}, 1.0f);
  Tensor<float> beta({3}, 0.0f);
  auto stats = RunningStats<float>::identity(3);
  auto y =
      ops::batch_norm<float>(nullptr, x, gamma, beta, BnMode::kEval, stats);
  EXPECT_LT(oracle::max_abs_diff(x, y), 2e-5);
}

TEST(BatchNorm, EvalRequiresPopulatedStats) {
  Tensor<float> x({1, 2, 2, 2}, 1.0f);
  Tensor<float> gamma({2}, 1.0f), beta({2}, 0.0f);
  RunningStats<float> stats;  // never populated
  EXPECT_THROW(
      ops::batch_norm<float>(nullptr, x, gamma, beta, BnMode::kEval, stats),
      std::invalid_argument);
}

TEST(BatchNorm, SingleSampleZeroVarianceIsStable) {
  Tensor<float> x({1, 1, 2, 2}, 3.0f);
  Tensor<float> gamma({1}, 1.0f), beta({1}, 0.5f);
  RunningStats<float> stats;
  auto y = ops::batch_norm<float>(nullptr, x, gamma, beta, BnMode::kTrain,
                                  stats);
  for (float v : y.data()) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_NEAR(v, 0.5f, 1e-5f);
  }
}

TEST(BatchNorm, RejectsGammaLengthMismatch) {
  Tensor<float> x({1, 3, 2, 2}, 1.0f);
  Tensor<float> gamma({2}, 1.0f), beta({3}, 0.0f);
  RunningStats<float> stats;
  EXPECT_THROW(
      ops::batch_norm<float>(nullptr, x, gamma, beta, BnMode::kTrain, stats),
      std::invalid_argument);
}

TEST(Relu, ClampsNegatives) {
  auto x = Tensor<float>::from_data({3}, {-1, 0, 2});
  auto y = ops::relu<float>(nullptr, x);
  EXPECT_EQ(y.data(), (std::vector<float>{0, 0, 2}));
}

TEST(Relu, AllPositiveIsIdentity) {
  Rng rng(11);
  auto x = random_uniform<float>({2, 3, 4, 4}, rng, 0.1, 2.0);
  auto y = ops::relu<float>(nullptr, x);
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Relu, GradientGatesOnSign) {
  auto x = Tensor<float>::from_data({2}, {-1, 2});
  x.set_requires_grad(true);
  Tape<float> tape;
  auto y = ops::relu(&tape, x);
  auto loss = ops::sum(&tape, y);
  tape.backward(loss);
  EXPECT_FLOAT_EQ(x.grad()[0], 0.0f);
  EXPECT_FLOAT_EQ(x.grad()[1], 1.0f);
}

TEST(GlobalAvgPool, SmallExample) {
  auto x = Tensor<float>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = ops::global_avg_pool<float>(nullptr, x);
  EXPECT_EQ(y.shape(), (Shape{1, 1}));
  EXPECT_FLOAT_EQ(y.data()[0], 2.5f);
}

TEST(GlobalAvgPool, ConstantTensorMapsToSameConstant) {
  Tensor<float> x({2, 3, 5, 5}, -1.5f);
  auto y = ops::global_avg_pool<float>(nullptr, x);
  for (float v : y.data()) EXPECT_FLOAT_EQ(v, -1.5f);
}

TEST(GlobalAvgPool, MatchesDirectSummation) {
  Rng rng(5);
  auto x = random_normal<double>({3, 4, 6, 6}, rng);
  auto y = ops::global_avg_pool<double>(nullptr, x);
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t c = 0; c < 4; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < 36; ++i)
        s += x.data()[(b * 4 + c) * 36 + i];
      EXPECT_NEAR(y.data()[b * 4 + c], s / 36.0, 1e-12);
    }
}

TEST(Linear, IdentityWeightZeroBias) {
  auto x = Tensor<float>::from_data({1, 3}, {4, 5, 6});
  auto w = Tensor<float>::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor<float> b({3}, 0.0f);
  auto y = ops::linear<float>(nullptr, x, w, b);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_FLOAT_EQ(y.data()[i], x.data()[i]);
}

TEST(Linear, HandArithmetic) {
  // Weight rows are output units: y_o = sum_f x_f * w[o][f].
  auto x = Tensor<float>::from_data({1, 2}, {1, 2});
  auto w = Tensor<float>::from_data({2, 2}, {1, 0, 1, 1});
  Tensor<float> b({2}, 0.0f);
  auto y = ops::linear<float>(nullptr, x, w, b);
  EXPECT_FLOAT_EQ(y.data()[0], 1.0f);
  EXPECT_FLOAT_EQ(y.data()[1], 3.0f);
}

TEST(Linear, MatchesTripleLoopOracle) {
  Rng rng(13);
  auto x = random_normal<float>({5, 7}, rng);
  auto w = random_normal<float>({4, 7}, rng);
  auto b = random_normal<float>({4}, rng);
  auto got = ops::linear<float>(nullptr, x, w, b);
  auto want = oracle::naive_linear(x, w, b);
  EXPECT_LT(oracle::max_rel_diff(got, want), 1e-6);
}

TEST(Linear, RejectsFeatureMismatch) {
  Tensor<float> x({1, 3}, 1.0f);
  Tensor<float> w({2, 4}, 1.0f);
  Tensor<float> b({2}, 0.0f);
  EXPECT_THROW(ops::linear<float>(nullptr, x, w, b), std::invalid_argument);
}

TEST(Add, ZeroIsNeutral) {
  Rng rng(17);
  auto a = random_normal<float>({2, 3}, rng);
  Tensor<float> z({2, 3}, 0.0f);
  auto y = ops::add<float>(nullptr, a, z);
  for (std::size_t i = 0; i < a.size(); ++i)
    EXPECT_EQ(y.data()[i], a.data()[i]);
}

TEST(Add, Scalars) {
  auto a = Tensor<float>::scalar(2);
  auto b = Tensor<float>::scalar(3);
  EXPECT_FLOAT_EQ(ops::add<float>(nullptr, a, b).item(), 5.0f);
}

TEST(Add, GradientDistributesToBothOperands) {
  Rng rng(19);
  auto a = random_normal<float>({4}, rng);
  auto b = random_normal<float>({4}, rng);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Tape<float> tape;
  auto loss = ops::sum(&tape, ops::add(&tape, a, b));
  tape.backward(loss);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_FLOAT_EQ(a.grad()[i], 1.0f);
    EXPECT_FLOAT_EQ(b.grad()[i], 1.0f);
  }
}

TEST(Add, RejectsShapeMismatch) {
  Tensor<float> a({2, 3}, 1.0f), b({3, 2}, 1.0f);
  EXPECT_THROW(ops::add<float>(nullptr, a, b), std::invalid_argument);
}

TEST(SubsamplePad, ZeroPadsTrailingChannels) {
  auto x = Tensor<float>::from_data({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  auto y = ops::subsample_pad<float>(nullptr, x, 1, 4);
  EXPECT_EQ(y.shape(), (Shape{1, 4, 2, 2}));
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
  for (std::size_t i = 8; i < 16; ++i) EXPECT_EQ(y.data()[i], 0.0f);
}

TEST(SubsamplePad, KeepsTopLeftOfEachWindow) {
  auto x = Tensor<float>::from_data(
      {1, 1, 4, 4}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15});
  auto y = ops::subsample_pad<float>(nullptr, x, 2, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(y.data(), (std::vector<float>{0, 2, 8, 10}));
}

TEST(SubsamplePad, RejectsChannelReduction) {
  Tensor<float> x({1, 4, 2, 2}, 1.0f);
  EXPECT_THROW(ops::subsample_pad<float>(nullptr, x, 1, 2),
               std::invalid_argument);
}

// Linearity of the linear-in-each-operand primitives, exact for
// power-of-two factors.
TEST(OpProperties, HomogeneityExactForPowerOfTwoFactors) {
  Rng rng(23);
  auto x = random_normal<float>({2, 3, 6, 6}, rng);
  auto k = random_normal<float>({4, 3, 3, 3}, rng);
  auto xl = random_normal<float>({3, 5}, rng);
  auto wl = random_normal<float>({2, 5}, rng);
  Tensor<float> zb({2}, 0.0f);

  for (float alpha : {0.0f, 1.0f, 2.0f}) {
    auto scale_of = [alpha](const Tensor<float>& t) {
      auto s = t.clone();
      for (auto& v : s.data()) v *= alpha;
      return s;
    };
    // conv2d in input and in kernel
    auto y = ops::conv2d<float>(nullptr, x, k, 1, 1);
    auto ys = ops::conv2d<float>(nullptr, scale_of(x), k, 1, 1);
    auto yk = ops::conv2d<float>(nullptr, x, scale_of(k), 1, 1);
    for (std::size_t i = 0; i < y.size(); ++i) {
      EXPECT_EQ(ys.data()[i], alpha * y.data()[i]);
      EXPECT_EQ(yk.data()[i], alpha * y.data()[i]);
    }
    // linear (bias zero) in input and in weight
    auto u = ops::linear<float>(nullptr, xl, wl, zb);
    auto us = ops::linear<float>(nullptr, scale_of(xl), wl, zb);
    auto uw = ops::linear<float>(nullptr, xl, scale_of(wl), zb);
    for (std::size_t i = 0; i < u.size(); ++i) {
      EXPECT_EQ(us.data()[i], alpha * u.data()[i]);
      EXPECT_EQ(uw.data()[i], alpha * u.data()[i]);
    }
    // add jointly
    auto a = ops::add<float>(nullptr, x, x);
    auto as = ops::add<float>(nullptr, scale_of(x), scale_of(x));
    for (std::size_t i = 0; i < a.size(); ++i)
      EXPECT_EQ(as.data()[i], alpha * a.data()[i]);
  }
}

}  // namespace
