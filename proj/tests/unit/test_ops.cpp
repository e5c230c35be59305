#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "ppgn/errors.hpp"
#include "ppgn/numerics/ops.hpp"
#include "ppgn/rng.hpp"

namespace {

using namespace ppgn;
using nn::Tensor;

Tensor random(nn::Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  Rng rng(seed);
  std::vector<Scalar> v(nn::numel(shape));
  for (auto& x : v) x = static_cast<Scalar>(rng.uniform(lo, hi));
  return Tensor::from(std::move(shape), std::move(v));
}

// Direct nested-loop convolution, NHWC input and [k,k,in,out] weights.
std::vector<double> naive_conv(const Tensor& x, const Tensor& w, int stride, int pad) {
  const int b = static_cast<int>(x.dim(0)), h = static_cast<int>(x.dim(1)),
            wd = static_cast<int>(x.dim(2)), ci = static_cast<int>(x.dim(3));
  const int k = static_cast<int>(w.dim(0)), co = static_cast<int>(w.dim(3));
  const int ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(b * ho * wo * co), 0.0);
  for (int n = 0; n < b; ++n)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox)
        for (int o = 0; o < co; ++o) {
          double acc = 0.0;
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
              if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
              for (int c = 0; c < ci; ++c) {
                acc += x.at(((static_cast<std::size_t>(n) * h + iy) * wd + ix) * ci + c) *
                       w.at(((static_cast<std::size_t>(ky) * k + kx) * ci + c) * co + o);
              }
            }
          out[((static_cast<std::size_t>(n) * ho + oy) * wo + ox) * co + o] = acc;
        }
  return out;
}

TEST(Ops, MatmulSmall) {
  const auto a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  const auto b = Tensor::from({3, 2}, {7, 8, 9, 10, 11, 12});
  const auto c = nn::matmul(a, b);
  ASSERT_EQ(c.shape(), (nn::Shape{2, 2}));
  EXPECT_FLOAT_EQ(c.at(0), 58);
  EXPECT_FLOAT_EQ(c.at(1), 64);
  EXPECT_FLOAT_EQ(c.at(2), 139);
  EXPECT_FLOAT_EQ(c.at(3), 154);
  EXPECT_THROW(nn::matmul(a, a), ShapeError);
}

TEST(Ops, ConvMatchesNaiveLoops) {
  for (int stride : {1, 2}) {
    for (int k : {1, 3}) {
      const auto x = random({2, 7, 6, 3}, 1 + stride + k);
      const auto w = random({static_cast<std::size_t>(k), static_cast<std::size_t>(k), 3, 4}, 9 + k);
      const int pad = k / 2;
      const auto y = nn::conv2d(x, w, Tensor{}, stride, pad);
      const auto ref = naive_conv(x, w, stride, pad);
      ASSERT_EQ(y.numel(), ref.size());
      for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.at(i), ref[i], 1e-5);
    }
  }
}

TEST(Ops, ConvBiasAndShapeErrors) {
  const auto x = Tensor::full({1, 2, 2, 1}, 1);
  const auto w = Tensor::full({1, 1, 1, 2}, 2);
  const auto b = Tensor::from({2}, {0.5, -1});
  const auto y = nn::conv2d(x, w, b, 1, 0);
  EXPECT_FLOAT_EQ(y.at(0), 2.5f);
  EXPECT_FLOAT_EQ(y.at(1), 1.0f);
  EXPECT_THROW(nn::conv2d(x, Tensor::full({1, 1, 3, 2}, 1), Tensor{}, 1, 0), ShapeError);
}

TEST(Ops, L1NormalizeSumsToOne) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto y = nn::l1_normalize(random({3, 17}, s, 0.0, 5.0));
    for (std::size_t r = 0; r < 3; ++r) {
      double total = 0;
      for (std::size_t c = 0; c < 17; ++c) total += y.at(r * 17 + c);
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
  EXPECT_THROW(nn::l1_normalize(Tensor::zeros({1, 4})), InvalidInputError);
}

TEST(Ops, LogSoftmaxUniformAndStable) {
  const auto y = nn::log_softmax(Tensor::full({1, 8}, 3));
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(y.at(i), -std::log(8.0), 1e-6);
  const auto big = nn::log_softmax(Tensor::from({1, 2}, {1000, 0}));
  EXPECT_NEAR(big.at(0), 0.0, 1e-6);
  EXPECT_NEAR(big.at(1), -1000.0, 1e-3);
}

TEST(Ops, SigmoidSaturatesWithoutNan) {
  const auto y = nn::sigmoid(Tensor::from({3}, {-1000, 0, 1000}));
  EXPECT_FLOAT_EQ(y.at(0), 0.0f);
  EXPECT_FLOAT_EQ(y.at(1), 0.5f);
  EXPECT_FLOAT_EQ(y.at(2), 1.0f);
}

TEST(Ops, LogClampedFloors) {
  const auto y = nn::log_clamped(Tensor::from({2}, {0, 1}), Scalar(1e-12));
  EXPECT_NEAR(y.at(0), std::log(1e-12), 1e-3);
  EXPECT_FLOAT_EQ(y.at(1), 0.0f);
}

TEST(Ops, InstanceNormOfConstantIsZero) {
  const auto y = nn::instance_norm(Tensor::full({2, 3, 3, 4}, 7));
  for (auto v : y.data()) EXPECT_NEAR(v, 0.0, 1e-3);
}

TEST(Ops, InstanceNormStandardizesEachChannel) {
  const auto y = nn::instance_norm(random({2, 4, 4, 3}, 5, -3, 3));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c) {
      double m = 0, v = 0;
      for (std::size_t p = 0; p < 16; ++p) m += y.at((n * 16 + p) * 3 + c);
      m /= 16;
      for (std::size_t p = 0; p < 16; ++p) v += std::pow(y.at((n * 16 + p) * 3 + c) - m, 2);
      EXPECT_NEAR(m, 0.0, 1e-5);
      EXPECT_NEAR(v / 16, 1.0, 1e-3);
    }
}

TEST(Ops, BatchNormUpdatesRunningStatistics) {
  const auto x = Tensor::from({4, 1}, {1, 2, 3, 4});
  auto g = Tensor::full({1}, 1), b = Tensor::zeros({1});
  auto rm = Tensor::zeros({1}), rv = Tensor::full({1}, 1);
  const auto y = nn::batch_norm(x, g, b, rm, rv, true);
  // Batch mean 2.5, biased var 1.25, unbiased 5/3.
  EXPECT_NEAR(y.at(0), (1 - 2.5) / std::sqrt(1.25 + 1e-5), 1e-5);
  EXPECT_NEAR(rm.at(0), 0.25, 1e-6);
  EXPECT_NEAR(rv.at(0), 0.9 + 0.1 * 5.0 / 3.0, 1e-6);
  const auto e = nn::batch_norm(x, g, b, rm, rv, false);
  EXPECT_NEAR(e.at(3), (4 - 0.25) / std::sqrt(rv.at(0) + 1e-5), 1e-5);
  EXPECT_NEAR(rm.at(0), 0.25, 1e-6);  // eval leaves buffers alone
}

TEST(Ops, EmbeddingBagMean) {
  const auto table = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  const auto y = nn::embedding_bag_mean(table, {{0, 2}, {1}});
  EXPECT_FLOAT_EQ(y.at(0), 3);
  EXPECT_FLOAT_EQ(y.at(1), 4);
  EXPECT_FLOAT_EQ(y.at(2), 3);
  EXPECT_THROW(nn::embedding_bag_mean(table, {{}}), InvalidInputError);
  EXPECT_THROW(nn::embedding_bag_mean(table, {{3}}), InvalidInputError);
}

TEST(Ops, ConcatAndExpand) {
  const std::vector<Tensor> parts{Tensor::from({1, 2, 1}, {1, 2}), Tensor::from({1, 1, 1}, {3})};
  const auto c = nn::concat(parts, 1);
  EXPECT_EQ(c.shape(), (nn::Shape{1, 3, 1}));
  EXPECT_FLOAT_EQ(c.at(2), 3);
  const auto e = nn::expand_spatial(Tensor::from({1, 2}, {5, 6}), 2, 2);
  EXPECT_EQ(e.shape(), (nn::Shape{1, 2, 2, 2}));
  EXPECT_FLOAT_EQ(e.at(6), 5);
  EXPECT_FLOAT_EQ(e.at(7), 6);
}

TEST(Ops, DeterministicOutputs) {
  const auto x = random({2, 8, 8, 3}, 3);
  const auto w = random({3, 3, 3, 5}, 4);
  const auto a = nn::conv2d(x, w, Tensor{}, 2, 1);
  const auto b = nn::conv2d(x, w, Tensor{}, 2, 1);
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST(Tape, LeafGradientsAccumulateAcrossBackward) {
  auto x = Tensor::from({2}, {1, 2}, true);
  for (int i = 0; i < 2; ++i) {
    nn::Tape tape;
    nn::TapeScope scope(tape);
    tape.backward(nn::sum(nn::square(x)));
  }
  EXPECT_FLOAT_EQ(x.grad()[0], 4);
  EXPECT_FLOAT_EQ(x.grad()[1], 8);
}

TEST(Tape, BackwardRejectsNonScalar) {
  auto x = Tensor::from({2}, {1, 2}, true);
  nn::Tape tape;
  nn::TapeScope scope(tape);
  const auto y = nn::square(x);
  EXPECT_THROW(tape.backward(y), InvalidInputError);
}

TEST(Tape, NoRecordingWithoutScope) {
  auto x = Tensor::from({2}, {1, 2}, true);
  nn::Tape tape;
  { nn::TapeScope scope(tape); }
  (void)nn::square(x);
  EXPECT_EQ(tape.size(), 0u);
}

}  // namespace
