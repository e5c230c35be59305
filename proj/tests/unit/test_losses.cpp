#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "ppgn/errors.hpp"
#include "ppgn/losses.hpp"
#include "ppgn/numerics/ops.hpp"
#include "ppgn/rng.hpp"

namespace {

using namespace ppgn;
using nn::Tensor;

AnchorSet toy_anchors() {
  std::vector<AnchorWh> priors;
  for (int i = 1; i <= 9; ++i) priors.push_back({0.04 * i + 0.02, 0.035 * i + 0.03});
  return build_anchor_set(priors, {4, 8, 16});
}

Box random_box(Rng& rng) {
  const double w = rng.uniform(0.02, 0.9), h = rng.uniform(0.02, 0.9);
  return Box(rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h);
}

TEST(SmoothLabel, SumsToOneWithExactSupport) {
  const auto anchors = toy_anchors();
  Rng rng(1);
  std::size_t fallbacks = 0;
  for (int i = 0; i < 1000; ++i) {
    const Box gt = random_box(rng);
    const double eta = i % 4 == 0 ? 0.95 : 0.7;
    const auto label = build_smooth_label(gt, anchors, eta);
    const double total = std::accumulate(label.s_star.begin(), label.s_star.end(), 0.0);
    ASSERT_NEAR(total, 1.0, 1e-6);
    std::vector<std::size_t> support;
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      if (!label.fallback && iou(anchors.located[a], gt) > eta) support.push_back(a);
      if (label.s_star[a] > 0) {
        ASSERT_TRUE(std::binary_search(label.support.begin(), label.support.end(), a));
      }
    }
    if (label.fallback) {
      ++fallbacks;
      ASSERT_EQ(label.support.size(), 1u);
      EXPECT_EQ(label.support[0], argmax_iou_anchor(gt, anchors));
      EXPECT_EQ(label.s_star[label.support[0]], 1.0);
    } else {
      ASSERT_EQ(label.support, support);
    }
  }
  EXPECT_GT(fallbacks, 0u);
  EXPECT_LT(fallbacks, 1000u);
}

TEST(SmoothLabel, ProportionalToIou) {
  const auto anchors = toy_anchors();
  const Box gt = anchors.located[500];
  const auto label = build_smooth_label(gt, anchors, 0.5);
  ASSERT_GE(label.support.size(), 1u);
  double total = 0;
  for (auto a : label.support) total += iou(anchors.located[a], gt);
  for (auto a : label.support) EXPECT_NEAR(label.s_star[a], iou(anchors.located[a], gt) / total, 1e-12);
}

TEST(SmoothLabel, ThresholdMustBeOpenUnitInterval) {
  const auto anchors = toy_anchors();
  const Box gt(0.5, 0.5, 0.2, 0.2);
  EXPECT_THROW(build_smooth_label(gt, anchors, 0.0), InvalidInputError);
  EXPECT_THROW(build_smooth_label(gt, anchors, 1.0), InvalidInputError);
}

TEST(KlDivergence, WorkedExample) {
  SmoothLabel l;
  l.s_star = {0.5, 0.5, 0.0};
  l.support = {0, 1};
  const auto loss = kl_divergence(Tensor::from({1, 3}, {0.25, 0.75, 0.0}), std::span(&l, 1));
  const double expect = (0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0)) / 3.0;
  EXPECT_NEAR(expect, 0.047947, 1e-6);
  EXPECT_NEAR(loss.item(), expect, 1e-6);
}

TEST(KlDivergence, MatchesDirectSummation) {
  const auto anchors = toy_anchors();
  Rng rng(2);
  for (int inst = 0; inst < 100; ++inst) {
    const Box gt = random_box(rng);
    const auto label = build_smooth_label(gt, anchors, 0.7);
    std::vector<double> logits(anchors.size());
    std::vector<Scalar> lf(anchors.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
      lf[i] = static_cast<Scalar>(rng.uniform(-4, 4));
      logits[i] = lf[i];
    }
    const auto loss = kld_conf_loss(Tensor::from({1, anchors.size()}, lf), std::span(&label, 1));
    EXPECT_NEAR(loss.item(), oracle::kld(logits, label.s_star), 1e-6) << inst;
  }
}

TEST(KlDivergence, ZeroWhenScoresMatchLabel) {
  SmoothLabel l;
  l.s_star = {0.25, 0.75};
  l.support = {0, 1};
  // sigmoid(a) : sigmoid(b) = 1 : 3 with sigmoid(b) = 0.75 -> sigmoid(a) = 0.25.
  const auto loss = kld_conf_loss(Tensor::from({1, 2}, {std::log(1.0f / 3.0f), std::log(3.0f)}),
                                  std::span(&l, 1));
  EXPECT_NEAR(loss.item(), 0.0, 1e-6);
}

TEST(KlDivergence, UniformLogitsAtStepZero) {
  const auto anchors = toy_anchors();
  const auto label = build_smooth_label(Box(0.4, 0.6, 0.3, 0.25), anchors, 0.7);
  const std::size_t n = anchors.size();
  const auto loss = kld_conf_loss(Tensor::zeros({1, n}), std::span(&label, 1));
  double kl = 0;
  for (double s : label.s_star) {
    if (s > 0) kl += s * std::log(s * static_cast<double>(n));
  }
  EXPECT_NEAR(loss.item(), kl / static_cast<double>(n), 1e-6);
}

TEST(SoftmaxConf, UniformLogitsGiveLogN) {
  for (std::size_t n : {3u, 1008u, 4032u}) {
    const std::vector<std::size_t> target{0, n - 1};
    const auto loss = softmax_conf_loss(Tensor::full({2, n}, 0.3f), target);
    EXPECT_NEAR(loss.item(), std::log(static_cast<double>(n)), 1e-5);
  }
}

TEST(CoordLoss, ZeroAtTargets) {
  const auto anchors = toy_anchors();
  const Box gt(0.41, 0.58, 0.3, 0.22);
  const auto m = match_anchors(gt, anchors, 0.7);
  std::vector<Scalar> raw(anchors.size() * 5, 0);
  for (std::size_t j = 0; j < m.matched.size(); ++j) {
    const auto& t = m.targets[j];
    Scalar* p = raw.data() + m.matched[j] * 5;
    p[0] = static_cast<Scalar>(std::log(t.sx / (1 - t.sx)));
    p[1] = static_cast<Scalar>(std::log(t.sy / (1 - t.sy)));
    p[2] = static_cast<Scalar>(t.tw);
    p[3] = static_cast<Scalar>(t.th);
  }
  const auto loss = coord_loss(Tensor::from({1, anchors.size(), 5}, raw), std::span(&m, 1));
  EXPECT_NEAR(loss.item(), 0.0, 1e-8);
}

TEST(CoordLoss, KnownValue) {
  const auto anchors = toy_anchors();
  const auto m = match_anchors(Box(0.41, 0.58, 0.3, 0.22), anchors, 0.7);
  const auto loss = coord_loss(Tensor::zeros({1, anchors.size(), 5}), std::span(&m, 1));
  double expect = 0;
  for (const auto& t : m.targets) {
    expect += std::pow(0.5 - t.sx, 2) + std::pow(0.5 - t.sy, 2) + t.tw * t.tw + t.th * t.th;
  }
  EXPECT_NEAR(loss.item(), expect, 1e-5);
}

TEST(CoordLoss, RejectsInconsistentMatch) {
  const auto anchors = toy_anchors();
  auto m = match_anchors(Box(0.41, 0.58, 0.3, 0.22), anchors, 0.7);
  m.matched.push_back(0);
  m.targets.push_back(m.targets.front());
  EXPECT_THROW(coord_loss(Tensor::zeros({1, anchors.size(), 5}), std::span(&m, 1)),
               ConsistencyError);
}

TEST(Matching, NeighbourCellTargetsAreClamped) {
  const auto anchors = toy_anchors();
  Rng rng(4);
  for (int i = 0; i < 300; ++i) {
    const auto m = match_anchors(random_box(rng), anchors, 0.5);
    for (const auto& t : m.targets) {
      EXPECT_GE(t.sx, 0.0);
      EXPECT_LT(t.sx, 1.0);
      EXPECT_GE(t.sy, 0.0);
      EXPECT_LT(t.sy, 1.0);
    }
  }
}

TEST(TotalLoss, WeightsCoordinateTerm) {
  const auto t = total_loss(Tensor::scalar(0.5f), Tensor::scalar(2.0f), 0.25);
  EXPECT_FLOAT_EQ(t.item(), 1.0f);
}

}  // namespace
