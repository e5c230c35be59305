#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "ppgn/anchors.hpp"
#include "ppgn/errors.hpp"
#include "ppgn/rng.hpp"

namespace {

using namespace ppgn;

std::vector<AnchorWh> nine_priors() {
  std::vector<AnchorWh> p;
  for (int i = 1; i <= 9; ++i) p.push_back({0.05 * i, 0.04 * i + 0.01});
  return p;
}

std::vector<AnchorWh> random_sizes(Rng& rng, std::size_t n) {
  std::vector<AnchorWh> s(n);
  for (auto& x : s) x = {rng.uniform(0.02, 0.8), rng.uniform(0.02, 0.8)};
  return s;
}

TEST(AnchorSet, CountsForFullAndToyScales) {
  EXPECT_EQ(build_anchor_set(nine_priors(), {8, 16, 32}).size(), 4032u);
  EXPECT_EQ(build_anchor_set(nine_priors(), {4, 8, 16}).size(), 1008u);
}

TEST(AnchorSet, LocateInvertsFlatIndex) {
  const auto set = build_anchor_set(nine_priors(), {4, 8, 16});
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto loc = set.locate(i);
    ASSERT_EQ(set.flat_index(loc.cell, loc.anchor_index), i);
    const Box& b = set.located[i];
    EXPECT_NEAR(b.cx(), (loc.cell.col + 0.5) / loc.grid_size, 1e-12);
    EXPECT_NEAR(b.cy(), (loc.cell.row + 0.5) / loc.grid_size, 1e-12);
  }
  EXPECT_THROW(set.locate(set.size()), InvalidInputError);
}

TEST(AnchorSet, ScaleMajorRowMajorOrder) {
  const auto set = build_anchor_set(nine_priors(), {4, 8, 16});
  EXPECT_EQ(set.scale_offset(0), 0u);
  EXPECT_EQ(set.scale_offset(1), 48u);
  EXPECT_EQ(set.scale_offset(2), 240u);
  const auto loc = set.locate(48 + 3 * 9 + 2);  // scale 1, cell 9 = (1, 1), slot 2
  EXPECT_EQ(loc.cell.scale, 1);
  EXPECT_EQ(loc.cell.row, 1);
  EXPECT_EQ(loc.cell.col, 1);
  EXPECT_EQ(loc.anchor_index, 2);
}

TEST(AnchorSet, SmallestPriorsOnFinestGrid) {
  auto priors = nine_priors();
  std::reverse(priors.begin(), priors.end());
  const auto set = build_anchor_set(priors, {4, 8, 16});
  const auto sorted = nine_priors();
  EXPECT_EQ(set.prior_for(2, 0), sorted[0]);  // 16-grid
  EXPECT_EQ(set.prior_for(1, 0), sorted[3]);
  EXPECT_EQ(set.prior_for(0, 2), sorted[8]);  // 4-grid
}

TEST(AnchorSet, RejectsWrongPriorCount) {
  EXPECT_THROW(build_anchor_set({{0.1, 0.1}}, {4, 8}), InvalidInputError);
  EXPECT_THROW(build_anchor_set({{0.1, 0.1}, {0.0, 0.1}}, {4}, 2), InvalidInputError);
}

TEST(WhIou, ConcentricDistance) {
  EXPECT_DOUBLE_EQ(wh_iou_distance({0.2, 0.2}, {0.2, 0.2}), 0.0);
  // 0.1x0.1 inside 0.2x0.2: IoU 1/4.
  EXPECT_NEAR(wh_iou_distance({0.1, 0.1}, {0.2, 0.2}), 0.75, 1e-15);
}

TEST(KMeans, ObjectiveNeverIncreases) {
  for (std::uint64_t inst = 0; inst < 50; ++inst) {
    Rng rng(1000 + inst);
    const auto sizes = random_sizes(rng, 20 + rng.below(80));
    const int k = 2 + static_cast<int>(rng.below(8));
    const auto trace = kmeans_anchors_traced(sizes, k, inst);
    ASSERT_FALSE(trace.objective_history.empty());
    for (std::size_t i = 1; i < trace.objective_history.size(); ++i) {
      ASSERT_LE(trace.objective_history[i], trace.objective_history[i - 1] + 1e-15)
          << "instance " << inst << " iteration " << i;
    }
    EXPECT_LE(trace.iterations, 100);
  }
}

TEST(KMeans, RecoversSeparatedDuplicates) {
  const std::vector<AnchorWh> centers{{0.05, 0.06}, {0.2, 0.1}, {0.5, 0.55}};
  std::vector<AnchorWh> sizes;
  for (int r = 0; r < 7; ++r)
    for (const auto& c : centers) sizes.push_back(c);
  const auto got = kmeans_anchors(sizes, 3, 9);
  ASSERT_EQ(got.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(got[i], centers[i]);
  }
}

// Exhaustive oracle: the cheapest of all k^n assignments to the final
// centroids. A locally optimal clustering must already achieve it.
TEST(KMeans, AssignmentsAreLocallyOptimal) {
  for (std::uint64_t inst = 0; inst < 40; ++inst) {
    Rng rng(7000 + inst);
    const std::size_t n = 3 + rng.below(6);
    const int k = 2 + static_cast<int>(rng.below(std::min<std::size_t>(n - 1, 3)));
    const auto sizes = random_sizes(rng, n);
    const auto trace = kmeans_anchors_traced(sizes, k, inst);
    const auto& st = trace.final_state;

    std::vector<std::pair<double, double>> boxes, cents;
    for (const auto& b : sizes) boxes.emplace_back(b.w, b.h);
    for (const auto& c : st.centroids) cents.emplace_back(c.w, c.h);
    const double best = oracle::best_assignment_cost(boxes, cents);
    double assigned = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      assigned += wh_iou_distance(sizes[i], st.centroids[static_cast<std::size_t>(st.assignment[i])]);
    }
    EXPECT_NEAR(assigned, best, 1e-12) << "instance " << inst;
  }
}

TEST(KMeans, DeterministicAndSorted) {
  Rng rng(42);
  const auto sizes = random_sizes(rng, 300);
  const auto a = kmeans_anchors(sizes, 9, 5);
  const auto b = kmeans_anchors(sizes, 9, 5);
  EXPECT_EQ(a, b);
  for (std::size_t i = 1; i < a.size(); ++i) EXPECT_LE(a[i - 1].w * a[i - 1].h, a[i].w * a[i].h);
}

TEST(KMeans, RejectsTooFewBoxes) {
  const std::vector<AnchorWh> sizes{{0.1, 0.1}, {0.2, 0.2}};
  EXPECT_THROW(kmeans_anchors(sizes, 3, 0), InvalidInputError);
  const std::vector<AnchorWh> bad{{0.1, 0.1}, {0.0, 0.2}};
  EXPECT_THROW(kmeans_anchors(bad, 1, 0), InvalidInputError);
}

}  // namespace
