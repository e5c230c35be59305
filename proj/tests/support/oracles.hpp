#pragma once

// Independent reference computations used by unit and acceptance tests.
// Written directly from the definitions, without the library's helpers.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace ppgn::oracle {

// IoU by counting unit pixels on an 8x8 lattice; corners are integers.
inline double pixel_iou(int ax1, int ay1, int ax2, int ay2, int bx1, int by1, int bx2, int by2) {
  int inter = 0, uni = 0;
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      const bool in_a = x >= ax1 && x < ax2 && y >= ay1 && y < ay2;
      const bool in_b = x >= bx1 && x < bx2 && y >= by1 && y < by2;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  }
  return static_cast<double>(inter) / uni;
}

// (1/N) sum_i s*_i ln(s*_i / max(s_i, 1e-12)) with s = sigmoid(logits)
// normalized to sum 1.
inline double kld(const std::vector<double>& logits, const std::vector<double>& s_star) {
  std::vector<double> s(logits.size());
  double total = 0;
  for (std::size_t i = 0; i < s.size(); ++i) total += s[i] = 1.0 / (1.0 + std::exp(-logits[i]));
  double kl = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s_star[i] > 0) kl += s_star[i] * std::log(s_star[i] / std::max(s[i] / total, 1e-12));
  }
  return kl / static_cast<double>(s.size());
}

// 1 - IoU of two concentric boxes.
inline double wh_distance(double aw, double ah, double bw, double bh) {
  const double inter = std::min(aw, bw) * std::min(ah, bh);
  return 1.0 - inter / (aw * ah + bw * bh - inter);
}

// Cheapest total distance over all k^n assignments of the boxes to fixed
// centroids.
inline double best_assignment_cost(const std::vector<std::pair<double, double>>& boxes,
                                   const std::vector<std::pair<double, double>>& centroids) {
  const std::size_t n = boxes.size(), k = centroids.size();
  std::size_t combos = 1;
  for (std::size_t i = 0; i < n; ++i) combos *= k;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t code = 0; code < combos; ++code) {
    double cost = 0.0;
    std::size_t c = code;
    for (std::size_t i = 0; i < n; ++i, c /= k) {
      const auto& b = boxes[i];
      const auto& m = centroids[c % k];
      cost += wh_distance(b.first, b.second, m.first, m.second);
    }
    best = std::min(best, cost);
  }
  return best;
}

}  // namespace ppgn::oracle
