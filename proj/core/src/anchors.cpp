#include "ppgn/anchors.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <sstream>

#include "ppgn/errors.hpp"
#include "ppgn/rng.hpp"

PPGN_NAMESPACE_BEGIN

namespace {

void require_positive(AnchorWh a) {
  if (!(a.w > 0.0) || !(a.h > 0.0)) {
    std::ostringstream msg;
    msg << "anchor size must be positive, got (" << a.w << ", " << a.h << ")";
    throw InvalidInputError(msg.str());
  }
}

bool area_less(AnchorWh a, AnchorWh b) {
  const double aa = a.w * a.h;
  const double ab = b.w * b.h;
  if (aa != ab) return aa < ab;
  return a.w < b.w;
}

int nearest(AnchorWh box, std::span<const AnchorWh> centroids, double* dist) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = wh_iou_distance(box, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  if (dist != nullptr) *dist = best_d;
  return best;
}

double median(std::vector<double> v) {
  const std::size_t n = v.size();
  std::sort(v.begin(), v.end());
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double cluster_cost(std::span<const AnchorWh> sizes,
                    const std::vector<int>& assignment, int c,
                    AnchorWh centroid) {
  double cost = 0.0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (assignment[i] == c) cost += wh_iou_distance(sizes[i], centroid);
  }
  return cost;
}

}  // namespace

double wh_iou_distance(AnchorWh a, AnchorWh b) {
  require_positive(a);
  require_positive(b);
  const double inter = std::min(a.w, b.w) * std::min(a.h, b.h);
  const double uni = a.w * a.h + b.w * b.h - inter;
  return 1.0 - inter / uni;
}

double kmeans_objective(std::span<const AnchorWh> sizes,
                        std::span<const AnchorWh> centroids) {
  if (sizes.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : sizes) {
    double d = 0.0;
    nearest(s, centroids, &d);
    total += d;
  }
  return total / static_cast<double>(sizes.size());
}

KMeansTrace kmeans_from(std::span<const AnchorWh> sizes,
                        std::vector<AnchorWh> centroids,
                        const KMeansOptions& options) {
  const std::size_t n = sizes.size();
  const int k = static_cast<int>(centroids.size());
  if (k <= 0 || n < static_cast<std::size_t>(k)) {
    std::ostringstream msg;
    msg << "k-means needs at least k=" << k << " boxes, got " << n;
    throw InvalidInputError(msg.str());
  }
  for (const auto& s : sizes) require_positive(s);

  KMeansTrace trace;
  std::vector<int> assignment(n, -1);
  std::vector<double> dist(n, 0.0);

  for (int iter = 0;; ++iter) {
    // Assignment step.
    std::vector<int> next(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      next[i] = nearest(sizes[i], centroids, &dist[i]);
      total += dist[i];
    }
    // Empty-cluster repair: move the centroid onto the worst-served box.
    for (int c = 0; c < k; ++c) {
      if (std::find(next.begin(), next.end(), c) != next.end()) continue;
      std::size_t worst = 0;
      for (std::size_t i = 1; i < n; ++i) {
        if (dist[i] > dist[worst]) worst = i;
      }
      // Only take the box if its cluster keeps at least one member.
      if (std::count(next.begin(), next.end(), next[worst]) < 2) continue;
      centroids[static_cast<std::size_t>(c)] = sizes[worst];
      total -= dist[worst];
      next[worst] = c;
      dist[worst] = 0.0;
    }
    trace.objective_history.push_back(total / static_cast<double>(n));

    const bool stable = next == assignment;
    assignment = std::move(next);
    if (stable || iter >= options.max_iters) {
      trace.iterations = iter;
      break;
    }

    // Update step: component-wise median, rejected if the cluster gets worse.
    for (int c = 0; c < k; ++c) {
      std::vector<double> ws;
      std::vector<double> hs;
      for (std::size_t i = 0; i < n; ++i) {
        if (assignment[i] == c) {
          ws.push_back(sizes[i].w);
          hs.push_back(sizes[i].h);
        }
      }
      if (ws.empty()) continue;
      const AnchorWh candidate{median(ws), median(hs)};
      const AnchorWh current = centroids[static_cast<std::size_t>(c)];
      if (cluster_cost(sizes, assignment, c, candidate) <=
          cluster_cost(sizes, assignment, c, current)) {
        centroids[static_cast<std::size_t>(c)] = candidate;
      }
    }
  }

  trace.final_state.centroids = std::move(centroids);
  trace.final_state.assignment = std::move(assignment);
  trace.final_state.objective = trace.objective_history.back();
  return trace;
}

KMeansTrace kmeans_anchors_traced(std::span<const AnchorWh> sizes, int k,
                                  std::uint64_t seed,
                                  const KMeansOptions& options) {
  if (k <= 0 || sizes.size() < static_cast<std::size_t>(k)) {
    std::ostringstream msg;
    msg << "k-means needs at least k=" << k << " boxes, got " << sizes.size();
    throw InvalidInputError(msg.str());
  }
  for (const auto& s : sizes) require_positive(s);

  // Farthest-point seeding; ties resolve to the lowest index.
  Rng rng(seed);
  std::vector<AnchorWh> centroids;
  centroids.push_back(sizes[rng.below(sizes.size())]);
  std::vector<double> min_dist(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    min_dist[i] = wh_iou_distance(sizes[i], centroids[0]);
  }
  while (centroids.size() < static_cast<std::size_t>(k)) {
    std::size_t far = 0;
    for (std::size_t i = 1; i < sizes.size(); ++i) {
      if (min_dist[i] > min_dist[far]) far = i;
    }
    centroids.push_back(sizes[far]);
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      min_dist[i] = std::min(min_dist[i], wh_iou_distance(sizes[i], sizes[far]));
    }
  }
  return kmeans_from(sizes, std::move(centroids), options);
}

std::vector<AnchorWh> kmeans_anchors(std::span<const AnchorWh> sizes, int k,
                                     std::uint64_t seed) {
  auto centroids = kmeans_anchors_traced(sizes, k, seed).final_state.centroids;
  std::sort(centroids.begin(), centroids.end(), area_less);
  return centroids;
}

AnchorWh AnchorSet::prior_for(int s, int a) const {
  // Rank grids from finest (largest) to coarsest; rank r owns priors
  // [r * A, (r + 1) * A).
  const int grid = scales.at(static_cast<std::size_t>(s));
  int rank = 0;
  for (std::size_t i = 0; i < scales.size(); ++i) {
    if (scales[i] > grid || (scales[i] == grid && static_cast<int>(i) < s)) {
      ++rank;
    }
  }
  return priors.at(static_cast<std::size_t>(rank * anchors_per_cell + a));
}

std::size_t AnchorSet::scale_offset(int s) const {
  std::size_t offset = 0;
  for (int i = 0; i < s; ++i) {
    const auto g = static_cast<std::size_t>(scales[static_cast<std::size_t>(i)]);
    offset += g * g * static_cast<std::size_t>(anchors_per_cell);
  }
  return offset;
}

AnchorSet::Location AnchorSet::locate(std::size_t flat_index) const {
  std::size_t rest = flat_index;
  const auto per_cell = static_cast<std::size_t>(anchors_per_cell);
  for (std::size_t s = 0; s < scales.size(); ++s) {
    const auto g = static_cast<std::size_t>(scales[s]);
    const std::size_t count = g * g * per_cell;
    if (rest < count) {
      const std::size_t cell = rest / per_cell;
      const int a = static_cast<int>(rest % per_cell);
      const GridCell gc{static_cast<int>(s), static_cast<int>(cell / g),
                        static_cast<int>(cell % g)};
      return {gc, a, static_cast<int>(g), prior_for(static_cast<int>(s), a)};
    }
    rest -= count;
  }
  throw InvalidInputError("anchor index out of range");
}

std::size_t AnchorSet::flat_index(GridCell cell, int anchor_index) const {
  const auto g = static_cast<std::size_t>(scales.at(static_cast<std::size_t>(cell.scale)));
  return scale_offset(cell.scale) +
         (static_cast<std::size_t>(cell.row) * g + static_cast<std::size_t>(cell.col)) *
             static_cast<std::size_t>(anchors_per_cell) +
         static_cast<std::size_t>(anchor_index);
}

AnchorSet build_anchor_set(std::vector<AnchorWh> priors, std::vector<int> scales,
                           int anchors_per_cell) {
  if (anchors_per_cell <= 0 || scales.empty() ||
      priors.size() != static_cast<std::size_t>(anchors_per_cell) * scales.size()) {
    std::ostringstream msg;
    msg << "expected " << anchors_per_cell << " priors per scale for "
        << scales.size() << " scales, got " << priors.size();
    throw InvalidInputError(msg.str());
  }
  for (const auto& p : priors) require_positive(p);
  for (int g : scales) {
    if (g <= 0) throw InvalidInputError("grid sizes must be positive");
  }
  std::stable_sort(priors.begin(), priors.end(), area_less);

  AnchorSet set;
  set.priors = std::move(priors);
  set.scales = std::move(scales);
  set.anchors_per_cell = anchors_per_cell;
  for (std::size_t s = 0; s < set.scales.size(); ++s) {
    const int g = set.scales[s];
    for (int row = 0; row < g; ++row) {
      for (int col = 0; col < g; ++col) {
        for (int a = 0; a < anchors_per_cell; ++a) {
          const AnchorWh p = set.prior_for(static_cast<int>(s), a);
          set.located.emplace_back((col + 0.5) / g, (row + 0.5) / g,
                                   std::min(p.w, 1.0), std::min(p.h, 1.0));
        }
      }
    }
  }
  return set;
}

PPGN_NAMESPACE_END
