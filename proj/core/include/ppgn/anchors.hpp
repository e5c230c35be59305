#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ppgn/config.hpp"
#include "ppgn/geometry.hpp"

PPGN_NAMESPACE_BEGIN

/// Anchor priors and the flat list of located anchors the grounding head
/// predicts over. `located` is ordered scale-major (in the order of
/// `scales`), then row-major cell, then prior index within the cell.
struct AnchorSet {
  std::vector<AnchorWh> priors;  // sorted ascending by area
  std::vector<int> scales;       // grid sizes, cells per side
  int anchors_per_cell = 3;
  std::vector<Box> located;

  std::size_t size() const noexcept { return located.size(); }
  /// Prior used on scale `s` for anchor slot `a`.
  AnchorWh prior_for(int s, int a) const;
  /// Offset of the first located anchor of scale `s`.
  std::size_t scale_offset(int s) const;

  struct Location {
    GridCell cell;
    int anchor_index;
    int grid_size;
    AnchorWh prior;
  };
  Location locate(std::size_t flat_index) const;
  std::size_t flat_index(GridCell cell, int anchor_index) const;
};

/// 1 - IoU of two boxes sharing a center.
double wh_iou_distance(AnchorWh a, AnchorWh b);

struct ClusterState {
  std::vector<AnchorWh> centroids;
  std::vector<int> assignment;
  double objective = 0.0;
};

struct KMeansTrace {
  ClusterState final_state;
  /// Objective after each assignment step, starting with the seeded centroids.
  std::vector<double> objective_history;
  int iterations = 0;
};

struct KMeansOptions {
  int max_iters = 100;
};

/// K-means over (w, h) pairs under the 1 - IoU distance. Centroids are
/// seeded by farthest-point selection and updated with per-cluster medians;
/// an update that would raise a cluster's cost is rejected. Returns the
/// centroids sorted ascending by area.
std::vector<AnchorWh> kmeans_anchors(std::span<const AnchorWh> sizes, int k,
                                     std::uint64_t seed);

KMeansTrace kmeans_anchors_traced(std::span<const AnchorWh> sizes, int k,
                                  std::uint64_t seed,
                                  const KMeansOptions& options = {});

/// Runs the iteration from caller-provided centroids instead of seeding.
KMeansTrace kmeans_from(std::span<const AnchorWh> sizes,
                        std::vector<AnchorWh> centroids,
                        const KMeansOptions& options = {});

/// Mean distance of every size to its nearest centroid.
double kmeans_objective(std::span<const AnchorWh> sizes,
                        std::span<const AnchorWh> centroids);

/// Expands priors over the grids. The smallest-area priors go to the finest
/// grid. Throws InvalidInputError unless priors.size() equals
/// anchors_per_cell * scales.size().
AnchorSet build_anchor_set(std::vector<AnchorWh> priors, std::vector<int> scales,
                           int anchors_per_cell = 3);

PPGN_NAMESPACE_END
