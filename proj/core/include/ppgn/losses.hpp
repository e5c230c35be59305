#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ppgn/anchors.hpp"
#include "ppgn/config.hpp"
#include "ppgn/geometry.hpp"
#include "ppgn/numerics/tensor.hpp"

PPGN_NAMESPACE_BEGIN

/// Floor applied to predicted scores inside the KL logarithm.
inline constexpr double kKlFloor = 1e-12;

/// IoU-valued confidence target over all N anchors, L1-normalized.
struct SmoothLabel {
  std::vector<double> s_star;
  std::vector<std::size_t> support;  // ascending anchor indices with s* > 0
  /// True when no anchor cleared the threshold and the label is one-hot at
  /// the best-overlapping anchor.
  bool fallback = false;
};

/// Anchors that receive coordinate supervision for one ground-truth box.
struct AnchorMatch {
  SmoothLabel label;
  std::vector<std::size_t> matched;    // equals label.support
  std::vector<OffsetTarget> targets;   // parallel to matched
  std::size_t best_anchor = 0;         // argmax IoU, lowest index on ties
};

struct LossBreakdown {
  double conf = 0.0;
  double coord = 0.0;
  double total = 0.0;
  std::size_t matched_anchor_count = 0;
};

/// Index of the located anchor with the highest IoU (ties -> lowest index).
std::size_t argmax_iou_anchor(const Box& gt, const AnchorSet& anchors);

/// raw[i] = IoU if IoU > eta else 0, then L1-normalized; one-hot at the
/// argmax-IoU anchor when nothing survives. Throws InvalidInputError unless
/// 0 < eta < 1.
SmoothLabel build_smooth_label(const Box& gt, const AnchorSet& anchors, double eta);

/// Regression target of `gt` relative to anchor `flat_index`. When the box
/// center lies outside the anchor's cell the center targets are clamped to
/// the cell's [0, 1) range.
OffsetTarget regression_target(const Box& gt, const AnchorSet& anchors,
                               std::size_t flat_index);

/// Smooth label plus coordinate targets for every supported anchor.
AnchorMatch match_anchors(const Box& gt, const AnchorSet& anchors, double eta);

/// Confidence logits [B, N] sliced out of raw predictions [B, N, 5].
nn::Tensor confidence_logits(const nn::Tensor& raw);

/// (1/N) sum_i s*_i ln(s*_i / max(s_i, floor)) for already-normalized scores
/// s [B, N], averaged over the batch.
nn::Tensor kl_divergence(const nn::Tensor& scores, std::span<const SmoothLabel> labels);

/// KL confidence loss: scores are sigmoid(logits) L1-normalized per sample.
nn::Tensor kld_conf_loss(const nn::Tensor& logits, std::span<const SmoothLabel> labels);

/// One-hot softmax cross-entropy against the target anchor of each sample.
nn::Tensor softmax_conf_loss(const nn::Tensor& logits,
                             std::span<const std::size_t> target_anchor);

/// Masked coordinate MSE over matched anchors, summed per sample and
/// averaged over the batch. Throws ConsistencyError when a match's anchor
/// set disagrees with its label support.
nn::Tensor coord_loss(const nn::Tensor& raw, std::span<const AnchorMatch> matches);

/// conf + gamma * coord.
nn::Tensor total_loss(const nn::Tensor& conf, const nn::Tensor& coord, double gamma);

PPGN_NAMESPACE_END
