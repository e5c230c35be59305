#pragma once

#include <cstdint>

#include "ppgn/config.hpp"

PPGN_NAMESPACE_BEGIN

struct Corners {
  double x1;
  double y1;
  double x2;
  double y2;
};

/// Axis-aligned box in center-size form, normalized to the padded square
/// image. Construction rejects degenerate or out-of-range boxes.
class Box {
 public:
  Box(double cx, double cy, double w, double h);

  static Box from_corners(double x1, double y1, double x2, double y2);

  double cx() const noexcept { return cx_; }
  double cy() const noexcept { return cy_; }
  double w() const noexcept { return w_; }
  double h() const noexcept { return h_; }
  double area() const noexcept { return w_ * h_; }
  Corners corners() const noexcept {
    return {cx_ - w_ / 2, cy_ - h_ / 2, cx_ + w_ / 2, cy_ + h_ / 2};
  }

  friend bool operator==(const Box&, const Box&) = default;

 private:
  double cx_;
  double cy_;
  double w_;
  double h_;
};

/// Intersection over union; 0 for disjoint boxes and for zero-area pairs.
double iou(const Box& a, const Box& b) noexcept;

/// Aspect-preserving resize of a src_w x src_h image into a square of side
/// target_size, with the short edge padded evenly on both sides.
struct LetterboxTransform {
  double scale = 1.0;
  double pad_x = 0.0;
  double pad_y = 0.0;
  int target_size = 0;
  int src_w = 0;
  int src_h = 0;

  double content_w() const noexcept { return src_w * scale; }
  double content_h() const noexcept { return src_h * scale; }

  /// Box normalized to the source image -> box normalized to the target.
  Box forward(const Box& src) const;
  /// Inverse of forward().
  Box inverse(const Box& dst) const;
  /// Target-normalized box -> source pixel corners.
  Corners to_source_pixels(const Box& dst) const;
};

LetterboxTransform letterbox(int src_w, int src_h, int target_size);

/// A grid location on one pyramid scale.
struct GridCell {
  int scale = 0;
  int row = 0;
  int col = 0;

  friend bool operator==(const GridCell&, const GridCell&) = default;
};

struct AnchorWh {
  double w = 0.0;
  double h = 0.0;

  friend bool operator==(const AnchorWh&, const AnchorWh&) = default;
};

/// Regression targets for one anchor: sx, sy are targets for sigmoid(t_x),
/// sigmoid(t_y); tw, th are log size ratios against the anchor prior.
struct OffsetTarget {
  double sx = 0.0;
  double sy = 0.0;
  double tw = 0.0;
  double th = 0.0;
  GridCell cell;
  int anchor_index = 0;
};

/// YOLOv3-style encoding. Throws PreconditionError if the box center is not
/// inside `cell` and InvalidInputError for a non-positive anchor dimension.
OffsetTarget encode_offsets(const Box& gt, AnchorWh anchor, GridCell cell,
                            int grid_size, int anchor_index = 0);

/// Inverse of encode_offsets. The result is clamped to the unit square in
/// corner form, so wild size offsets yield large (or vanishing) boxes.
Box decode_offsets(double sx, double sy, double tw, double th, AnchorWh anchor,
                   GridCell cell, int grid_size);

PPGN_NAMESPACE_END
