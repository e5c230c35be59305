#include "ppgn/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ppgn/errors.hpp"

PPGN_NAMESPACE_BEGIN

namespace {

constexpr double kRangeSlack = 1e-12;
// Floor applied when decode would underflow a side to zero.
constexpr double kMinDecodedSide = 1e-12;

}  // namespace

Box::Box(double cx, double cy, double w, double h)
    : cx_(cx), cy_(cy), w_(w), h_(h) {
  const bool finite = std::isfinite(cx) && std::isfinite(cy) &&
                      std::isfinite(w) && std::isfinite(h);
  if (!finite || !(w > 0.0) || !(h > 0.0) || w > 1.0 + kRangeSlack ||
      h > 1.0 + kRangeSlack || cx < -kRangeSlack || cx > 1.0 + kRangeSlack ||
      cy < -kRangeSlack || cy > 1.0 + kRangeSlack) {
    std::ostringstream msg;
    msg << "invalid box (cx " << cx << ", cy " << cy << ", w " << w << ", h "
        << h << ")";
    throw InvalidInputError(msg.str());
  }
}

Box Box::from_corners(double x1, double y1, double x2, double y2) {
  return Box((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1);
}

double iou(const Box& a, const Box& b) noexcept {
  const Corners ca = a.corners();
  const Corners cb = b.corners();
  const double iw = std::min(ca.x2, cb.x2) - std::max(ca.x1, cb.x1);
  const double ih = std::min(ca.y2, cb.y2) - std::max(ca.y1, cb.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

LetterboxTransform letterbox(int src_w, int src_h, int target_size) {
  if (src_w <= 0 || src_h <= 0 || target_size <= 0) {
    std::ostringstream msg;
    msg << "letterbox dimensions must be positive, got " << src_w << "x"
        << src_h << " -> " << target_size;
    throw InvalidInputError(msg.str());
  }
  LetterboxTransform t;
  t.src_w = src_w;
  t.src_h = src_h;
  t.target_size = target_size;
  t.scale = static_cast<double>(target_size) / std::max(src_w, src_h);
  t.pad_x = (target_size - t.content_w()) / 2.0;
  t.pad_y = (target_size - t.content_h()) / 2.0;
  // The long edge maps exactly onto the target.
  if (src_w >= src_h) t.pad_x = 0.0;
  if (src_h >= src_w) t.pad_y = 0.0;
  return t;
}

Box LetterboxTransform::forward(const Box& src) const {
  const double n = target_size;
  return Box((src.cx() * content_w() + pad_x) / n,
             (src.cy() * content_h() + pad_y) / n, src.w() * content_w() / n,
             src.h() * content_h() / n);
}

Box LetterboxTransform::inverse(const Box& dst) const {
  const double n = target_size;
  return Box((dst.cx() * n - pad_x) / content_w(),
             (dst.cy() * n - pad_y) / content_h(), dst.w() * n / content_w(),
             dst.h() * n / content_h());
}

Corners LetterboxTransform::to_source_pixels(const Box& dst) const {
  const Corners c = dst.corners();
  const double n = target_size;
  return {(c.x1 * n - pad_x) / scale, (c.y1 * n - pad_y) / scale,
          (c.x2 * n - pad_x) / scale, (c.y2 * n - pad_y) / scale};
}

OffsetTarget encode_offsets(const Box& gt, AnchorWh anchor, GridCell cell,
                            int grid_size, int anchor_index) {
  if (!(anchor.w > 0.0) || !(anchor.h > 0.0) || grid_size <= 0) {
    throw InvalidInputError("encode_offsets: anchor and grid must be positive");
  }
  const double gx = gt.cx() * grid_size;
  const double gy = gt.cy() * grid_size;
  // A center on the far image edge belongs to the last cell.
  const int col = std::min(static_cast<int>(std::floor(gx)), grid_size - 1);
  const int row = std::min(static_cast<int>(std::floor(gy)), grid_size - 1);
  if (col != cell.col || row != cell.row) {
    std::ostringstream msg;
    msg << "encode_offsets: box center (" << gt.cx() << ", " << gt.cy()
        << ") lies in cell (" << row << ", " << col << "), not (" << cell.row
        << ", " << cell.col << ") of a " << grid_size << " grid";
    throw PreconditionError(msg.str());
  }
  OffsetTarget t;
  t.sx = std::min(gx - col, std::nextafter(1.0, 0.0));
  t.sy = std::min(gy - row, std::nextafter(1.0, 0.0));
  t.tw = std::log(gt.w() / anchor.w);
  t.th = std::log(gt.h() / anchor.h);
  t.cell = cell;
  t.anchor_index = anchor_index;
  return t;
}

Box decode_offsets(double sx, double sy, double tw, double th, AnchorWh anchor,
                   GridCell cell, int grid_size) {
  const double cx = (cell.col + sx) / grid_size;
  const double cy = (cell.row + sy) / grid_size;
  const double w = anchor.w * std::exp(tw);
  const double h = anchor.h * std::exp(th);
  double x1 = std::max(0.0, cx - w / 2);
  double x2 = std::min(1.0, cx + w / 2);
  double y1 = std::max(0.0, cy - h / 2);
  double y2 = std::min(1.0, cy + h / 2);
  if (!(x2 - x1 >= kMinDecodedSide)) {
    const double c = std::clamp(cx, kMinDecodedSide / 2, 1.0 - kMinDecodedSide / 2);
    x1 = c - kMinDecodedSide / 2;
    x2 = c + kMinDecodedSide / 2;
  }
  if (!(y2 - y1 >= kMinDecodedSide)) {
    const double c = std::clamp(cy, kMinDecodedSide / 2, 1.0 - kMinDecodedSide / 2);
    y1 = c - kMinDecodedSide / 2;
    y2 = c + kMinDecodedSide / 2;
  }
  return Box::from_corners(x1, y1, x2, y2);
}

PPGN_NAMESPACE_END
