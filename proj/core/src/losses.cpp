#include "ppgn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ppgn/errors.hpp"
#include "ppgn/numerics/ops.hpp"

PPGN_NAMESPACE_BEGIN

using nn::Tensor;

std::size_t argmax_iou_anchor(const Box& gt, const AnchorSet& anchors) {
  std::size_t best = 0;
  double best_iou = -1.0;
  for (std::size_t i = 0; i < anchors.located.size(); ++i) {
    const double v = iou(anchors.located[i], gt);
    if (v > best_iou) {
      best_iou = v;
      best = i;
    }
  }
  return best;
}

SmoothLabel build_smooth_label(const Box& gt, const AnchorSet& anchors, double eta) {
  if (!(eta > 0.0 && eta < 1.0)) {
    throw InvalidInputError("smooth label threshold must lie in (0, 1), got " +
                            std::to_string(eta));
  }
  SmoothLabel label;
  label.s_star.assign(anchors.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const double v = iou(anchors.located[i], gt);
    if (v > eta) {
      label.s_star[i] = v;
      label.support.push_back(i);
      total += v;
    }
  }
  if (label.support.empty()) {
    const std::size_t best = argmax_iou_anchor(gt, anchors);
    label.s_star[best] = 1.0;
    label.support.push_back(best);
    label.fallback = true;
    return label;
  }
  for (auto i : label.support) label.s_star[i] /= total;
  return label;
}

OffsetTarget regression_target(const Box& gt, const AnchorSet& anchors,
                               std::size_t flat_index) {
  const auto loc = anchors.locate(flat_index);
  const int g = loc.grid_size;
  const int col = std::min(static_cast<int>(std::floor(gt.cx() * g)), g - 1);
  const int row = std::min(static_cast<int>(std::floor(gt.cy() * g)), g - 1);
  if (col == loc.cell.col && row == loc.cell.row) {
    return encode_offsets(gt, loc.prior, loc.cell, g, loc.anchor_index);
  }
  const double top = std::nextafter(1.0, 0.0);
  OffsetTarget t;
  t.sx = std::clamp(gt.cx() * g - loc.cell.col, 0.0, top);
  t.sy = std::clamp(gt.cy() * g - loc.cell.row, 0.0, top);
  t.tw = std::log(gt.w() / loc.prior.w);
  t.th = std::log(gt.h() / loc.prior.h);
  t.cell = loc.cell;
  t.anchor_index = loc.anchor_index;
  return t;
}

AnchorMatch match_anchors(const Box& gt, const AnchorSet& anchors, double eta) {
  AnchorMatch m;
  m.label = build_smooth_label(gt, anchors, eta);
  m.best_anchor = argmax_iou_anchor(gt, anchors);
  m.matched = m.label.support;
  for (auto i : m.matched) m.targets.push_back(regression_target(gt, anchors, i));
  return m;
}

Tensor confidence_logits(const Tensor& raw) {
  if (raw.rank() != 3 || raw.dim(2) != 5) {
    throw ShapeError("expected raw predictions [B, N, 5], got " + nn::shape_str(raw.shape()));
  }
  const std::size_t rows = raw.dim(0) * raw.dim(1);
  std::vector<std::size_t> idx(rows);
  for (std::size_t i = 0; i < rows; ++i) idx[i] = i * 5 + 4;
  return nn::reshape(nn::gather(raw, idx), {raw.dim(0), raw.dim(1)});
}

Tensor kl_divergence(const Tensor& scores, std::span<const SmoothLabel> labels) {
  if (scores.rank() != 2 || scores.dim(0) != labels.size()) {
    throw ShapeError("kl_divergence: scores " + nn::shape_str(scores.shape()) + " for " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = scores.dim(0), n = scores.dim(1);
  std::vector<Scalar> target(batch * n, Scalar(0));
  double entropy_term = 0.0;  // sum s* ln s*
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b].s_star.size() != n) {
      throw ShapeError("kl_divergence: label length " + std::to_string(labels[b].s_star.size()) +
                       " vs " + std::to_string(n) + " anchors");
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double s = labels[b].s_star[i];
      target[b * n + i] = static_cast<Scalar>(s);
      if (s > 0.0) entropy_term += s * std::log(s);
    }
  }
  Tensor cross = nn::sum(nn::hadamard(nn::log_clamped(scores, static_cast<Scalar>(kKlFloor)),
                                      Tensor::from(scores.shape(), std::move(target))));
  Tensor kl = nn::sub(Tensor::scalar(static_cast<Scalar>(entropy_term)), cross);
  return nn::scale(kl, Scalar(1) / static_cast<Scalar>(batch * n));
}

Tensor kld_conf_loss(const Tensor& logits, std::span<const SmoothLabel> labels) {
  Tensor scores = nn::sigmoid(logits);
  if (scores.rank() == 2) {
    const std::size_t n = scores.dim(1);
    for (std::size_t b = 0; b < scores.dim(0); ++b) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) total += scores.at(b * n + i);
      if (!(total > 0.0) || !std::isfinite(total)) {
        throw NumericError("confidence scores of sample " + std::to_string(b) +
                           " underflowed or are not finite");
      }
    }
  }
  return kl_divergence(nn::l1_normalize(scores), labels);
}

Tensor softmax_conf_loss(const Tensor& logits, std::span<const std::size_t> target_anchor) {
  if (logits.rank() != 2 || logits.dim(0) != target_anchor.size()) {
    throw ShapeError("softmax_conf_loss: logits " + nn::shape_str(logits.shape()) + " for " +
                     std::to_string(target_anchor.size()) + " targets");
  }
  const std::size_t n = logits.dim(1);
  std::vector<std::size_t> idx;
  for (std::size_t b = 0; b < target_anchor.size(); ++b) {
    if (target_anchor[b] >= n) throw ShapeError("softmax_conf_loss: target out of range");
    idx.push_back(b * n + target_anchor[b]);
  }
  return nn::scale(nn::sum(nn::gather(nn::log_softmax(logits), idx)),
                   Scalar(-1) / static_cast<Scalar>(target_anchor.size()));
}

Tensor coord_loss(const Tensor& raw, std::span<const AnchorMatch> matches) {
  if (raw.rank() != 3 || raw.dim(2) != 5 || raw.dim(0) != matches.size()) {
    throw ShapeError("coord_loss: raw " + nn::shape_str(raw.shape()) + " for " +
                     std::to_string(matches.size()) + " matches");
  }
  const std::size_t n = raw.dim(1);
  std::vector<std::size_t> xy_idx, wh_idx;
  std::vector<Scalar> xy_t, wh_t;
  for (std::size_t b = 0; b < matches.size(); ++b) {
    const auto& m = matches[b];
    if (m.matched != m.label.support || m.targets.size() != m.matched.size()) {
      std::ostringstream msg;
      msg << "coord_loss: sample " << b << " has " << m.matched.size()
          << " matched anchors but label support of " << m.label.support.size();
      throw ConsistencyError(msg.str());
    }
    for (std::size_t j = 0; j < m.matched.size(); ++j) {
      const std::size_t a = m.matched[j];
      if (a >= n) throw ConsistencyError("coord_loss: matched anchor out of range");
      const std::size_t base = (b * n + a) * 5;
      xy_idx.push_back(base + 0);
      xy_idx.push_back(base + 1);
      wh_idx.push_back(base + 2);
      wh_idx.push_back(base + 3);
      xy_t.push_back(static_cast<Scalar>(m.targets[j].sx));
      xy_t.push_back(static_cast<Scalar>(m.targets[j].sy));
      wh_t.push_back(static_cast<Scalar>(m.targets[j].tw));
      wh_t.push_back(static_cast<Scalar>(m.targets[j].th));
    }
  }
  const auto inv_batch = Scalar(1) / static_cast<Scalar>(matches.size());
  if (xy_idx.empty()) return nn::scale(nn::sum(nn::gather(raw, {})), inv_batch);
  const std::size_t count = xy_t.size();
  Tensor xy = nn::sigmoid(nn::gather(raw, xy_idx));
  Tensor wh = nn::gather(raw, wh_idx);
  Tensor err_xy = nn::square(nn::sub(xy, Tensor::from({count}, std::move(xy_t))));
  Tensor err_wh = nn::square(nn::sub(wh, Tensor::from({count}, std::move(wh_t))));
  return nn::scale(nn::add(nn::sum(err_xy), nn::sum(err_wh)), inv_batch);
}

Tensor total_loss(const Tensor& conf, const Tensor& coord, double gamma) {
  return nn::add(conf, nn::scale(coord, static_cast<Scalar>(gamma)));
}

PPGN_NAMESPACE_END
