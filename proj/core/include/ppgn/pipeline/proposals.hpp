#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ppgn/anchors.hpp"
#include "ppgn/config.hpp"
#include "ppgn/geometry.hpp"

PPGN_NAMESPACE_BEGIN

/// Boxes with a side below this fraction of the image are discarded.
inline constexpr double kMinProposalSide = 1.0 / 64.0;

struct Proposal {
  Box box;
  double confidence = 0.0;  // sigmoid of the confidence logit
  std::size_t anchor = 0;
};

/// Decodes one sample's raw predictions (N x 5, AnchorSet order), ranks by
/// confidence (ties -> lower anchor index), drops tiny boxes and returns up
/// to k survivors.
std::vector<Proposal> select_proposals(std::span<const Scalar> raw, const AnchorSet& anchors,
                                       int k, double min_side = kMinProposalSide);

PPGN_NAMESPACE_END
