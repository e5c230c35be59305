#include "ppgn/pipeline/proposals.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ppgn/errors.hpp"

PPGN_NAMESPACE_BEGIN

std::vector<Proposal> select_proposals(std::span<const Scalar> raw, const AnchorSet& anchors,
                                       int k, double min_side) {
  const std::size_t n = anchors.size();
  if (raw.size() != n * 5) {
    throw ShapeError("select_proposals: expected " + std::to_string(n * 5) + " values, got " +
                     std::to_string(raw.size()));
  }
  if (k < 1) throw InvalidInputError("select_proposals: k must be at least 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Logit order equals sigmoid order.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return raw[a * 5 + 4] > raw[b * 5 + 4];
  });
  std::vector<Proposal> out;
  for (std::size_t idx : order) {
    const auto loc = anchors.locate(idx);
    const Scalar* v = raw.data() + idx * 5;
    const auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    const Box box = decode_offsets(sig(v[0]), sig(v[1]), v[2], v[3], loc.prior, loc.cell,
                                   loc.grid_size);
    if (box.w() < min_side || box.h() < min_side) continue;
    out.push_back({box, sig(v[4]), idx});
    if (out.size() == static_cast<std::size_t>(k)) break;
  }
  return out;
}

PPGN_NAMESPACE_END
