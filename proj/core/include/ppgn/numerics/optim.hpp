#pragma once

#include <vector>

#include "ppgn/config.hpp"
#include "ppgn/numerics/tensor.hpp"

PPGN_NAMESPACE_BEGIN
namespace nn {

struct RmsPropOptions {
  double decay = 0.99;
  double eps = 1e-8;
};

/// Parameters sharing one learning-rate multiplier.
struct ParamGroup {
  std::vector<Tensor> params;
  double lr_multiplier = 1.0;
};

/// RMSProp: acc <- decay*acc + (1-decay)*g^2; p <- p - lr*g/(sqrt(acc)+eps).
class RmsProp {
 public:
  RmsProp(std::vector<ParamGroup> groups, RmsPropOptions options = {});

  /// Applies one update with base learning rate `lr` (scaled per group).
  /// Parameters without a gradient buffer are treated as zero-gradient.
  void step(double lr);
  void zero_grad();

  const std::vector<ParamGroup>& groups() const noexcept { return groups_; }
  /// Squared-gradient accumulators, flattened in group/param order.
  const std::vector<std::vector<Scalar>>& accumulators() const noexcept {
    return acc_;
  }
  const RmsPropOptions& options() const noexcept { return options_; }

 private:
  std::vector<ParamGroup> groups_;
  RmsPropOptions options_;
  std::vector<std::vector<Scalar>> acc_;
};

/// base_lr * (1 - step/max_steps)^power, clamped to 0 past max_steps.
double poly_lr(long step, long max_steps, double base_lr, double power = 1.0);

}  // namespace nn
PPGN_NAMESPACE_END
