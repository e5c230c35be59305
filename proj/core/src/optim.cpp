#include "ppgn/numerics/optim.hpp"

#include <algorithm>
#include <cmath>

#include "ppgn/errors.hpp"

PPGN_NAMESPACE_BEGIN
namespace nn {

RmsProp::RmsProp(std::vector<ParamGroup> groups, RmsPropOptions options)
    : groups_(std::move(groups)), options_(options) {
  for (const auto& group : groups_) {
    for (const auto& p : group.params) acc_.emplace_back(p.numel(), Scalar(0));
  }
}

void RmsProp::step(double lr) {
  const auto decay = static_cast<Scalar>(options_.decay);
  const auto eps = static_cast<Scalar>(options_.eps);
  std::size_t slot = 0;
  for (auto& group : groups_) {
    const auto rate = static_cast<Scalar>(lr * group.lr_multiplier);
    for (auto& param : group.params) {
      auto& acc = acc_[slot++];
      if (!param.has_grad()) continue;
      auto value = param.data();
      const auto grad = param.grad();
      for (std::size_t i = 0; i < value.size(); ++i) {
        const Scalar g = grad[i];
        acc[i] = decay * acc[i] + (Scalar(1) - decay) * g * g;
        value[i] -= rate * g / (std::sqrt(acc[i]) + eps);
      }
#ifndef NDEBUG
      if (!std::all_of(value.begin(), value.end(), [](Scalar v) { return std::isfinite(v); })) {
        throw NumericError("non-finite parameter after RMSProp step");
      }
#endif
    }
  }
}

void RmsProp::zero_grad() {
  for (auto& group : groups_) {
    for (auto& p : group.params) p.zero_grad();
  }
}

double poly_lr(long step, long max_steps, double base_lr, double power) {
  if (max_steps <= 0 || step >= max_steps) return 0.0;
  if (step <= 0) return base_lr;
  const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(max_steps);
  return base_lr * std::pow(frac, power);
}

}  // namespace nn
PPGN_NAMESPACE_END
