#pragma once

// Central finite-difference gradient checking. Works with whichever precision
// build of the core the including translation unit sees.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ppgn/numerics/tensor.hpp"

namespace ppgn::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "input[i][j]" of the largest error
};

// |a - n| / max(|a|, |n|, floor). The floor keeps exactly-zero gradients
// from turning round-off into a huge ratio.
inline double rel_error(double analytic, double numeric, double floor = 1e-5) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

// `loss` rebuilds the scalar from the current input values each call.
inline GradCheck check_gradients(const std::function<nn::Tensor()>& loss,
                                 std::vector<nn::Tensor> inputs, double h = 1e-5,
                                 std::size_t max_per_input = 0) {
  for (auto& t : inputs) t.zero_grad();
  {
    nn::Tape tape;
    nn::TapeScope scope(tape);
    tape.backward(loss());
  }
  GradCheck out;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto values = inputs[i].data();
    const auto grad = inputs[i].grad();
    const std::vector<double> analytic(grad.begin(), grad.end());
    const std::size_t n = values.size();
    const std::size_t stride = max_per_input && n > max_per_input ? n / max_per_input : 1;
    for (std::size_t j = 0; j < n; j += stride) {
      const auto saved = values[j];
      values[j] = saved + h;
      const double up = loss().item();
      values[j] = saved - h;
      const double down = loss().item();
      values[j] = saved;
      const double numeric = (up - down) / (2 * h);
      const double err = rel_error(analytic[j], numeric);
      ++out.checked;
      if (err > out.max_rel_error) {
        out.max_rel_error = err;
        out.worst = "input[" + std::to_string(i) + "][" + std::to_string(j) + "]";
      }
    }
  }
  return out;
}

}  // namespace ppgn::testing
