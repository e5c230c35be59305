#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ppgn/config.hpp"
#include "ppgn/numerics/tensor.hpp"

PPGN_NAMESPACE_BEGIN
namespace nn {

// Differentiable operators. Feature maps are NHWC; convolution weights are
// [k, k, in, out]. Every op records itself on the active tape when any input
// requires a gradient. Shape mismatches throw ShapeError naming both shapes.

Tensor matmul(const Tensor& a, const Tensor& b);        // [m,k] x [k,n]
Tensor add_bias(const Tensor& x, const Tensor& bias);   // bias over last axis
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar factor);

Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor square(const Tensor& x);
/// log(max(x, floor)); the gradient is zero where the floor is active.
Tensor log_clamped(const Tensor& x, Scalar floor);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// x / sum(|x|) along the last axis. Throws InvalidInputError for an
/// all-zero row.
Tensor l1_normalize(const Tensor& x);
Tensor log_softmax(const Tensor& x);  // along the last axis

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              int stride, int pad);

/// Per-sample, per-channel normalization over the spatial positions of an
/// NHWC map. No affine parameters.
Tensor instance_norm(const Tensor& x, Scalar eps = Scalar(1e-5));

struct BatchNormOptions {
  Scalar momentum = Scalar(0.1);
  Scalar eps = Scalar(1e-5);
};

/// Normalizes the last (channel) axis over all other axes. In training mode
/// batch statistics are used and the running buffers are updated in place;
/// otherwise the running statistics are applied as a fixed affine map.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  const BatchNormOptions& options = {});

/// Broadcasts a [B, C] tensor over an H x W grid -> [B, H, W, C].
Tensor expand_spatial(const Tensor& v, std::size_t height, std::size_t width);

/// Mean-pooled embedding rows per sample -> [B, E]. Throws InvalidInputError
/// on an empty sample or an out-of-range id.
Tensor embedding_bag_mean(const Tensor& table,
                          const std::vector<std::vector<int>>& ids);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
/// Flat gather: out[i] = x.data()[indices[i]].
Tensor gather(const Tensor& x, std::span<const std::size_t> indices);

}  // namespace nn
PPGN_NAMESPACE_END
