#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ppgn/config.hpp"
#include "ppgn/numerics/ops.hpp"
#include "ppgn/numerics/optim.hpp"
#include "ppgn/numerics/tensor.hpp"

PPGN_NAMESPACE_BEGIN

struct ModelConfig {
  int vocab_size = 0;
  int embed_dim = 32;
  /// Uniform channel width D shared by text and visual features.
  int channels = 64;
  int image_size = 128;
  /// Grid sizes in anchor order; each must be the finest grid divided by a
  /// power of two.
  std::vector<int> scales{4, 8, 16};
  int anchors_per_cell = 3;
  /// Output widths of the stem convolutions, then of one block per scale
  /// (finest first). Empty selects defaults derived from `channels`.
  std::vector<int> backbone_widths;
  std::uint64_t seed = 0;

  /// Stem and per-scale block widths with defaults filled in.
  std::vector<int> resolved_backbone_widths() const;
  int stem_depth() const;
  /// Throws InvalidInputError on an unusable configuration.
  void validate() const;
};

struct NamedTensor {
  std::string name;
  nn::Tensor tensor;
};

/// Per-channel FiLM modulation derived from the text feature.
struct FilmParams {
  nn::Tensor scale;  // p, [B, D]
  nn::Tensor shift;  // q, [B, D]
};

/// Phrase-guided proposal network: toy text encoder, multi-scale visual
/// backbone, text-conditional visual embedding and a grounding head that
/// emits (t_x, t_y, t_w, t_h, confidence logit) per anchor.
class PpgnModel {
 public:
  explicit PpgnModel(ModelConfig config);

  const ModelConfig& config() const noexcept { return config_; }

  /// Full forward pass. images: [B, S, S, 3]; one token list per image.
  /// Returns raw predictions [B, N, 5] in AnchorSet order.
  nn::Tensor forward(const nn::Tensor& images,
                     const std::vector<std::vector<int>>& tokens, bool training);

  /// Embedding lookup, mean pool, FC-ReLU-FC -> [B, D].
  nn::Tensor encode_text(const std::vector<std::vector<int>>& tokens) const;
  /// p = tanh(Wp Q + bp), q = tanh(Wq Q + bq).
  FilmParams film(const nn::Tensor& text) const;
  /// Pyramid features mapped to D channels, one per entry of config.scales.
  std::vector<nn::Tensor> backbone(const nn::Tensor& images, bool training);
  /// f2(ReLU(f1(V * p + q) + V)) for pyramid level `scale`.
  nn::Tensor condition(int scale, const nn::Tensor& features, const FilmParams& film,
                       bool training);
  /// Per-scale 1x1 conv to anchors*5 channels, flattened and concatenated.
  nn::Tensor grounding_head(const std::vector<nn::Tensor>& conditioned) const;

  /// Learnable tensors under stable dotted names (checkpoint contract).
  const std::vector<NamedTensor>& parameters() const noexcept { return params_; }
  /// Batch-norm running statistics.
  const std::vector<NamedTensor>& buffers() const noexcept { return buffers_; }
  /// Looks up a parameter or buffer by name; throws InvalidInputError.
  nn::Tensor& tensor(const std::string& name);

  /// Visual backbone parameters get lr / backbone_divisor.
  std::vector<nn::ParamGroup> param_groups(double backbone_divisor) const;

  std::size_t num_anchors() const;

 private:
  struct ConvBn {
    nn::Tensor weight;
    nn::Tensor gamma;
    nn::Tensor beta;
    nn::Tensor running_mean;
    nn::Tensor running_var;
  };
  struct Condition {
    nn::Tensor f1_weight;  // 1x1 conv, instance norm follows
    ConvBn f2;             // 3x3 conv, batch norm, ReLU
  };
  struct Head {
    nn::Tensor weight;
    nn::Tensor bias;
  };

  nn::Tensor param(const std::string& name, nn::Shape shape, double bound);
  nn::Tensor constant(const std::string& name, nn::Shape shape, Scalar value);
  ConvBn make_conv_bn(const std::string& prefix, int k, int cin, int cout);
  nn::Tensor apply(ConvBn& layer, const nn::Tensor& x, int stride, int pad,
                   bool training) const;

  ModelConfig config_;
  std::vector<NamedTensor> params_;
  std::vector<NamedTensor> buffers_;

  nn::Tensor embedding_;
  nn::Tensor fc1_w_, fc1_b_, fc2_w_, fc2_b_;
  nn::Tensor film_scale_w_, film_scale_b_, film_shift_w_, film_shift_b_;
  std::vector<ConvBn> stem_;
  std::vector<ConvBn> blocks_;   // finest scale first
  std::vector<ConvBn> lateral_;  // indexed like config.scales
  std::vector<Condition> conditions_;
  std::vector<Head> heads_;
  std::uint64_t init_state_ = 0;
};

PPGN_NAMESPACE_END
