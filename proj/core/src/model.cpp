#include "ppgn/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ppgn/errors.hpp"
#include "ppgn/rng.hpp"

PPGN_NAMESPACE_BEGIN

using nn::Tensor;

namespace {

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

int ModelConfig::stem_depth() const {
  const int finest = *std::max_element(scales.begin(), scales.end());
  int depth = 0;
  for (int r = image_size / 2; r > finest; r /= 2) ++depth;
  return depth;
}

std::vector<int> ModelConfig::resolved_backbone_widths() const {
  const auto needed = static_cast<std::size_t>(stem_depth()) + scales.size();
  if (!backbone_widths.empty()) return backbone_widths;
  // Widths double per downsampling from D/4, capped at D.
  std::vector<int> widths;
  int w = std::max(4, channels / 4);
  for (std::size_t i = 0; i < needed; ++i) {
    widths.push_back(std::min(w, channels));
    w *= 2;
  }
  return widths;
}

void ModelConfig::validate() const {
  std::ostringstream msg;
  if (vocab_size <= 0 || embed_dim <= 0 || channels <= 0 || anchors_per_cell <= 0) {
    msg << "model dimensions must be positive (vocab " << vocab_size << ", embed "
        << embed_dim << ", channels " << channels << ", anchors " << anchors_per_cell << ")";
    throw InvalidInputError(msg.str());
  }
  if (scales.empty()) throw InvalidInputError("model needs at least one scale");
  std::vector<int> sorted = scales;
  std::sort(sorted.rbegin(), sorted.rend());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i] != (sorted[0] >> i) || sorted[i] <= 0) {
      throw InvalidInputError("scales must be the finest grid halved per level");
    }
  }
  if (!is_pow2(image_size) || image_size < 2 * sorted[0] || image_size % sorted[0] != 0 ||
      !is_pow2(image_size / sorted[0])) {
    msg << "image size " << image_size << " incompatible with finest grid " << sorted[0];
    throw InvalidInputError(msg.str());
  }
  const auto widths = resolved_backbone_widths();
  if (widths.size() != static_cast<std::size_t>(stem_depth()) + scales.size()) {
    msg << "expected " << stem_depth() + static_cast<int>(scales.size())
        << " backbone widths, got " << widths.size();
    throw InvalidInputError(msg.str());
  }
}

PpgnModel::PpgnModel(ModelConfig config)
    : config_(std::move(config)), init_state_(config_.seed) {
  config_.validate();
  const int d = config_.channels;
  const int e = config_.embed_dim;
  const auto fan = [](int n) { return 1.0 / std::sqrt(static_cast<double>(n)); };

  embedding_ = param("text.embedding.weight",
                     {static_cast<std::size_t>(config_.vocab_size), static_cast<std::size_t>(e)}, 1.0);
  fc1_w_ = param("text.fc1.weight", {static_cast<std::size_t>(e), static_cast<std::size_t>(d)}, fan(e));
  fc1_b_ = constant("text.fc1.bias", {static_cast<std::size_t>(d)}, 0);
  fc2_w_ = param("text.fc2.weight", {static_cast<std::size_t>(d), static_cast<std::size_t>(d)}, fan(d));
  fc2_b_ = constant("text.fc2.bias", {static_cast<std::size_t>(d)}, 0);
  film_scale_w_ = param("film.scale.weight", {static_cast<std::size_t>(d), static_cast<std::size_t>(d)}, fan(d));
  film_scale_b_ = constant("film.scale.bias", {static_cast<std::size_t>(d)}, 0);
  film_shift_w_ = param("film.shift.weight", {static_cast<std::size_t>(d), static_cast<std::size_t>(d)}, fan(d));
  film_shift_b_ = constant("film.shift.bias", {static_cast<std::size_t>(d)}, 0);

  const auto widths = config_.resolved_backbone_widths();
  int cin = 3;
  std::size_t w = 0;
  for (int i = 0; i < config_.stem_depth(); ++i, ++w) {
    stem_.push_back(make_conv_bn("backbone.stem" + std::to_string(i), 3, cin, widths[w]));
    cin = widths[w];
  }
  std::vector<int> block_width;
  for (std::size_t i = 0; i < config_.scales.size(); ++i, ++w) {
    blocks_.push_back(make_conv_bn("backbone.block" + std::to_string(i), 3, cin, widths[w]));
    block_width.push_back(widths[w]);
    cin = widths[w];
  }

  const int finest = *std::max_element(config_.scales.begin(), config_.scales.end());
  const int out_ch = config_.anchors_per_cell * 5;
  for (std::size_t s = 0; s < config_.scales.size(); ++s) {
    const std::string tag = "s" + std::to_string(s);
    // Block index producing this grid: finest grid is block 0.
    int level = 0;
    for (int g = finest; g > config_.scales[s]; g /= 2) ++level;
    lateral_.push_back(make_conv_bn("lateral." + tag, 1, block_width[static_cast<std::size_t>(level)], d));
    Condition c;
    c.f1_weight = param("condition." + tag + ".f1.conv.weight",
                        {1, 1, static_cast<std::size_t>(d), static_cast<std::size_t>(d)}, fan(d));
    c.f2 = make_conv_bn("condition." + tag + ".f2", 3, d, d);
    conditions_.push_back(std::move(c));
    Head h;
    h.weight = param("head." + tag + ".weight",
                     {1, 1, static_cast<std::size_t>(d), static_cast<std::size_t>(out_ch)}, fan(d));
    h.bias = constant("head." + tag + ".bias", {static_cast<std::size_t>(out_ch)}, 0);
    heads_.push_back(std::move(h));
  }
}

Tensor PpgnModel::param(const std::string& name, nn::Shape shape, double bound) {
  Rng rng(mix64(init_state_++));
  std::vector<Scalar> values(nn::numel(shape));
  for (auto& v : values) v = static_cast<Scalar>(rng.uniform(-bound, bound));
  Tensor t = Tensor::from(std::move(shape), std::move(values), true);
  params_.push_back({name, t});
  return t;
}

Tensor PpgnModel::constant(const std::string& name, nn::Shape shape, Scalar value) {
  Tensor t = Tensor::full(std::move(shape), value, true);
  params_.push_back({name, t});
  return t;
}

PpgnModel::ConvBn PpgnModel::make_conv_bn(const std::string& prefix, int k, int cin,
                                          int cout) {
  ConvBn layer;
  const auto uk = static_cast<std::size_t>(k);
  layer.weight = param(prefix + ".conv.weight",
                       {uk, uk, static_cast<std::size_t>(cin), static_cast<std::size_t>(cout)},
                       1.0 / std::sqrt(static_cast<double>(k * k * cin)));
  layer.gamma = constant(prefix + ".bn.weight", {static_cast<std::size_t>(cout)}, 1);
  layer.beta = constant(prefix + ".bn.bias", {static_cast<std::size_t>(cout)}, 0);
  layer.running_mean = Tensor::zeros({static_cast<std::size_t>(cout)});
  layer.running_var = Tensor::full({static_cast<std::size_t>(cout)}, 1);
  buffers_.push_back({prefix + ".bn.running_mean", layer.running_mean});
  buffers_.push_back({prefix + ".bn.running_var", layer.running_var});
  return layer;
}

Tensor PpgnModel::apply(ConvBn& layer, const Tensor& x, int stride, int pad,
                        bool training) const {
  Tensor y = nn::conv2d(x, layer.weight, Tensor(), stride, pad);
  y = nn::batch_norm(y, layer.gamma, layer.beta, layer.running_mean, layer.running_var,
                     training);
  return nn::relu(y);
}

Tensor PpgnModel::encode_text(const std::vector<std::vector<int>>& tokens) const {
  Tensor pooled = nn::embedding_bag_mean(embedding_, tokens);
  Tensor hidden = nn::relu(nn::linear(pooled, fc1_w_, fc1_b_));
  return nn::linear(hidden, fc2_w_, fc2_b_);
}

FilmParams PpgnModel::film(const Tensor& text) const {
  return {nn::tanh(nn::linear(text, film_scale_w_, film_scale_b_)),
          nn::tanh(nn::linear(text, film_shift_w_, film_shift_b_))};
}

std::vector<Tensor> PpgnModel::backbone(const Tensor& images, bool training) {
  if (images.rank() != 4 || images.dim(1) != static_cast<std::size_t>(config_.image_size) ||
      images.dim(2) != static_cast<std::size_t>(config_.image_size) || images.dim(3) != 3) {
    throw ShapeError("backbone expects [B, " + std::to_string(config_.image_size) + ", " +
                     std::to_string(config_.image_size) + ", 3], got " +
                     nn::shape_str(images.shape()));
  }
  Tensor x = images;
  for (auto& layer : stem_) x = apply(layer, x, 2, 1, training);
  std::vector<Tensor> levels;  // finest first
  for (auto& layer : blocks_) {
    x = apply(layer, x, 2, 1, training);
    levels.push_back(x);
  }
  const int finest = *std::max_element(config_.scales.begin(), config_.scales.end());
  std::vector<Tensor> out;
  for (std::size_t s = 0; s < config_.scales.size(); ++s) {
    int level = 0;
    for (int g = finest; g > config_.scales[s]; g /= 2) ++level;
    out.push_back(apply(lateral_[s], levels[static_cast<std::size_t>(level)], 1, 0, training));
  }
  return out;
}

Tensor PpgnModel::condition(int scale, const Tensor& features, const FilmParams& film,
                            bool training) {
  auto& c = conditions_.at(static_cast<std::size_t>(scale));
  if (features.rank() != 4 || features.dim(3) != film.scale.dim(1) ||
      film.scale.shape() != film.shift.shape() || features.dim(0) != film.scale.dim(0)) {
    throw ShapeError("condition: features " + nn::shape_str(features.shape()) +
                     " vs film " + nn::shape_str(film.scale.shape()));
  }
  const std::size_t h = features.dim(1), w = features.dim(2);
  Tensor modulated = nn::add(nn::hadamard(features, nn::expand_spatial(film.scale, h, w)),
                             nn::expand_spatial(film.shift, h, w));
  Tensor f1 = nn::instance_norm(nn::conv2d(modulated, c.f1_weight, Tensor(), 1, 0));
  Tensor mixed = nn::relu(nn::add(f1, features));
  return apply(c.f2, mixed, 1, 1, training);
}

Tensor PpgnModel::grounding_head(const std::vector<Tensor>& conditioned) const {
  if (conditioned.size() != heads_.size()) {
    throw ShapeError("grounding_head: expected " + std::to_string(heads_.size()) +
                     " scales, got " + std::to_string(conditioned.size()));
  }
  std::vector<Tensor> parts;
  for (std::size_t s = 0; s < heads_.size(); ++s) {
    const Tensor& v = conditioned[s];
    Tensor y = nn::conv2d(v, heads_[s].weight, heads_[s].bias, 1, 0);
    const std::size_t cells = v.dim(1) * v.dim(2);
    parts.push_back(nn::reshape(
        y, {v.dim(0), cells * static_cast<std::size_t>(config_.anchors_per_cell), 5}));
  }
  return nn::concat(parts, 1);
}

Tensor PpgnModel::forward(const Tensor& images, const std::vector<std::vector<int>>& tokens,
                          bool training) {
  if (images.rank() < 1 || images.dim(0) != tokens.size()) {
    throw ShapeError("forward: " + std::to_string(tokens.size()) + " phrases for images " +
                     nn::shape_str(images.shape()));
  }
  const FilmParams mod = film(encode_text(tokens));
  std::vector<Tensor> features = backbone(images, training);
  std::vector<Tensor> conditioned;
  for (std::size_t s = 0; s < features.size(); ++s) {
    conditioned.push_back(condition(static_cast<int>(s), features[s], mod, training));
  }
  return grounding_head(conditioned);
}

Tensor& PpgnModel::tensor(const std::string& name) {
  for (auto* list : {&params_, &buffers_}) {
    for (auto& nt : *list) {
      if (nt.name == name) return nt.tensor;
    }
  }
  throw InvalidInputError("unknown model tensor '" + name + "'");
}

std::vector<nn::ParamGroup> PpgnModel::param_groups(double backbone_divisor) const {
  nn::ParamGroup main;
  nn::ParamGroup backbone;
  backbone.lr_multiplier = 1.0 / backbone_divisor;
  for (const auto& p : params_) {
    (p.name.rfind("backbone.", 0) == 0 ? backbone : main).params.push_back(p.tensor);
  }
  return {main, backbone};
}

std::size_t PpgnModel::num_anchors() const {
  std::size_t n = 0;
  for (int g : config_.scales) n += static_cast<std::size_t>(g * g * config_.anchors_per_cell);
  return n;
}

PPGN_NAMESPACE_END
