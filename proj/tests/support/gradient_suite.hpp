#pragma once

// Finite-difference cases shared by the gradient unit tests and the
// acceptance run. Include only from translation units built in double.

#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "ppgn/anchors.hpp"
#include "ppgn/losses.hpp"
#include "ppgn/model.hpp"
#include "ppgn/numerics/ops.hpp"
#include "ppgn/rng.hpp"

#ifndef PPGN_SCALAR_DOUBLE
#error "gradient checks need the double-precision core"
#endif

namespace ppgn::testing {

struct GradCase {
  std::string name;
  std::function<GradCheck()> run;
};

// Keeps discovered test names readable.
inline void PrintTo(const GradCase& c, std::ostream* os) { *os << c.name; }

inline nn::Tensor random_tensor(nn::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                                bool requires_grad = true) {
  std::vector<Scalar> v(nn::numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return nn::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Values bounded away from zero so ReLU kinks stay out of the FD stencil.
inline nn::Tensor away_from_zero(nn::Shape shape, Rng& rng) {
  std::vector<Scalar> v(nn::numel(shape));
  for (auto& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
  return nn::Tensor::from(std::move(shape), std::move(v), true);
}

// Scalar probe: sum(x * w) for fixed random w, so every output element
// contributes a distinct weight.
inline nn::Tensor probe(const nn::Tensor& x, std::uint64_t seed = 99) {
  Rng rng(seed);
  auto w = random_tensor(x.shape(), rng, -1.0, 1.0, false);
  return nn::sum(nn::hadamard(x, w));
}

inline GradCheck unary_case(nn::Tensor (*op)(const nn::Tensor&), nn::Tensor x) {
  return check_gradients([=] { return probe(op(x)); }, {x});
}

struct ToyWorld {
  ModelConfig config;
  AnchorSet anchors;
  std::vector<Box> gts;
  std::vector<std::vector<int>> tokens;
  nn::Tensor images;
};

// D=8, scales (2,4), two anchors per cell, 16 px images.
inline ToyWorld toy_world(std::size_t batch = 2) {
  ToyWorld w;
  w.config.vocab_size = 17;
  w.config.embed_dim = 8;
  w.config.channels = 8;
  w.config.image_size = 16;
  w.config.scales = {2, 4};
  w.config.anchors_per_cell = 2;
  w.config.seed = 5;
  w.anchors = build_anchor_set({{0.2, 0.25}, {0.3, 0.2}, {0.5, 0.45}, {0.6, 0.7}}, {2, 4}, 2);
  Rng rng(17);
  w.images = random_tensor({batch, 16, 16, 3}, rng, 0.0, 1.0, false);
  for (std::size_t b = 0; b < batch; ++b) {
    w.gts.emplace_back(rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.2, 0.5),
                       rng.uniform(0.2, 0.5));
    w.tokens.push_back({static_cast<int>(b) + 1, 4, 9});
  }
  return w;
}

inline GradCheck model_case(bool kld) {
  ToyWorld w = toy_world();
  auto model = std::make_shared<PpgnModel>(w.config);
  std::vector<AnchorMatch> matches;
  std::vector<SmoothLabel> labels;
  std::vector<std::size_t> best;
  for (const auto& gt : w.gts) {
    matches.push_back(match_anchors(gt, w.anchors, 0.5));
    labels.push_back(matches.back().label);
    best.push_back(matches.back().best_anchor);
  }
  std::vector<nn::Tensor> params;
  for (const auto& p : model->parameters()) params.push_back(p.tensor);
  auto loss = [=] {
    const nn::Tensor raw = model->forward(w.images, w.tokens, true);
    const nn::Tensor logits = confidence_logits(raw);
    const nn::Tensor conf = kld ? kld_conf_loss(logits, labels) : softmax_conf_loss(logits, best);
    return total_loss(conf, coord_loss(raw, matches), 1.0);
  };
  return check_gradients(loss, params);
}

inline std::vector<GradCase> gradient_cases() {
  using nn::Tensor;
  std::vector<GradCase> cases;
  auto add = [&](std::string name, std::function<GradCheck()> fn) {
    cases.push_back({std::move(name), std::move(fn)});
  };

  add("matmul", [] {
    Rng r(1);
    auto a = random_tensor({3, 4}, r), b = random_tensor({4, 5}, r);
    return check_gradients([=] { return probe(nn::matmul(a, b)); }, {a, b});
  });
  add("add_bias", [] {
    Rng r(2);
    auto x = random_tensor({2, 3, 4}, r), b = random_tensor({4}, r);
    return check_gradients([=] { return probe(nn::add_bias(x, b)); }, {x, b});
  });
  add("linear", [] {
    Rng r(3);
    auto x = random_tensor({3, 4}, r), w = random_tensor({4, 2}, r), b = random_tensor({2}, r);
    return check_gradients([=] { return probe(nn::linear(x, w, b)); }, {x, w, b});
  });
  add("add_sub_hadamard", [] {
    Rng r(4);
    auto a = random_tensor({2, 5}, r), b = random_tensor({2, 5}, r), c = random_tensor({2, 5}, r);
    return check_gradients(
        [=] { return probe(nn::hadamard(nn::sub(nn::add(a, b), c), a)); }, {a, b, c});
  });
  add("scale", [] {
    Rng r(5);
    auto x = random_tensor({6}, r);
    return check_gradients([=] { return probe(nn::scale(x, -2.5)); }, {x});
  });
  add("relu", [] {
    Rng r(6);
    return unary_case(nn::relu, away_from_zero({4, 5}, r));
  });
  add("tanh", [] {
    Rng r(7);
    return unary_case(nn::tanh, random_tensor({4, 5}, r, -3, 3));
  });
  add("sigmoid", [] {
    Rng r(8);
    return unary_case(nn::sigmoid, random_tensor({4, 5}, r, -6, 6));
  });
  add("square", [] {
    Rng r(9);
    return unary_case(nn::square, random_tensor({4, 5}, r));
  });
  add("log_clamped", [] {
    Rng r(10);
    auto x = random_tensor({4, 5}, r, 0.05, 2.0);
    return check_gradients([=] { return probe(nn::log_clamped(x, 1e-12)); }, {x});
  });
  add("sum_mean", [] {
    Rng r(11);
    auto x = random_tensor({3, 4}, r);
    return check_gradients(
        [=] { return nn::add(nn::scale(nn::sum(nn::square(x)), 0.3), nn::mean(nn::tanh(x))); },
        {x});
  });
  add("l1_normalize", [] {
    Rng r(12);
    return unary_case(nn::l1_normalize, random_tensor({3, 6}, r, 0.1, 1.0));
  });
  add("log_softmax", [] {
    Rng r(13);
    return unary_case(nn::log_softmax, random_tensor({3, 7}, r, -3, 3));
  });
  add("conv2d_3x3_stride1", [] {
    Rng r(14);
    auto x = random_tensor({2, 5, 5, 3}, r), w = random_tensor({3, 3, 3, 4}, r),
         b = random_tensor({4}, r);
    return check_gradients([=] { return probe(nn::conv2d(x, w, b, 1, 1)); }, {x, w, b});
  });
  add("conv2d_3x3_stride2", [] {
    Rng r(15);
    auto x = random_tensor({2, 6, 6, 2}, r), w = random_tensor({3, 3, 2, 3}, r);
    return check_gradients([=] { return probe(nn::conv2d(x, w, Tensor{}, 2, 1)); }, {x, w});
  });
  add("conv2d_1x1", [] {
    Rng r(16);
    auto x = random_tensor({1, 3, 3, 4}, r), w = random_tensor({1, 1, 4, 2}, r);
    return check_gradients([=] { return probe(nn::conv2d(x, w, Tensor{}, 1, 0)); }, {x, w});
  });
  add("instance_norm", [] {
    Rng r(17);
    auto x = random_tensor({2, 3, 3, 4}, r);
    return check_gradients([=] { return probe(nn::instance_norm(x)); }, {x});
  });
  add("batch_norm_train", [] {
    Rng r(18);
    auto x = random_tensor({3, 2, 2, 4}, r), g = random_tensor({4}, r, 0.5, 1.5),
         b = random_tensor({4}, r);
    auto rm = Tensor::zeros({4}), rv = Tensor::full({4}, 1.0);
    return check_gradients(
        [=]() mutable { return probe(nn::batch_norm(x, g, b, rm, rv, true)); }, {x, g, b});
  });
  add("batch_norm_eval", [] {
    Rng r(19);
    auto x = random_tensor({3, 2, 2, 4}, r), g = random_tensor({4}, r, 0.5, 1.5),
         b = random_tensor({4}, r);
    auto rm = random_tensor({4}, r, -0.2, 0.2, false), rv = random_tensor({4}, r, 0.5, 2, false);
    return check_gradients(
        [=]() mutable { return probe(nn::batch_norm(x, g, b, rm, rv, false)); }, {x, g, b});
  });
  add("expand_spatial", [] {
    Rng r(20);
    auto v = random_tensor({2, 3}, r);
    return check_gradients([=] { return probe(nn::expand_spatial(v, 2, 3)); }, {v});
  });
  add("embedding_bag_mean", [] {
    Rng r(21);
    auto table = random_tensor({6, 4}, r);
    const std::vector<std::vector<int>> ids{{0, 2, 2}, {5}, {1, 3}};
    return check_gradients([=] { return probe(nn::embedding_bag_mean(table, ids)); }, {table});
  });
  add("reshape_concat_gather", [] {
    Rng r(22);
    auto a = random_tensor({2, 3, 2}, r), b = random_tensor({2, 1, 2}, r);
    const std::vector<std::size_t> idx{0, 3, 3, 7, 15};
    return check_gradients(
        [=] {
          const std::vector<Tensor> parts{a, b};
          auto c = nn::concat(parts, 1);
          return probe(nn::gather(nn::reshape(c, {4, 4}), idx));
        },
        {a, b});
  });
  add("kld_conf_loss", [] {
    Rng r(23);
    auto logits = random_tensor({2, 6}, r, -2, 2);
    std::vector<SmoothLabel> labels(2);
    labels[0].s_star = {0.0, 0.5, 0.0, 0.3, 0.2, 0.0};
    labels[0].support = {1, 3, 4};
    labels[1].s_star = {1.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    labels[1].support = {0};
    return check_gradients([=] { return kld_conf_loss(logits, labels); }, {logits});
  });
  add("softmax_conf_loss", [] {
    Rng r(24);
    auto logits = random_tensor({3, 5}, r, -2, 2);
    const std::vector<std::size_t> target{4, 0, 2};
    return check_gradients([=] { return softmax_conf_loss(logits, target); }, {logits});
  });
  add("coord_loss", [] {
    ToyWorld w = toy_world();
    Rng r(25);
    auto raw = random_tensor({2, w.anchors.size(), 5}, r);
    std::vector<AnchorMatch> matches;
    for (const auto& gt : w.gts) matches.push_back(match_anchors(gt, w.anchors, 0.5));
    return check_gradients([=] { return coord_loss(raw, matches); }, {raw});
  });
  add("toy_model_kld", [] { return model_case(true); });
  add("toy_model_softmax", [] { return model_case(false); });
  return cases;
}

}  // namespace ppgn::testing
