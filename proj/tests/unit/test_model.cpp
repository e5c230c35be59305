#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "ppgn/errors.hpp"
#include "ppgn/model.hpp"
#include "ppgn/rng.hpp"

namespace {

using namespace ppgn;
using nn::Tensor;

ModelConfig small_config() {
  ModelConfig c;
  c.vocab_size = 17;
  c.embed_dim = 8;
  c.channels = 16;
  c.image_size = 64;
  c.scales = {2, 4, 8};
  c.seed = 3;
  return c;
}

Tensor images(std::size_t b, std::size_t s, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Scalar> v(b * s * s * 3);
  for (auto& x : v) x = static_cast<Scalar>(rng.uniform());
  return Tensor::from({b, s, s, 3}, std::move(v));
}

TEST(Model, OutputShapeMatchesAnchorCount) {
  ModelConfig c = small_config();
  c.channels = 8;
  c.image_size = 128;
  c.scales = {4, 8, 16};
  PpgnModel m(c);
  EXPECT_EQ(m.num_anchors(), 1008u);
  const Tensor out = m.forward(images(2, 128, 1), {{1, 2}, {3}}, false);
  EXPECT_EQ(out.shape(), (nn::Shape{2, 1008, 5}));
  EXPECT_EQ(out.numel() / 2, 5040u);
}

TEST(Model, ZeroEmbeddingPropagatesBiasesOnly) {
  PpgnModel m(small_config());
  for (auto& v : m.tensor("text.embedding.weight").data()) v = 0;
  Rng rng(8);
  for (const char* name : {"text.fc1.bias", "text.fc2.bias"}) {
    for (auto& v : m.tensor(name).data()) v = static_cast<Scalar>(rng.uniform(-1, 1));
  }
  const Tensor q = m.encode_text({{1, 5}, {9}});
  const auto b1 = m.tensor("text.fc1.bias").data();
  const auto w2 = m.tensor("text.fc2.weight");
  const auto b2 = m.tensor("text.fc2.bias").data();
  const std::size_t h = b1.size(), d = b2.size();
  for (std::size_t row = 0; row < 2; ++row) {
    for (std::size_t j = 0; j < d; ++j) {
      double expect = b2[j];
      for (std::size_t i = 0; i < h; ++i) expect += std::max<double>(0, b1[i]) * w2.at(i * d + j);
      EXPECT_NEAR(q.at(row * d + j), expect, 1e-5);
    }
  }
}

TEST(Model, FilmParametersAreBounded) {
  PpgnModel m(small_config());
  const auto f = m.film(m.encode_text({{0, 1, 2}}));
  for (auto v : f.scale.data()) EXPECT_LE(std::abs(v), 1.0f);
  for (auto v : f.shift.data()) EXPECT_LE(std::abs(v), 1.0f);
}

TEST(Model, ConditionPreservesShape) {
  PpgnModel m(small_config());
  const auto feats = m.backbone(images(2, 64, 2), false);
  const auto f = m.film(m.encode_text({{1}, {2}}));
  ASSERT_EQ(feats.size(), 3u);
  for (std::size_t s = 0; s < feats.size(); ++s) {
    const auto g = static_cast<std::size_t>(small_config().scales[s]);
    EXPECT_EQ(feats[s].shape(), (nn::Shape{2, g, g, 16}));
    EXPECT_EQ(m.condition(static_cast<int>(s), feats[s], f, false).shape(), feats[s].shape());
  }
}

TEST(Model, HeadOrderingIsScaleMajor) {
  PpgnModel m(small_config());
  for (auto& v : m.tensor("head.s1.weight").data()) v = 0;
  for (auto& v : m.tensor("head.s1.bias").data()) v = 0;
  const Tensor out = m.forward(images(1, 64, 3), {{4}}, false);
  const std::size_t a = 3;
  const std::size_t begin = 2 * 2 * a * 5, end = begin + 4 * 4 * a * 5;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    if (i >= begin && i < end) {
      ASSERT_EQ(out.at(i), 0.0f) << i;
    }
  }
  std::size_t nonzero = 0;
  for (std::size_t i = 0; i < begin; ++i) nonzero += out.at(i) != 0.0f;
  for (std::size_t i = end; i < out.numel(); ++i) nonzero += out.at(i) != 0.0f;
  EXPECT_GT(nonzero, 0u);
}

TEST(Model, PhraseChangesOutput) {
  PpgnModel m(small_config());
  const auto img = images(1, 64, 4);
  const Tensor a = m.forward(img, {{1, 2}}, false);
  const Tensor b = m.forward(img, {{3, 7}}, false);
  bool differs = false;
  for (std::size_t i = 0; i < a.numel(); ++i) differs |= a.at(i) != b.at(i);
  EXPECT_TRUE(differs);
}

TEST(Model, NamesUniqueAndGroupsSplitBackbone) {
  PpgnModel m(small_config());
  std::set<std::string> names;
  std::size_t backbone = 0;
  for (const auto& p : m.parameters()) {
    EXPECT_TRUE(names.insert(p.name).second) << p.name;
    EXPECT_TRUE(p.tensor.requires_grad());
    backbone += p.name.rfind("backbone.", 0) == 0;
  }
  for (const auto& b : m.buffers()) EXPECT_TRUE(names.insert(b.name).second) << b.name;
  const auto groups = m.param_groups(10);
  ASSERT_EQ(groups.size(), 2u);
  EXPECT_EQ(groups[1].params.size(), backbone);
  EXPECT_DOUBLE_EQ(groups[1].lr_multiplier, 0.1);
  EXPECT_EQ(groups[0].params.size() + groups[1].params.size(), m.parameters().size());
  EXPECT_THROW(m.tensor("no.such.tensor"), InvalidInputError);
}

TEST(Model, SameSeedSameInitialization) {
  PpgnModel a(small_config()), b(small_config());
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto x = a.parameters()[i].tensor.data(), y = b.parameters()[i].tensor.data();
    EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin()));
  }
}

TEST(Model, EvalModeIsBatchIndependent) {
  PpgnModel m(small_config());
  const auto img = images(2, 64, 6);
  const Tensor both = m.forward(img, {{1}, {2}}, false);
  std::vector<Scalar> first(img.data().begin(), img.data().begin() + 64 * 64 * 3);
  const Tensor one = m.forward(Tensor::from({1, 64, 64, 3}, first), {{1}}, false);
  for (std::size_t i = 0; i < one.numel(); ++i) EXPECT_NEAR(one.at(i), both.at(i), 1e-5);
}

TEST(ModelConfig, Validation) {
  ModelConfig c = small_config();
  c.scales = {3, 8};
  EXPECT_THROW(c.validate(), InvalidInputError);
  c = small_config();
  c.vocab_size = 0;
  EXPECT_THROW(c.validate(), InvalidInputError);
}

}  // namespace
