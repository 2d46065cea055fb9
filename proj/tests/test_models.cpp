#include <gtest/gtest.h>

#include <random>

#include "camadapt/error.hpp"
#include "camadapt/models.hpp"
#include "camadapt/ops.hpp"
#include "oracles.hpp"

using namespace camadapt;

namespace {

Tensor batch(int n, int size, std::uint64_t seed) {
  std::vector<Image> imgs;
  for (int i = 0; i < n; ++i) imgs.push_back(oracle::random_image(size, size, seed + i));
  return to_tensor(imgs);
}

ClassifierConfig tiny_classifier(int size) {
  ClassifierConfig c;
  c.input_size = size;
  c.stage_widths = {4, 8, 8};
  c.blocks_per_stage = 2;
  return c;
}

}  // namespace

TEST(Generator, ZeroHeadIsExactIdentity) {
  ResidualGenerator g(GeneratorConfig{4, 2, true}, 1);
  const Tensor x = batch(2, 32, 1);
  const Transformed t = transform(g, constant(x));
  EXPECT_EQ(t.image.value().storage(), x.storage());
  for (double v : t.residue.value().storage()) EXPECT_EQ(v, 0.0);
  const Image img = oracle::random_image(32, 32, 5);
  EXPECT_EQ(transform_image(g, img), img);
}

TEST(Generator, ShapesRangeAndArchitecture) {
  const GeneratorConfig cfg{4, 3, false};
  ResidualGenerator g(cfg, 2);
  const Var r = g.residue(constant(batch(1, 32, 2)));
  EXPECT_EQ(r.shape(), (std::vector<int>{1, 3, 32, 32}));
  for (double v : r.value().storage()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
  // 4 encoder + 2 * blocks trunk + 4 decoder + head, each a weight and a bias.
  EXPECT_EQ(g.parameters().entries().size(), 2u * (4 + 2 * 3 + 4 + 1));
  EXPECT_EQ(g.parameters().entries().front().second.shape(), (std::vector<int>{4, 3, 3, 3}));
}

TEST(Generator, TransformIsClampedSum) {
  ResidualGenerator g(GeneratorConfig{2, 1, false}, 3);
  const Tensor x = batch(1, 16, 3);
  const Transformed t = transform(g, constant(x));
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_DOUBLE_EQ(t.image.value()[i], std::clamp(x[i] + t.residue.value()[i], 0.0, 1.0));
  }
}

TEST(Generator, RejectsBadInputs) {
  ResidualGenerator g(GeneratorConfig{2, 1, true}, 4);
  EXPECT_THROW(g.residue(constant(Tensor({1, 3, 20, 20}))), Error);
  EXPECT_THROW(g.residue(constant(Tensor({1, 1, 16, 16}))), Error);
  EXPECT_THROW(ResidualGenerator(GeneratorConfig{0, 1, true}, 1), Error);
}

TEST(Generator, DeterministicInSeedAndCloneIndependent) {
  const GeneratorConfig cfg{2, 1, false};
  ResidualGenerator a(cfg, 9), b(cfg, 9), c(cfg, 10);
  EXPECT_EQ(a.parameters().hash(), b.parameters().hash());
  EXPECT_NE(a.parameters().hash(), c.parameters().hash());
  ResidualGenerator copy = a.clone();
  EXPECT_EQ(copy.parameters().hash(), a.parameters().hash());
  Var w = copy.parameters().entries().front().second;
  w.mutable_value()[0] += 1.0;
  EXPECT_NE(copy.parameters().hash(), a.parameters().hash());
}

TEST(Generator, SixteenPixelInputCollapsesToConstant) {
  // Four stride-2 stages reduce 16x16 to 1x1, where instance normalisation
  // outputs zero: the residue cannot depend on the input.
  ResidualGenerator g(GeneratorConfig{2, 1, false}, 5);
  const Tensor r1 = g.residue(constant(batch(1, 16, 1))).value();
  const Tensor r2 = g.residue(constant(batch(1, 16, 7))).value();
  EXPECT_EQ(r1.storage(), r2.storage());
}

TEST(Discriminator, ArchitectureAndProbability) {
  Discriminator d({7, 5}, 1);
  EXPECT_EQ(d.hidden().weight.shape(), (std::vector<int>{5, 7}));
  EXPECT_EQ(d.output().weight.shape(), (std::vector<int>{1, 5}));
  const std::vector<double> f{0.1, -0.3, 2.0, 0.0, 1.0, -1.0, 0.5};
  // Hand-evaluated forward pass.
  const Tensor& w1 = d.hidden().weight.value();
  const Tensor& b1 = d.hidden().bias.value();
  const Tensor& w2 = d.output().weight.value();
  double z = d.output().bias.value()[0];
  for (int h = 0; h < 5; ++h) {
    double a = b1[h];
    for (int i = 0; i < 7; ++i) a += w1[h * 7 + i] * f[i];
    a = a > 0 ? a : 0.2 * a;
    z += w2[h] * a;
  }
  EXPECT_NEAR(d.discriminate(f), 1.0 / (1.0 + std::exp(-z)), 1e-12);
  EXPECT_THROW(d.logits(constant(Tensor({1, 6}))), Error);
}

TEST(Classifier, ForwardShapesAndFeatureDim) {
  Classifier cls(tiny_classifier(32), 1);
  const ClassifierOutput out = cls.forward(constant(batch(3, 32, 1)));
  EXPECT_EQ(out.features.shape(), (std::vector<int>{3, 8}));
  EXPECT_EQ(out.logits.shape(), (std::vector<int>{3, 2}));
  EXPECT_THROW(cls.forward(constant(batch(1, 16, 1))), Error);
}

TEST(Classifier, FreezeBlocksParameterGradients) {
  Classifier cls(tiny_classifier(16), 2);
  cls.freeze();
  Var x = parameter(batch(1, 16, 2));
  backward(ops::sum(cls.forward(x).logits));
  EXPECT_EQ(x.grad().size(), x.value().size());
  for (const auto& [name, v] : cls.parameters().entries()) EXPECT_TRUE(v.grad().empty()) << name;
  const std::uint64_t h = cls.parameters().hash();
  Classifier copy = cls.clone();
  EXPECT_EQ(copy.parameters().hash(), h);
  EXPECT_FALSE(copy.parameters().entries().front().second.requires_grad());
}

TEST(Prediction, ArgmaxTiesAndProbabilities) {
  const Prediction p = prediction_from_logits({1.0, 1.0, 0.0});
  EXPECT_EQ(p.label, 0);
  EXPECT_NEAR(p.probabilities[0] + p.probabilities[1] + p.probabilities[2], 1.0, 1e-15);
  const Prediction q = prediction_from_logits({-2.0, 3.0});
  EXPECT_EQ(q.label, 1);
  EXPECT_NEAR(q.positive_score(), 1.0 / (1.0 + std::exp(-5.0)), 1e-12);
  EXPECT_THROW(prediction_from_logits({}), Error);
}

TEST(Prediction, BatchEqualsSingle) {
  Classifier cls(tiny_classifier(16), 3);
  std::vector<Image> imgs;
  for (int i = 0; i < 40; ++i) imgs.push_back(oracle::random_image(16, 16, 100 + i));
  const auto preds = classify_batch(cls, imgs);
  ASSERT_EQ(preds.size(), imgs.size());
  for (std::size_t i = 0; i < imgs.size(); i += 13) {
    const Prediction single = classify(cls, imgs[i]);
    for (std::size_t k = 0; k < single.logits.size(); ++k) EXPECT_NEAR(single.logits[k], preds[i].logits[k], 1e-12);
  }
}

TEST(ModelConfigs, JsonRoundTrip) {
  const GeneratorConfig g{8, 3, false};
  EXPECT_EQ(nlohmann::json(g).get<GeneratorConfig>(), g);
  const DiscriminatorConfig d{115, 64};
  EXPECT_EQ(nlohmann::json(d).get<DiscriminatorConfig>(), d);
  const ClassifierConfig c = tiny_classifier(48);
  EXPECT_EQ(nlohmann::json(c).get<ClassifierConfig>(), c);
}
