#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "hhae/noise_predictor.hpp"

using namespace hhae;
using namespace hhae::ad;
using testing_util::check_gradients;
using testing_util::random_tensor;

namespace {

ModelConfig reduced() {
  auto c = ModelConfig::tiny();
  c.unet_channels = 8;
  c.gn_groups = 2;
  return c;
}

double l2_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  return std::sqrt(s);
}

void zero_conv(const Conv1d<double>& c) {
  for (auto& v : c.weight.mutable_value().data) v = 0;
  for (auto& v : c.bias.mutable_value().data) v = 0;
}

}  // namespace

TEST(TimeEmbedding, SinusoidAtZero) {
  const auto e = sinusoidal_embedding<double>(0, 128);
  for (std::size_t i = 0; i < 64; ++i) {
    EXPECT_EQ(e.data[i], 0.0);
    EXPECT_EQ(e.data[64 + i], 1.0);
  }
}

TEST(TimeEmbedding, SinusoidFrequencies) {
  const auto e = sinusoidal_embedding<double>(17, 8);
  for (std::size_t i = 0; i < 4; ++i) {
    const double f = std::pow(10000.0, -static_cast<double>(i) / 4.0);
    EXPECT_NEAR(e.data[i], std::sin(17 * f), 1e-12);
    EXPECT_NEAR(e.data[4 + i], std::cos(17 * f), 1e-12);
  }
}

TEST(TimeEmbedding, DeterministicDistinctAndRangeChecked) {
  ParamSet<double> ps;
  Rng rng(3);
  NoisePredictor<double> net(ps, ModelConfig::full(), rng);
  const auto a = net.time_embedding(17).value();
  EXPECT_EQ(a.shape, (Shape{128}));
  EXPECT_EQ(a.data, net.time_embedding(17).value().data);
  EXPECT_GT(l2_diff(net.time_embedding(100).value(), net.time_embedding(101).value()), 0.0);
  EXPECT_THROW(net.time_embedding(-1), OutOfRange);
  EXPECT_THROW(net.time_embedding(1001), OutOfRange);
}

TEST(ResConv1D, ZeroSecondConvIsIdentity) {
  ParamSet<double> ps;
  Rng rng(0);
  ResConv1D<double> block(ps, "b", ModelConfig::full(), rng);
  zero_conv(block.first.conv2);
  zero_conv(block.second.conv2);
  std::mt19937_64 g(1);
  const auto x = random_tensor({64, 40}, g);
  const auto et = Var<double>::constant(random_tensor({128}, g));
  const auto es = Var<double>::constant(random_tensor({128}, g));
  const auto y = block(Var<double>::constant(x), et, es, false, rng).value();
  EXPECT_EQ(y.shape, (Shape{64, 40}));
  EXPECT_EQ(y.data, x.data);
}

TEST(ResConv1D, SemanticConditioningIsLive) {
  ParamSet<double> ps;
  Rng rng(0);
  ResConv1D<double> block(ps, "b", ModelConfig::full(), rng);
  std::mt19937_64 g(2);
  const auto x = Var<double>::constant(random_tensor({64, 40}, g));
  const auto et = Var<double>::constant(random_tensor({128}, g));
  const auto y1 = block(x, et, Var<double>::constant(random_tensor({128}, g)), false, rng).value();
  const auto y2 = block(x, et, Var<double>::constant(random_tensor({128}, g)), false, rng).value();
  EXPECT_EQ(y1.shape, (Shape{64, 40}));
  EXPECT_GT(l2_diff(y1, y2), 1e-6);
}

TEST(NoisePredictor, OutputShapeAndDeterminism) {
  ParamSet<float> ps;
  Rng rng(0);
  NoisePredictor<float> net(ps, ModelConfig::full(), rng);
  std::mt19937_64 g(1);
  const auto h = Var<float>::constant(random_tensor<float>({9, 40}, g));
  const auto es = Var<float>::constant(random_tensor<float>({128}, g));
  for (int t : {1, 500, 1000}) {
    const auto a = net(h, t, es, false, rng).value();
    EXPECT_EQ(a.shape, (Shape{9, 40}));
    EXPECT_EQ(a.data, net(h, t, es, false, rng).value().data);
    for (float v : a.data) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(NoisePredictor, TimeStepChangesOutput) {
  ParamSet<double> ps;
  Rng rng(0);
  NoisePredictor<double> net(ps, ModelConfig::full(), rng);
  std::mt19937_64 g(1);
  const auto h = Var<double>::constant(random_tensor({9, 40}, g));
  const auto es = Var<double>::constant(random_tensor({128}, g));
  EXPECT_GT(l2_diff(net(h, 10, es, false, rng).value(), net(h, 900, es, false, rng).value()), 1e-6);
}

TEST(NoisePredictor, ShapeErrors) {
  ParamSet<double> ps;
  Rng rng(0);
  NoisePredictor<double> net(ps, ModelConfig::full(), rng);
  const auto es = Var<double>::constant(Tensor<double>({128}));
  EXPECT_THROW(net(Var<double>::constant(Tensor<double>({8, 40})), 1, es, false, rng), ShapeMismatch);
  EXPECT_THROW(net(Var<double>::constant(Tensor<double>({9, 42})), 1, es, false, rng), ShapeMismatch);
  EXPECT_THROW(net(Var<double>::constant(Tensor<double>({9, 40})), 1, Var<double>::constant(Tensor<double>({64})),
                   false, rng),
               ShapeMismatch);
}

TEST(NoisePredictor, GradientsOnReducedModel) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ParamSet<double> ps;
    Rng rng(seed);
    NoisePredictor<double> net(ps, reduced(), rng);
    std::mt19937_64 g(seed + 50);
    const auto h = Var<double>::constant(random_tensor({9, 8}, g));
    auto es = Var<double>::parameter(random_tensor({8}, g));
    std::vector<Var<double>> vars{es};
    for (const auto& [name, v] : ps) vars.push_back(v);
    const int t = 1 + static_cast<int>(seed * 199);
    auto rep = check_gradients([&] { return mean(mul(net(h, t, es, false, rng), net(h, t, es, false, rng))); }, vars,
                               1e-5);
    EXPECT_TRUE(rep.ok) << "seed " << seed << ": " << rep.where;
  }
}
