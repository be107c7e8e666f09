#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "hhae/forecaster.hpp"

using namespace hhae;
using namespace hhae::ad;
using testing_util::check_gradients;
using testing_util::random_tensor;

namespace {

void zero_conv(Conv1d<double>& c) {
  for (auto& v : c.weight.mutable_value().data) v = 0;
  for (auto& v : c.bias.mutable_value().data) v = 0;
}

}  // namespace

TEST(Forecaster, ShapesAndUnitHeadColumns) {
  ParamSet<double> ps;
  Rng rng(0);
  Forecaster<double> fc(ps, ModelConfig::full(), rng);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 g(seed);
    const auto out = fc(Var<double>::constant(random_tensor({16, 3, 10}, g)));
    EXPECT_EQ(out.hands.shape(), (Shape{6, 3}));
    EXPECT_EQ(out.head.shape(), (Shape{3, 3}));
    EXPECT_EQ(out.stacked.shape(), (Shape{9, 3}));
    EXPECT_FALSE(out.degenerate);
    const auto& h = out.head.value();
    for (std::size_t j = 0; j < 3; ++j) {
      const double n = std::sqrt(h.at(0, j) * h.at(0, j) + h.at(1, j) * h.at(1, j) + h.at(2, j) * h.at(2, j));
      EXPECT_NEAR(n, 1.0, 1e-6);
      for (std::size_t r = 0; r < 3; ++r) EXPECT_EQ(out.stacked.value().at(6 + r, j), h.at(r, j));
    }
  }
}

TEST(Forecaster, ZeroOutputConvsGiveZeroHandsAndFallbackHead) {
  ParamSet<double> ps;
  Rng rng(0);
  Forecaster<double> fc(ps, ModelConfig::full(), rng);
  zero_conv(fc.hand_output());
  zero_conv(fc.head_output());
  std::mt19937_64 g(1);
  const auto out = fc(Var<double>::constant(random_tensor({16, 3, 10}, g)));
  for (double v : out.hands.value().data) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(out.degenerate);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(out.head.value().at(0, j), 0.0);
    EXPECT_EQ(out.head.value().at(1, j), 0.0);
    EXPECT_EQ(out.head.value().at(2, j), 1.0);
  }
}

TEST(Forecaster, ShapeMismatch) {
  ParamSet<double> ps;
  Rng rng(0);
  Forecaster<double> fc(ps, ModelConfig::full(), rng);
  EXPECT_THROW(fc(Var<double>::constant(Tensor<double>({8, 3, 10}))), ShapeMismatch);
  EXPECT_THROW(fc(Var<double>::constant(Tensor<double>({16, 10}))), ShapeMismatch);
}

TEST(Forecaster, HorizonFollowsConfig) {
  auto cfg = ModelConfig::full();
  cfg.dn = 5;
  ParamSet<double> ps;
  Rng rng(0);
  Forecaster<double> fc(ps, cfg, rng);
  std::mt19937_64 g(1);
  const auto out = fc(Var<double>::constant(random_tensor({16, 3, 10}, g)));
  EXPECT_EQ(out.stacked.shape(), (Shape{9, 5}));
}

TEST(Forecaster, LossGradientsOnTinyModel) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ParamSet<double> ps;
    Rng rng(seed);
    Forecaster<double> fc(ps, ModelConfig::tiny(), rng);
    std::mt19937_64 g(seed + 7);
    auto F = Var<double>::parameter(random_tensor({4, 3, 2}, g));
    const auto target = Var<double>::constant(random_tensor({9, 3}, g, 0.3));
    std::vector<Var<double>> vars{F};
    for (const auto& [name, v] : ps) vars.push_back(v);
    auto rep = check_gradients(
        [&] {
          const auto d = sub(fc(F).stacked, target);
          return scale(sum(mul(d, d)), 1.0 / 3.0);
        },
        vars, 1e-5);
    EXPECT_TRUE(rep.ok) << "seed " << seed << ": " << rep.where;
  }
}
