#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "hhae/semantic_encoder.hpp"

using namespace hhae;
using namespace hhae::ad;
using testing_util::check_gradients;
using testing_util::random_tensor;

namespace {

Tensor<double> identity(std::size_t n) {
  Tensor<double> t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1;
  return t;
}

STGCNParams<double> random_params(ParamSet<double>& ps, std::size_t cin, std::size_t cout, std::size_t len,
                                  std::mt19937_64& rng) {
  Rng init(1);
  STGCNParams<double> p(ps, "g", cin, cout, len, init);
  p.temporal.mutable_value() = random_tensor({len, len}, rng);
  p.feature.mutable_value() = random_tensor({cin, cout}, rng);
  p.spatial.mutable_value() = random_tensor({3, 3}, rng);
  return p;
}

}  // namespace

TEST(Stgcn, IdentityMatricesPassThrough) {
  ParamSet<double> ps;
  Rng rng(0);
  STGCNParams<double> p(ps, "g", 3, 3, 5, rng);
  p.temporal.mutable_value() = identity(5);
  p.feature.mutable_value() = identity(3);
  p.spatial.mutable_value() = identity(3);
  std::mt19937_64 g(2);
  const auto x = random_tensor({3, 3, 5}, g);
  EXPECT_EQ(stgcn_forward(Var<double>::constant(x), p).value().data, x.data);
}

TEST(Stgcn, OutputShape) {
  ParamSet<double> ps;
  Rng rng(0);
  STGCNParams<double> p(ps, "g", 3, 16, 40, rng);
  const auto y = stgcn_forward(Var<double>::constant(Tensor<double>({3, 3, 40}, 0.5)), p);
  EXPECT_EQ(y.shape(), (Shape{16, 3, 40}));
}

TEST(Stgcn, MatchesTripleLoopOracle) {
  std::mt19937_64 rng(5);
  ParamSet<double> ps;
  const std::size_t cin = 3, cout = 4, L = 6;
  auto p = random_params(ps, cin, cout, L, rng);
  const auto x = random_tensor({cin, 3, L}, rng);
  const auto y = stgcn_forward(Var<double>::constant(x), p).value();
  const auto& AT = p.temporal.value();
  const auto& W = p.feature.value();
  const auto& AS = p.spatial.value();
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t l = 0; l < L; ++l) {
        double ref = 0;
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t m = 0; m < L; ++m) ref += x.at(c, i, m) * AT.at(m, l) * W.at(c, o) * AS.at(i, j);
        EXPECT_NEAR(y.at(o, j, l), ref, 1e-6 * std::max(1.0, std::abs(ref)));
      }
}

TEST(Stgcn, ShapeMismatch) {
  ParamSet<double> ps;
  Rng rng(0);
  STGCNParams<double> p(ps, "g", 3, 16, 40, rng);
  EXPECT_THROW(stgcn_forward(Var<double>::constant(Tensor<double>({3, 3, 39})), p), ShapeMismatch);
  EXPECT_THROW(stgcn_forward(Var<double>::constant(Tensor<double>({4, 3, 40})), p), ShapeMismatch);
}

TEST(Stgcn, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    ParamSet<double> ps;
    auto p = random_params(ps, 2, 3, 4, rng);
    auto x = Var<double>::parameter(random_tensor({2, 3, 4}, rng));
    const auto w = Var<double>::constant(random_tensor({3, 3, 4}, rng));
    auto rep = check_gradients([&] { return sum(mul(stgcn_forward(x, p), w)); },
                               {x, p.temporal, p.feature, p.spatial});
    EXPECT_TRUE(rep.ok) << rep.where;
  }
}

TEST(GcnBlock, ZeroFeatureMatrixIsResidualIdentity) {
  ParamSet<double> ps;
  Rng rng(0);
  GCNBlock<double> b(ps, "b", 16, 40, 0.1, rng);
  b.gcn.feature.mutable_value() = Tensor<double>({16, 16});
  std::mt19937_64 g(3);
  const auto x = random_tensor({16, 3, 40}, g);
  const auto y = b(Var<double>::constant(x), false, rng);
  EXPECT_EQ(y.shape(), (Shape{16, 3, 40}));
  EXPECT_EQ(y.value().data, x.data);
}

TEST(GcnBlock, EvalDeterministicTrainingUsesDropout) {
  ParamSet<double> ps;
  Rng rng(0);
  GCNBlock<double> b(ps, "b", 16, 40, 0.5, rng);
  std::mt19937_64 g(3);
  const auto x = Var<double>::constant(random_tensor({16, 3, 40}, g));
  Rng r1(1), r2(2);
  EXPECT_EQ(b(x, false, r1).value().data, b(x, false, r2).value().data);
  Rng r3(1), r4(2);
  EXPECT_NE(b(x, true, r3).value().data, b(x, true, r4).value().data);
}

TEST(GcnBlock, InvertedDropoutMatchesEvalPathInExpectation) {
  ParamSet<double> ps;
  Rng rng(0);
  GCNBlock<double> b(ps, "b", 4, 8, 0.3, rng);
  std::mt19937_64 g(3);
  const auto x = Var<double>::constant(random_tensor({4, 3, 8}, g));
  const auto eval = b(x, false, rng).value();
  Tensor<double> acc(eval.shape);
  const int trials = 4000;
  Rng dr(9);
  for (int k = 0; k < trials; ++k) {
    const auto y = b(x, true, dr).value();
    for (std::size_t i = 0; i < y.size(); ++i) acc.data[i] += y.data[i] / trials;
  }
  for (std::size_t i = 0; i < acc.size(); ++i) EXPECT_NEAR(acc.data[i], eval.data[i], 0.05);
}

TEST(SemanticEncoder, GraphLayout) {
  Tensor<double> h({9, 4});
  for (std::size_t r = 0; r < 9; ++r)
    for (std::size_t t = 0; t < 4; ++t) h.at(r, t) = 10.0 * r + t;
  const auto g = SemanticEncoder<double>::to_graph(Var<double>::constant(h)).value();
  // joints: head (he rows 6-8), left (ha rows 0-2), right (ha rows 3-5); channel = axis
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < 4; ++t) {
      EXPECT_EQ(g.at(c, 0, t), h.at(6 + c, t));
      EXPECT_EQ(g.at(c, 1, t), h.at(c, t));
      EXPECT_EQ(g.at(c, 2, t), h.at(3 + c, t));
    }
}

TEST(SemanticEncoder, FullSizeShapes) {
  ParamSet<float> ps;
  Rng rng(0);
  SemanticEncoder<float> enc(ps, ModelConfig::full(), rng);
  std::mt19937_64 g(1);
  const auto out = enc(Var<float>::constant(random_tensor<float>({9, 40}, g)), false, rng);
  EXPECT_EQ(out.esem.shape(), (Shape{128}));
  EXPECT_EQ(out.features.shape(), (Shape{16, 3, 10}));
}

TEST(SemanticEncoder, RejectsWindowNotDivisibleByFour) {
  auto cfg = ModelConfig::full();
  cfg.n = 42;
  ParamSet<double> ps;
  Rng rng(0);
  EXPECT_THROW(SemanticEncoder<double>(ps, cfg, rng), ShapeMismatch);
  ParamSet<double> ps2;
  SemanticEncoder<double> enc(ps2, ModelConfig::full(), rng);
  EXPECT_THROW(enc(Var<double>::constant(Tensor<double>({9, 42})), false, rng), ShapeMismatch);
}

TEST(SemanticEncoder, DeterministicAndSensitive) {
  ParamSet<double> ps;
  Rng rng(4);
  SemanticEncoder<double> enc(ps, ModelConfig::full(), rng);
  std::mt19937_64 g(8);
  auto x = random_tensor({9, 40}, g, 0.3);
  const auto a = enc(Var<double>::constant(x), false, rng).esem.value();
  const auto b = enc(Var<double>::constant(x), false, rng).esem.value();
  EXPECT_EQ(a.data, b.data);
  x.at(2, 17) += 1e-3;
  const auto c = enc(Var<double>::constant(x), false, rng).esem.value();
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a.data[i] - c.data[i]) * (a.data[i] - c.data[i]);
  EXPECT_GT(d, 0.0);
  EXPECT_TRUE(std::isfinite(d));
}

TEST(SemanticEncoder, GradientsOnTinyModel) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ParamSet<double> ps;
    Rng rng(seed);
    SemanticEncoder<double> enc(ps, ModelConfig::tiny(), rng);
    std::mt19937_64 g(seed + 100);
    const auto x = Var<double>::constant(random_tensor({9, 8}, g, 0.5));
    const auto w = Var<double>::constant(random_tensor({8}, g));
    const auto wf = Var<double>::constant(random_tensor({4, 3, 2}, g));
    std::vector<Var<double>> vars;
    for (const auto& [name, v] : ps) vars.push_back(v);
    auto rep = check_gradients(
        [&] {
          auto out = enc(x, false, rng);
          return add(sum(mul(out.esem, w)), sum(mul(out.features, wf)));
        },
        vars, 1e-5);
    EXPECT_TRUE(rep.ok) << "seed " << seed << ": " << rep.where;
  }
}
