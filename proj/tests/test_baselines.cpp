#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "hhae/model.hpp"

using namespace hhae;
using namespace hhae::ad;
using testing_util::check_gradients;
using testing_util::random_tensor;

namespace {

const char* kKinds[] = {"1dcnn", "lstm", "gru", "mlp"};

ModelConfig vae_config(const std::string& kind, ModelConfig base = ModelConfig::full()) {
  base.family = "vae";
  base.encoder = kind;
  return base;
}

}  // namespace

TEST(VaeEncode, LatentSizeAndDeterminism) {
  for (const char* k : kKinds) {
    ParamSet<double> ps;
    Rng rng(0);
    Vae<double> vae(ps, vae_config(k), rng);
    std::mt19937_64 g(1);
    const auto x = Var<double>::constant(random_tensor({9, 40}, g, 0.3));
    const auto [mu, lv] = vae.encode(x);
    EXPECT_EQ(mu.shape(), (Shape{32})) << k;
    EXPECT_EQ(lv.shape(), (Shape{32})) << k;
    EXPECT_EQ(mu.value().data, vae.encode(x).first.value().data) << k;
    EXPECT_THROW(vae.encode(Var<double>::constant(Tensor<double>({9, 36}))), ShapeMismatch) << k;
  }
}

TEST(VaeEncode, MlpWithZeroWeightsReturnsBias) {
  ParamSet<double> ps;
  Rng rng(0);
  Vae<double> vae(ps, vae_config("mlp"), rng);
  for (const auto& [name, v] : ps)
    if (name.size() >= 6 && name.compare(name.size() - 6, 6, "weight") == 0)
      for (auto& x : v.mutable_value().data) x = 0;
  std::mt19937_64 g(1);
  const auto mu = vae.encode(Var<double>::constant(random_tensor({9, 40}, g))).first.value();
  EXPECT_EQ(mu.data, vae.mu_layer().bias.value().data);
}

TEST(VaeDecode, OutputShapeAndDeterminism) {
  for (const char* k : kKinds) {
    ParamSet<double> ps;
    Rng rng(0);
    Vae<double> vae(ps, vae_config(k), rng);
    std::mt19937_64 g(2);
    const auto z = Var<double>::constant(random_tensor({32}, g));
    const auto y = vae.decode(z).value();
    EXPECT_EQ(y.shape, (Shape{9, 40})) << k;
    EXPECT_EQ(y.data, vae.decode(z).value().data) << k;
    EXPECT_THROW(vae.decode(Var<double>::constant(Tensor<double>({31}))), ShapeMismatch) << k;
  }
}

TEST(VaeDecode, TransposedConvLengthArithmetic) {
  // A kernel-3 transposed conv maps length L to L + 2; three of them restore N from N - 6.
  std::mt19937_64 g(3);
  const auto x = random_tensor({1, 5}, g);
  const auto w = random_tensor({1, 1, 3}, g);
  const auto y = conv_transpose1d(Var<double>::constant(x), Var<double>::constant(w),
                                  Var<double>::constant(Tensor<double>({1})))
                     .value();
  ASSERT_EQ(y.shape, (Shape{1, 7}));
  for (std::size_t o = 0; o < 7; ++o) {
    double ref = 0;
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t k = 0; k < 3; ++k)
        if (i + k == o) ref += x.at(0, i) * w.at(0, 0, k);
    EXPECT_NEAR(y.at(0, o), ref, 1e-12);
  }
}

TEST(VaeLoss, StandardNormalPosteriorHasZeroKl) {
  const auto z = Var<double>::constant(Tensor<double>({32}));
  EXPECT_EQ(kl_divergence(z, z).item(), 0.0);
}

TEST(VaeLoss, PerfectDecoderHasZeroRecon) {
  for (const char* k : kKinds) {
    ParamSet<double> ps;
    Rng rng(0);
    Vae<double> vae(ps, vae_config(k, ModelConfig::tiny()), rng);
    std::mt19937_64 g(4);
    const auto mu = Var<double>::constant(random_tensor({4}, g));
    const auto lv = Var<double>::constant(random_tensor({4}, g, 0.1));
    const auto x = vae.decode(mu);
    const auto l = vae.loss_with_noise(x, mu, lv, Tensor<double>({4}));
    EXPECT_EQ(l.recon, 0.0) << k;
  }
}

TEST(VaeLoss, MatchesScalarElboOracle) {
  for (const char* k : kKinds) {
    ParamSet<double> ps;
    Rng rng(1);
    auto cfg = vae_config(k, ModelConfig::tiny());
    Vae<double> vae(ps, cfg, rng);
    std::mt19937_64 g(5);
    const auto x = random_tensor({9, 8}, g, 0.3);
    const auto mu = random_tensor({4}, g);
    const auto lv = random_tensor({4}, g, 0.5);
    const auto xi = random_tensor({4}, g);
    const auto l = vae.loss_with_noise(Var<double>::constant(x), Var<double>::constant(mu), Var<double>::constant(lv), xi);

    Tensor<double> z({4});
    double kl = 0;
    for (std::size_t i = 0; i < 4; ++i) {
      z.data[i] = mu.data[i] + std::exp(0.5 * lv.data[i]) * xi.data[i];
      kl += 1 + lv.data[i] - mu.data[i] * mu.data[i] - std::exp(lv.data[i]);
    }
    kl *= -0.5 / 4.0;
    const auto dec = vae.decode(Var<double>::constant(z)).value();
    double recon = 0;
    for (std::size_t i = 0; i < x.size(); ++i) recon += (dec.data[i] - x.data[i]) * (dec.data[i] - x.data[i]);
    recon /= static_cast<double>(x.size());
    EXPECT_NEAR(l.kl, kl, 1e-9) << k;
    EXPECT_NEAR(l.recon, recon, 1e-9) << k;
    EXPECT_NEAR(l.total.item(), recon + cfg.kl_weight * kl, 1e-9) << k;
  }
}

TEST(VaeLoss, GradientsForEveryKind) {
  for (const char* k : kKinds)
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      ParamSet<double> ps;
      Rng rng(seed);
      Vae<double> vae(ps, vae_config(k, ModelConfig::tiny()), rng);
      EXPECT_LE(ps.num_scalars(), 4000u) << k;
      std::mt19937_64 g(seed + 9);
      const auto x = Var<double>::constant(random_tensor({9, 8}, g, 0.3));
      const auto xi = random_tensor({4}, g);
      std::vector<Var<double>> vars;
      for (const auto& [name, v] : ps) vars.push_back(v);
      auto rep = check_gradients(
          [&] {
            const auto [mu, lv] = vae.encode(x);
            return vae.loss_with_noise(x, mu, lv, xi).total;
          },
          vars, 1e-5);
      EXPECT_TRUE(rep.ok) << k << " seed " << seed << ": " << rep.where;
    }
}

TEST(VaeModel, NamesAndValidation) {
  auto cfg = ModelConfig::full();
  cfg.set_model("vae-gru");
  EXPECT_EQ(cfg.family, "vae");
  EXPECT_EQ(cfg.encoder, "gru");
  EXPECT_EQ(cfg.model_name(), "vae-gru");
  cfg.set_model("ours-mlp-enc");
  EXPECT_EQ(cfg.family, "diffusion");
  EXPECT_EQ(cfg.model_name(), "ours-mlp-enc");
  EXPECT_THROW(cfg.set_model("vae-gcn"), BadConfig);
  EXPECT_THROW(cfg.set_model("transformer"), BadConfig);
}

TEST(VaeModel, ReconstructAndEmbed) {
  for (const char* k : kKinds) {
    Model<float> m(vae_config(k), 0);
    EXPECT_TRUE(m.is_vae());
    EXPECT_FALSE(m.has_forecaster());
    std::mt19937_64 g(6);
    const auto x = random_tensor<float>({9, 40}, g, 0.3);
    EXPECT_EQ(m.embed(x).shape, (Shape{32}));
    EXPECT_EQ(m.vae().reconstruct(x).shape, (Shape{9, 40}));
  }
}

TEST(SwappedEncoder, EmbeddingSizeMatchesGraphEncoder) {
  for (const char* k : kKinds) {
    auto cfg = ModelConfig::full();
    cfg.encoder = k;
    Model<float> m(cfg, 0);
    EXPECT_FALSE(m.has_forecaster());
    std::mt19937_64 g(7);
    EXPECT_EQ(m.embed(random_tensor<float>({9, 40}, g)).shape, (Shape{128})) << k;
  }
}
