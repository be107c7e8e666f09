#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "hhae/diffusion.hpp"

using namespace hhae;
using namespace hhae::ad;
using testing_util::random_tensor;

namespace {

// Independent cumulative product of (1 - beta_i) with linearly spaced betas.
double oracle_alpha_bar(int t, int t_train = 1000, double b0 = 1e-4, double b1 = 0.02) {
  double a = 1.0;
  for (int i = 1; i <= t; ++i) a *= 1.0 - (b0 + (b1 - b0) * (i - 1) / (t_train - 1));
  return a;
}

NoiseFn<double> zero_noise() {
  return [](const Tensor<double>& h, int) { return Tensor<double>(h.shape); };
}

NoiseFn<double> fixed_noise(const Tensor<double>& e) {
  return [e](const Tensor<double>&, int) { return e; };
}

}  // namespace

TEST(Schedule, FirstAndLastAlphaBar) {
  const auto s = make_schedule();
  EXPECT_NEAR(s.alpha(1), 0.9999, 1e-15);
  EXPECT_NEAR(s.alpha(1000), oracle_alpha_bar(1000), 1e-12);
  for (int t : {0, 10, 250, 777}) EXPECT_NEAR(s.alpha(t), oracle_alpha_bar(t), 1e-12) << t;
}

TEST(Schedule, Invariants) {
  const auto s = make_schedule();
  EXPECT_EQ(s.alpha(0), 1.0);
  for (double b : s.betas) {
    EXPECT_GT(b, 0.0);
    EXPECT_LT(b, 1.0);
  }
  for (int t = 1; t <= 1000; ++t) EXPECT_LT(s.alpha(t), s.alpha(t - 1));
  ASSERT_EQ(s.infer_steps.size(), 100u);
  EXPECT_EQ(s.infer_steps.back(), 1000);
  for (std::size_t i = 1; i < s.infer_steps.size(); ++i) EXPECT_GT(s.infer_steps[i], s.infer_steps[i - 1]);
  EXPECT_THROW(s.alpha(1001), OutOfRange);
}

TEST(Schedule, BadConfig) {
  EXPECT_THROW(make_schedule(1000, 1e-4, 0.02, 0), BadConfig);
  EXPECT_THROW(make_schedule(1000, 1e-4, 0.02, 7), BadConfig);
  EXPECT_THROW(make_schedule(1000, 0.0, 0.02, 100), BadConfig);
  EXPECT_THROW(make_schedule(1000, 0.03, 0.02, 100), BadConfig);
  EXPECT_THROW(make_schedule(1000, 1e-4, 1.0, 100), BadConfig);
}

TEST(Schedule, JsonRoundTrip) {
  const auto s = make_schedule(1000, 1e-4, 0.02, 20);
  nlohmann::json j = s;
  const auto r = schedule_from_json(j);
  EXPECT_EQ(r.alpha_bar, s.alpha_bar);
  EXPECT_EQ(r.infer_steps, s.infer_steps);
}

TEST(ForwardNoise, ZeroNoiseAndZeroSignal) {
  const auto s = make_schedule();
  std::mt19937_64 g(1);
  const auto h0 = random_tensor({9, 40}, g);
  const auto eps = random_tensor({9, 40}, g);
  const Tensor<double> zero({9, 40});
  const auto a = forward_noise(h0, 300, zero, s);
  const auto b = forward_noise(zero, 300, eps, s);
  for (std::size_t i = 0; i < h0.size(); ++i) {
    EXPECT_NEAR(a.data[i], std::sqrt(s.alpha(300)) * h0.data[i], 1e-15);
    EXPECT_NEAR(b.data[i], std::sqrt(1 - s.alpha(300)) * eps.data[i], 1e-15);
  }
}

TEST(ForwardNoise, MatchesElementwiseOracle) {
  const auto s = make_schedule();
  std::mt19937_64 g(2);
  const auto h0 = random_tensor({9, 40}, g);
  const auto eps = random_tensor({9, 40}, g);
  const auto h = forward_noise(h0, 500, eps, s);
  const double a = oracle_alpha_bar(500);
  for (std::size_t i = 0; i < h.size(); ++i)
    EXPECT_NEAR(h.data[i], std::sqrt(a) * h0.data[i] + std::sqrt(1 - a) * eps.data[i], 1e-12);
}

TEST(ForwardNoise, Errors) {
  const auto s = make_schedule();
  const Tensor<double> x({9, 4});
  EXPECT_THROW(forward_noise(x, 0, x, s), OutOfRange);
  EXPECT_THROW(forward_noise(x, 1001, x, s), OutOfRange);
  EXPECT_THROW(forward_noise(x, 5, Tensor<double>({9, 5}), s), ShapeMismatch);
}

TEST(DdimStep, ZeroNoiseEstimateRescales) {
  const auto s = make_schedule();
  std::mt19937_64 g(3);
  const auto h = random_tensor({9, 40}, g);
  const auto out = ddim_step(h, 500, 490, Tensor<double>({9, 40}), s);
  for (std::size_t i = 0; i < h.size(); ++i)
    EXPECT_NEAR(out.data[i], std::sqrt(s.alpha(490)) / std::sqrt(s.alpha(500)) * h.data[i], 1e-12);
}

TEST(DdimStep, DownThenUpIsInverse) {
  const auto s = make_schedule();
  std::mt19937_64 g(4);
  const auto h = random_tensor({9, 40}, g);
  const auto e = random_tensor({9, 40}, g);
  for (auto [a, b] : {std::pair{500, 490}, std::pair{10, 0}, std::pair{1000, 990}}) {
    const auto back = ddim_step(ddim_step(h, a, b, e, s), b, a, e, s);
    for (std::size_t i = 0; i < h.size(); ++i) EXPECT_NEAR(back.data[i], h.data[i], 1e-10);
  }
}

TEST(DdimStep, MatchesFormulaOracle) {
  const auto s = make_schedule();
  std::mt19937_64 g(5);
  for (auto [from, to] : {std::pair{1000, 990}, std::pair{20, 10}, std::pair{10, 0}, std::pair{0, 10}}) {
    const auto h = random_tensor({9, 40}, g);
    const auto e = random_tensor({9, 40}, g);
    const auto out = ddim_step(h, from, to, e, s);
    const double af = oracle_alpha_bar(from), at = oracle_alpha_bar(to);
    for (std::size_t i = 0; i < h.size(); ++i) {
      const double ref =
          std::sqrt(at) * (h.data[i] - std::sqrt(1 - af) * e.data[i]) / std::sqrt(af) + std::sqrt(1 - at) * e.data[i];
      EXPECT_NEAR(out.data[i], ref, 1e-12);
    }
  }
}

TEST(DdimStep, Errors) {
  const auto s = make_schedule();
  const Tensor<double> x({9, 4});
  EXPECT_THROW(ddim_step(x, 500, 500, x, s), OutOfRange);
  EXPECT_THROW(ddim_step(x, 505, 500, x, s), OutOfRange);
  EXPECT_THROW(ddim_step(x, 500, 490, Tensor<double>({9, 8}), s), ShapeMismatch);
}

TEST(Decode, ZeroNoiseTelescopes) {
  const auto s = make_schedule();
  std::mt19937_64 g(6);
  const auto hT = random_tensor({9, 40}, g);
  const auto h0 = decode(hT, zero_noise(), s);
  for (std::size_t i = 0; i < hT.size(); ++i)
    EXPECT_NEAR(h0.data[i], hT.data[i] / std::sqrt(oracle_alpha_bar(1000)), 1e-9 * std::abs(h0.data[i]) + 1e-12);
}

TEST(EncodeStochastic, ZeroNoiseRoundTrip) {
  const auto s = make_schedule();
  std::mt19937_64 g(7);
  const auto h0 = random_tensor({9, 40}, g);
  const auto hT = encode_stochastic(h0, zero_noise(), s);
  for (std::size_t i = 0; i < h0.size(); ++i)
    EXPECT_NEAR(hT.data[i], std::sqrt(oracle_alpha_bar(1000)) * h0.data[i], 1e-12);
  const auto back = decode(hT, zero_noise(), s);
  for (std::size_t i = 0; i < h0.size(); ++i) EXPECT_NEAR(back.data[i], h0.data[i], 1e-6);
}

TEST(EncodeStochastic, ConstantNoiseRoundTripAndDeterminism) {
  const auto s = make_schedule(1000, 1e-4, 0.02, 20);
  std::mt19937_64 g(8);
  const auto h0 = random_tensor({9, 40}, g);
  const auto fn = fixed_noise(random_tensor({9, 40}, g, 0.1));
  const auto hT = encode_stochastic(h0, fn, s);
  EXPECT_EQ(hT.data, encode_stochastic(h0, fn, s).data);
  const auto back = decode(hT, fn, s);
  EXPECT_EQ(back.data, decode(hT, fn, s).data);
  for (std::size_t i = 0; i < h0.size(); ++i) EXPECT_NEAR(back.data[i], h0.data[i], 1e-9);
}

TEST(EncodeStochastic, VisitsGridInOrder) {
  const auto s = make_schedule(1000, 1e-4, 0.02, 4);
  std::vector<int> enc_ts, dec_ts;
  const Tensor<double> x({9, 4}, 0.5);
  encode_stochastic<double>(x, [&](const Tensor<double>& h, int t) { enc_ts.push_back(t); return Tensor<double>(h.shape); }, s);
  decode<double>(x, [&](const Tensor<double>& h, int t) { dec_ts.push_back(t); return Tensor<double>(h.shape); }, s);
  EXPECT_EQ(enc_ts, (std::vector<int>{0, 250, 500, 750}));
  EXPECT_EQ(dec_ts, (std::vector<int>{1000, 750, 500, 250}));
}
