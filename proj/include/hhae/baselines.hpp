#pragma once

// VAE baselines over (9, N) windows and the matching sequence encoders.
//
//   1dcnn  3 x [conv k3 -> LN -> ReLU], mean over time; decoder maps z to
//          (H, N - 6) and applies three k3 transposed convolutions.
//   lstm   LSTM(9 -> H), mean over time; decoder LSTM(latent -> 9) over z
//          repeated N times.
//   gru    as lstm with GRU cells.
//   mlp    2 x [linear -> LN -> ReLU] on the flattened window; decoder
//          linear -> LN -> ReLU -> linear back to 9N.
//
// The trunk of each encoder (before the mu / log-variance pair) is reused by
// the diffusion model variants that swap out the graph encoder.

#include <cmath>
#include <random>
#include <string>

#include "hhae/ad/nn.hpp"
#include "hhae/model_config.hpp"

namespace hhae {

/// Maps a (9, N) window to a feature vector of size `feature_dim()`.
template <class T>
class SequenceEncoder {
 public:
  SequenceEncoder() = default;
  SequenceEncoder(ad::ParamSet<T>& ps, const ModelConfig& cfg, ad::Rng& rng) : kind_(cfg.encoder), n_(cfg.n) {
    const std::size_t H = cfg.baseline_hidden;
    if (kind_ == "1dcnn") {
      for (std::size_t i = 0; i < 3; ++i) {
        convs_[i] = ad::Conv1d<T>(ps, "conv" + std::to_string(i + 1), i == 0 ? 9 : H, H, 3, rng);
        norms_[i] = ad::LayerNorm<T>(ps, "ln" + std::to_string(i + 1), H);
      }
      dim_ = H;
    } else if (kind_ == "lstm") {
      lstm_ = ad::LSTM<T>(ps, "lstm", 9, H, rng);
      dim_ = H;
    } else if (kind_ == "gru") {
      gru_ = ad::GRU<T>(ps, "gru", 9, H, rng);
      dim_ = H;
    } else if (kind_ == "mlp") {
      const std::size_t M = cfg.baseline_mlp;
      fc_[0] = ad::Linear<T>(ps, "fc1", 9 * cfg.n, M, rng);
      fc_[1] = ad::Linear<T>(ps, "fc2", M, M, rng);
      norms_[0] = ad::LayerNorm<T>(ps, "ln1", M);
      norms_[1] = ad::LayerNorm<T>(ps, "ln2", M);
      dim_ = M;
    } else {
      throw BadConfig("no sequence encoder for kind " + kind_);
    }
  }

  std::size_t feature_dim() const { return dim_; }

  ad::Var<T> operator()(const ad::Var<T>& x) const {
    if (x.shape().size() != 2 || x.dim(0) != 9 || x.dim(1) != n_)
      throw ShapeMismatch("sequence encoder: expected (9, " + std::to_string(n_) + "), got " + ad::shape_str(x.shape()));
    if (kind_ == "mlp") {
      auto h = ad::reshape(x, {9 * n_});
      for (std::size_t i = 0; i < 2; ++i) h = ad::relu(norms_[i](fc_[i](h)));
      return h;
    }
    ad::Var<T> h;
    if (kind_ == "1dcnn") {
      h = x;
      for (std::size_t i = 0; i < 3; ++i) h = ad::relu(norms_[i](convs_[i](h)));
    } else if (kind_ == "lstm") {
      h = lstm_(x);
    } else {
      h = gru_(x);
    }
    return ad::reshape(ad::adaptive_avg_pool(h, 1), {dim_});
  }

 private:
  std::string kind_;
  std::size_t n_ = 0, dim_ = 0;
  ad::Conv1d<T> convs_[3];
  ad::LayerNorm<T> norms_[3];
  ad::Linear<T> fc_[2];
  ad::LSTM<T> lstm_;
  ad::GRU<T> gru_;
};

template <class T>
struct VaeLoss {
  ad::Var<T> total;
  double recon = 0, kl = 0;
};

/// -1/2 sum(1 + logvar - mu^2 - exp(logvar)) / latent_dim.
template <class T>
ad::Var<T> kl_divergence(const ad::Var<T>& mu, const ad::Var<T>& logvar) {
  auto inner = ad::sub(ad::sub(ad::add_const(logvar, T(1)), ad::mul(mu, mu)), ad::exp(logvar));
  return ad::scale(ad::sum(inner), T(-0.5) / static_cast<T>(mu.size()));
}

template <class T>
class Vae {
 public:
  Vae() = default;
  Vae(ad::ParamSet<T>& ps, const ModelConfig& cfg, ad::Rng& rng) : cfg_(cfg) {
    cfg.validate();
    if (cfg.family != "vae") throw BadConfig("Vae needs family = vae");
    ad::ParamSet<T> enc;
    encoder_ = SequenceEncoder<T>(enc, cfg, rng);
    ps.merge("encoder.", enc);
    const std::size_t Z = cfg.latent_dim, H = cfg.baseline_hidden, N = cfg.n;
    mu_ = ad::Linear<T>(ps, "mu", encoder_.feature_dim(), Z, rng);
    logvar_ = ad::Linear<T>(ps, "logvar", encoder_.feature_dim(), Z, rng);
    const auto& k = cfg.encoder;
    if (k == "1dcnn") {
      dec_in_ = ad::Linear<T>(ps, "decoder.fc", Z, H * (N - 6), rng);
      deconv_[0] = ad::ConvTranspose1d<T>(ps, "decoder.deconv1", H, H, 3, rng);
      deconv_[1] = ad::ConvTranspose1d<T>(ps, "decoder.deconv2", H, H, 3, rng);
      deconv_[2] = ad::ConvTranspose1d<T>(ps, "decoder.deconv3", H, 9, 3, rng);
      dec_norm_[0] = ad::LayerNorm<T>(ps, "decoder.ln1", H);
      dec_norm_[1] = ad::LayerNorm<T>(ps, "decoder.ln2", H);
    } else if (k == "lstm") {
      dec_lstm_ = ad::LSTM<T>(ps, "decoder.lstm", Z, 9, rng);
    } else if (k == "gru") {
      dec_gru_ = ad::GRU<T>(ps, "decoder.gru", Z, 9, rng);
    } else {
      dec_in_ = ad::Linear<T>(ps, "decoder.fc1", Z, cfg.baseline_mlp, rng);
      dec_norm_[0] = ad::LayerNorm<T>(ps, "decoder.ln1", cfg.baseline_mlp);
      dec_out_ = ad::Linear<T>(ps, "decoder.fc2", cfg.baseline_mlp, 9 * N, rng);
    }
  }

  /// (mu, logvar), each of length latent_dim.
  std::pair<ad::Var<T>, ad::Var<T>> encode(const ad::Var<T>& x) const {
    auto f = encoder_(x);
    return {mu_(f), logvar_(f)};
  }

  ad::Var<T> decode(const ad::Var<T>& z) const {
    const std::size_t Z = cfg_.latent_dim, H = cfg_.baseline_hidden, N = cfg_.n;
    if (z.size() != Z) throw ShapeMismatch("vae decode: latent size " + std::to_string(z.size()));
    const auto& k = cfg_.encoder;
    if (k == "1dcnn") {
      auto h = ad::reshape(dec_in_(z), {H, N - 6});
      h = ad::relu(dec_norm_[0](deconv_[0](h)));
      h = ad::relu(dec_norm_[1](deconv_[1](h)));
      return deconv_[2](h);
    }
    if (k == "lstm" || k == "gru") {
      auto seq = ad::stack_columns(std::vector<ad::Var<T>>(N, ad::reshape(z, {Z})));
      return k == "lstm" ? dec_lstm_(seq) : dec_gru_(seq);
    }
    auto h = ad::relu(dec_norm_[0](dec_in_(z)));
    return ad::reshape(dec_out_(h), {9, N});
  }

  /// Reparameterized ELBO with xi ~ N(0, I) drawn from `rng`.
  VaeLoss<T> loss(const ad::Var<T>& x, ad::Rng& rng) const {
    auto [mu, logvar] = encode(x);
    std::normal_distribution<double> g(0.0, 1.0);
    ad::Tensor<T> xi({cfg_.latent_dim});
    for (auto& v : xi.data) v = static_cast<T>(g(rng));
    return loss_with_noise(x, mu, logvar, xi);
  }

  VaeLoss<T> loss_with_noise(const ad::Var<T>& x, const ad::Var<T>& mu, const ad::Var<T>& logvar,
                             const ad::Tensor<T>& xi) const {
    auto sigma = ad::exp(ad::scale(logvar, T(0.5)));
    auto z = ad::add(mu, ad::mul(sigma, ad::Var<T>::constant(xi)));
    auto diff = ad::sub(decode(z), x);
    auto recon = ad::scale(ad::sum_squares(diff), T(1) / static_cast<T>(diff.size()));
    auto kl = kl_divergence(mu, logvar);
    VaeLoss<T> out;
    out.total = ad::add(recon, ad::scale(kl, static_cast<T>(cfg_.kl_weight)));
    out.recon = static_cast<double>(recon.item());
    out.kl = static_cast<double>(kl.item());
    return out;
  }

  /// Deterministic reconstruction through the posterior mean.
  ad::Tensor<T> reconstruct(const ad::Tensor<T>& x) const {
    ad::NoGradGuard ng;
    return decode(encode(ad::Var<T>::constant(x)).first).value();
  }

  const ModelConfig& config() const { return cfg_; }
  const ad::Linear<T>& mu_layer() const { return mu_; }

 private:
  ModelConfig cfg_;
  SequenceEncoder<T> encoder_;
  ad::Linear<T> mu_, logvar_;
  ad::Linear<T> dec_in_, dec_out_;
  ad::ConvTranspose1d<T> deconv_[3];
  ad::LayerNorm<T> dec_norm_[2];
  ad::LSTM<T> dec_lstm_;
  ad::GRU<T> dec_gru_;
};

}  // namespace hhae
