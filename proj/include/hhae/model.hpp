#pragma once

// A complete model: either the diffusion autoencoder (semantic encoder, noise
// predictor and, for the graph encoder, the forecaster) or one VAE baseline.
// Parameters are registered in a single ParamSet with component prefixes.

#include <cstdint>
#include <memory>
#include <random>

#include "hhae/ad/nn.hpp"
#include "hhae/baselines.hpp"
#include "hhae/diffusion.hpp"
#include "hhae/forecaster.hpp"
#include "hhae/model_config.hpp"
#include "hhae/noise_predictor.hpp"
#include "hhae/semantic_encoder.hpp"

namespace hhae {

template <class T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    ad::Rng rng(seed);
    if (cfg.family == "vae") {
      ad::ParamSet<T> p;
      vae_ = Vae<T>(p, cfg, rng);
      params_.merge("vae.", p);
      return;
    }
    ad::ParamSet<T> enc, unet, fc;
    if (cfg.encoder == "gcn") {
      graph_ = SemanticEncoder<T>(enc, cfg, rng);
    } else {
      seq_ = SequenceEncoder<T>(enc, cfg, rng);
      seq_head_ = ad::Linear<T>(enc, "head", seq_.feature_dim(), cfg.esem_dim, rng);
    }
    unet_ = NoisePredictor<T>(unet, cfg, rng);
    if (cfg.encoder == "gcn") forecaster_ = Forecaster<T>(fc, cfg, rng);
    params_.merge("encoder.", enc);
    params_.merge("unet.", unet);
    params_.merge("forecaster.", fc);
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }
  ad::ParamSet<T>& params() { return params_; }
  const ad::ParamSet<T>& params() const { return params_; }
  bool is_vae() const { return cfg_.family == "vae"; }
  bool has_forecaster() const { return !is_vae() && cfg_.encoder == "gcn"; }

  /// E_sem and, for the graph encoder, the feature map F.
  SemanticOutput<T> encode_semantic(const ad::Var<T>& h0, bool training, ad::Rng& rng) const {
    if (is_vae()) throw BadConfig("encode_semantic on a VAE model");
    if (cfg_.encoder == "gcn") return graph_(h0, training, rng);
    SemanticOutput<T> out;
    out.esem = seq_head_(seq_(h0));
    return out;
  }

  ad::Var<T> predict_noise(const ad::Var<T>& h_t, int t, const ad::Var<T>& esem, bool training, ad::Rng& rng) const {
    return unet_(h_t, t, esem, training, rng);
  }

  ForecastOutput<T> forecast(const ad::Var<T>& F) const {
    if (!has_forecaster()) throw BadConfig("model " + cfg_.model_name() + " has no forecaster");
    return forecaster_(F);
  }

  /// Eval-mode semantic embedding of a scaled (9, N) window. For a VAE this
  /// is the posterior mean.
  ad::Tensor<T> embed(const ad::Tensor<T>& h0) const {
    ad::NoGradGuard ng;
    auto x = ad::Var<T>::constant(h0);
    if (is_vae()) return vae_.encode(x).first.value();
    return encode_semantic(x, false, eval_rng_).esem.value();
  }

  /// Eval-mode noise estimator conditioned on a fixed embedding.
  NoiseFn<T> noise_fn(const ad::Tensor<T>& esem) const {
    auto e = ad::Var<T>::constant(esem);
    return [this, e](const ad::Tensor<T>& h, int t) {
      ad::NoGradGuard ng;
      return unet_(ad::Var<T>::constant(h), t, e, false, eval_rng_).value();
    };
  }

  const SemanticEncoder<T>& graph_encoder() const { return graph_; }
  const NoisePredictor<T>& unet() const { return unet_; }
  Forecaster<T>& forecaster() { return forecaster_; }
  const Vae<T>& vae() const { return vae_; }

 private:
  ModelConfig cfg_;
  ad::ParamSet<T> params_;
  SemanticEncoder<T> graph_;
  SequenceEncoder<T> seq_;
  ad::Linear<T> seq_head_;
  NoisePredictor<T> unet_;
  Forecaster<T> forecaster_;
  Vae<T> vae_;
  mutable ad::Rng eval_rng_{0};  // never drawn from: dropout is inactive in eval mode
};

}  // namespace hhae
