#pragma once

// Auxiliary forecasting heads mapping encoder features F (C, 3, N/4) to the
// next dn frames. The hand branch reads both hand joints (2C channels), the
// head branch the head joint (C channels). Each branch is
// conv(k3) -> LN -> Tanh -> conv(k1) -> Tanh -> adaptive avg-pool to dn.

#include <string>

#include "hhae/ad/nn.hpp"
#include "hhae/model_config.hpp"
#include "hhae/semantic_encoder.hpp"

namespace hhae {

template <class T>
struct ForecastOutput {
  ad::Var<T> hands;    // (6, dn)
  ad::Var<T> head;     // (3, dn), unit columns
  ad::Var<T> stacked;  // (9, dn) in window row layout
  bool degenerate = false;  // a head column was too short to normalize
};

inline const std::vector<double>& default_head_direction() {
  static const std::vector<double> d{0.0, 0.0, 1.0};
  return d;
}

template <class T>
class Forecaster {
 public:
  Forecaster() = default;
  Forecaster(ad::ParamSet<T>& ps, const ModelConfig& cfg, ad::Rng& rng) : cfg_(cfg) {
    const std::size_t C = cfg.enc_channels;
    hand1_ = ad::Conv1d<T>(ps, "hand.conv1", 2 * C, 2 * C, 3, rng);
    hand_ln_ = ad::LayerNorm<T>(ps, "hand.ln", 2 * C);
    hand2_ = ad::Conv1d<T>(ps, "hand.conv2", 2 * C, 6, 1, rng);
    head1_ = ad::Conv1d<T>(ps, "head.conv1", C, C, 3, rng);
    head_ln_ = ad::LayerNorm<T>(ps, "head.ln", C);
    head2_ = ad::Conv1d<T>(ps, "head.conv2", C, 3, 1, rng);
  }

  ForecastOutput<T> operator()(const ad::Var<T>& F) const {
    const std::size_t C = cfg_.enc_channels;
    if (F.shape().size() != 3 || F.dim(0) != C || F.dim(1) != kJoints)
      throw ShapeMismatch("forecast: expected (" + std::to_string(C) + ", 3, L), got " + ad::shape_str(F.shape()));
    const std::size_t L = F.dim(2);
    auto flat = ad::reshape(ad::permute01(F), {kJoints * C, L});  // joint-major rows
    auto hand_in = ad::slice0(flat, C, 3 * C);
    auto head_in = ad::slice0(flat, 0, C);

    ForecastOutput<T> out;
    auto h = ad::tanh(hand_ln_(hand1_(hand_in)));
    out.hands = ad::adaptive_avg_pool(ad::tanh(hand2_(h)), cfg_.dn);
    auto e = ad::tanh(head_ln_(head1_(head_in)));
    auto raw = ad::adaptive_avg_pool(ad::tanh(head2_(e)), cfg_.dn);
    std::vector<T> fallback(default_head_direction().begin(), default_head_direction().end());
    out.head = ad::normalize_columns(raw, T(1e-8), fallback, &out.degenerate);
    out.stacked = ad::concat0(std::vector<ad::Var<T>>{out.hands, out.head});
    return out;
  }

  ad::Conv1d<T>& hand_output() { return hand2_; }
  ad::Conv1d<T>& head_output() { return head2_; }

 private:
  ModelConfig cfg_;
  ad::Conv1d<T> hand1_, hand2_, head1_, head2_;
  ad::LayerNorm<T> hand_ln_, head_ln_;
};

}  // namespace hhae
