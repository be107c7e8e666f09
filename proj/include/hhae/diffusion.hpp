#pragma once

// Noise schedule, forward noising and deterministic DDIM stepping.
//
// alpha_bar(t) = prod_{i<=t} (1 - beta_i), alpha_bar(0) = 1. One DDIM step
// between grid points a -> b with noise estimate e:
//
//   H_b = sqrt(alpha_bar(b)) * (H_a - sqrt(1 - alpha_bar(a)) e) / sqrt(alpha_bar(a))
//       + sqrt(1 - alpha_bar(b)) e
//
// Descending steps denoise, ascending steps encode. For a fixed e the two are
// exact inverses.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hhae/ad/tensor.hpp"
#include "hhae/errors.hpp"

namespace hhae {

struct DiffusionSchedule {
  int t_train = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int t_infer = 100;
  std::vector<double> betas;      // betas[i - 1] = beta_i, i = 1..t_train
  std::vector<double> alpha_bar;  // alpha_bar[t], t = 0..t_train
  std::vector<int> infer_steps;   // ascending, last == t_train

  double alpha(int t) const {
    if (t < 0 || t > t_train) throw OutOfRange("time step " + std::to_string(t) + " outside schedule");
    return alpha_bar[static_cast<std::size_t>(t)];
  }

  /// Ascending grid including 0: {0} U infer_steps.
  std::vector<int> grid() const {
    std::vector<int> g{0};
    g.insert(g.end(), infer_steps.begin(), infer_steps.end());
    return g;
  }

  bool on_grid(int t) const {
    if (t == 0) return true;
    return std::binary_search(infer_steps.begin(), infer_steps.end(), t);
  }
};

/// Linear betas from beta_start to beta_end; inference grid {k * t_train / t_infer}.
inline DiffusionSchedule make_schedule(int t_train = 1000, double beta_start = 1e-4, double beta_end = 0.02,
                                       int t_infer = 100) {
  if (t_train < 1 || t_infer < 1 || t_train % t_infer != 0) throw BadConfig("t_infer must divide t_train");
  if (!(beta_start > 0 && beta_start <= beta_end && beta_end < 1)) throw BadConfig("need 0 < beta_start <= beta_end < 1");
  DiffusionSchedule s;
  s.t_train = t_train;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.t_infer = t_infer;
  s.betas.resize(static_cast<std::size_t>(t_train));
  s.alpha_bar.resize(static_cast<std::size_t>(t_train) + 1);
  s.alpha_bar[0] = 1.0;
  for (int i = 1; i <= t_train; ++i) {
    const double frac = t_train == 1 ? 0.0 : static_cast<double>(i - 1) / static_cast<double>(t_train - 1);
    const double b = beta_start + (beta_end - beta_start) * frac;
    s.betas[static_cast<std::size_t>(i - 1)] = b;
    s.alpha_bar[static_cast<std::size_t>(i)] = s.alpha_bar[static_cast<std::size_t>(i - 1)] * (1.0 - b);
  }
  const int stride = t_train / t_infer;
  for (int k = 1; k <= t_infer; ++k) s.infer_steps.push_back(k * stride);
  return s;
}

template <class Json>
void to_json(Json& j, const DiffusionSchedule& s) {
  j = Json{
      {"t_train", s.t_train}, {"beta_start", s.beta_start}, {"beta_end", s.beta_end}, {"t_infer", s.t_infer}};
}

inline DiffusionSchedule schedule_from_json(const nlohmann::json& j) {
  return make_schedule(j.at("t_train").get<int>(), j.at("beta_start").get<double>(), j.at("beta_end").get<double>(),
                       j.at("t_infer").get<int>());
}

/// H_t = sqrt(alpha_bar(t)) H_0 + sqrt(1 - alpha_bar(t)) eps, 1 <= t <= t_train.
template <class T>
ad::Tensor<T> forward_noise(const ad::Tensor<T>& h0, int t, const ad::Tensor<T>& eps, const DiffusionSchedule& s) {
  if (t < 1 || t > s.t_train) throw OutOfRange("forward_noise: t = " + std::to_string(t));
  if (h0.shape != eps.shape) throw ShapeMismatch("forward_noise: noise shape");
  const double a = s.alpha(t);
  const double ca = std::sqrt(a), cn = std::sqrt(1.0 - a);
  ad::Tensor<T> out(h0.shape);
  for (std::size_t i = 0; i < h0.size(); ++i)
    out.data[i] = static_cast<T>(ca * static_cast<double>(h0.data[i]) + cn * static_cast<double>(eps.data[i]));
  return out;
}

template <class T>
ad::Tensor<T> ddim_step(const ad::Tensor<T>& h, int t_from, int t_to, const ad::Tensor<T>& eps_hat,
                        const DiffusionSchedule& s) {
  if (t_from == t_to) throw OutOfRange("ddim_step: t_from == t_to");
  if (!s.on_grid(t_from) || !s.on_grid(t_to))
    throw OutOfRange("ddim_step: " + std::to_string(t_from) + " -> " + std::to_string(t_to) + " not on the grid");
  if (h.shape != eps_hat.shape) throw ShapeMismatch("ddim_step: noise estimate shape");
  const double af = s.alpha(t_from), at = s.alpha(t_to);
  const double sf = std::sqrt(1.0 - af), rf = std::sqrt(af), rt = std::sqrt(at), st = std::sqrt(1.0 - at);
  ad::Tensor<T> out(h.shape);
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double e = static_cast<double>(eps_hat.data[i]);
    const double x0 = (static_cast<double>(h.data[i]) - sf * e) / rf;
    out.data[i] = static_cast<T>(rt * x0 + st * e);
  }
  return out;
}

/// Noise estimator signature used by the DDIM loops: (H_t, t) -> eps_hat.
template <class T>
using NoiseFn = std::function<ad::Tensor<T>(const ad::Tensor<T>&, int)>;

/// Denoise from t_train down to 0 over the inference grid.
template <class T>
ad::Tensor<T> decode(ad::Tensor<T> h, const NoiseFn<T>& eps, const DiffusionSchedule& s) {
  const auto g = s.grid();
  for (std::size_t k = g.size() - 1; k > 0; --k) h = ddim_step(h, g[k], g[k - 1], eps(h, g[k]), s);
  return h;
}

/// Run the deterministic process backward from 0 up to t_train; the noise
/// estimate of each step is taken at its source (lower) grid point.
template <class T>
ad::Tensor<T> encode_stochastic(ad::Tensor<T> h, const NoiseFn<T>& eps, const DiffusionSchedule& s) {
  const auto g = s.grid();
  for (std::size_t k = 0; k + 1 < g.size(); ++k) h = ddim_step(h, g[k], g[k + 1], eps(h, g[k]), s);
  return h;
}

}  // namespace hhae
