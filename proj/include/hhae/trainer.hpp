#pragma once

// Loss assembly, the Adam training loop and the reconstruction pipeline.
//
// Per sample: E_sem, F = encoder(H_0); t ~ U{1..1000}; eps ~ N(0, I);
// H_t = forward_noise(H_0, t, eps);
//   L_noise    = |eps_hat - eps|^2 / N
//   L_forecast = |H_future_hat - H_future|^2 / dn
// and the batch loss is the mean of L_noise + w * L_forecast.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <vector>

#include "hhae/ad/nn.hpp"
#include "hhae/diffusion.hpp"
#include "hhae/model.hpp"
#include "hhae/signals.hpp"

namespace hhae {

struct TrainConfig {
  std::size_t epochs = 130;
  double learning_rate = 1e-4;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  double signal_scale = 1.0;
  std::size_t n = 40;
  std::size_t dn = 3;
  double forecast_weight = 1.0;
  double grad_clip = 0.0;     // 0 disables clipping
  bool cosine_lr = false;     // cosine decay to zero over all steps
  bool detach_esem = false;   // stop L_noise gradients at E_sem

  void validate() const {
    if (epochs == 0 || batch_size == 0 || !(learning_rate > 0) || !(signal_scale > 0) || n == 0)
      throw BadConfig("training epochs, batch size, learning rate, signal scale and N must be positive");
    if (forecast_weight < 0 || grad_clip < 0) throw BadConfig("negative forecast weight or clip norm");
  }
};

/// A window converted once to model units.
template <class T>
struct Prepared {
  ad::Tensor<T> h0;      // (9, N)
  ad::Tensor<T> future;  // (9, dn)
};

template <class T>
std::vector<Prepared<T>> prepare(const std::vector<Sample>& samples, double signal_scale) {
  std::vector<Prepared<T>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({to_tensor<T>(s.input, signal_scale), to_tensor<T>(s.future, signal_scale)});
  return out;
}

template <class T>
struct LossParts {
  ad::Var<T> total;
  double l_noise = 0, l_forecast = 0;
};

/// |a - b|^2 / denom.
template <class T>
ad::Var<T> scaled_sq_error(const ad::Var<T>& a, const ad::Var<T>& b, std::size_t denom) {
  return ad::scale(ad::sum_squares(ad::sub(a, b)), T(1) / static_cast<T>(denom));
}

/// Diffusion loss of one sample with explicit (t, eps).
template <class T>
LossParts<T> sample_loss(const Model<T>& m, const Prepared<T>& s, int t, const ad::Tensor<T>& eps,
                         const DiffusionSchedule& sched, ad::Rng& rng, const TrainConfig& cfg, bool training = true) {
  const std::size_t N = s.h0.dim(1);
  auto enc = m.encode_semantic(ad::Var<T>::constant(s.h0), training, rng);
  auto esem = cfg.detach_esem ? ad::detach(enc.esem) : enc.esem;
  auto h_t = ad::Var<T>::constant(forward_noise(s.h0, t, eps, sched));
  auto eps_hat = m.predict_noise(h_t, t, esem, training, rng);
  LossParts<T> out;
  auto ln = scaled_sq_error(eps_hat, ad::Var<T>::constant(eps), N);
  out.l_noise = static_cast<double>(ln.item());
  out.total = ln;
  if (m.has_forecaster() && s.future.size() > 0) {
    auto fc = m.forecast(enc.features);
    auto lf = scaled_sq_error(fc.stacked, ad::Var<T>::constant(s.future), s.future.dim(1));
    out.l_forecast = static_cast<double>(lf.item());
    out.total = ad::add(ln, ad::scale(lf, static_cast<T>(cfg.forecast_weight)));
  }
  return out;
}

/// Draws t then eps from `rng` and evaluates the sample loss; dropout masks
/// are drawn afterwards from the same generator. VAE models use their ELBO.
template <class T>
LossParts<T> compute_loss(const Model<T>& m, const Prepared<T>& s, const DiffusionSchedule& sched, ad::Rng& rng,
                          const TrainConfig& cfg) {
  if (m.is_vae()) {
    auto l = m.vae().loss(ad::Var<T>::constant(s.h0), rng);
    return {l.total, l.recon, l.kl};
  }
  std::uniform_int_distribution<int> ut(1, sched.t_train);
  const int t = ut(rng);
  std::normal_distribution<double> g(0.0, 1.0);
  ad::Tensor<T> eps(s.h0.shape);
  for (auto& v : eps.data) v = static_cast<T>(g(rng));
  return sample_loss(m, s, t, eps, sched, rng, cfg);
}

/// Mean loss over a batch, as a differentiable scalar.
template <class T>
LossParts<T> batch_loss(const Model<T>& m, const std::vector<Prepared<T>>& batch, const DiffusionSchedule& sched,
                        ad::Rng& rng, const TrainConfig& cfg) {
  if (batch.empty()) throw EmptyDataset("empty batch");
  std::vector<ad::Var<T>> totals;
  LossParts<T> out;
  for (const auto& s : batch) {
    auto l = compute_loss(m, s, sched, rng, cfg);
    totals.push_back(ad::reshape(l.total, {1}));
    out.l_noise += l.l_noise / static_cast<double>(batch.size());
    out.l_forecast += l.l_forecast / static_cast<double>(batch.size());
  }
  out.total = ad::mean(ad::concat0(totals));
  return out;
}

struct EpochStats {
  std::size_t epoch = 0;
  double total = 0, l_noise = 0, l_forecast = 0;
};

struct TrainLog {
  std::vector<EpochStats> epochs;
  std::vector<EpochStats> steps;  // `epoch` holds the global step index here
};

inline void write_log_header(std::ostream& csv) { csv << "epoch,step,total,l_noise,l_forecast\n"; }

/// Adam over all model parameters. Samples are visited in an order shuffled
/// by `cfg.seed`; gradients of each batch are accumulated sample by sample
/// (building one graph at a time) and averaged. Rows are appended to `csv`
/// (one per optimizer step) when given. `on_epoch` runs after every epoch.
template <class T>
TrainLog train_model(Model<T>& m, const std::vector<Prepared<T>>& data, const DiffusionSchedule& sched,
                     const TrainConfig& cfg, std::ostream* csv = nullptr,
                     const std::function<void(const EpochStats&)>& on_epoch = {}) {
  cfg.validate();
  if (data.empty()) throw EmptyDataset("no training samples");
  ad::Rng rng(cfg.seed);
  ad::Adam<T> opt(m.params(), {cfg.learning_rate, 0.9, 0.999, 1e-8});
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t steps_per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const double total_steps = static_cast<double>(steps_per_epoch * cfg.epochs);
  if (csv) write_log_header(*csv);
  TrainLog log;
  std::size_t step = 0;
  for (std::size_t ep = 1; ep <= cfg.epochs; ++ep) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochStats es{ep, 0, 0, 0};
    for (std::size_t b = 0; b < data.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(data.size(), b + cfg.batch_size);
      const double inv = 1.0 / static_cast<double>(e - b);
      m.params().zero_grad();
      EpochStats st{step + 1, 0, 0, 0};
      for (std::size_t i = b; i < e; ++i) {
        auto l = compute_loss(m, data[order[i]], sched, rng, cfg);
        ad::backward(l.total);
        st.total += static_cast<double>(l.total.item()) * inv;
        st.l_noise += l.l_noise * inv;
        st.l_forecast += l.l_forecast * inv;
      }
      if (cfg.cosine_lr)
        opt.set_lr(cfg.learning_rate * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) / total_steps)));
      opt.step(inv, cfg.grad_clip);
      ++step;
      const double w = static_cast<double>(e - b) / static_cast<double>(data.size());
      es.total += st.total * w;
      es.l_noise += st.l_noise * w;
      es.l_forecast += st.l_forecast * w;
      log.steps.push_back(st);
      if (csv) *csv << ep << ',' << step << ',' << st.total << ',' << st.l_noise << ',' << st.l_forecast << '\n';
    }
    log.epochs.push_back(es);
    if (on_epoch) on_epoch(es);
  }
  return log;
}

/// Head rows (6..8) of a (9, n) tensor scaled to unit columns.
template <class T>
void renormalize_head(ad::Tensor<T>& h) {
  const std::size_t n = h.dim(1);
  for (std::size_t c = 0; c < n; ++c) {
    double s = 0;
    for (std::size_t r = 6; r < 9; ++r) s += static_cast<double>(h.at(r, c)) * static_cast<double>(h.at(r, c));
    s = std::sqrt(s);
    if (s > 1e-12)
      for (std::size_t r = 6; r < 9; ++r) h.at(r, c) = static_cast<T>(static_cast<double>(h.at(r, c)) / s);
  }
}

/// encode_semantic -> encode_stochastic -> decode on a scaled window, head
/// columns re-normalized. VAE models reconstruct through the posterior mean.
template <class T>
ad::Tensor<T> reconstruct(const Model<T>& m, const ad::Tensor<T>& h0, const DiffusionSchedule& sched) {
  ad::Tensor<T> out;
  if (m.is_vae()) {
    out = m.vae().reconstruct(h0);
  } else {
    const auto esem = m.embed(h0);
    const auto fn = m.noise_fn(esem);
    out = decode(encode_stochastic(h0, fn, sched), fn, sched);
  }
  renormalize_head(out);
  return out;
}

/// Metre-valued convenience wrapper.
template <class T>
HandHeadSequence reconstruct(const Model<T>& m, const HandHeadSequence& seq, const DiffusionSchedule& sched) {
  const double s = m.config().signal_scale;
  return from_tensor(reconstruct(m, to_tensor<T>(seq, s), sched), s, true, seq.fps);
}

}  // namespace hhae
