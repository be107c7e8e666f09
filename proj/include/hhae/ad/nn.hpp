#pragma once

// Parameter registry, initializers, standard layers and the Adam optimizer.

#include <cmath>
#include <random>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hhae/ad/ops.hpp"

namespace hhae::ad {

using Rng = std::mt19937_64;

/// Ordered, uniquely named set of learnable tensors.
template <class T>
class ParamSet {
 public:
  Var<T> add(const std::string& name, Tensor<T> init) {
    if (!names_.insert(name).second) throw BadConfig("duplicate parameter name " + name);
    items_.emplace_back(name, Var<T>::parameter(std::move(init)));
    return items_.back().second;
  }

  std::size_t size() const { return items_.size(); }
  const std::vector<std::pair<std::string, Var<T>>>& items() const { return items_; }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& [_, v] : items_) n += v.size();
    return n;
  }

  void zero_grad() const {
    for (const auto& [_, v] : items_) v.zero_grad();
  }

  /// Appends all of `other`'s entries under `prefix`.
  void merge(const std::string& prefix, const ParamSet& other) {
    for (const auto& [n, v] : other.items_) {
      if (!names_.insert(prefix + n).second) throw BadConfig("duplicate parameter name " + prefix + n);
      items_.emplace_back(prefix + n, v);
    }
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> items_;
  std::unordered_set<std::string> names_;
};

template <class T>
Tensor<T> uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(u(rng));
  return t;
}

/// Identity plus 0.01-scaled Gaussian noise.
template <class T>
Tensor<T> near_identity_init(std::size_t n, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Tensor<T> t({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) t.at(i, j) = static_cast<T>((i == j ? 1.0 : 0.0) + 0.01 * g(rng));
  return t;
}

template <class T>
struct Linear {
  Var<T> weight, bias;

  Linear() = default;
  Linear(ParamSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng)
      : weight(ps.add(name + ".weight", uniform_init<T>({out, in}, in, rng))),
        bias(ps.add(name + ".bias", uniform_init<T>({out}, in, rng))) {}

  Var<T> operator()(const Var<T>& x) const { return linear(x, weight, bias); }
};

/// "Same"-padded stride-1 convolution for odd kernels.
template <class T>
struct Conv1d {
  Var<T> weight, bias;
  std::size_t pad = 0;

  Conv1d() = default;
  Conv1d(ParamSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, std::size_t k, Rng& rng)
      : weight(ps.add(name + ".weight", uniform_init<T>({out, in, k}, in * k, rng))),
        bias(ps.add(name + ".bias", uniform_init<T>({out}, in * k, rng))),
        pad(k / 2) {}

  Var<T> operator()(const Var<T>& x) const { return conv1d(x, weight, bias, pad); }
};

template <class T>
struct ConvTranspose1d {
  Var<T> weight, bias;

  ConvTranspose1d() = default;
  ConvTranspose1d(ParamSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, std::size_t k, Rng& rng)
      : weight(ps.add(name + ".weight", uniform_init<T>({in, out, k}, out * k, rng))),
        bias(ps.add(name + ".bias", uniform_init<T>({out}, out * k, rng))) {}

  Var<T> operator()(const Var<T>& x) const { return conv_transpose1d(x, weight, bias); }
};

template <class T>
struct GroupNorm {
  Var<T> gamma, beta;
  std::size_t groups = 1;

  GroupNorm() = default;
  GroupNorm(ParamSet<T>& ps, const std::string& name, std::size_t channels, std::size_t g)
      : gamma(ps.add(name + ".gamma", Tensor<T>({channels}, T(1)))),
        beta(ps.add(name + ".beta", Tensor<T>({channels}, T(0)))),
        groups(g) {
    if (g == 0 || channels % g != 0) throw BadConfig("group count must divide channel count");
  }

  Var<T> operator()(const Var<T>& x) const { return group_norm(x, gamma, beta, groups); }
};

/// Layer norm over the channel (leading) axis.
template <class T>
struct LayerNorm {
  Var<T> gamma, beta;

  LayerNorm() = default;
  LayerNorm(ParamSet<T>& ps, const std::string& name, std::size_t channels)
      : gamma(ps.add(name + ".gamma", Tensor<T>({channels}, T(1)))),
        beta(ps.add(name + ".beta", Tensor<T>({channels}, T(0)))) {}

  Var<T> operator()(const Var<T>& x) const { return layer_norm(x, gamma, beta); }
};

/// Single-layer LSTM over a (input, length) sequence; returns (hidden, length).
/// Gate order: input, forget, cell, output.
template <class T>
struct LSTM {
  Var<T> w_ih, w_hh, bias;
  std::size_t hidden = 0;

  LSTM() = default;
  LSTM(ParamSet<T>& ps, const std::string& name, std::size_t in, std::size_t h, Rng& rng)
      : w_ih(ps.add(name + ".w_ih", uniform_init<T>({4 * h, in}, h, rng))),
        w_hh(ps.add(name + ".w_hh", uniform_init<T>({4 * h, h}, h, rng))),
        bias(ps.add(name + ".bias", uniform_init<T>({4 * h}, h, rng))),
        hidden(h) {}

  Var<T> operator()(const Var<T>& x) const {
    const std::size_t H = hidden, L = x.dim(1);
    Var<T> h = Var<T>::constant(Tensor<T>({H}));
    Var<T> c = Var<T>::constant(Tensor<T>({H}));
    std::vector<Var<T>> outs;
    outs.reserve(L);
    for (std::size_t t = 0; t < L; ++t) {
      auto gates = add(linear(column(x, t), w_ih, bias), linear(h, w_hh, Var<T>()));
      auto i = sigmoid(slice0(gates, 0, H));
      auto f = sigmoid(slice0(gates, H, 2 * H));
      auto g = tanh(slice0(gates, 2 * H, 3 * H));
      auto o = sigmoid(slice0(gates, 3 * H, 4 * H));
      c = add(mul(f, c), mul(i, g));
      h = mul(o, tanh(c));
      outs.push_back(h);
    }
    return stack_columns(outs);
  }
};

/// Single-layer GRU over a (input, length) sequence; returns (hidden, length).
template <class T>
struct GRU {
  Var<T> w_ih, w_hh, b_ih, b_hh;
  std::size_t hidden = 0;

  GRU() = default;
  GRU(ParamSet<T>& ps, const std::string& name, std::size_t in, std::size_t h, Rng& rng)
      : w_ih(ps.add(name + ".w_ih", uniform_init<T>({3 * h, in}, h, rng))),
        w_hh(ps.add(name + ".w_hh", uniform_init<T>({3 * h, h}, h, rng))),
        b_ih(ps.add(name + ".b_ih", uniform_init<T>({3 * h}, h, rng))),
        b_hh(ps.add(name + ".b_hh", uniform_init<T>({3 * h}, h, rng))),
        hidden(h) {}

  Var<T> operator()(const Var<T>& x) const {
    const std::size_t H = hidden, L = x.dim(1);
    Var<T> h = Var<T>::constant(Tensor<T>({H}));
    std::vector<Var<T>> outs;
    outs.reserve(L);
    for (std::size_t t = 0; t < L; ++t) {
      auto gi = linear(column(x, t), w_ih, b_ih);
      auto gh = linear(h, w_hh, b_hh);
      auto r = sigmoid(add(slice0(gi, 0, H), slice0(gh, 0, H)));
      auto z = sigmoid(add(slice0(gi, H, 2 * H), slice0(gh, H, 2 * H)));
      auto n = tanh(add(slice0(gi, 2 * H, 3 * H), mul(r, slice0(gh, 2 * H, 3 * H))));
      h = add(mul(add_const(scale(z, T(-1)), T(1)), n), mul(z, h));
      outs.push_back(h);
    }
    return stack_columns(outs);
  }
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over every tensor of a ParamSet. Moments are kept in double.
template <class T>
class Adam {
 public:
  Adam(const ParamSet<T>& params, AdamConfig cfg) : params_(&params), cfg_(cfg) {
    for (const auto& [_, v] : params) {
      m_.emplace_back(v.size(), 0.0);
      v_.emplace_back(v.size(), 0.0);
    }
  }

  /// One update using the accumulated gradients multiplied by `grad_scale`.
  /// With `clip_norm > 0` the scaled gradient is rescaled to at most that global norm.
  void step(double grad_scale = 1.0, double clip_norm = 0.0) {
    ++t_;
    if (clip_norm > 0.0) {
      double n2 = 0;
      for (const auto& [_, p] : *params_)
        for (T g : p.grad()) n2 += (g * grad_scale) * (g * grad_scale);
      const double n = std::sqrt(n2);
      if (n > clip_norm) grad_scale *= clip_norm / n;
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::size_t k = 0;
    for (const auto& [_, p] : *params_) {
      auto g = p.grad();
      auto& w = p.mutable_value().data;
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = static_cast<double>(g[i]) * grad_scale;
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double upd = cfg_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
        w[i] = static_cast<T>(static_cast<double>(w[i]) - upd);
      }
      ++k;
    }
  }

  void set_lr(double lr) { cfg_.lr = lr; }
  long steps() const { return t_; }

 private:
  const ParamSet<T>* params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace hhae::ad
