#pragma once

// Linear softmax probes on frozen embeddings.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hhae/ad/nn.hpp"
#include "hhae/analysis.hpp"

namespace hhae {

struct ProbeConfig {
  double learning_rate = 1e-5;
  std::size_t batch_size = 64;
  std::size_t epochs = 60;
  std::uint64_t seed = 0;
  bool standardize = false;  // z-score features with training-set statistics
};

struct LinearProbe {
  std::vector<std::string> class_names;
  std::vector<double> weights;  // (n_classes, dim), row-major
  std::vector<double> bias;     // n_classes
  std::vector<double> mean, scale;  // feature standardization; empty when unused
  std::size_t dim = 0;

  std::size_t n_classes() const { return class_names.size(); }

  std::vector<double> logits(const Embedding& e) const {
    if (e.size() != dim) throw ShapeMismatch("probe input size " + std::to_string(e.size()));
    std::vector<double> z(bias);
    for (std::size_t c = 0; c < n_classes(); ++c)
      for (std::size_t k = 0; k < dim; ++k) {
        const double x = mean.empty() ? e[k] : (e[k] - mean[k]) / scale[k];
        z[c] += weights[c * dim + k] * x;
      }
    return z;
  }

  std::size_t predict(const Embedding& e) const {
    const auto z = logits(e);
    return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
  }

  std::size_t class_index(const std::string& name) const {
    auto it = std::find(class_names.begin(), class_names.end(), name);
    if (it == class_names.end()) throw UnknownClass("unknown class " + name);
    return static_cast<std::size_t>(it - class_names.begin());
  }
};

/// Cross-entropy training with Adam on mini-batches shuffled by `cfg.seed`.
/// Class names are sorted; weights start uniform in +-1/sqrt(dim).
inline LinearProbe fit_probe(const std::vector<Embedding>& x, const std::vector<std::string>& labels,
                             const ProbeConfig& cfg = {}) {
  if (x.size() != labels.size()) throw LengthMismatch("fit_probe: labels vs embeddings");
  if (x.empty()) throw EmptyDataset("fit_probe: no embeddings");
  detail::check_embeddings(x);
  LinearProbe p;
  p.class_names = labels;
  std::sort(p.class_names.begin(), p.class_names.end());
  p.class_names.erase(std::unique(p.class_names.begin(), p.class_names.end()), p.class_names.end());
  if (p.class_names.size() < 2) throw SingleClass("fit_probe needs at least two classes");
  const std::size_t C = p.n_classes(), D = x.front().size(), n = x.size();
  p.dim = D;
  std::vector<std::size_t> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = p.class_index(labels[i]);

  std::vector<Embedding> feats = x;
  if (cfg.standardize) {
    p.mean.assign(D, 0.0);
    p.scale.assign(D, 0.0);
    for (const auto& e : x)
      for (std::size_t k = 0; k < D; ++k) p.mean[k] += e[k] / static_cast<double>(n);
    for (const auto& e : x)
      for (std::size_t k = 0; k < D; ++k) p.scale[k] += (e[k] - p.mean[k]) * (e[k] - p.mean[k]) / static_cast<double>(n);
    for (auto& s : p.scale) s = s > 0 ? std::sqrt(s) : 1.0;
    for (auto& e : feats)
      for (std::size_t k = 0; k < D; ++k) e[k] = (e[k] - p.mean[k]) / p.scale[k];
  }

  ad::Rng rng(cfg.seed);
  ad::ParamSet<double> ps;
  auto W = ps.add("weight", ad::uniform_init<double>({C, D}, D, rng));
  auto b = ps.add("bias", ad::uniform_init<double>({C}, D, rng));
  ad::Adam<double> opt(ps, {cfg.learning_rate, 0.9, 0.999, 1e-8});
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> z(C);
  for (std::size_t ep = 0; ep < cfg.epochs; ++ep) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < n; s += cfg.batch_size) {
      const std::size_t e = std::min(n, s + cfg.batch_size);
      ps.zero_grad();
      auto gw = W.grad();
      auto gb = b.grad();
      const auto& w = W.value().data;
      const auto& bv = b.value().data;
      for (std::size_t i = s; i < e; ++i) {
        const auto& f = feats[order[i]];
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < C; ++c) {
          z[c] = bv[c];
          for (std::size_t k = 0; k < D; ++k) z[c] += w[c * D + k] * f[k];
          mx = std::max(mx, z[c]);
        }
        double den = 0;
        for (auto& v : z) den += (v = std::exp(v - mx));
        // d(CE)/dz = softmax - onehot
        for (std::size_t c = 0; c < C; ++c) {
          const double g = z[c] / den - (c == y[order[i]] ? 1.0 : 0.0);
          gb[c] += g;
          for (std::size_t k = 0; k < D; ++k) gw[c * D + k] += g * f[k];
        }
      }
      opt.step(1.0 / static_cast<double>(e - s));
    }
  }
  p.weights = W.value().data;
  p.bias = b.value().data;
  return p;
}

/// Mean cross-entropy of the probe on a labelled set.
inline double probe_loss(const LinearProbe& p, const std::vector<Embedding>& x, const std::vector<std::string>& labels) {
  double acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto z = p.logits(x[i]);
    const double mx = *std::max_element(z.begin(), z.end());
    double den = 0;
    for (double v : z) den += std::exp(v - mx);
    acc += -(z[p.class_index(labels[i])] - mx - std::log(den));
  }
  return acc / static_cast<double>(x.size());
}

struct ProbeReport {
  double accuracy = 0;
  std::vector<std::string> classes;
  std::vector<double> per_class;                 // NaN for classes absent from the set
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

inline ProbeReport probe_report(const LinearProbe& p, const std::vector<Embedding>& x,
                                const std::vector<std::string>& labels) {
  if (x.size() != labels.size()) throw LengthMismatch("probe: labels vs embeddings");
  if (x.empty()) throw EmptyInput("probe: no embeddings");
  const std::size_t C = p.n_classes();
  ProbeReport r;
  r.classes = p.class_names;
  r.confusion.assign(C, std::vector<std::size_t>(C, 0));
  for (std::size_t i = 0; i < x.size(); ++i) ++r.confusion[p.class_index(labels[i])][p.predict(x[i])];
  std::size_t correct = 0;
  for (std::size_t c = 0; c < C; ++c) {
    const auto row = std::accumulate(r.confusion[c].begin(), r.confusion[c].end(), std::size_t{0});
    correct += r.confusion[c][c];
    r.per_class.push_back(row ? static_cast<double>(r.confusion[c][c]) / static_cast<double>(row)
                              : std::numeric_limits<double>::quiet_NaN());
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(x.size());
  return r;
}

/// Share of samples whose argmax prediction matches the label.
inline double probe_accuracy(const LinearProbe& p, const std::vector<Embedding>& x,
                             const std::vector<std::string>& labels) {
  return probe_report(p, x, labels).accuracy;
}

inline nlohmann::json to_json_report(const ProbeReport& r) {
  nlohmann::json per = nlohmann::json::object();
  for (std::size_t c = 0; c < r.classes.size(); ++c)
    per[r.classes[c]] = std::isnan(r.per_class[c]) ? nlohmann::json(nullptr) : nlohmann::json(r.per_class[c]);
  return {{"accuracy", r.accuracy},
          {"chance", 1.0 / static_cast<double>(r.classes.size())},
          {"classes", r.classes},
          {"per_class_accuracy", per},
          {"confusion_matrix", r.confusion}};
}

}  // namespace hhae
