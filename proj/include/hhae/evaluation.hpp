#pragma once

// Reconstruction metrics, CDF export, the paired Wilcoxon signed-rank test
// and whole-dataset evaluation reports.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hhae/diffusion.hpp"
#include "hhae/model.hpp"
#include "hhae/signals.hpp"
#include "hhae/trainer.hpp"

namespace hhae {

/// Mean over frames of the average left/right hand Euclidean error, in cm.
inline double mpjpe(const HandHeadSequence& pred, const HandHeadSequence& gt) {
  if (pred.size() != gt.size()) throw LengthMismatch("mpjpe: " + std::to_string(pred.size()) + " vs " + std::to_string(gt.size()));
  if (gt.size() == 0) return 0.0;
  double acc = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const auto& p = pred.frames[i].ha;
    const auto& g = gt.frames[i].ha;
    double l = 0, r = 0;
    for (int k = 0; k < 3; ++k) {
      l += (p[k] - g[k]) * (p[k] - g[k]);
      r += (p[3 + k] - g[3 + k]) * (p[3 + k] - g[3 + k]);
    }
    acc += 0.5 * (std::sqrt(l) + std::sqrt(r));
  }
  return 100.0 * acc / static_cast<double>(gt.size());
}

/// Angle between two directions in degrees; both are normalized first.
inline double angle_deg(const Vec3& a, const Vec3& b) {
  const double na = norm(a), nb = norm(b);
  if (na <= 1e-12 || nb <= 1e-12) throw DegenerateDirection("angular_error: zero direction");
  double d = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (na * nb);
  d = std::clamp(d, -1.0, 1.0);
  return std::acos(d) * 180.0 / std::numbers::pi;
}

/// Mean over frames of the head-direction angle, in degrees.
inline double angular_error(const HandHeadSequence& pred, const HandHeadSequence& gt) {
  if (pred.size() != gt.size())
    throw LengthMismatch("angular_error: " + std::to_string(pred.size()) + " vs " + std::to_string(gt.size()));
  if (gt.size() == 0) return 0.0;
  double acc = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) acc += angle_deg(pred.frames[i].he, gt.frames[i].he);
  return acc / static_cast<double>(gt.size());
}

struct CdfPoint {
  double threshold = 0;
  double fraction = 0;
};

/// `n_points` thresholds evenly spaced over [0, max(errors)]; a point counts
/// the errors <= threshold.
inline std::vector<CdfPoint> cdf(const std::vector<double>& errors, std::size_t n_points) {
  if (errors.empty()) throw EmptyInput("cdf of no errors");
  if (n_points < 2) throw BadConfig("cdf needs at least 2 points");
  std::vector<double> sorted = errors;
  std::sort(sorted.begin(), sorted.end());
  const double mx = sorted.back();
  std::vector<CdfPoint> out;
  out.reserve(n_points);
  for (std::size_t i = 0; i < n_points; ++i) {
    const double th = i + 1 == n_points ? mx : mx * static_cast<double>(i) / static_cast<double>(n_points - 1);
    const auto cnt = std::upper_bound(sorted.begin(), sorted.end(), th) - sorted.begin();
    out.push_back({th, static_cast<double>(cnt) / static_cast<double>(sorted.size())});
  }
  return out;
}

/// Fraction of errors <= threshold.
inline double cdf_at(const std::vector<double>& errors, double threshold) {
  if (errors.empty()) throw EmptyInput("cdf of no errors");
  const auto cnt = std::count_if(errors.begin(), errors.end(), [&](double e) { return e <= threshold; });
  return static_cast<double>(cnt) / static_cast<double>(errors.size());
}

inline void write_cdf_csv(const std::vector<CdfPoint>& pts, const std::string& path) {
  std::ofstream f(path);
  f.precision(17);
  f << "threshold,fraction\n";
  for (const auto& p : pts) f << p.threshold << ',' << p.fraction << '\n';
  if (!f) throw Error("cannot write " + path);
}

struct WilcoxonResult {
  double p_value = 1.0;
  double w_plus = 0, w_minus = 0;  // rank sums of positive / negative differences
  std::size_t n = 0;               // pairs after dropping zero differences
  bool exact = false;
};

/// Two-sided paired signed-rank test on a - b. Zero differences are dropped
/// and tied magnitudes get averaged ranks. For n <= 20 the p-value comes from
/// the exact permutation distribution of the (tie-averaged) rank sum; above
/// that from the normal approximation with tie and continuity corrections.
inline WilcoxonResult wilcoxon_paired(const std::vector<double>& a, const std::vector<double>& b,
                                      std::size_t min_pairs = 5) {
  if (a.size() != b.size()) throw LengthMismatch("wilcoxon: unequal sample sizes");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] - b[i] != 0.0) d.push_back(a[i] - b[i]);
  const std::size_t n = d.size();
  if (n < std::max<std::size_t>(min_pairs, 1))
    throw TooFewPairs("wilcoxon: " + std::to_string(n) + " nonzero differences, need " + std::to_string(min_pairs));

  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return std::abs(d[x]) < std::abs(d[y]); });
  // Doubled ranks stay integral under tie averaging.
  std::vector<long> rank2(n);
  double tie_term = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(d[idx[j + 1]]) == std::abs(d[idx[i]])) ++j;
    const long r2 = static_cast<long>(i + j + 2);  // 2 * mean of ranks i+1..j+1
    for (std::size_t k = i; k <= j; ++k) rank2[idx[k]] = r2;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  WilcoxonResult res;
  res.n = n;
  long wp2 = 0, total2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total2 += rank2[i];
    if (d[i] > 0) wp2 += rank2[i];
  }
  res.w_plus = wp2 / 2.0;
  res.w_minus = (total2 - wp2) / 2.0;

  if (n <= 20) {
    // counts[s] = number of sign assignments with doubled positive rank sum s.
    std::vector<double> counts(static_cast<std::size_t>(total2) + 1, 0.0);
    counts[0] = 1.0;
    long reach = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (long s = reach; s >= 0; --s)
        if (counts[static_cast<std::size_t>(s)] != 0.0) counts[static_cast<std::size_t>(s + rank2[i])] += counts[static_cast<std::size_t>(s)];
      reach += rank2[i];
    }
    const double all = std::ldexp(1.0, static_cast<int>(n));
    // Two-sided: assignments at least as far from the centre as observed.
    const long dev = std::abs(2 * wp2 - total2);
    double extreme = 0;
    for (long s = 0; s <= total2; ++s)
      if (std::abs(2 * s - total2) >= dev) extreme += counts[static_cast<std::size_t>(s)];
    res.p_value = std::min(1.0, extreme / all);
    res.exact = true;
    return res;
  }
  const double nn = static_cast<double>(n);
  const double mean = nn * (nn + 1) / 4.0;
  const double var = nn * (nn + 1) * (2 * nn + 1) / 24.0 - tie_term / 48.0;
  if (var <= 0) {
    res.p_value = 1.0;
    return res;
  }
  const double diff = std::abs(res.w_plus - mean);
  const double z = std::max(0.0, diff - 0.5) / std::sqrt(var);
  res.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return res;
}

struct SampleError {
  double mpjpe_cm = 0;
  double angular_deg = 0;
};

struct MetricSummary {
  double mean = 0, median = 0;
};

inline MetricSummary summarize(std::vector<double> v) {
  if (v.empty()) return {};
  MetricSummary s;
  for (double x : v) s.mean += x / static_cast<double>(v.size());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  s.median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  return s;
}

struct EvalReport {
  std::string model;
  std::string ablation = "none";  // none | esem | esto | both
  std::vector<SampleError> per_sample;
  MetricSummary mpjpe, angular;
  std::vector<CdfPoint> cdf_mpjpe, cdf_angular;

  std::vector<double> mpjpe_values() const {
    std::vector<double> v;
    for (const auto& s : per_sample) v.push_back(s.mpjpe_cm);
    return v;
  }
  std::vector<double> angular_values() const {
    std::vector<double> v;
    for (const auto& s : per_sample) v.push_back(s.angular_deg);
    return v;
  }
};

inline void to_json(nlohmann::json& j, const MetricSummary& s) { j = {{"mean", s.mean}, {"median", s.median}}; }
inline void from_json(const nlohmann::json& j, MetricSummary& s) {
  j.at("mean").get_to(s.mean);
  j.at("median").get_to(s.median);
}
inline void to_json(nlohmann::json& j, const SampleError& s) {
  j = {{"mpjpe_cm", s.mpjpe_cm}, {"angular_deg", s.angular_deg}};
}
inline void from_json(const nlohmann::json& j, SampleError& s) {
  j.at("mpjpe_cm").get_to(s.mpjpe_cm);
  j.at("angular_deg").get_to(s.angular_deg);
}
inline void to_json(nlohmann::json& j, const CdfPoint& p) { j = {p.threshold, p.fraction}; }
inline void from_json(const nlohmann::json& j, CdfPoint& p) {
  p.threshold = j.at(0).get<double>();
  p.fraction = j.at(1).get<double>();
}
inline void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"model", r.model},
       {"ablation", r.ablation},
       {"n_samples", r.per_sample.size()},
       {"aggregates", {{"mpjpe_cm", r.mpjpe}, {"angular_deg", r.angular}}},
       {"per_sample", r.per_sample},
       {"cdf", {{"mpjpe_cm", r.cdf_mpjpe}, {"angular_deg", r.cdf_angular}}}};
}
inline void from_json(const nlohmann::json& j, EvalReport& r) {
  j.at("model").get_to(r.model);
  j.at("ablation").get_to(r.ablation);
  j.at("per_sample").get_to(r.per_sample);
  j.at("aggregates").at("mpjpe_cm").get_to(r.mpjpe);
  j.at("aggregates").at("angular_deg").get_to(r.angular);
  j.at("cdf").at("mpjpe_cm").get_to(r.cdf_mpjpe);
  j.at("cdf").at("angular_deg").get_to(r.cdf_angular);
}

struct Ablation {
  bool esem = false;  // decode with a Gaussian semantic embedding
  bool esto = false;  // decode from Gaussian noise instead of the encoded H_T

  std::string name() const { return esem && esto ? "both" : esem ? "esem" : esto ? "esto" : "none"; }
};

/// Reconstruction of one scaled window with optional Gaussian replacement of
/// either embedding. The stochastic code is always obtained with the true
/// E_sem; the replacements affect decoding only.
template <class T>
ad::Tensor<T> reconstruct_ablated(const Model<T>& m, const ad::Tensor<T>& h0, const DiffusionSchedule& sched,
                                  const Ablation& ab, ad::Rng& rng) {
  if (!ab.esem && !ab.esto) return reconstruct(m, h0, sched);
  if (m.is_vae()) throw BadConfig("ablations apply to diffusion models only");
  std::normal_distribution<double> g(0.0, 1.0);
  const auto esem = m.embed(h0);
  ad::Tensor<T> h_T;
  if (ab.esto) {
    h_T = ad::Tensor<T>(h0.shape);
    for (auto& v : h_T.data) v = static_cast<T>(g(rng));
  } else {
    h_T = encode_stochastic(h0, m.noise_fn(esem), sched);
  }
  auto cond = esem;
  if (ab.esem)
    for (auto& v : cond.data) v = static_cast<T>(g(rng));
  auto out = decode(h_T, m.noise_fn(cond), sched);
  renormalize_head(out);
  return out;
}

/// Reconstructs every sample's input window and scores it. Ablation noise is
/// drawn from `seed` in sample order.
template <class T>
EvalReport evaluate_model(const std::vector<Sample>& data, const Model<T>& m, const DiffusionSchedule& sched,
                          const Ablation& ab = {}, std::uint64_t seed = 0, std::size_t cdf_points = 101) {
  if (data.empty()) throw EmptyDataset("no evaluation samples");
  EvalReport rep;
  rep.model = m.config().model_name();
  rep.ablation = ab.name();
  ad::Rng rng(seed);
  const double s = m.config().signal_scale;
  for (const auto& smp : data) {
    const auto out = reconstruct_ablated(m, to_tensor<T>(smp.input, s), sched, ab, rng);
    const auto pred = from_tensor(out, s, true, smp.input.fps);
    rep.per_sample.push_back({mpjpe(pred, smp.input), angular_error(pred, smp.input)});
  }
  rep.mpjpe = summarize(rep.mpjpe_values());
  rep.angular = summarize(rep.angular_values());
  rep.cdf_mpjpe = cdf(rep.mpjpe_values(), cdf_points);
  rep.cdf_angular = cdf(rep.angular_values(), cdf_points);
  return rep;
}

}  // namespace hhae
