#pragma once

// Clustering of semantic embeddings and generation from perturbed or random
// stochastic codes.
//
// cluster() is HDBSCAN with cosine distance: core distance to the k-th
// nearest neighbour (self included, k = min_cluster_size), mutual
// reachability, Prim MST, single-linkage hierarchy, condensation at
// min_cluster_size and excess-of-mass selection.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "hhae/diffusion.hpp"
#include "hhae/model.hpp"
#include "hhae/trainer.hpp"

namespace hhae {

using Embedding = std::vector<double>;

struct ClusterResult {
  std::vector<int> labels;  // -1 marks noise
  int n_clusters = 0;
  std::vector<std::size_t> sizes;
  std::vector<std::size_t> representatives;  // per cluster id
};

inline double cosine_distance(const Embedding& a, const Embedding& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0 || bb == 0) return aa == bb ? 0.0 : 1.0;
  return std::max(0.0, 1.0 - ab / std::sqrt(aa * bb));
}

inline double euclidean(const Embedding& a, const Embedding& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

namespace detail {

inline void check_embeddings(const std::vector<Embedding>& x) {
  for (const auto& e : x)
    if (e.size() != x.front().size()) throw ShapeMismatch("embeddings of different sizes");
}

struct CondensedCluster {
  int parent = -1;
  double lambda_birth = 0;
  double stability = 0;
  std::vector<int> children;
  std::size_t size = 0;
};

}  // namespace detail

/// Centroid of the members of cluster `id`.
inline Embedding centroid(const std::vector<Embedding>& x, const std::vector<int>& labels, int id) {
  Embedding c(x.front().size(), 0.0);
  std::size_t n = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (labels[i] == id) {
      for (std::size_t k = 0; k < c.size(); ++k) c[k] += x[i][k];
      ++n;
    }
  if (n == 0) throw UnknownCluster("cluster " + std::to_string(id) + " has no members");
  for (auto& v : c) v /= static_cast<double>(n);
  return c;
}

/// Member closest (Euclidean) to the cluster centroid; lowest index on ties.
inline std::size_t representative(const std::vector<Embedding>& x, const std::vector<int>& labels, int id) {
  if (x.size() != labels.size()) throw LengthMismatch("representative: labels vs embeddings");
  const auto c = centroid(x, labels, id);
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < x.size(); ++i)
    if (labels[i] == id) {
      const double d = euclidean(x[i], c);
      if (d < bd) {
        bd = d;
        best = i;
      }
    }
  return best;
}

inline ClusterResult cluster(const std::vector<Embedding>& x, std::size_t min_cluster_size = 15) {
  if (min_cluster_size < 2) throw BadConfig("min_cluster_size must be at least 2");
  const std::size_t n = x.size();
  if (n < min_cluster_size)
    throw TooFew(std::to_string(n) + " embeddings, min_cluster_size " + std::to_string(min_cluster_size));
  detail::check_embeddings(x);

  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) d[i * n + j] = d[j * n + i] = cosine_distance(x[i], x[j]);
  std::vector<double> core(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row(d.begin() + static_cast<std::ptrdiff_t>(i * n), d.begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
    std::nth_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(min_cluster_size - 1), row.end());
    core[i] = row[min_cluster_size - 1];
  }
  auto mreach = [&](std::size_t i, std::size_t j) { return std::max({core[i], core[j], d[i * n + j]}); };

  // Prim on the dense mutual-reachability graph.
  struct Edge {
    std::size_t a, b;
    double w;
  };
  std::vector<Edge> mst;
  std::vector<char> in_tree(n, 0);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> from(n, 0);
  std::size_t cur = 0;
  in_tree[0] = 1;
  for (std::size_t step = 1; step < n; ++step) {
    std::size_t next = n;
    double nw = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (in_tree[j]) continue;
      const double w = mreach(cur, j);
      if (w < best[j]) {
        best[j] = w;
        from[j] = cur;
      }
      if (best[j] < nw) {
        nw = best[j];
        next = j;
      }
    }
    mst.push_back({from[next], next, nw});
    in_tree[next] = 1;
    cur = next;
  }
  std::stable_sort(mst.begin(), mst.end(), [](const Edge& a, const Edge& b) { return a.w < b.w; });

  // Single-linkage tree: leaves 0..n-1, merge k creates node n + k.
  std::vector<std::size_t> uf(2 * n - 1), node_size(2 * n - 1, 1);
  std::iota(uf.begin(), uf.end(), 0);
  std::function<std::size_t(std::size_t)> find = [&](std::size_t v) {
    while (uf[v] != v) v = uf[v] = uf[uf[v]];
    return v;
  };
  std::vector<std::array<std::size_t, 2>> kids(n - 1);
  std::vector<double> merge_dist(n - 1);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const std::size_t ra = find(mst[k].a), rb = find(mst[k].b), node = n + k;
    kids[k] = {ra, rb};
    merge_dist[k] = mst[k].w;
    node_size[node] = node_size[ra] + node_size[rb];
    uf[ra] = uf[rb] = node;
  }
  constexpr double kMaxLambda = 1e300;  // lambda of zero-distance merges
  auto lambda_of = [&](double dist) { return dist > 1.0 / kMaxLambda ? 1.0 / dist : kMaxLambda; };

  // Condense: walk down from the root, tracking which condensed cluster each
  // hierarchy node belongs to.
  std::vector<detail::CondensedCluster> cl(1);
  cl[0].size = n;
  std::vector<int> point_cluster(n, 0);    // condensed cluster the point fell out of
  std::vector<double> point_lambda(n, 0);  // lambda at which it fell out
  std::vector<std::pair<std::size_t, int>> stack{{2 * n - 2, 0}};
  std::function<void(std::size_t, int, double)> drop_all = [&](std::size_t node, int c, double lam) {
    std::vector<std::size_t> st{node};
    while (!st.empty()) {
      auto v = st.back();
      st.pop_back();
      if (v < n) {
        point_cluster[v] = c;
        point_lambda[v] = lam;
      } else {
        st.push_back(kids[v - n][0]);
        st.push_back(kids[v - n][1]);
      }
    }
  };
  while (!stack.empty()) {
    auto [node, c] = stack.back();
    stack.pop_back();
    if (node < n) {
      point_cluster[node] = c;
      point_lambda[node] = cl[static_cast<std::size_t>(c)].lambda_birth;
      continue;
    }
    const double lam = lambda_of(merge_dist[node - n]);
    const auto [l, r] = kids[node - n];
    const bool lbig = node_size[l] >= min_cluster_size, rbig = node_size[r] >= min_cluster_size;
    if (lbig && rbig) {
      for (std::size_t child : {l, r}) {
        detail::CondensedCluster nc;
        nc.parent = c;
        nc.lambda_birth = lam;
        nc.size = node_size[child];
        cl.push_back(nc);
        const int id = static_cast<int>(cl.size() - 1);
        cl[static_cast<std::size_t>(c)].children.push_back(id);
        stack.emplace_back(child, id);
      }
    } else {
      for (std::size_t child : {l, r}) {
        if (node_size[child] >= min_cluster_size)
          stack.emplace_back(child, c);
        else
          drop_all(child, c, lam);
      }
    }
  }
  // Stability: sum over points of (lambda_leave - lambda_birth), where a point
  // leaves a cluster either by falling out or when a child cluster is born.
  for (std::size_t p = 0; p < n; ++p) {
    int c = point_cluster[p];
    double lam = point_lambda[p];
    while (c >= 0) {
      auto& cc = cl[static_cast<std::size_t>(c)];
      cc.stability += lam - cc.lambda_birth;
      lam = cc.lambda_birth;
      c = cc.parent;
    }
  }
  // Excess of mass, children before parents (ids grow with depth).
  std::vector<char> selected(cl.size(), 0);
  std::vector<double> score(cl.size(), 0);
  for (std::size_t i = cl.size(); i-- > 1;) {
    double child_sum = 0;
    for (int ch : cl[i].children) child_sum += score[static_cast<std::size_t>(ch)];
    if (cl[i].children.empty() || cl[i].stability >= child_sum) {
      selected[i] = 1;
      score[i] = cl[i].stability;
      std::vector<int> st(cl[i].children.begin(), cl[i].children.end());
      while (!st.empty()) {
        const int v = st.back();
        st.pop_back();
        selected[static_cast<std::size_t>(v)] = 0;
        for (int ch : cl[static_cast<std::size_t>(v)].children) st.push_back(ch);
      }
    } else {
      score[i] = child_sum;
    }
  }
  bool any_mass = false;
  for (std::size_t i = 1; i < cl.size(); ++i)
    if (selected[i] && cl[i].stability > 0) any_mass = true;
  if (!any_mass) {
    // No split carries density structure: everything is one cluster.
    std::fill(selected.begin(), selected.end(), 0);
    selected[0] = 1;
  }

  ClusterResult res;
  std::map<int, int> label_of;
  for (std::size_t i = 0; i < cl.size(); ++i)
    if (selected[i]) label_of[static_cast<int>(i)] = 0;
  int next = 0;
  for (auto& [id, lab] : label_of) lab = next++;
  res.labels.assign(n, -1);
  for (std::size_t p = 0; p < n; ++p)
    for (int c = point_cluster[p]; c >= 0; c = cl[static_cast<std::size_t>(c)].parent)
      if (auto it = label_of.find(c); it != label_of.end()) {
        res.labels[p] = it->second;
        break;
      }
  // Number clusters by their lowest member index so labels do not depend on
  // tree traversal order.
  std::vector<int> first(static_cast<std::size_t>(next), -1), remap(static_cast<std::size_t>(next), -1);
  for (std::size_t p = 0; p < n; ++p)
    if (res.labels[p] >= 0 && first[static_cast<std::size_t>(res.labels[p])] < 0)
      first[static_cast<std::size_t>(res.labels[p])] = static_cast<int>(p);
  std::vector<int> order;
  for (int k = 0; k < next; ++k)
    if (first[static_cast<std::size_t>(k)] >= 0) order.push_back(k);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return first[static_cast<std::size_t>(a)] < first[static_cast<std::size_t>(b)]; });
  for (std::size_t k = 0; k < order.size(); ++k) remap[static_cast<std::size_t>(order[k])] = static_cast<int>(k);
  for (auto& l : res.labels)
    if (l >= 0) l = remap[static_cast<std::size_t>(l)];
  res.n_clusters = static_cast<int>(order.size());
  res.sizes.assign(static_cast<std::size_t>(res.n_clusters), 0);
  for (int l : res.labels)
    if (l >= 0) ++res.sizes[static_cast<std::size_t>(l)];
  for (int k = 0; k < res.n_clusters; ++k) res.representatives.push_back(representative(x, res.labels, k));
  return res;
}

namespace detail {

/// Members per non-noise cluster id, ids in ascending order.
inline std::map<int, std::vector<std::size_t>> groups(const std::vector<Embedding>& x, const std::vector<int>& labels) {
  if (x.size() != labels.size()) throw LengthMismatch("labels vs embeddings");
  check_embeddings(x);
  std::map<int, std::vector<std::size_t>> g;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (labels[i] >= 0) g[labels[i]].push_back(i);
  if (g.size() < 2) throw NeedTwoClusters("need at least two clusters, got " + std::to_string(g.size()));
  return g;
}

inline Embedding mean_of(const std::vector<Embedding>& x, const std::vector<std::size_t>& idx) {
  Embedding c(x.front().size(), 0.0);
  for (auto i : idx)
    for (std::size_t k = 0; k < c.size(); ++k) c[k] += x[i][k];
  for (auto& v : c) v /= static_cast<double>(idx.size());
  return c;
}

}  // namespace detail

/// Davies-Bouldin index over non-noise points (Euclidean). Lower is better.
inline double dbi(const std::vector<Embedding>& x, const std::vector<int>& labels) {
  const auto g = detail::groups(x, labels);
  std::vector<Embedding> c;
  std::vector<double> s;
  for (const auto& [_, idx] : g) {
    c.push_back(detail::mean_of(x, idx));
    double acc = 0;
    for (auto i : idx) acc += euclidean(x[i], c.back());
    s.push_back(acc / static_cast<double>(idx.size()));
  }
  const std::size_t k = c.size();
  double total = 0;
  for (std::size_t i = 0; i < k; ++i) {
    double worst = 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      const double dij = euclidean(c[i], c[j]);
      const double r = dij > 0 ? (s[i] + s[j]) / dij : std::numeric_limits<double>::infinity();
      worst = std::max(worst, r);
    }
    total += worst;
  }
  return total / static_cast<double>(k);
}

/// Calinski-Harabasz index over non-noise points. Returns +inf (saturated)
/// when every cluster has zero spread. Higher is better.
inline double chi(const std::vector<Embedding>& x, const std::vector<int>& labels) {
  const auto g = detail::groups(x, labels);
  std::vector<std::size_t> all;
  for (const auto& [_, idx] : g) all.insert(all.end(), idx.begin(), idx.end());
  const std::size_t n = all.size(), k = g.size();
  if (n <= k) throw NeedTwoClusters("chi needs more points than clusters");
  const auto c = detail::mean_of(x, all);
  double B = 0, W = 0;
  for (const auto& [_, idx] : g) {
    const auto ci = detail::mean_of(x, idx);
    const double dc = euclidean(ci, c);
    B += static_cast<double>(idx.size()) * dc * dc;
    for (auto i : idx) {
      const double di = euclidean(x[i], ci);
      W += di * di;
    }
  }
  if (W == 0) return std::numeric_limits<double>::infinity();
  return (B / static_cast<double>(k - 1)) / (W / static_cast<double>(n - k));
}

inline bool is_saturated(double score) { return std::isinf(score); }

/// labels, sizes, representatives, DBI and CHI. Scores that cannot be
/// computed (fewer than two clusters) are null; a saturated CHI is null with
/// "chi_saturated": true.
inline nlohmann::json cluster_report(const std::vector<Embedding>& x, const ClusterResult& r) {
  nlohmann::json j{{"n_clusters", r.n_clusters},
                   {"n_noise", std::count(r.labels.begin(), r.labels.end(), -1)},
                   {"labels", r.labels},
                   {"sizes", r.sizes},
                   {"representatives", r.representatives},
                   {"dbi", nullptr},
                   {"chi", nullptr},
                   {"chi_saturated", false}};
  if (r.n_clusters >= 2) {
    j["dbi"] = dbi(x, r.labels);
    const double c = chi(x, r.labels);
    if (is_saturated(c))
      j["chi_saturated"] = true;
    else
      j["chi"] = c;
  }
  return j;
}

/// Standard normal tensor from `seed`.
template <class T>
ad::Tensor<T> gaussian_tensor(ad::Shape shape, std::uint64_t seed) {
  ad::Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  ad::Tensor<T> z(std::move(shape));
  for (auto& v : z.data) v = static_cast<T>(g(rng));
  return z;
}

/// decode(E_sto + beta z, E_sem) for a scaled window, head re-normalized.
template <class T>
ad::Tensor<T> generate_variants(const Model<T>& m, const ad::Tensor<T>& h0, double beta, std::uint64_t seed,
                                const DiffusionSchedule& sched) {
  if (m.is_vae()) throw BadConfig("generation needs a diffusion model");
  if (!(beta >= 0)) throw BadConfig("beta must be non-negative");
  const auto esem = m.embed(h0);
  const auto fn = m.noise_fn(esem);
  auto code = encode_stochastic(h0, fn, sched);
  if (beta != 0.0) {
    const auto z = gaussian_tensor<T>(code.shape, seed);
    for (std::size_t i = 0; i < code.size(); ++i)
      code.data[i] = static_cast<T>(code.data[i] + static_cast<T>(beta) * z.data[i]);
  }
  auto out = decode(code, fn, sched);
  renormalize_head(out);
  return out;
}

/// decode(z, e_sem) with z ~ N(0, I) of shape (9, n).
template <class T>
ad::Tensor<T> generate_from_noise(const Model<T>& m, const ad::Tensor<T>& esem, std::uint64_t seed,
                                  const DiffusionSchedule& sched) {
  if (m.is_vae()) throw BadConfig("generation needs a diffusion model");
  auto out = decode(gaussian_tensor<T>({9, m.config().n}, seed), m.noise_fn(esem), sched);
  renormalize_head(out);
  return out;
}

/// Mean absolute elementwise difference.
template <class T>
double mean_abs_diff(const ad::Tensor<T>& a, const ad::Tensor<T>& b) {
  if (a.shape != b.shape) throw ShapeMismatch("mean_abs_diff shapes");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]));
  return s / static_cast<double>(a.size());
}

}  // namespace hhae
