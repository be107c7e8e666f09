#pragma once

// Graph-convolutional semantic encoder.
//
// A window (9, N) is viewed as a graph tensor (3 coords, 3 joints, N) with
// joint order [head, left hand, right hand]. An ST-GCN layer mixes time with a
// dense learnable N x N adjacency, maps node features with W and mixes joints
// with a dense 3 x 3 adjacency; all three are right-multiplications along
// their axis. Three residual modules of two GCN blocks follow, with kernel-2
// average pooling over time after the first two, giving F of shape
// (C, 3, N/4). F is flattened joint-major to (3C, N/4), averaged over time and
// projected by a kernel-1 convolution to the semantic embedding.

#include <array>
#include <string>

#include "hhae/ad/nn.hpp"
#include "hhae/model_config.hpp"

namespace hhae {

inline constexpr std::size_t kJoints = 3;

/// Row order taking a (9, N) window to (coord, joint, time) layout.
inline std::vector<std::size_t> graph_row_order() { return {6, 0, 3, 7, 1, 4, 8, 2, 5}; }

template <class T>
struct STGCNParams {
  ad::Var<T> temporal;  // A_T, (L, L)
  ad::Var<T> feature;   // W, (C_in, C_out)
  ad::Var<T> spatial;   // A_S, (3, 3)

  STGCNParams() = default;
  STGCNParams(ad::Var<T> a_t, ad::Var<T> w, ad::Var<T> a_s)
      : temporal(std::move(a_t)), feature(std::move(w)), spatial(std::move(a_s)) {}
  STGCNParams(ad::ParamSet<T>& ps, const std::string& name, std::size_t c_in, std::size_t c_out, std::size_t len,
              ad::Rng& rng)
      : temporal(ps.add(name + ".A_T", ad::near_identity_init<T>(len, rng))),
        feature(ps.add(name + ".W", ad::uniform_init<T>({c_in, c_out}, c_in, rng))),
        spatial(ps.add(name + ".A_S", ad::near_identity_init<T>(kJoints, rng))) {}
};

/// y = ((x x_time A_T) x_feature W) x_joint A_S for x of shape (C_in, 3, L).
template <class T>
ad::Var<T> stgcn_forward(const ad::Var<T>& x, const STGCNParams<T>& p) {
  const auto& s = x.shape();
  if (s.size() != 3 || s[1] != kJoints || p.temporal.dim(0) != s[2] || p.feature.dim(0) != s[0] ||
      p.spatial.dim(0) != kJoints)
    throw ShapeMismatch("stgcn_forward: input " + ad::shape_str(s) + " vs A_T " + ad::shape_str(p.temporal.shape()) +
                        ", W " + ad::shape_str(p.feature.shape()));
  auto h = ad::contract(x, 2, p.temporal);
  h = ad::contract(h, 0, p.feature);
  return ad::contract(h, 1, p.spatial);
}

/// x + Dropout(Tanh(LN(STGCN(x)))), LN over channels at each (joint, time).
template <class T>
struct GCNBlock {
  STGCNParams<T> gcn;
  ad::LayerNorm<T> norm;
  T dropout = T(0.1);

  GCNBlock() = default;
  GCNBlock(ad::ParamSet<T>& ps, const std::string& name, std::size_t channels, std::size_t len, T p, ad::Rng& rng)
      : gcn(ps, name + ".gcn", channels, channels, len, rng), norm(ps, name + ".ln", channels), dropout(p) {}

  ad::Var<T> operator()(const ad::Var<T>& x, bool training, ad::Rng& rng) const {
    if (x.dim(0) != gcn.feature.dim(1)) throw ShapeMismatch("gcn block channel mismatch");
    auto h = ad::tanh(norm(stgcn_forward(x, gcn)));
    return ad::add(x, ad::dropout(h, dropout, rng, training));
  }
};

template <class T>
struct SemanticOutput {
  ad::Var<T> esem;  // (esem_dim)
  ad::Var<T> features;  // F, (C, 3, N/4)
};

template <class T>
class SemanticEncoder {
 public:
  SemanticEncoder() = default;
  SemanticEncoder(ad::ParamSet<T>& ps, const ModelConfig& cfg, ad::Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const std::size_t C = cfg.enc_channels;
    stem_ = STGCNParams<T>(ps, "stem", 3, C, cfg.n, rng);
    std::size_t len = cfg.n;
    for (std::size_t m = 0; m < 3; ++m) {
      for (std::size_t b = 0; b < 2; ++b)
        blocks_[2 * m + b] = GCNBlock<T>(ps, "module" + std::to_string(m + 1) + ".block" + std::to_string(b + 1), C,
                                         len, static_cast<T>(cfg.dropout), rng);
      if (m < 2) len /= 2;
    }
    head_ = ad::Conv1d<T>(ps, "head", kJoints * C, cfg.esem_dim, 1, rng);
  }

  /// (9, N) window -> (3, 3, N) graph tensor.
  static ad::Var<T> to_graph(const ad::Var<T>& h0) {
    if (h0.shape().size() != 2 || h0.dim(0) != 9) throw ShapeMismatch("encoder input must be (9, N)");
    return ad::reshape(ad::gather_rows(h0, graph_row_order()), {3, kJoints, h0.dim(1)});
  }

  SemanticOutput<T> operator()(const ad::Var<T>& h0, bool training, ad::Rng& rng) const {
    if (h0.shape().size() != 2 || h0.dim(0) != 9 || h0.dim(1) != cfg_.n)
      throw ShapeMismatch("encode_semantic: expected (9, " + std::to_string(cfg_.n) + "), got " +
                          ad::shape_str(h0.shape()));
    auto h = stgcn_forward(to_graph(h0), stem_);
    for (std::size_t m = 0; m < 3; ++m) {
      h = blocks_[2 * m](h, training, rng);
      h = blocks_[2 * m + 1](h, training, rng);
      if (m < 2) h = ad::avg_pool2(h);
    }
    SemanticOutput<T> out;
    out.features = h;
    const std::size_t C = h.dim(0), L = h.dim(2);
    auto flat = ad::reshape(ad::permute01(h), {kJoints * C, L});
    auto pooled = ad::adaptive_avg_pool(flat, 1);
    out.esem = ad::reshape(head_(pooled), {cfg_.esem_dim});
    return out;
  }

  const ModelConfig& config() const { return cfg_; }
  const STGCNParams<T>& stem() const { return stem_; }
  const GCNBlock<T>& block(std::size_t i) const { return blocks_.at(i); }

 private:
  ModelConfig cfg_;
  STGCNParams<T> stem_;
  std::array<GCNBlock<T>, 6> blocks_;
  ad::Conv1d<T> head_;
};

}  // namespace hhae
