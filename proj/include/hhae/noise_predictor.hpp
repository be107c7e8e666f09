#pragma once

// Conditional 1-D UNet estimating the noise in a (9, N) hand-head tensor.
//
//   stem conv 9->C (k3)
//   ResConv1D @N   -> skip1 -> avgpool
//   ResConv1D @N/2 -> skip2 -> avgpool
//   ResConv1D @N/4 (bottleneck)
//   upsample x2, conv, + skip2 -> ResConv1D @N/2
//   upsample x2, conv, + skip1 -> ResConv1D @N
//   GN -> SiLU -> conv C->9 (k3)
//
// Every ResConv1D holds two residual blocks conditioned on the time-step
// embedding (scale/shift after the second GN) and then on the semantic
// embedding (additive shift).

#include <cmath>
#include <string>

#include "hhae/ad/nn.hpp"
#include "hhae/model_config.hpp"

namespace hhae {

inline constexpr int kMaxTimeStep = 1000;

/// Sinusoidal encoding of t: first half sin(t * f_i), second half cos(t * f_i),
/// f_i = 10000^(-i / (dim/2)).
template <class T>
ad::Tensor<T> sinusoidal_embedding(int t, std::size_t dim) {
  if (t < 0 || t > kMaxTimeStep) throw OutOfRange("time step " + std::to_string(t) + " outside [0, 1000]");
  const std::size_t half = dim / 2;
  ad::Tensor<T> e({dim});
  for (std::size_t i = 0; i < half; ++i) {
    const double f = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    e.data[i] = static_cast<T>(std::sin(t * f));
    e.data[half + i] = static_cast<T>(std::cos(t * f));
  }
  return e;
}

template <class T>
struct TimeEmbedding {
  ad::Linear<T> l1, l2;
  std::size_t dim = 0;

  TimeEmbedding() = default;
  TimeEmbedding(ad::ParamSet<T>& ps, const std::string& name, std::size_t d, ad::Rng& rng)
      : l1(ps, name + ".l1", d, d, rng), l2(ps, name + ".l2", d, d, rng), dim(d) {}

  ad::Var<T> operator()(int t) const {
    return l2(ad::silu(l1(ad::Var<T>::constant(sinusoidal_embedding<T>(t, dim)))));
  }
};

template <class T>
struct ResBlock {
  ad::GroupNorm<T> gn1, gn2;
  ad::Conv1d<T> conv1, conv2;
  ad::Linear<T> time_proj, sem_proj;
  std::size_t channels = 0;
  T dropout = T(0.1);

  ResBlock() = default;
  ResBlock(ad::ParamSet<T>& ps, const std::string& name, const ModelConfig& cfg, ad::Rng& rng)
      : gn1(ps, name + ".gn1", cfg.unet_channels, cfg.gn_groups),
        gn2(ps, name + ".gn2", cfg.unet_channels, cfg.gn_groups),
        conv1(ps, name + ".conv1", cfg.unet_channels, cfg.unet_channels, 3, rng),
        conv2(ps, name + ".conv2", cfg.unet_channels, cfg.unet_channels, 3, rng),
        time_proj(ps, name + ".time_proj", cfg.temb_dim, 2 * cfg.unet_channels, rng),
        sem_proj(ps, name + ".sem_proj", cfg.esem_dim, cfg.unet_channels, rng),
        channels(cfg.unet_channels),
        dropout(static_cast<T>(cfg.dropout)) {}

  ad::Var<T> operator()(const ad::Var<T>& x, const ad::Var<T>& e_t, const ad::Var<T>& e_sem, bool training,
                        ad::Rng& rng) const {
    if (x.shape().size() != 2 || x.dim(0) != channels) throw ShapeMismatch("resblock input " + ad::shape_str(x.shape()));
    auto h = gn2(conv1(ad::silu(gn1(x))));
    auto tp = time_proj(ad::silu(e_t));
    auto s = ad::add_const(ad::slice0(tp, 0, channels), T(1));
    auto b = ad::slice0(tp, channels, 2 * channels);
    h = ad::add_channel(ad::mul_channel(h, s), b);
    h = ad::add_channel(h, sem_proj(ad::silu(e_sem)));
    h = conv2(ad::dropout(ad::silu(h), dropout, rng, training));
    return ad::add(x, h);
  }
};

template <class T>
struct ResConv1D {
  ResBlock<T> first, second;

  ResConv1D() = default;
  ResConv1D(ad::ParamSet<T>& ps, const std::string& name, const ModelConfig& cfg, ad::Rng& rng)
      : first(ps, name + ".res1", cfg, rng), second(ps, name + ".res2", cfg, rng) {}

  ad::Var<T> operator()(const ad::Var<T>& x, const ad::Var<T>& e_t, const ad::Var<T>& e_sem, bool training,
                        ad::Rng& rng) const {
    return second(first(x, e_t, e_sem, training, rng), e_t, e_sem, training, rng);
  }
};

template <class T>
class NoisePredictor {
 public:
  NoisePredictor() = default;
  NoisePredictor(ad::ParamSet<T>& ps, const ModelConfig& cfg, ad::Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const std::size_t C = cfg.unet_channels;
    stem_ = ad::Conv1d<T>(ps, "stem", 9, C, 3, rng);
    temb_ = TimeEmbedding<T>(ps, "time_embed", cfg.temb_dim, rng);
    enc1_ = ResConv1D<T>(ps, "down1", cfg, rng);
    enc2_ = ResConv1D<T>(ps, "down2", cfg, rng);
    mid_ = ResConv1D<T>(ps, "mid", cfg, rng);
    up2_conv_ = ad::Conv1d<T>(ps, "up2.conv", C, C, 3, rng);
    dec2_ = ResConv1D<T>(ps, "up2", cfg, rng);
    up1_conv_ = ad::Conv1d<T>(ps, "up1.conv", C, C, 3, rng);
    dec1_ = ResConv1D<T>(ps, "up1", cfg, rng);
    head_gn_ = ad::GroupNorm<T>(ps, "head.gn", C, cfg.gn_groups);
    head_ = ad::Conv1d<T>(ps, "head.conv", C, 9, 3, rng);
  }

  ad::Var<T> time_embedding(int t) const { return temb_(t); }

  ad::Var<T> operator()(const ad::Var<T>& h_t, int t, const ad::Var<T>& e_sem, bool training, ad::Rng& rng) const {
    if (h_t.shape().size() != 2 || h_t.dim(0) != 9 || h_t.dim(1) % 4 != 0)
      throw ShapeMismatch("predict_noise: expected (9, N) with N % 4 == 0, got " + ad::shape_str(h_t.shape()));
    if (e_sem.size() != cfg_.esem_dim) throw ShapeMismatch("predict_noise: semantic embedding size");
    const auto e_t = temb_(t);
    auto x = stem_(h_t);
    auto skip1 = enc1_(x, e_t, e_sem, training, rng);
    auto skip2 = enc2_(ad::avg_pool2(skip1), e_t, e_sem, training, rng);
    auto h = mid_(ad::avg_pool2(skip2), e_t, e_sem, training, rng);
    h = ad::add(up2_conv_(ad::upsample2(h)), skip2);
    h = dec2_(h, e_t, e_sem, training, rng);
    h = ad::add(up1_conv_(ad::upsample2(h)), skip1);
    h = dec1_(h, e_t, e_sem, training, rng);
    return head_(ad::silu(head_gn_(h)));
  }

  const ModelConfig& config() const { return cfg_; }
  const ResConv1D<T>& level(std::size_t i) const {
    const ResConv1D<T>* lv[] = {&enc1_, &enc2_, &mid_, &dec2_, &dec1_};
    return *lv[i];
  }

 private:
  ModelConfig cfg_;
  ad::Conv1d<T> stem_;
  TimeEmbedding<T> temb_;
  ResConv1D<T> enc1_, enc2_, mid_, dec2_, dec1_;
  ad::Conv1d<T> up2_conv_, up1_conv_;
  ad::GroupNorm<T> head_gn_;
  ad::Conv1d<T> head_;
};

}  // namespace hhae
