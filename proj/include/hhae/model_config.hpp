#pragma once

#include <cstddef>
#include <string>

#include <nlohmann/json.hpp>

#include "hhae/errors.hpp"

namespace hhae {

/// Architecture sizes shared by the semantic encoder, noise predictor and forecaster.
struct ModelConfig {
  std::size_t n = 40;               // input window length, divisible by 4
  std::size_t dn = 3;               // forecast horizon
  std::size_t enc_channels = 16;    // ST-GCN feature width
  std::size_t esem_dim = 128;       // semantic embedding size
  std::size_t unet_channels = 64;
  std::size_t temb_dim = 128;       // time-step embedding size
  std::size_t gn_groups = 8;
  double dropout = 0.1;
  double signal_scale = 1.0;        // metres per model unit for the hand channels
  std::string family = "diffusion"; // diffusion | vae
  std::string encoder = "gcn";      // gcn | 1dcnn | lstm | gru | mlp
  std::size_t baseline_hidden = 32; // width of the baseline-style encoders
  std::size_t baseline_mlp = 128;
  std::size_t latent_dim = 32;      // VAE latent size
  double kl_weight = 1e-3;

  static ModelConfig full() { return {}; }

  /// Every width halved.
  static ModelConfig half() {
    ModelConfig c;
    c.enc_channels = 8;
    c.esem_dim = 64;
    c.unet_channels = 32;
    c.temb_dim = 64;
    c.baseline_hidden = 16;
    c.baseline_mlp = 64;
    return c;
  }

  /// Below 4k parameters with N = 8; used by the gradient checks.
  static ModelConfig tiny() {
    ModelConfig c;
    c.n = 8;
    c.dn = 3;
    c.enc_channels = 4;
    c.esem_dim = 8;
    c.unet_channels = 4;
    c.temb_dim = 8;
    c.gn_groups = 2;
    c.baseline_hidden = 4;
    c.baseline_mlp = 8;
    c.latent_dim = 4;
    return c;
  }

  void validate() const {
    if (n == 0 || n % 4 != 0) throw ShapeMismatch("window length must be a positive multiple of 4");
    if (dn == 0) throw BadConfig("forecast horizon must be positive");
    if (enc_channels == 0 || esem_dim == 0 || unet_channels == 0 || temb_dim == 0) throw BadConfig("zero width");
    if (temb_dim % 2 != 0) throw BadConfig("time embedding size must be even");
    if (gn_groups == 0 || unet_channels % gn_groups != 0) throw BadConfig("gn_groups must divide unet_channels");
    if (!(signal_scale > 0)) throw BadConfig("signal_scale must be positive");
    if (encoder != "gcn" && encoder != "1dcnn" && encoder != "lstm" && encoder != "gru" && encoder != "mlp")
      throw BadConfig("unknown encoder kind " + encoder);
    if (family != "diffusion" && family != "vae") throw BadConfig("unknown model family " + family);
    if (family == "vae" && encoder == "gcn") throw BadConfig("VAE baselines have no graph encoder");
    if (family == "vae" && (latent_dim == 0 || n < 8)) throw BadConfig("VAE needs latent_dim > 0 and n >= 8");
  }

  /// Command-line model name: ours, ours-<enc>-enc or vae-<enc>.
  std::string model_name() const {
    if (family == "vae") return "vae-" + encoder;
    return encoder == "gcn" ? "ours" : "ours-" + encoder + "-enc";
  }

  /// Sets family and encoder from a model name; throws BadConfig on unknown names.
  void set_model(const std::string& name) {
    static const char* kinds[] = {"1dcnn", "lstm", "gru", "mlp"};
    if (name == "ours") {
      family = "diffusion";
      encoder = "gcn";
      return;
    }
    for (const char* k : kinds) {
      if (name == std::string("ours-") + k + "-enc") {
        family = "diffusion";
        encoder = k;
        return;
      }
      if (name == std::string("vae-") + k) {
        family = "vae";
        encoder = k;
        return;
      }
    }
    throw BadConfig("unknown model " + name);
  }

  bool operator==(const ModelConfig&) const = default;
};

template <class Json>
void to_json(Json& j, const ModelConfig& c) {
  j = Json{{"n", c.n},
                     {"dn", c.dn},
                     {"enc_channels", c.enc_channels},
                     {"esem_dim", c.esem_dim},
                     {"unet_channels", c.unet_channels},
                     {"temb_dim", c.temb_dim},
                     {"gn_groups", c.gn_groups},
                     {"dropout", c.dropout},
                     {"signal_scale", c.signal_scale},
                     {"family", c.family},
                     {"encoder", c.encoder},
                     {"baseline_hidden", c.baseline_hidden},
                     {"baseline_mlp", c.baseline_mlp},
                     {"latent_dim", c.latent_dim},
                     {"kl_weight", c.kl_weight}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("n").get_to(c.n);
  j.at("dn").get_to(c.dn);
  j.at("enc_channels").get_to(c.enc_channels);
  j.at("esem_dim").get_to(c.esem_dim);
  j.at("unet_channels").get_to(c.unet_channels);
  j.at("temb_dim").get_to(c.temb_dim);
  j.at("gn_groups").get_to(c.gn_groups);
  j.at("dropout").get_to(c.dropout);
  j.at("signal_scale").get_to(c.signal_scale);
  j.at("family").get_to(c.family);
  j.at("encoder").get_to(c.encoder);
  j.at("baseline_hidden").get_to(c.baseline_hidden);
  j.at("baseline_mlp").get_to(c.baseline_mlp);
  j.at("latent_dim").get_to(c.latent_dim);
  j.at("kl_weight").get_to(c.kl_weight);
}

}  // namespace hhae
