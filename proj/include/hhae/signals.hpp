#pragma once

// Hand-head signal model: frames, sequences, recordings, the JSONL recording
// format, windowing into training samples and a synthetic corpus generator.
//
// A relative frame carries both hand positions with the head as origin
// (`ha`, metres, left then right) and the unit head-forward direction (`he`).
// Head translation is only used to form the relative coordinates.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hhae/ad/tensor.hpp"
#include "hhae/errors.hpp"

namespace hhae {

using Vec3 = std::array<double, 3>;

inline double norm(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

struct WorldFrame {
  long t = 0;
  Vec3 head_pos{};
  Vec3 head_dir{0, 0, 1};
  Vec3 lhand_pos{};
  Vec3 rhand_pos{};
  bool operator==(const WorldFrame&) const = default;
};

struct HandHeadFrame {
  std::array<double, 6> ha{};
  Vec3 he{0, 0, 1};

  Vec3 left() const { return {ha[0], ha[1], ha[2]}; }
  Vec3 right() const { return {ha[3], ha[4], ha[5]}; }
  bool operator==(const HandHeadFrame&) const = default;
};

struct HandHeadSequence {
  std::vector<HandHeadFrame> frames;
  double fps = 30.0;

  std::size_t size() const { return frames.size(); }
  bool operator==(const HandHeadSequence&) const = default;
};

struct Labels {
  std::string user;
  std::string activity;
  bool operator==(const Labels&) const = default;
};

struct Sample {
  HandHeadSequence input;
  HandHeadSequence future;
  std::optional<Labels> labels;
  std::size_t start = 0;  // index of the first input frame in the source recording
};

enum class Coords { world, relative };

inline std::string to_string(Coords c) { return c == Coords::world ? "world" : "relative"; }

struct RecordingMeta {
  double fps = 30.0;
  std::string user;
  std::string activity;
  Coords coords = Coords::relative;
  bool operator==(const RecordingMeta&) const = default;
};

/// Consecutive frames t0, t0+1, ...; exactly one of `world` / `relative` is
/// populated according to `meta.coords`.
struct Recording {
  RecordingMeta meta;
  long t0 = 0;
  std::vector<WorldFrame> world;
  std::vector<HandHeadFrame> relative;

  std::size_t size() const { return meta.coords == Coords::world ? world.size() : relative.size(); }
  bool operator==(const Recording&) const = default;
};

/// Head-origin coordinates. Throws DegenerateDirection for a (near-)zero head direction.
inline HandHeadFrame to_relative(const WorldFrame& f) {
  const double n = norm(f.head_dir);
  if (!(n > 1e-8)) throw DegenerateDirection("head direction norm " + std::to_string(n));
  HandHeadFrame r;
  for (int k = 0; k < 3; ++k) {
    r.ha[k] = f.lhand_pos[k] - f.head_pos[k];
    r.ha[3 + k] = f.rhand_pos[k] - f.head_pos[k];
    r.he[k] = f.head_dir[k] / n;
  }
  return r;
}

inline Recording to_relative(const Recording& rec) {
  if (rec.meta.coords == Coords::relative) return rec;
  Recording out;
  out.meta = rec.meta;
  out.meta.coords = Coords::relative;
  out.t0 = rec.t0;
  out.relative.reserve(rec.world.size());
  for (const auto& f : rec.world) out.relative.push_back(to_relative(f));
  return out;
}

/// True if any hand coordinate lies outside [-radius, radius].
inline bool exceeds_radius(const HandHeadFrame& f, double radius = 3.0) {
  for (double v : f.ha)
    if (!(std::abs(v) <= radius)) return true;
  return false;
}

/// Indices of frames whose hand coordinates exceed the sanity radius.
inline std::vector<std::size_t> flag_outliers(const Recording& rec, double radius = 3.0) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < rec.relative.size(); ++i)
    if (exceeds_radius(rec.relative[i], radius)) out.push_back(i);
  return out;
}

struct WindowResult {
  std::vector<Sample> samples;
  bool too_short = false;
};

/// Cuts a relative-coordinate recording into (input N, future dn) samples at
/// starts 0, stride, 2*stride, ...; windows running past the end are dropped.
inline WindowResult window(const Recording& rec, std::size_t n, std::size_t dn, std::size_t stride) {
  if (rec.meta.coords != Coords::relative) throw SchemaError("window() needs relative coordinates");
  if (n < 1 || stride < 1) throw BadConfig("window: N and stride must be positive");
  WindowResult out;
  const auto& fr = rec.relative;
  if (fr.size() < n + dn) {
    out.too_short = true;
    return out;
  }
  std::optional<Labels> labels;
  if (!rec.meta.user.empty() || !rec.meta.activity.empty()) labels = Labels{rec.meta.user, rec.meta.activity};
  for (std::size_t s = 0; s + n + dn <= fr.size(); s += stride) {
    Sample smp;
    smp.start = s;
    smp.input.fps = smp.future.fps = rec.meta.fps;
    smp.input.frames.assign(fr.begin() + s, fr.begin() + s + n);
    smp.future.frames.assign(fr.begin() + s + n, fr.begin() + s + n + dn);
    smp.labels = labels;
    out.samples.push_back(std::move(smp));
  }
  return out;
}

/// (9, n) tensor: rows 0-5 hand coordinates divided by `hand_scale`, rows 6-8 head direction.
template <class T>
ad::Tensor<T> to_tensor(const HandHeadSequence& seq, double hand_scale = 1.0) {
  const std::size_t n = seq.size();
  ad::Tensor<T> t({9, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < 6; ++k) t.at(k, i) = static_cast<T>(seq.frames[i].ha[k] / hand_scale);
    for (int k = 0; k < 3; ++k) t.at(6 + k, i) = static_cast<T>(seq.frames[i].he[k]);
  }
  return t;
}

/// Inverse of to_tensor. With `renormalize`, head columns are scaled to unit length.
template <class T>
HandHeadSequence from_tensor(const ad::Tensor<T>& t, double hand_scale = 1.0, bool renormalize = true,
                             double fps = 30.0) {
  if (t.rank() != 2 || t.dim(0) != 9) throw ShapeMismatch("from_tensor expects (9, n), got " + ad::shape_str(t.shape));
  HandHeadSequence seq;
  seq.fps = fps;
  seq.frames.resize(t.dim(1));
  for (std::size_t i = 0; i < t.dim(1); ++i) {
    auto& f = seq.frames[i];
    for (int k = 0; k < 6; ++k) f.ha[k] = static_cast<double>(t.at(k, i)) * hand_scale;
    for (int k = 0; k < 3; ++k) f.he[k] = static_cast<double>(t.at(6 + k, i));
    if (renormalize) {
      const double n = norm(f.he);
      if (n > 1e-12)
        for (auto& v : f.he) v /= n;
    }
  }
  return seq;
}

// ---------------------------------------------------------------------------
// JSONL recording format

namespace detail {

using ojson = nlohmann::ordered_json;

inline Vec3 read_vec3(const nlohmann::json& j, const char* key, std::size_t line) {
  if (!j.contains(key)) throw FormatError(line, std::string("missing field \"") + key + "\"");
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 3) throw FormatError(line, std::string("field \"") + key + "\" must be 3 numbers");
  Vec3 v{};
  for (int k = 0; k < 3; ++k) {
    if (!a[k].is_number()) throw FormatError(line, std::string("non-numeric entry in \"") + key + "\"");
    v[k] = a[k].get<double>();
    if (!std::isfinite(v[k])) throw FormatError(line, "non-finite coordinate");
  }
  return v;
}

inline ojson number(double v) {
  if (std::floor(v) == v && std::abs(v) < 1e15) return ojson(static_cast<long long>(v));
  return ojson(v);
}

inline ojson vec_json(const double* p, std::size_t n) {
  ojson a = ojson::array();
  for (std::size_t i = 0; i < n; ++i) a.push_back(p[i]);
  return a;
}

}  // namespace detail

/// Directions further than 1e-12 from unit length are normalized; others are kept
/// as written so save/load round trips are exact.
inline Recording parse_recording(std::istream& in) {
  Recording rec;
  std::string text;
  std::size_t line = 0;
  bool have_header = false;
  long expected_t = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.find_first_not_of(" \t") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(line, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw FormatError(line, "expected a JSON object");
    if (!have_header) {
      if (j.value("type", "") != "header") throw FormatError(line, "first line must be the header");
      for (const char* key : {"version", "fps", "coords"})
        if (!j.contains(key)) throw FormatError(line, std::string("header missing \"") + key + "\"");
      if (!j["version"].is_number_integer() || j["version"].get<int>() != 1)
        throw SchemaError("unsupported recording version");
      if (!j["fps"].is_number()) throw FormatError(line, "fps must be numeric");
      rec.meta.fps = j["fps"].get<double>();
      rec.meta.user = j.value("user", "");
      rec.meta.activity = j.value("activity", "");
      const std::string coords = j["coords"].is_string() ? j["coords"].get<std::string>() : "";
      if (coords == "world")
        rec.meta.coords = Coords::world;
      else if (coords == "relative")
        rec.meta.coords = Coords::relative;
      else
        throw SchemaError("unknown coords tag \"" + coords + "\"");
      have_header = true;
      continue;
    }
    if (!j.contains("t") || !j["t"].is_number_integer()) throw FormatError(line, "missing integer field \"t\"");
    const long t = j["t"].get<long>();
    if (rec.size() == 0) {
      if (t < 0) throw FormatError(line, "negative frame index");
      rec.t0 = t;
    } else if (t != expected_t) {
      throw FormatError(line, "frame index " + std::to_string(t) + ", expected " + std::to_string(expected_t));
    }
    expected_t = t + 1;
    if (rec.meta.coords == Coords::world) {
      WorldFrame f;
      f.t = t;
      f.head_pos = detail::read_vec3(j, "head_pos", line);
      f.head_dir = detail::read_vec3(j, "head_dir", line);
      f.lhand_pos = detail::read_vec3(j, "lhand", line);
      f.rhand_pos = detail::read_vec3(j, "rhand", line);
      const double n = norm(f.head_dir);
      if (!(n > 1e-8)) throw FormatError(line, "degenerate head_dir");
      if (std::abs(n - 1.0) > 1e-12)
        for (auto& v : f.head_dir) v /= n;
      rec.world.push_back(f);
    } else {
      HandHeadFrame f;
      if (!j.contains("ha")) throw FormatError(line, "missing field \"ha\"");
      const auto& ha = j["ha"];
      if (!ha.is_array() || ha.size() != 6) throw FormatError(line, "field \"ha\" must be 6 numbers");
      for (int k = 0; k < 6; ++k) {
        if (!ha[k].is_number()) throw FormatError(line, "non-numeric entry in \"ha\"");
        f.ha[k] = ha[k].get<double>();
        if (!std::isfinite(f.ha[k])) throw FormatError(line, "non-finite coordinate");
      }
      f.he = detail::read_vec3(j, "he", line);
      const double n = norm(f.he);
      if (!(n > 1e-8)) throw FormatError(line, "degenerate he");
      if (std::abs(n - 1.0) > 1e-12)
        for (auto& v : f.he) v /= n;
      rec.relative.push_back(f);
    }
  }
  if (!have_header) throw FormatError(line + 1, "missing header");
  return rec;
}

inline Recording load_recording(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return parse_recording(in);
}

inline void write_recording(const Recording& rec, std::ostream& out) {
  detail::ojson h;
  h["type"] = "header";
  h["version"] = 1;
  h["fps"] = detail::number(rec.meta.fps);
  h["user"] = rec.meta.user;
  h["activity"] = rec.meta.activity;
  h["coords"] = to_string(rec.meta.coords);
  out << h.dump() << '\n';
  for (std::size_t i = 0; i < rec.size(); ++i) {
    detail::ojson j;
    if (rec.meta.coords == Coords::world) {
      const auto& f = rec.world[i];
      j["t"] = f.t;
      j["head_pos"] = detail::vec_json(f.head_pos.data(), 3);
      j["head_dir"] = detail::vec_json(f.head_dir.data(), 3);
      j["lhand"] = detail::vec_json(f.lhand_pos.data(), 3);
      j["rhand"] = detail::vec_json(f.rhand_pos.data(), 3);
    } else {
      const auto& f = rec.relative[i];
      j["t"] = rec.t0 + static_cast<long>(i);
      j["ha"] = detail::vec_json(f.ha.data(), 6);
      j["he"] = detail::vec_json(f.he.data(), 3);
    }
    out << j.dump() << '\n';
  }
}

inline void save_recording(const Recording& rec, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  write_recording(rec, out);
}

// ---------------------------------------------------------------------------
// Synthetic corpus

struct SynthConfig {
  std::string family = "idle";  // reach | idle | bimanual
  std::string user = "u0";
  std::size_t frames = 300;
  double fps = 30.0;
  double amplitude = 0.25;     // metres; peak hand excursion of the family motion
  double jitter_sigma = 0.003; // metres, per hand coordinate
  double dir_jitter = 0.003;   // per head-direction coordinate before renormalization
};

inline const std::vector<std::string>& synth_families() {
  static const std::vector<std::string> f{"reach", "idle", "bimanual"};
  return f;
}

/// Style index of a synthetic user: k for names "u<k>", otherwise a stable hash.
inline std::size_t user_style_index(const std::string& user) {
  if (user.size() > 1 && user[0] == 'u' && user.find_first_not_of("0123456789", 1) == std::string::npos)
    return static_cast<std::size_t>(std::stoul(user.substr(1)));
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : user) h = (h ^ c) * 1099511628211ULL;
  return static_cast<std::size_t>(h % 1000);
}

struct UserStyle {
  double amp_mul = 1.0;
  double freq_mul = 1.0;
  double phase = 0.0;
  double pitch_bias = 0.0;  // radians
  Vec3 left_offset{};
  Vec3 right_offset{};
};

inline UserStyle user_style(std::size_t k) {
  static const double amp[] = {1.0, 1.15, 1.3};
  static const double freq[] = {1.0, 0.8, 1.25};
  static const double pitch[] = {0.0, -0.12, 0.1};
  static const Vec3 loff[] = {{0, 0, 0}, {-0.03, -0.05, 0.02}, {0.02, 0.04, -0.03}};
  static const Vec3 roff[] = {{0, 0, 0}, {0.04, 0.03, -0.02}, {-0.03, -0.04, 0.04}};
  UserStyle s;
  const std::size_t b = k % 3, tier = k / 3;
  s.amp_mul = amp[b] + 0.05 * static_cast<double>(tier);
  s.freq_mul = freq[b] * (1.0 + 0.07 * static_cast<double>(tier));
  s.phase = 0.7 * static_cast<double>(k);
  s.pitch_bias = pitch[b];
  s.left_offset = loff[b];
  s.right_offset = roff[b];
  return s;
}

inline Vec3 direction(double yaw, double pitch) {
  return {std::sin(yaw) * std::cos(pitch), std::sin(pitch), std::cos(yaw) * std::cos(pitch)};
}

namespace detail {

struct SynthPose {
  Vec3 left, right, dir;
};

inline const Vec3 kLeftRest{-0.20, -0.45, 0.25};
inline const Vec3 kRightRest{0.20, -0.45, 0.25};

inline Vec3 axpy(const Vec3& a, double s, const Vec3& b) { return {a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]}; }

}  // namespace detail

/// Noise-free pose of frame `i` for a family; `targets` holds per-cycle
/// (yaw, pitch) reach targets.
inline detail::SynthPose synth_pose(const SynthConfig& cfg, const UserStyle& st,
                                    const std::vector<std::pair<double, double>>& targets, std::size_t i) {
  using std::numbers::pi;
  const double t = static_cast<double>(i) / cfg.fps;
  const double amp = cfg.amplitude * st.amp_mul;
  detail::SynthPose p;
  p.left = detail::axpy(detail::kLeftRest, 1.0, st.left_offset);
  p.right = detail::axpy(detail::kRightRest, 1.0, st.right_offset);
  const Vec3 base = direction(0.0, st.pitch_bias);
  if (cfg.family == "reach") {
    const double period = 2.4 / st.freq_mul;
    const double u = t / period + st.phase / (2 * pi);
    const double cyc = std::floor(u);
    const double s = 0.5 * (1.0 - std::cos(2 * pi * (u - cyc)));  // C1 bump in [0, 1]
    const auto& [yaw, pitch] = targets[static_cast<std::size_t>(cyc) % targets.size()];
    const Vec3 reach = direction(yaw, pitch);
    Vec3& hand = yaw >= 0 ? p.right : p.left;
    hand = detail::axpy(hand, amp * s, reach);
    const Vec3 look = direction(1.5 * yaw, st.pitch_bias + pitch);
    Vec3 d{};
    for (int k = 0; k < 3; ++k) d[k] = (1.0 - s) * base[k] + s * look[k];
    const double n = norm(d);
    for (auto& v : d) v /= n;
    p.dir = d;
    // the idle hand sways slightly
    Vec3& other = yaw >= 0 ? p.left : p.right;
    other[1] += 0.01 * std::sin(2 * pi * 0.3 * st.freq_mul * t + st.phase);
  } else if (cfg.family == "idle") {
    const double f = 0.25 * st.freq_mul;
    const double a = 0.04 * amp;
    p.left = detail::axpy(p.left, a, {std::sin(2 * pi * f * t + st.phase), std::sin(2 * pi * 0.7 * f * t), 0.0});
    p.right = detail::axpy(p.right, a, {std::sin(2 * pi * 0.9 * f * t + 1.3), std::cos(2 * pi * 0.6 * f * t), 0.0});
    p.dir = direction(0.05 * std::sin(2 * pi * 0.5 * f * t + st.phase),
                      st.pitch_bias + 0.03 * std::sin(2 * pi * 0.8 * f * t));
  } else if (cfg.family == "bimanual") {
    const double f = 0.6 * st.freq_mul;
    const double w = std::sin(2 * pi * f * t + st.phase);
    p.left[0] -= amp * w;
    p.right[0] += amp * w;
    const double bob = 0.05 * amp * std::sin(4 * pi * f * t);
    p.left[1] += bob;
    p.right[1] += bob;
    p.dir = direction(0.1 * std::sin(2 * pi * 0.5 * f * t), st.pitch_bias - 0.05);
  } else {
    throw UnknownFamily("unknown motion family \"" + cfg.family + "\"");
  }
  return p;
}

/// Reach targets for a recording; part of the deterministic generator state.
inline std::vector<std::pair<double, double>> synth_targets(std::size_t count, std::mt19937_64& rng) {
  using std::numbers::pi;
  std::uniform_real_distribution<double> yaw(-20.0 * pi / 180.0, 20.0 * pi / 180.0);
  std::uniform_real_distribution<double> pitch(-10.0 * pi / 180.0, 10.0 * pi / 180.0);
  std::vector<std::pair<double, double>> out(count);
  for (auto& [y, p] : out) {
    y = yaw(rng);
    p = pitch(rng);
  }
  return out;
}

/// Deterministic synthetic recording in relative coordinates.
inline Recording synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
  const auto& fams = synth_families();
  if (std::find(fams.begin(), fams.end(), cfg.family) == fams.end())
    throw UnknownFamily("unknown motion family \"" + cfg.family + "\"");
  if (cfg.fps <= 0 || cfg.frames == 0) throw BadConfig("synth: fps and frames must be positive");
  std::mt19937_64 rng(seed);
  const UserStyle st = user_style(user_style_index(cfg.user));
  const auto targets = synth_targets(64, rng);
  std::normal_distribution<double> g(0.0, 1.0);

  Recording rec;
  rec.meta = {cfg.fps, cfg.user, cfg.family, Coords::relative};
  rec.relative.reserve(cfg.frames);
  for (std::size_t i = 0; i < cfg.frames; ++i) {
    const auto p = synth_pose(cfg, st, targets, i);
    HandHeadFrame f;
    for (int k = 0; k < 3; ++k) {
      f.ha[k] = p.left[k] + cfg.jitter_sigma * g(rng);
      f.ha[3 + k] = p.right[k] + cfg.jitter_sigma * g(rng);
    }
    Vec3 d = p.dir;
    for (auto& v : d) v += cfg.dir_jitter * g(rng);
    const double n = norm(d);
    for (int k = 0; k < 3; ++k) f.he[k] = d[k] / n;
    rec.relative.push_back(f);
  }
  return rec;
}

}  // namespace hhae
