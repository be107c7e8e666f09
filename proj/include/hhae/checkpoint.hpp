#pragma once

// Checkpoint directory:
//   manifest.json  {"version":1,"tensors":[{"name","shape","dtype","offset"}],
//                   "config":{...},"schedule":{...}}
//   weights.bin    every tensor, little-endian, row-major, in manifest order;
//                  `offset` is in bytes.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <type_traits>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "hhae/diffusion.hpp"
#include "hhae/model.hpp"

namespace hhae {

inline constexpr int kCheckpointVersion = 1;

template <class T>
constexpr const char* dtype_name() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? "f32" : "f64";
}

namespace detail {

template <class T>
void append_le(std::string& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.append(b, sizeof(T));
}

template <class T>
T read_le(const char* p) {
  char b[sizeof(T)];
  std::memcpy(b, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

}  // namespace detail

template <class T>
void save_checkpoint(const Model<T>& m, const DiffusionSchedule& sched, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["version"] = kCheckpointVersion;
  manifest["tensors"] = nlohmann::ordered_json::array();
  std::string blob;
  for (const auto& [name, v] : m.params()) {
    manifest["tensors"].push_back(
        {{"name", name}, {"shape", v.shape()}, {"dtype", dtype_name<T>()}, {"offset", blob.size()}});
    for (T x : v.data()) detail::append_le(blob, x);
  }
  manifest["config"] = m.config();
  manifest["schedule"] = sched;
  std::ofstream mf(dir / "manifest.json", std::ios::binary);
  mf << manifest.dump(2) << '\n';
  std::ofstream wf(dir / "weights.bin", std::ios::binary);
  wf.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!mf || !wf) throw Error("cannot write checkpoint to " + dir.string());
}

template <class T>
struct LoadedCheckpoint {
  Model<T> model;
  DiffusionSchedule schedule;
};

/// Reads the manifest and blob, checks every tensor against a freshly built
/// model of the stored config and overwrites its parameters.
template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw CorruptCheckpoint("missing " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint(std::string("manifest: ") + e.what());
  }
  if (!manifest.contains("version") || manifest["version"] != kCheckpointVersion)
    throw VersionMismatch("checkpoint version " + manifest.value("version", nlohmann::json()).dump() + ", expected " +
                          std::to_string(kCheckpointVersion));
  std::ifstream wf(dir / "weights.bin", std::ios::binary);
  if (!wf) throw CorruptCheckpoint("missing weights.bin");
  const std::string blob((std::istreambuf_iterator<char>(wf)), std::istreambuf_iterator<char>());

  ModelConfig cfg;
  DiffusionSchedule sched;
  try {
    cfg = manifest.at("config").get<ModelConfig>();
    sched = schedule_from_json(manifest.at("schedule"));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint(std::string("manifest: ") + e.what());
  }
  Model<T> model(cfg, 0);
  std::unordered_map<std::string, const ad::Var<T>*> by_name;
  for (const auto& [name, v] : model.params()) by_name[name] = &v;

  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != by_name.size())
    throw CorruptCheckpoint("manifest lists " + std::to_string(tensors.size()) + " tensors, model has " +
                            std::to_string(by_name.size()));
  std::size_t expected_offset = 0;
  for (const auto& entry : tensors) {
    const auto name = entry.at("name").get<std::string>();
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CorruptCheckpoint("unknown tensor " + name);
    const auto* v = it->second;
    if (entry.at("shape").get<ad::Shape>() != v->shape()) throw CorruptCheckpoint("shape mismatch for " + name);
    if (entry.at("dtype").get<std::string>() != dtype_name<T>()) throw CorruptCheckpoint("dtype mismatch for " + name);
    const auto offset = entry.at("offset").get<std::size_t>();
    if (offset != expected_offset) throw CorruptCheckpoint("unexpected offset for " + name);
    const std::size_t bytes = v->size() * sizeof(T);
    if (offset + bytes > blob.size()) throw CorruptCheckpoint("weights.bin truncated at " + name);
    auto& dst = v->mutable_value().data;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = detail::read_le<T>(blob.data() + offset + i * sizeof(T));
    expected_offset += bytes;
    by_name.erase(it);
  }
  if (expected_offset != blob.size()) throw CorruptCheckpoint("weights.bin has trailing bytes");
  return {std::move(model), std::move(sched)};
}

}  // namespace hhae
