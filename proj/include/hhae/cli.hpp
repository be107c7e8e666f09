#pragma once

// Command-line front end: synth, train, eval, cluster, generate, probe, inspect.
// Exit codes: 0 success, 1 runtime error, 2 usage error.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "hhae/analysis.hpp"
#include "hhae/checkpoint.hpp"
#include "hhae/evaluation.hpp"
#include "hhae/probes.hpp"
#include "hhae/signals.hpp"
#include "hhae/trainer.hpp"

namespace hhae {

inline constexpr const char* kVersion = "0.1.0";

namespace fs = std::filesystem;

struct NamedRecording {
  std::string name;  // file stem
  Recording rec;     // relative coordinates
};

/// Every *.jsonl file under `dir` (sorted by name), converted to relative
/// coordinates. Files are parsed on up to `workers` threads; the result order
/// does not depend on the thread count.
inline std::vector<NamedRecording> load_dataset(const fs::path& dir, std::size_t workers = 1) {
  if (!fs::is_directory(dir)) throw EmptyDataset("data directory " + dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw EmptyDataset("no .jsonl recordings in " + dir.string());
  std::vector<NamedRecording> out(files.size());
  auto load = [&](std::size_t i) {
    out[i].name = files[i].stem().string();
    out[i].rec = to_relative(load_recording(files[i].string()));
  };
  workers = std::max<std::size_t>(1, workers);
  for (std::size_t b = 0; b < files.size(); b += workers) {
    std::vector<std::future<void>> fut;
    for (std::size_t i = b; i < std::min(files.size(), b + workers); ++i)
      fut.push_back(std::async(workers > 1 ? std::launch::async : std::launch::deferred, load, i));
    for (auto& f : fut) f.get();
  }
  return out;
}

struct WindowRef {
  std::size_t recording = 0;
  std::size_t start = 0;
};

inline std::vector<Sample> window_all(const std::vector<NamedRecording>& data, std::size_t n, std::size_t dn,
                                      std::size_t stride, std::vector<WindowRef>* refs = nullptr) {
  std::vector<Sample> out;
  for (std::size_t r = 0; r < data.size(); ++r) {
    auto w = window(data[r].rec, n, dn, stride);
    for (auto& s : w.samples) {
      if (refs) refs->push_back({r, s.start});
      out.push_back(std::move(s));
    }
  }
  if (out.empty()) throw EmptyDataset("no recording is long enough for windows of " + std::to_string(n + dn) + " frames");
  return out;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  f << j.dump(2) << '\n';
  if (!f) throw Error("cannot write " + path.string());
}

/// run.json beside the outputs of one invocation.
inline void write_run_manifest(const fs::path& dir, const CLI::App& cmd, std::uint64_t seed) {
  nlohmann::ordered_json flags = nlohmann::ordered_json::object();
  for (const CLI::Option* o : cmd.get_options()) {
    if (o->get_name() == "--help" || o->count() == 0) continue;
    const auto& res = o->results();
    std::string v;
    for (std::size_t i = 0; i < res.size(); ++i) v += (i ? "," : "") + res[i];
    flags[o->get_name()] = o->get_expected_min() == 0 ? "true" : v;
  }
  nlohmann::ordered_json j;
  j["verb"] = cmd.get_name();
  j["flags"] = flags;
  j["seed"] = seed;
  j["versions"] = {{"hhae", kVersion}, {"checkpoint_format", kCheckpointVersion}, {"recording_format", 1}};
  j["timestamp"] = utc_timestamp();
  fs::create_directories(dir);
  std::ofstream f(dir / "run.json");
  f << j.dump(2) << '\n';
}

inline ModelConfig width_preset(const std::string& w) {
  if (w == "full") return ModelConfig::full();
  if (w == "half") return ModelConfig::half();
  if (w == "tiny") return ModelConfig::tiny();
  throw BadConfig("unknown width " + w);
}

inline std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

/// Embeddings of every sample, as doubles.
template <class T>
std::vector<Embedding> embed_all(const Model<T>& m, const std::vector<Sample>& data) {
  std::vector<Embedding> out;
  out.reserve(data.size());
  for (const auto& s : data) {
    const auto e = m.embed(to_tensor<T>(s.input, m.config().signal_scale));
    out.emplace_back(e.data.begin(), e.data.end());
  }
  return out;
}

/// Recording holding one generated window in relative coordinates.
inline Recording as_recording(const HandHeadSequence& seq, const RecordingMeta& like) {
  Recording r;
  r.meta = like;
  r.meta.coords = Coords::relative;
  r.meta.fps = seq.fps;
  r.relative = seq.frames;
  return r;
}

inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Hand-head representation learning toolkit", "hhae"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::uint64_t seed = 0;
  std::string data_dir, out_dir, ckpt_dir, report_path, model_name = "ours", width = "full", families = "reach,idle,bimanual",
                                                          task = "activity";
  std::size_t epochs = 130, batch = 64, n = 40, dn = 3, t_infer = 100, min_cluster = 15, workers = 1, users = 3,
              stride = 10, count = 1;
  double lr = 1e-4, beta = 0.0, minutes = 2.0, forecast_weight = 1.0;
  bool ablate_esem = false, ablate_esto = false, from_noise = false;

  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", seed, "Random seed")->capture_default_str(); };
  auto add_workers = [&](CLI::App* c) {
    c->add_option("--workers", workers, "Threads for loading recordings")->capture_default_str()->check(CLI::PositiveNumber);
  };

  auto* synth = app.add_subcommand("synth", "Write a synthetic corpus of JSONL recordings");
  synth->add_option("--families", families, "Comma-separated motion families")->capture_default_str();
  synth->add_option("--users", users, "Number of synthetic users u0..u{k-1}")->capture_default_str();
  synth->add_option("--minutes", minutes, "Length of each recording")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--out", out_dir, "Output directory")->required();
  add_seed(synth);

  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint directory");
  train->add_option("--data", data_dir, "Directory of JSONL recordings")->required();
  train->add_option("--out", out_dir, "Checkpoint directory")->required();
  train->add_option("--epochs", epochs)->capture_default_str();
  train->add_option("--lr", lr)->capture_default_str();
  train->add_option("--batch", batch)->capture_default_str();
  train->add_option("--n", n, "Window length")->capture_default_str();
  train->add_option("--dn", dn, "Forecast horizon")->capture_default_str();
  train->add_option("--t-infer", t_infer, "Inference steps stored with the checkpoint")->capture_default_str();
  train->add_option("--model", model_name, "ours | ours-{1dcnn,lstm,gru,mlp}-enc | vae-{1dcnn,lstm,gru,mlp}")
      ->capture_default_str();
  train->add_option("--width", width, "full | half | tiny")->capture_default_str();
  train->add_option("--stride", stride, "Training window stride")->capture_default_str();
  train->add_option("--forecast-weight", forecast_weight, "Weight of the forecasting loss")->capture_default_str();
  add_seed(train);
  add_workers(train);

  auto* eval = app.add_subcommand("eval", "Reconstruction errors of a checkpoint");
  eval->add_option("--ckpt", ckpt_dir)->required();
  eval->add_option("--data", data_dir)->required();
  eval->add_option("--report", report_path, "Report JSON; CDF CSVs are written beside it")->required();
  eval->add_option("--t-infer", t_infer, "Override the checkpoint's inference steps");
  eval->add_flag("--ablate-esem", ablate_esem, "Decode with a Gaussian semantic embedding");
  eval->add_flag("--ablate-esto", ablate_esto, "Decode from Gaussian noise instead of the stochastic code");
  add_seed(eval);
  add_workers(eval);

  auto* clus = app.add_subcommand("cluster", "Cluster semantic embeddings");
  clus->add_option("--ckpt", ckpt_dir)->required();
  clus->add_option("--data", data_dir)->required();
  clus->add_option("--out", out_dir)->required();
  clus->add_option("--min-cluster-size", min_cluster)->capture_default_str();
  add_seed(clus);
  add_workers(clus);

  auto* gen = app.add_subcommand("generate", "Generate movement variants");
  gen->add_option("--ckpt", ckpt_dir)->required();
  gen->add_option("--data", data_dir)->required();
  gen->add_option("--out", out_dir)->required();
  gen->add_option("--beta", beta, "Weight of the noise added to the stochastic code")->capture_default_str();
  gen->add_option("--count", count, "Number of source windows")->capture_default_str();
  gen->add_option("--t-infer", t_infer, "Override the checkpoint's inference steps");
  gen->add_flag("--from-noise", from_noise, "Replace the stochastic code by Gaussian noise");
  add_seed(gen);
  add_workers(gen);

  std::size_t probe_epochs = 60, probe_batch = 64;
  double probe_lr = 1e-5;
  auto* probe = app.add_subcommand("probe", "Linear probe on semantic embeddings");
  probe->add_option("--ckpt", ckpt_dir)->required();
  probe->add_option("--data", data_dir)->required();
  probe->add_option("--report", report_path)->required();
  probe->add_option("--task", task, "activity | user")->capture_default_str();
  probe->add_option("--epochs", probe_epochs)->capture_default_str();
  probe->add_option("--lr", probe_lr)->capture_default_str();
  probe->add_option("--batch", probe_batch)->capture_default_str();
  add_seed(probe);
  add_workers(probe);

  auto* inspect = app.add_subcommand("inspect", "Summarize a checkpoint or a data directory");
  inspect->add_option("--ckpt", ckpt_dir);
  inspect->add_option("--data", data_dir);
  inspect->add_option("--out", out_dir, "Directory for run.json");
  add_workers(inspect);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return 0;
    }
    err << "error: " << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  }

  try {
    if (*synth) {
      const auto fams = split_csv(families);
      if (fams.empty() || users == 0) throw BadConfig("need at least one family and one user");
      const fs::path dir(out_dir);
      fs::create_directories(dir);
      std::size_t idx = 0;
      for (const auto& fam : fams)
        for (std::size_t u = 0; u < users; ++u, ++idx) {
          SynthConfig sc;
          sc.family = fam;
          sc.user = "u" + std::to_string(u);
          sc.frames = static_cast<std::size_t>(std::llround(minutes * 60.0 * sc.fps));
          save_recording(synth_generate(sc, seed * 1000003ULL + idx), (dir / (fam + "_" + sc.user + ".jsonl")).string());
        }
      out << "wrote " << idx << " recordings to " << dir.string() << "\n";
      write_run_manifest(dir, *synth, seed);
      return 0;
    }

    if (*train) {
      auto cfg = width_preset(width);
      cfg.set_model(model_name);
      cfg.n = n;
      cfg.dn = dn;
      cfg.validate();
      TrainConfig tc;
      tc.epochs = epochs;
      tc.learning_rate = lr;
      tc.batch_size = batch;
      tc.seed = seed;
      tc.n = n;
      tc.dn = dn;
      tc.signal_scale = cfg.signal_scale;
      tc.forecast_weight = forecast_weight;
      const auto sched = make_schedule(1000, 1e-4, 0.02, static_cast<int>(t_infer));
      const auto recs = load_dataset(data_dir, workers);
      const auto samples = window_all(recs, n, dn, stride);
      Model<float> model(cfg, seed);
      const fs::path dir(out_dir);
      fs::create_directories(dir);
      std::ofstream csv(dir / "train_log.csv");
      csv.precision(9);
      out << "training " << cfg.model_name() << " (" << model.params().num_scalars() << " parameters) on "
          << samples.size() << " windows\n";
      train_model(model, prepare<float>(samples, cfg.signal_scale), sched, tc, &csv, [&](const EpochStats& e) {
        out << "epoch " << e.epoch << " total " << e.total << " l_noise " << e.l_noise << " l_forecast "
            << e.l_forecast << "\n";
      });
      save_checkpoint(model, sched, dir);
      write_run_manifest(dir, *train, seed);
      return 0;
    }

    auto open_ckpt = [&](bool override_steps) {
      auto lc = load_checkpoint<float>(ckpt_dir);
      if (override_steps)
        lc.schedule = make_schedule(lc.schedule.t_train, lc.schedule.beta_start, lc.schedule.beta_end,
                                    static_cast<int>(t_infer));
      return lc;
    };

    if (*eval) {
      auto lc = open_ckpt(eval->count("--t-infer") > 0);
      const auto& cfg = lc.model.config();
      const auto recs = load_dataset(data_dir, workers);
      const auto samples = window_all(recs, cfg.n, 0, cfg.n);
      const auto rep = evaluate_model(samples, lc.model, lc.schedule, Ablation{ablate_esem, ablate_esto}, seed);
      const fs::path rp(report_path);
      write_json(rp, rep);
      const fs::path base = rp.parent_path() / rp.stem();
      write_cdf_csv(rep.cdf_mpjpe, base.string() + "_cdf_mpjpe.csv");
      write_cdf_csv(rep.cdf_angular, base.string() + "_cdf_angular.csv");
      out << "mpjpe_cm mean " << rep.mpjpe.mean << " median " << rep.mpjpe.median << "; angular_deg mean "
          << rep.angular.mean << " median " << rep.angular.median << "\n";
      write_run_manifest(rp.has_parent_path() ? rp.parent_path() : fs::path("."), *eval, seed);
      return 0;
    }

    if (*clus) {
      auto lc = open_ckpt(false);
      const auto recs = load_dataset(data_dir, workers);
      std::vector<WindowRef> refs;
      const auto samples = window_all(recs, lc.model.config().n, 0, lc.model.config().n, &refs);
      const auto emb = embed_all(lc.model, samples);
      const auto res = cluster(emb, min_cluster);
      auto j = cluster_report(emb, res);
      nlohmann::json windows = nlohmann::json::array();
      for (const auto& r : refs) windows.push_back({{"recording", recs[r.recording].name}, {"start", r.start}});
      j["windows"] = windows;
      const fs::path dir(out_dir);
      write_json(dir / "clusters.json", j);
      out << res.n_clusters << " clusters, "
          << std::count(res.labels.begin(), res.labels.end(), -1) << " noise points\n";
      write_run_manifest(dir, *clus, seed);
      return 0;
    }

    if (*gen) {
      auto lc = open_ckpt(gen->count("--t-infer") > 0);
      const auto& cfg = lc.model.config();
      const auto recs = load_dataset(data_dir, workers);
      std::vector<WindowRef> refs;
      const auto samples = window_all(recs, cfg.n, 0, cfg.n, &refs);
      const fs::path dir(out_dir);
      fs::create_directories(dir);
      for (std::size_t i = 0; i < std::min(count, samples.size()); ++i) {
        const auto h0 = to_tensor<float>(samples[i].input, cfg.signal_scale);
        const auto g = from_noise ? generate_from_noise(lc.model, lc.model.embed(h0), seed + i, lc.schedule)
                                  : generate_variants(lc.model, h0, beta, seed + i, lc.schedule);
        const auto seq = from_tensor(g, cfg.signal_scale, true, samples[i].input.fps);
        const auto name = std::string(from_noise ? "noise_" : "variant_") + std::to_string(i) + ".jsonl";
        save_recording(as_recording(seq, recs[refs[i].recording].rec.meta), (dir / name).string());
      }
      out << "wrote " << std::min(count, samples.size()) << " generated windows to " << dir.string() << "\n";
      write_run_manifest(dir, *gen, seed);
      return 0;
    }

    if (*probe) {
      if (task != "activity" && task != "user") throw BadConfig("--task must be activity or user");
      auto lc = open_ckpt(false);
      const auto& cfg = lc.model.config();
      const auto recs = load_dataset(data_dir, workers);
      // Non-overlapping windows; the first 80% of each recording trains the probe.
      std::vector<Sample> tr, te;
      std::vector<std::string> ytr, yte;
      for (const auto& r : recs) {
        const auto w = window(r.rec, cfg.n, 0, cfg.n).samples;
        const std::size_t cut = (w.size() * 4 + 4) / 5;
        for (std::size_t i = 0; i < w.size(); ++i) {
          const auto label = task == "activity" ? r.rec.meta.activity : r.rec.meta.user;
          (i < cut ? tr : te).push_back(w[i]);
          (i < cut ? ytr : yte).push_back(label);
        }
      }
      if (te.empty()) te = tr, yte = ytr;
      ProbeConfig pc;
      pc.learning_rate = probe_lr;
      pc.batch_size = probe_batch;
      pc.epochs = probe_epochs;
      pc.seed = seed;
      const auto p = fit_probe(embed_all(lc.model, tr), ytr, pc);
      auto j = to_json_report(probe_report(p, embed_all(lc.model, te), yte));
      j["task"] = task;
      j["train_accuracy"] = probe_accuracy(p, embed_all(lc.model, tr), ytr);
      j["n_train"] = tr.size();
      j["n_test"] = te.size();
      const fs::path rp(report_path);
      write_json(rp, j);
      out << task << " probe accuracy " << j["accuracy"].get<double>() << " (chance " << j["chance"].get<double>()
          << ")\n";
      write_run_manifest(rp.has_parent_path() ? rp.parent_path() : fs::path("."), *probe, seed);
      return 0;
    }

    if (*inspect) {
      if (ckpt_dir.empty() && data_dir.empty()) throw CLI::ValidationError("inspect", "needs --ckpt or --data");
      nlohmann::json j;
      if (!ckpt_dir.empty()) {
        auto lc = load_checkpoint<float>(ckpt_dir);
        j["checkpoint"] = {{"model", lc.model.config().model_name()},
                           {"parameters", lc.model.params().num_scalars()},
                           {"tensors", lc.model.params().size()},
                           {"config", lc.model.config()},
                           {"schedule", lc.schedule}};
      }
      if (!data_dir.empty()) {
        const auto recs = load_dataset(data_dir, workers);
        nlohmann::json rs = nlohmann::json::array();
        for (const auto& r : recs)
          rs.push_back({{"name", r.name},
                        {"frames", r.rec.size()},
                        {"user", r.rec.meta.user},
                        {"activity", r.rec.meta.activity},
                        {"outliers", flag_outliers(r.rec).size()}});
        j["recordings"] = rs;
      }
      out << j.dump(2) << "\n";
      if (!out_dir.empty()) write_run_manifest(out_dir, *inspect, seed);
      return 0;
    }
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace hhae
