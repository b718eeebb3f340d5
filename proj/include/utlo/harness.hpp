#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "utlo/config.hpp"
#include "utlo/metrics.hpp"

namespace utlo {

constexpr const char* kVersionString = "utlo 0.1.0";

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Run manifest: written atomically at run start, finalized at end. A manifest
// without "finished" marks an aborted run.
// ---------------------------------------------------------------------------

struct RunManifest {
  std::string config_hash;
  std::string version = kVersionString;
  std::string started;
  std::string finished;  // empty until the run completes
  uint64_t seed = 0;
  std::vector<std::string> checkpoints;
  std::string metrics_csv = "metrics.csv";
  std::string note;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["config_hash"] = config_hash;
    j["version"] = version;
    j["started"] = started;
    j["finished"] = finished;
    j["seed"] = seed;
    j["checkpoints"] = checkpoints;
    j["metrics_csv"] = metrics_csv;
    if (!note.empty()) j["note"] = note;
    return j;
  }

  void write(const fs::path& dir) const {
    const fs::path tmp = dir / "manifest.json.tmp";
    std::ofstream f(tmp);
    f << to_json().dump(2) << "\n";
    f.close();
    fs::rename(tmp, dir / "manifest.json");
  }
};

inline std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

inline std::string hash_hex(uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Dataset plumbing
// ---------------------------------------------------------------------------

inline LongTailProfile profile_from_config(const ExperimentConfig& cfg) {
  LongTailProfile p;
  if (cfg.dataset_balanced) {
    // balanced control of the same total size as the long-tailed version
    auto lt = make_exponential_profile(cfg.dataset_num_classes, cfg.dataset_n_max,
                                       cfg.dataset_rho, cfg.dataset_few_shot_fraction);
    p = make_balanced_profile(cfg.dataset_num_classes, lt.total(), cfg.dataset_few_shot_fraction);
  } else {
    p = make_exponential_profile(cfg.dataset_num_classes, cfg.dataset_n_max, cfg.dataset_rho,
                                 cfg.dataset_few_shot_fraction);
  }
  if (cfg.dataset_few_shot_rule == "under50") p.few_shot_classes = few_shot_under_threshold(p, 50);
  return p;
}

inline Dataset build_dataset(const ExperimentConfig& cfg) {
  auto profile = profile_from_config(cfg);
  return generate_synthetic_dataset(cfg.world_spec(), profile, cfg.dataset_seed);
}

inline std::set<int> few_shot_from_config(const ExperimentConfig& cfg,
                                          const LongTailProfile& profile) {
  if (cfg.dataset_few_shot_rule == "under50") return few_shot_under_threshold(profile, 50);
  LongTailProfile tmp = profile;
  const int fs = static_cast<int>(std::ceil(cfg.dataset_few_shot_fraction * profile.num_classes()));
  std::set<int> out;
  for (int c = profile.num_classes() - fs; c < profile.num_classes(); ++c) out.insert(c);
  return out;
}

inline std::unique_ptr<FeatureEmbedder> make_embedder(const ExperimentConfig& cfg) {
  if (cfg.eval_embedder == "pool-flatten") return std::make_unique<PoolFlattenEmbedder>();
  if (cfg.eval_embedder == "random-conv") return std::make_unique<RandomConvEmbedder>();
  if (cfg.eval_embedder == "probe-classifier")
    return std::make_unique<ProbeClassifierEmbedder>(cfg.world_spec());
  throw ConfigError("unknown embedder: " + cfg.eval_embedder);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

// Everything reusable across the periodic evaluations of one run: the
// embedder, the embedded real set, and the protocol constants.
struct EvalContext {
  std::unique_ptr<FeatureEmbedder> embedder;
  EmbeddedSet real;
  std::vector<double> label_cdf;  // generated-label distribution
  std::set<int> few_shot;
  int image_size = 0;
  int64_t gen_count = 0;
  bool fs_balanced_real = true;
  int kid_block = 1000;
  uint64_t eval_seed = 0;

  static EvalContext make(const ExperimentConfig& cfg, const Dataset& train_data,
                          const Dataset& eval_data) {
    EvalContext ctx;
    ctx.embedder = make_embedder(cfg);
    ctx.image_size = eval_data.image_size;
    ctx.fs_balanced_real = cfg.eval_fs_balanced_real;
    ctx.kid_block = cfg.eval_kid_block;
    ctx.eval_seed = cfg.eval_seed ? cfg.eval_seed : derive_seed(cfg.train_seed, "eval");
    ctx.few_shot = few_shot_from_config(cfg, train_data.profile);
    ctx.gen_count = cfg.eval_gen_count > 0
                        ? cfg.eval_gen_count
                        : std::min<int64_t>(4 * eval_data.count(), 50000);
    // embed the real evaluation set once
    std::vector<float> pixels(eval_data.images.size());
    for (size_t i = 0; i < pixels.size(); ++i) pixels[i] = pixel_to_float(eval_data.images[i]);
    ctx.real.dim = ctx.embedder->dim();
    ctx.embedder->embed(pixels.data(), static_cast<int>(eval_data.count()), eval_data.image_size,
                        ctx.real.features);
    ctx.real.labels.assign(eval_data.labels.begin(), eval_data.labels.end());
    // generated labels: match the real evaluation distribution, or uniform
    double total = 0.0;
    std::vector<double> weights(eval_data.profile.num_classes());
    for (int c = 0; c < eval_data.profile.num_classes(); ++c) {
      weights[c] = cfg.eval_label_dist == "uniform"
                       ? 1.0
                       : static_cast<double>(eval_data.profile.class_counts[c]);
      total += weights[c];
    }
    double acc = 0.0;
    for (double w : weights) {
      acc += w / total;
      ctx.label_cdf.push_back(acc);
    }
    ctx.label_cdf.back() = 1.0;
    return ctx;
  }
};

template <class S>
inline MetricsReport evaluate(TrainState<S>& state, const EvalContext& ctx, int64_t iter) {
  Rng rng(derive_seed(ctx.eval_seed, "eval-iter", static_cast<uint64_t>(iter)));
  const int zd = state.config().z_dim;
  const int h = state.config().image_size;
  if (h != ctx.image_size)
    throw DimensionError("evaluate: checkpoint resolution " + std::to_string(h) +
                         " does not match dataset resolution " + std::to_string(ctx.image_size));
  EmbeddedSet gen;
  gen.dim = ctx.embedder->dim();
  gen.features.resize(ctx.gen_count * static_cast<int64_t>(gen.dim));
  gen.labels.resize(ctx.gen_count);
  const int batch = 64;
  std::vector<float> z(static_cast<size_t>(batch) * zd), images, feats;
  for (int64_t start = 0; start < ctx.gen_count; start += batch) {
    const int b = static_cast<int>(std::min<int64_t>(batch, ctx.gen_count - start));
    std::vector<int> labels(b);
    for (int i = 0; i < b; ++i) {
      const double u = rng.uniform();
      labels[i] = static_cast<int>(std::lower_bound(ctx.label_cdf.begin(), ctx.label_cdf.end(), u) -
                                   ctx.label_cdf.begin());
      gen.labels[start + i] = labels[i];
    }
    for (int i = 0; i < b * zd; ++i) z[i] = static_cast<float>(rng.normal());
    z.resize(static_cast<size_t>(b) * zd);
    state.generate_images(z, labels, images);
    z.resize(static_cast<size_t>(batch) * zd);
    ctx.embedder->embed(images.data(), b, h, feats);
    std::copy(feats.begin(), feats.end(), gen.features.begin() + start * gen.dim);
  }
  ReportOptions opts;
  opts.fs_balanced_real = ctx.fs_balanced_real;
  opts.kid_block = ctx.kid_block;
  opts.seed = derive_seed(ctx.eval_seed, "report", static_cast<uint64_t>(iter));
  return compute_report(gen, ctx.real, ctx.few_shot, ctx.embedder->name(), opts);
}

// ---------------------------------------------------------------------------
// Metrics CSV
// ---------------------------------------------------------------------------

constexpr const char* kCsvHeader = "iter,fid,fid_fs,kid_x1000,kid_fs_x1000,embedder,gen_count,real_count,seed";

inline std::string csv_row(int64_t iter, const MetricsReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%lld,%.6f,%.6f,%.6f,%.6f,%s,%lld,%lld,%llu",
                static_cast<long long>(iter), r.fid, r.fid_fs, r.kid * 1000.0, r.kid_fs * 1000.0,
                r.embedder.c_str(), static_cast<long long>(r.gen_count),
                static_cast<long long>(r.real_count), static_cast<unsigned long long>(r.seed));
  return buf;
}

inline nlohmann::json report_json(int64_t iter, const MetricsReport& r) {
  nlohmann::json j;
  j["iter"] = iter;
  j["fid"] = r.fid;
  j["fid_fs"] = r.fid_fs;
  j["kid"] = r.kid;
  j["kid_fs"] = r.kid_fs;
  j["kid_x1000"] = r.kid * 1000.0;
  j["kid_fs_x1000"] = r.kid_fs * 1000.0;
  j["embedder"] = r.embedder;
  j["gen_count"] = r.gen_count;
  j["real_count"] = r.real_count;
  j["few_shot_classes"] = std::vector<int>(r.few_shot_classes.begin(), r.few_shot_classes.end());
  j["fs_real_counts_used"] = r.fs_real_counts_used;
  j["fs_gen_count"] = r.fs_gen_count;
  j["fs_real_count"] = r.fs_real_count;
  j["seed"] = r.seed;
  return j;
}

struct CsvRow {
  int64_t iter = 0;
  double fid = 0, fid_fs = 0, kid_x1000 = 0, kid_fs_x1000 = 0;
  std::string rest;
};

inline std::vector<CsvRow> read_metrics_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open metrics csv: " + path);
  std::vector<CsvRow> rows;
  std::string line;
  bool first = true;
  while (std::getline(f, line)) {
    if (first) {
      first = false;
      continue;  // header
    }
    if (line.empty()) continue;
    CsvRow r;
    long long iter = 0;
    if (std::sscanf(line.c_str(), "%lld,%lf,%lf,%lf,%lf", &iter, &r.fid, &r.fid_fs, &r.kid_x1000,
                    &r.kid_fs_x1000) != 5)
      throw FormatError("metrics csv: bad row '" + line + "'");
    r.iter = iter;
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Training driver
// ---------------------------------------------------------------------------

struct RunResult {
  fs::path dir;
  std::vector<std::pair<int64_t, MetricsReport>> reports;
};

inline std::string checkpoint_name(int64_t iter) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%06lld.utlo", static_cast<long long>(iter));
  return buf;
}

template <class S = float>
inline RunResult run_training(const ExperimentConfig& cfg, const fs::path& out_dir,
                              bool verbose = false) {
  cfg.validate();
  if (cfg.dataset_path.empty()) throw ConfigError("train: dataset.path is not set");
  if (!fs::exists(cfg.dataset_path)) throw ConfigError("train: dataset file not found: " + cfg.dataset_path);

  fs::create_directories(out_dir);
  {
    std::ofstream f(out_dir / "config.txt");
    f << cfg.serialize();
  }
  RunManifest manifest;
  manifest.config_hash = hash_hex(cfg.hash());
  manifest.started = iso_timestamp();
  manifest.seed = cfg.train_seed;
  manifest.write(out_dir);

  Dataset train_data = load_dataset(cfg.dataset_path, cfg.dataset_few_shot_fraction);
  Dataset eval_data = cfg.eval_dataset.empty()
                          ? train_data
                          : load_dataset(cfg.eval_dataset, cfg.dataset_few_shot_fraction);
  if (train_data.image_size != cfg.dataset_image_size)
    throw ConfigError("train: dataset resolution " + std::to_string(train_data.image_size) +
                      " does not match config image_size " + std::to_string(cfg.dataset_image_size));
  if (eval_data.profile.num_classes() != train_data.profile.num_classes())
    throw ConfigError("train: eval dataset class count mismatch");

  auto sampler = sampler_weights(train_data.profile, cfg.train_sampler_beta);
  auto ctx = EvalContext::make(cfg, train_data, eval_data);
  TrainState<S> state(cfg.model_config(), cfg.train_options(), cfg.train_seed);

  const fs::path csv_path = out_dir / "metrics.csv";
  {
    std::ofstream f(csv_path);
    f << kCsvHeader << "\n";
  }
  RunResult result;
  result.dir = out_dir;

  auto do_eval = [&](int64_t iter) {
    auto report = evaluate(state, ctx, iter);
    {
      std::ofstream f(csv_path, std::ios::app);
      f << csv_row(iter, report) << "\n";
    }
    {
      char name[48];
      std::snprintf(name, sizeof(name), "report_%06lld.json", static_cast<long long>(iter));
      std::ofstream f(out_dir / name);
      f << report_json(iter, report).dump(2) << "\n";
    }
    const std::string ckpt = checkpoint_name(iter);
    state.save((out_dir / ckpt).string());
    manifest.checkpoints.push_back(ckpt);
    manifest.write(out_dir);
    result.reports.emplace_back(iter, std::move(report));
    if (verbose)
      std::printf("[eval] iter %lld fid %.3f fid_fs %.3f\n", static_cast<long long>(iter),
                  result.reports.back().second.fid, result.reports.back().second.fid_fs);
  };

  try {
    for (int64_t it = 1; it <= cfg.train_iterations; ++it) {
      auto log = state.step(train_data, sampler);
      if (verbose && it % 100 == 0)
        std::printf("[train] iter %lld L_D %.4f L_G %.4f\n", static_cast<long long>(it), log.d_loss,
                    log.g_loss);
      if (cfg.train_eval_every > 0 && it % cfg.train_eval_every == 0 && it != cfg.train_iterations)
        do_eval(it);
    }
    do_eval(cfg.train_iterations);
  } catch (const NumericalError&) {
    // diagnostic snapshot for post-mortem, then surface the abort
    state.save((out_dir / "ckpt_abort.utlo").string());
    manifest.note = "aborted: non-finite loss at iteration " + std::to_string(state.iteration());
    manifest.write(out_dir);
    throw;
  }

  manifest.finished = iso_timestamp();
  manifest.write(out_dir);
  return result;
}

// Checkpoint minimizing FID-FS over a run's metrics CSV (ties -> earliest).
struct Selection {
  int64_t iter = 0;
  double fid_fs = 0.0;
  std::string checkpoint;
};

inline Selection select_best(const fs::path& run_dir) {
  const auto rows = read_metrics_csv((run_dir / "metrics.csv").string());
  if (rows.empty()) throw Error("select_best: metrics csv has no rows in " + run_dir.string());
  const CsvRow* best = &rows[0];
  for (const auto& r : rows)
    if (r.fid_fs < best->fid_fs) best = &r;
  Selection s;
  s.iter = best->iter;
  s.fid_fs = best->fid_fs;
  s.checkpoint = (run_dir / checkpoint_name(best->iter)).string();
  return s;
}

// ---------------------------------------------------------------------------
// Standalone evaluation of a checkpoint against a dataset file
// ---------------------------------------------------------------------------

template <class S = float>
inline MetricsReport run_eval(const std::string& checkpoint_path, const std::string& dataset_path,
                              const ExperimentConfig& cfg, const fs::path& out_prefix) {
  auto state = TrainState<S>::load(checkpoint_path);
  Dataset data = load_dataset(dataset_path, cfg.dataset_few_shot_fraction);
  if (state.config().num_classes != data.profile.num_classes())
    throw DimensionError("eval: checkpoint has " + std::to_string(state.config().num_classes) +
                         " classes, dataset has " + std::to_string(data.profile.num_classes()));
  if (state.config().image_size != data.image_size)
    throw DimensionError("eval: checkpoint resolution " + std::to_string(state.config().image_size) +
                         " does not match dataset resolution " + std::to_string(data.image_size));
  auto ctx = EvalContext::make(cfg, data, data);
  auto report = evaluate(state, ctx, state.iteration());
  fs::create_directories(out_prefix.parent_path().empty() ? fs::path(".") : out_prefix.parent_path());
  {
    std::ofstream f(out_prefix.string() + ".csv");
    f << kCsvHeader << "\n" << csv_row(state.iteration(), report) << "\n";
  }
  {
    std::ofstream f(out_prefix.string() + ".json");
    f << report_json(state.iteration(), report).dump(2) << "\n";
  }
  return report;
}

// ---------------------------------------------------------------------------
// Ablation sweeps
// ---------------------------------------------------------------------------

inline void apply_sweep_value(ExperimentConfig& cfg, const std::string& axis, double value) {
  if (axis == "lambda") {
    if (value < 0) throw RangeError("sweep: lambda must be >= 0, got " + std::to_string(value));
    cfg.model_lambda_uc = value;
  } else if (axis == "res_uc") {
    const int v = static_cast<int>(value);
    if (v != value || !is_power_of_two(v) || v < 4 || v >= cfg.dataset_image_size)
      throw RangeError("sweep: res_uc value " + std::to_string(value) +
                       " must be a power of two in [4, image_size)");
    cfg.model_low_res = v;
  } else if (axis == "beta") {
    if (!(value >= 0.0 && value <= 1.0))
      throw RangeError("sweep: beta must be in [0,1], got " + std::to_string(value));
    cfg.train_sampler_beta = value;
  } else {
    throw ConfigError("sweep: unknown axis '" + axis + "' (expected res_uc, lambda or beta)");
  }
}

struct SweepRow {
  double value = 0;
  int64_t best_iter = 0;
  double fid = 0, fid_fs = 0, kid_x1000 = 0, kid_fs_x1000 = 0;
  std::string run_dir;
};

template <class S = float>
inline std::vector<SweepRow> run_sweep(ExperimentConfig base, const std::string& axis,
                                       const std::vector<double>& values, const fs::path& out_dir,
                                       bool verbose = false) {
  if (values.empty()) throw ConfigError("sweep: no values given");
  for (double v : values) {
    ExperimentConfig probe = base;
    apply_sweep_value(probe, axis, v);  // reject invalid values before launching
  }
  fs::create_directories(out_dir);
  if (base.dataset_path.empty()) {
    // children share one dataset file
    auto data = build_dataset(base);
    const auto path = (out_dir / "dataset.ltds").string();
    save_dataset(data, path);
    base.dataset_path = path;
  }
  std::vector<SweepRow> rows;
  for (size_t i = 0; i < values.size(); ++i) {
    ExperimentConfig child = base;
    apply_sweep_value(child, axis, values[i]);
    char vstr[40];
    std::snprintf(vstr, sizeof(vstr), "%g", values[i]);
    child.train_seed = derive_seed(base.train_seed, axis + "=" + vstr);
    const fs::path child_dir = out_dir / (axis + "_" + vstr);
    run_training<S>(child, child_dir, verbose);
    const auto sel = select_best(child_dir);
    const auto csv = read_metrics_csv((child_dir / "metrics.csv").string());
    SweepRow row;
    row.value = values[i];
    row.best_iter = sel.iter;
    for (const auto& r : csv)
      if (r.iter == sel.iter) {
        row.fid = r.fid;
        row.fid_fs = r.fid_fs;
        row.kid_x1000 = r.kid_x1000;
        row.kid_fs_x1000 = r.kid_fs_x1000;
      }
    row.run_dir = child_dir.string();
    rows.push_back(std::move(row));
  }
  std::sort(rows.begin(), rows.end(),
            [](const SweepRow& a, const SweepRow& b) { return a.fid_fs < b.fid_fs; });
  {
    std::ofstream f(out_dir / "sweep.csv");
    f << axis << ",best_iter,fid,fid_fs,kid_x1000,kid_fs_x1000,run_dir\n";
    for (const auto& r : rows) {
      char buf[512];
      std::snprintf(buf, sizeof(buf), "%g,%lld,%.6f,%.6f,%.6f,%.6f,%s", r.value,
                    static_cast<long long>(r.best_iter), r.fid, r.fid_fs, r.kid_x1000,
                    r.kid_fs_x1000, r.run_dir.c_str());
      f << buf << "\n";
    }
  }
  return rows;
}

}  // namespace utlo
