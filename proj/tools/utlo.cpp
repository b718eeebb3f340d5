// Command-line driver: build-dataset, train, eval, sweep, report.
// Exit codes: 0 success, 1 user error, 2 numerical abort.

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "utlo/harness.hpp"
#include "utlo/report.hpp"

using namespace utlo;

namespace {

ExperimentConfig load_config(const std::string& path, uint64_t seed_override) {
  ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : ExperimentConfig::parse_file(path);
  if (seed_override) cfg.train_seed = seed_override;
  cfg.validate();
  return cfg;
}

void print_profile(const LongTailProfile& p) {
  std::printf("classes: %d  rho: %.2f  total: %lld\n", p.num_classes(), p.rho,
              static_cast<long long>(p.total()));
  std::printf("counts:");
  for (int c : p.class_counts) std::printf(" %d", c);
  std::printf("\nfew-shot classes:");
  for (int c : p.few_shot_classes) std::printf(" %d", c);
  std::printf("\n");
}

int cmd_build_dataset(const std::string& config_path, const std::string& out_path, bool balanced,
                      uint64_t seed) {
  ExperimentConfig cfg = load_config(config_path, 0);
  if (balanced) cfg.dataset_balanced = true;
  if (seed) cfg.dataset_seed = seed;
  auto data = build_dataset(cfg);
  save_dataset(data, out_path);
  print_profile(data.profile);
  std::printf("wrote %s (%lld images at %dx%d)\n", out_path.c_str(),
              static_cast<long long>(data.count()), data.image_size, data.image_size);
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, uint64_t seed) {
  ExperimentConfig cfg = load_config(config_path, seed);
  auto result = run_training(cfg, out_dir, /*verbose=*/true);
  const auto sel = select_best(out_dir);
  std::printf("run complete: %s\nbest fid_fs %.4f at iter %lld (%s)\n", out_dir.c_str(), sel.fid_fs,
              static_cast<long long>(sel.iter), sel.checkpoint.c_str());
  auto state = TrainState<float>::load(sel.checkpoint);
  write_sample_grid(state, 8, derive_seed(cfg.train_seed, "final-grid"),
                    fs::path(out_dir) / "samples_grid.png",
                    fs::path(out_dir) / "samples_grid.json");
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset,
             const std::string& config_path, const std::string& out_prefix,
             const std::string& select_dir, uint64_t seed) {
  if (!select_dir.empty()) {
    const auto sel = select_best(select_dir);
    std::printf("best checkpoint: %s (iter %lld, fid_fs %.6f)\n", sel.checkpoint.c_str(),
                static_cast<long long>(sel.iter), sel.fid_fs);
    return 0;
  }
  std::string cfg_path = config_path;
  ExperimentConfig cfg = load_config(cfg_path, seed);
  auto report = run_eval(checkpoint, dataset, cfg, out_prefix);
  std::printf("fid %.6f  fid_fs %.6f  kid(x1000) %.6f  kid_fs(x1000) %.6f\n", report.fid,
              report.fid_fs, report.kid * 1000.0, report.kid_fs * 1000.0);
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& axis,
              const std::vector<double>& values, const std::string& out_dir, uint64_t seed) {
  ExperimentConfig cfg = load_config(config_path, seed);
  auto rows = run_sweep(cfg, axis, values, out_dir, /*verbose=*/true);
  std::printf("%-10s %-10s %-10s %-12s\n", axis.c_str(), "fid", "fid_fs", "best_iter");
  for (const auto& r : rows)
    std::printf("%-10g %-10.4f %-10.4f %-12lld\n", r.value, r.fid, r.fid_fs,
                static_cast<long long>(r.best_iter));
  std::printf("merged table: %s/sweep.csv\n", out_dir.c_str());
  return 0;
}

int cmd_report(const std::string& run_dir, std::string config_path, int pair_latents) {
  if (config_path.empty()) config_path = (fs::path(run_dir) / "config.txt").string();
  ExperimentConfig cfg = ExperimentConfig::parse_file(config_path);
  write_run_report(run_dir, cfg, pair_latents);
  std::printf("report artifacts written to %s\n", run_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Long-tail class-conditional GAN trainer with an unconditional low-resolution objective"};
  app.require_subcommand(1);

  std::string config_path, out_path, checkpoint, dataset, select_dir, axis, run_dir;
  std::vector<double> values;
  uint64_t seed = 0;
  bool balanced = false;
  int pair_latents = 0;

  auto* build = app.add_subcommand("build-dataset", "Render a synthetic long-tail dataset file");
  build->add_option("--config", config_path, "config file");
  build->add_option("--out", out_path, "output .ltds path")->required();
  build->add_flag("--balanced", balanced, "equal per-class counts summing to the long-tail total");
  build->add_option("--seed", seed, "dataset seed override");

  auto* train = app.add_subcommand("train", "Train a model per the config");
  train->add_option("--config", config_path, "config file")->required();
  train->add_option("--out", out_path, "run directory")->required();
  train->add_option("--seed", seed, "train seed override");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint against a dataset");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file");
  eval->add_option("--dataset", dataset, "dataset file");
  eval->add_option("--config", config_path, "config file");
  eval->add_option("--out", out_path, "output prefix for .csv/.json");
  eval->add_option("--select", select_dir, "print the FID-FS-minimizing checkpoint of a run dir");
  eval->add_option("--seed", seed, "eval seed override");

  auto* sweep = app.add_subcommand("sweep", "Grid sweep over res_uc, lambda or beta");
  sweep->add_option("--config", config_path, "config file")->required();
  sweep->add_option("--axis", axis, "res_uc | lambda | beta")->required();
  sweep->add_option("--values", values, "axis values")->required()->delimiter(',');
  sweep->add_option("--out", out_path, "sweep directory")->required();
  sweep->add_option("--seed", seed, "run seed override");

  auto* report = app.add_subcommand("report", "Emit curves, grids and the pair-similarity heat map");
  report->add_option("--run", run_dir, "run directory")->required();
  report->add_option("--config", config_path, "config file (default: <run>/config.txt)");
  report->add_option("--pair-latents", pair_latents, "latents for the pair-similarity matrix");

  CLI11_PARSE(app, argc, argv);

  try {
    if (build->parsed()) return cmd_build_dataset(config_path, out_path, balanced, seed);
    if (train->parsed()) return cmd_train(config_path, out_path, seed);
    if (eval->parsed())
      return cmd_eval(checkpoint, dataset, config_path, out_path, select_dir, seed);
    if (sweep->parsed()) return cmd_sweep(config_path, axis, values, out_path, seed);
    if (report->parsed()) return cmd_report(run_dir, config_path, pair_latents);
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical abort: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
