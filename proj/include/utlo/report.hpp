#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "utlo/harness.hpp"
#include "utlo/png.hpp"

namespace utlo {

// ---------------------------------------------------------------------------
// Metric-vs-iteration line plot
// ---------------------------------------------------------------------------

struct Series {
  std::string name;
  Color color;
  std::vector<double> x, y;
};

inline void plot_lines(const std::vector<Series>& series, const std::string& title_unused,
                       const fs::path& path) {
  const int W = 640, H = 420, ml = 64, mr = 16, mt = 16, mb = 40;
  Canvas cv(W, H);
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) ymax = ymin + 1;
  ymin = std::min(0.0, ymin);
  const auto px = [&](double x) {
    return ml + static_cast<int>((x - xmin) / (xmax - xmin) * (W - ml - mr));
  };
  const auto py = [&](double y) {
    return H - mb - static_cast<int>((y - ymin) / (ymax - ymin) * (H - mt - mb));
  };
  const Color axis{60, 60, 60};
  cv.line(ml, mt, ml, H - mb, axis);
  cv.line(ml, H - mb, W - mr, H - mb, axis);
  char buf[40];
  for (int t = 0; t <= 4; ++t) {
    const double yv = ymin + (ymax - ymin) * t / 4.0;
    const int yy = py(yv);
    cv.line(ml - 3, yy, ml, yy, axis);
    std::snprintf(buf, sizeof(buf), "%.5g", yv);
    cv.text(4, yy - 3, buf, axis);
    const double xv = xmin + (xmax - xmin) * t / 4.0;
    const int xx = px(xv);
    cv.line(xx, H - mb, xx, H - mb + 3, axis);
    std::snprintf(buf, sizeof(buf), "%.5g", xv);
    cv.text(xx - 12, H - mb + 8, buf, axis);
  }
  cv.text(W / 2 - 10, H - 14, "iter", axis);
  int legend_y = mt + 4;
  for (const auto& s : series) {
    for (size_t i = 1; i < s.x.size(); ++i)
      cv.line(px(s.x[i - 1]), py(s.y[i - 1]), px(s.x[i]), py(s.y[i]), s.color);
    cv.line(W - mr - 86, legend_y + 3, W - mr - 70, legend_y + 3, s.color);
    cv.text(W - mr - 64, legend_y, s.name, axis);
    legend_y += 12;
  }
  cv.save(path.string());
}

inline void plot_metrics_csv(const fs::path& csv_path, const fs::path& out_png) {
  const auto rows = read_metrics_csv(csv_path.string());
  if (rows.empty()) throw Error("report: metrics csv is empty: " + csv_path.string());
  Series fid{"fid", {200, 60, 40}, {}, {}};
  Series fid_fs{"fid fs", {40, 80, 200}, {}, {}};
  for (const auto& r : rows) {
    fid.x.push_back(static_cast<double>(r.iter));
    fid.y.push_back(r.fid);
    fid_fs.x.push_back(static_cast<double>(r.iter));
    fid_fs.y.push_back(r.fid_fs);
  }
  plot_lines({fid, fid_fs}, "", out_png);
}

// ---------------------------------------------------------------------------
// Image grids
// ---------------------------------------------------------------------------

namespace detail {

inline void float_image_to_rgb(const float* img, int h, std::vector<uint8_t>& rgb) {
  rgb.resize(static_cast<size_t>(h) * h * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < h; ++x)
      for (int c = 0; c < 3; ++c)
        rgb[(static_cast<size_t>(y) * h + x) * 3 + c] =
            float_to_pixel(img[static_cast<size_t>(c) * h * h + static_cast<size_t>(y) * h + x]);
}

inline void nearest_upscale_rgb(const std::vector<uint8_t>& src, int h, int factor,
                                std::vector<uint8_t>& dst) {
  const int H = h * factor;
  dst.resize(static_cast<size_t>(H) * H * 3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < H; ++x)
      for (int c = 0; c < 3; ++c)
        dst[(static_cast<size_t>(y) * H + x) * 3 + c] =
            src[(static_cast<size_t>(y / factor) * h + x / factor) * 3 + c];
}

}  // namespace detail

// Class-by-latent grid: row = class, column = one latent shared down the column.
template <class S>
inline void write_sample_grid(TrainState<S>& state, int num_latents, uint64_t seed,
                              const fs::path& out_png, const fs::path& out_manifest) {
  const int C = state.config().num_classes;
  const int zd = state.config().z_dim;
  const int h = state.config().image_size;
  const int pad = 2;
  Canvas cv(pad + num_latents * (h + pad), pad + C * (h + pad), {24, 24, 24});
  nlohmann::json manifest;
  manifest["seed"] = seed;
  manifest["rows"] = "classes";
  manifest["cols"] = "latents";
  std::vector<uint64_t> latent_seeds;
  std::vector<float> images;
  std::vector<uint8_t> rgb;
  for (int t = 0; t < num_latents; ++t) {
    const uint64_t zseed = derive_seed(seed, "grid-z", static_cast<uint64_t>(t));
    latent_seeds.push_back(zseed);
    Rng rng(zseed);
    std::vector<float> z(zd);
    for (auto& v : z) v = static_cast<float>(rng.normal());
    std::vector<float> z_batch(static_cast<size_t>(C) * zd);
    std::vector<int> labels(C);
    for (int c = 0; c < C; ++c) {
      labels[c] = c;
      std::copy(z.begin(), z.end(), z_batch.begin() + static_cast<size_t>(c) * zd);
    }
    state.generate_images(z_batch, labels, images);
    for (int c = 0; c < C; ++c) {
      detail::float_image_to_rgb(images.data() + static_cast<size_t>(c) * 3 * h * h, h, rgb);
      cv.blit_rgb(pad + t * (h + pad), pad + c * (h + pad), rgb.data(), h, h);
    }
  }
  manifest["latent_seeds"] = latent_seeds;
  cv.save(out_png.string());
  std::ofstream f(out_manifest);
  f << manifest.dump(2) << "\n";
}

// Knowledge-sharing grid: per row one latent; column 1 is the upsampled
// low-resolution (unconditional) image, following columns are the
// class-conditional images built on top of it for selected head and tail
// classes.
template <class S>
inline void write_knowledge_grid(TrainState<S>& state, const std::set<int>& few_shot,
                                 int num_rows, uint64_t seed, const fs::path& out_png,
                                 const fs::path& out_manifest) {
  const int C = state.config().num_classes;
  const int zd = state.config().z_dim;
  const int h = state.config().image_size;
  const int l = state.config().low_res;
  // two head classes and up to two tail classes
  std::vector<int> selected = {0};
  if (C > 1) selected.push_back(1);
  std::vector<int> tail(few_shot.rbegin(), few_shot.rend());
  for (size_t i = 0; i < tail.size() && i < 2; ++i) selected.push_back(tail[i]);
  std::sort(selected.begin(), selected.end());
  selected.erase(std::unique(selected.begin(), selected.end()), selected.end());

  const int cols = 1 + static_cast<int>(selected.size());
  const int pad = 2;
  Canvas cv(pad + cols * (h + pad), pad + num_rows * (h + pad), {24, 24, 24});
  nlohmann::json manifest;
  manifest["seed"] = seed;
  manifest["classes"] = selected;
  manifest["low_res"] = l;
  std::vector<uint64_t> latent_seeds;
  std::vector<float> images, images_low;
  std::vector<uint8_t> rgb, up;
  for (int row = 0; row < num_rows; ++row) {
    const uint64_t zseed = derive_seed(seed, "knowledge-z", static_cast<uint64_t>(row));
    latent_seeds.push_back(zseed);
    Rng rng(zseed);
    std::vector<float> z(zd);
    for (auto& v : z) v = static_cast<float>(rng.normal());
    const int b = static_cast<int>(selected.size());
    std::vector<float> z_batch(static_cast<size_t>(b) * zd);
    for (int i = 0; i < b; ++i) std::copy(z.begin(), z.end(), z_batch.begin() + static_cast<size_t>(i) * zd);
    state.generate_images(z_batch, selected, images, &images_low);
    detail::float_image_to_rgb(images_low.data(), l, rgb);  // x_hat_l is label-invariant
    detail::nearest_upscale_rgb(rgb, l, h / l, up);
    cv.blit_rgb(pad, pad + row * (h + pad), up.data(), h, h);
    for (int i = 0; i < b; ++i) {
      detail::float_image_to_rgb(images.data() + static_cast<size_t>(i) * 3 * h * h, h, rgb);
      cv.blit_rgb(pad + (1 + i) * (h + pad), pad + row * (h + pad), rgb.data(), h, h);
    }
  }
  manifest["latent_seeds"] = latent_seeds;
  cv.save(out_png.string());
  std::ofstream f(out_manifest);
  f << manifest.dump(2) << "\n";
}

// Grayscale heat map of the class-pair distance matrix; sidecar JSON holds
// the exact matrix plus the value range for read-back.
inline void write_pair_heatmap(const PairSimilarityReport& rep, const fs::path& out_png,
                               const fs::path& out_json) {
  const int C = rep.num_classes;
  const int cell = 24, margin = 20;
  Canvas cv(margin * 2 + C * cell, margin * 2 + C * cell);
  double lo = 1e300, hi = -1e300;
  for (double v : rep.matrix) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi <= lo) hi = lo + 1;
  for (int i = 0; i < C; ++i)
    for (int j = 0; j < C; ++j) {
      const double t = (rep.at(i, j) - lo) / (hi - lo);
      const auto v = static_cast<uint8_t>(std::lround(t * 255.0));
      cv.fill_rect(margin + j * cell, margin + i * cell, cell, cell, {v, v, v});
    }
  cv.save(out_png.string());
  nlohmann::json j;
  j["num_classes"] = C;
  j["num_latents"] = rep.num_latents;
  j["embedder"] = rep.embedder;
  j["min"] = lo;
  j["max"] = hi;
  j["cell"] = cell;
  j["margin"] = margin;
  j["matrix"] = rep.matrix;
  j["mean_off_diagonal"] = rep.mean_off_diagonal();
  std::ofstream f(out_json);
  f << j.dump(2) << "\n";
}

// Everything cmd_report emits for one finished run directory.
template <class S = float>
inline void write_run_report(const fs::path& run_dir, const ExperimentConfig& cfg,
                             int pair_latents = 0) {
  const fs::path csv = run_dir / "metrics.csv";
  if (!fs::exists(csv)) throw Error("report: no metrics.csv in " + run_dir.string());
  plot_metrics_csv(csv, run_dir / "curves.png");
  const auto sel = select_best(run_dir);
  auto state = TrainState<S>::load(sel.checkpoint);
  const uint64_t seed = derive_seed(state.run_seed(), "report-artifacts");
  write_sample_grid(state, 8, seed, run_dir / "samples_grid.png", run_dir / "samples_grid.json");
  Dataset train_data = load_dataset(cfg.dataset_path, cfg.dataset_few_shot_fraction);
  const auto few_shot = few_shot_from_config(cfg, train_data.profile);
  write_knowledge_grid(state, few_shot, 8, seed, run_dir / "knowledge_grid.png",
                       run_dir / "knowledge_grid.json");
  auto embedder = make_embedder(cfg);
  const int latents = pair_latents > 0 ? pair_latents : cfg.eval_num_latents;
  auto pair = class_pair_similarity(state, latents, *embedder, derive_seed(seed, "pairs"));
  write_pair_heatmap(pair, run_dir / "pair_similarity.png", run_dir / "pair_similarity.json");
}

}  // namespace utlo
