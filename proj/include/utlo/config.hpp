#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "utlo/common.hpp"
#include "utlo/train.hpp"

namespace utlo {

// Plain-text `section.key = value` config. Every run directory stores the
// resolved form, and unknown keys are rejected so typos cannot silently
// fall back to defaults.
struct ExperimentConfig {
  // dataset
  int dataset_num_classes = 10;
  int dataset_n_max = 500;
  double dataset_rho = 100.0;
  int dataset_image_size = 32;
  uint64_t dataset_seed = 1;
  double dataset_few_shot_fraction = 0.4;
  std::string dataset_few_shot_rule = "fraction";  // fraction | under50
  bool dataset_balanced = false;
  int dataset_palette_size = 8;
  int dataset_shape_kinds = 5;
  uint64_t dataset_class_feature_seed = 77;
  std::string dataset_path;

  // model
  int model_low_res = 8;
  double model_lambda_uc = 1.0;
  int model_z_dim = 16;
  int model_w_dim = 32;
  int model_embed_dim = 16;
  int model_channel_base = 192;
  int model_channel_max = 48;
  int model_feature_dim = 64;
  bool model_conditional_low_blocks = false;

  // train
  std::string train_mode = "utlo";  // utlo | conditional
  int train_iterations = 3000;
  int train_batch_size = 16;
  double train_lr = 2e-3;
  double train_beta1 = 0.0;
  double train_beta2 = 0.99;
  double train_eps = 1e-8;
  double train_sampler_beta = 0.0;
  std::string train_fake_label_dist = "real";  // real | uniform
  int train_eval_every = 500;
  uint64_t train_seed = 1;

  // eval
  std::string eval_embedder = "pool-flatten";
  int eval_gen_count = 0;  // 0 -> 4x real total, capped at 50000
  std::string eval_label_dist = "real";  // real | uniform
  int eval_num_latents = 1000;
  bool eval_fs_balanced_real = true;
  int eval_kid_block = 1000;
  std::string eval_dataset;  // separate real set for metrics ("" -> training set)
  uint64_t eval_seed = 0;    // 0 -> derived from train seed

  void set(const std::string& key, const std::string& raw);
  void validate() const;

  static ExperimentConfig parse_text(const std::string& text);
  static ExperimentConfig parse_file(const std::string& path);
  std::string serialize() const;
  uint64_t hash() const {
    const std::string s = serialize();
    return fnv1a(s.data(), s.size());
  }

  UTLOConfig model_config() const {
    UTLOConfig m;
    m.image_size = dataset_image_size;
    m.low_res = model_low_res;
    m.lambda_uc = model_lambda_uc;
    m.z_dim = model_z_dim;
    m.w_dim = model_w_dim;
    m.embed_dim = model_embed_dim;
    m.num_classes = dataset_num_classes;
    m.channel_base = model_channel_base;
    m.channel_max = model_channel_max;
    m.feature_dim = model_feature_dim;
    m.batch_size = train_batch_size;
    m.conditional_low_blocks = model_conditional_low_blocks;
    return m;
  }

  TrainOptions train_options() const {
    TrainOptions t;
    t.mode = train_mode == "conditional" ? TrainMode::Conditional : TrainMode::Utlo;
    t.adam.lr = train_lr;
    t.adam.beta1 = train_beta1;
    t.adam.beta2 = train_beta2;
    t.adam.eps = train_eps;
    t.sampler_beta = train_sampler_beta;
    t.fake_labels = train_fake_label_dist == "uniform" ? FakeLabelDist::Uniform
                                                       : FakeLabelDist::MatchReal;
    return t;
  }

  SyntheticWorldSpec world_spec() const {
    SyntheticWorldSpec s;
    s.image_size = dataset_image_size;
    s.num_classes = dataset_num_classes;
    s.class_feature_seed = dataset_class_feature_seed;
    s.nuisance_palette_size = dataset_palette_size;
    s.num_shape_kinds = dataset_shape_kinds;
    return s;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int out = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
  }
}

inline uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const uint64_t out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects an unsigned integer, got '" + v + "'");
  }
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: '" + key + "' expects true/false, got '" + v + "'");
}

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline void ExperimentConfig::set(const std::string& key, const std::string& raw) {
  using namespace detail;
  const std::string v = trim(raw);
  if (key == "dataset.num_classes") dataset_num_classes = parse_int(key, v);
  else if (key == "dataset.n_max") dataset_n_max = parse_int(key, v);
  else if (key == "dataset.rho") dataset_rho = parse_double(key, v);
  else if (key == "dataset.image_size") dataset_image_size = parse_int(key, v);
  else if (key == "dataset.seed") dataset_seed = parse_u64(key, v);
  else if (key == "dataset.few_shot_fraction") dataset_few_shot_fraction = parse_double(key, v);
  else if (key == "dataset.few_shot_rule") dataset_few_shot_rule = v;
  else if (key == "dataset.balanced") dataset_balanced = parse_bool(key, v);
  else if (key == "dataset.palette_size") dataset_palette_size = parse_int(key, v);
  else if (key == "dataset.shape_kinds") dataset_shape_kinds = parse_int(key, v);
  else if (key == "dataset.class_feature_seed") dataset_class_feature_seed = parse_u64(key, v);
  else if (key == "dataset.path") dataset_path = v;
  else if (key == "model.low_res") model_low_res = parse_int(key, v);
  else if (key == "model.lambda_uc") model_lambda_uc = parse_double(key, v);
  else if (key == "model.z_dim") model_z_dim = parse_int(key, v);
  else if (key == "model.w_dim") model_w_dim = parse_int(key, v);
  else if (key == "model.embed_dim") model_embed_dim = parse_int(key, v);
  else if (key == "model.channel_base") model_channel_base = parse_int(key, v);
  else if (key == "model.channel_max") model_channel_max = parse_int(key, v);
  else if (key == "model.feature_dim") model_feature_dim = parse_int(key, v);
  else if (key == "model.conditional_low_blocks") model_conditional_low_blocks = parse_bool(key, v);
  else if (key == "train.mode") train_mode = v;
  else if (key == "train.iterations") train_iterations = parse_int(key, v);
  else if (key == "train.batch_size") train_batch_size = parse_int(key, v);
  else if (key == "train.lr") train_lr = parse_double(key, v);
  else if (key == "train.beta1") train_beta1 = parse_double(key, v);
  else if (key == "train.beta2") train_beta2 = parse_double(key, v);
  else if (key == "train.eps") train_eps = parse_double(key, v);
  else if (key == "train.sampler_beta") train_sampler_beta = parse_double(key, v);
  else if (key == "train.fake_label_dist") train_fake_label_dist = v;
  else if (key == "train.eval_every") train_eval_every = parse_int(key, v);
  else if (key == "train.seed") train_seed = parse_u64(key, v);
  else if (key == "eval.embedder") eval_embedder = v;
  else if (key == "eval.gen_count") eval_gen_count = parse_int(key, v);
  else if (key == "eval.label_dist") eval_label_dist = v;
  else if (key == "eval.num_latents") eval_num_latents = parse_int(key, v);
  else if (key == "eval.fs_balanced_real") eval_fs_balanced_real = parse_bool(key, v);
  else if (key == "eval.kid_block") eval_kid_block = parse_int(key, v);
  else if (key == "eval.dataset") eval_dataset = v;
  else if (key == "eval.seed") eval_seed = parse_u64(key, v);
  else throw ConfigError("config: unknown key '" + key + "'");
}

inline void ExperimentConfig::validate() const {
  if (dataset_few_shot_rule != "fraction" && dataset_few_shot_rule != "under50")
    throw ConfigError("config: dataset.few_shot_rule must be 'fraction' or 'under50'");
  if (train_mode != "utlo" && train_mode != "conditional")
    throw ConfigError("config: train.mode must be 'utlo' or 'conditional'");
  if (train_fake_label_dist != "real" && train_fake_label_dist != "uniform")
    throw ConfigError("config: train.fake_label_dist must be 'real' or 'uniform'");
  if (eval_label_dist != "real" && eval_label_dist != "uniform")
    throw ConfigError("config: eval.label_dist must be 'real' or 'uniform'");
  if (eval_embedder != "pool-flatten" && eval_embedder != "random-conv" &&
      eval_embedder != "probe-classifier")
    throw ConfigError("config: eval.embedder must be pool-flatten, random-conv or probe-classifier");
  if (train_iterations < 0 || train_eval_every < 0)
    throw ConfigError("config: iteration counts must be non-negative");
  if (!(train_sampler_beta >= 0.0 && train_sampler_beta <= 1.0))
    throw RangeError("config: train.sampler_beta must be in [0,1]");
  model_config().validate();
}

inline ExperimentConfig ExperimentConfig::parse_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    line = detail::trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(line_no) + " is not 'key = value'");
    cfg.set(detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig ExperimentConfig::parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_text(ss.str());
}

inline std::string ExperimentConfig::serialize() const {
  using detail::fmt_double;
  std::ostringstream o;
  o << "dataset.num_classes = " << dataset_num_classes << "\n";
  o << "dataset.n_max = " << dataset_n_max << "\n";
  o << "dataset.rho = " << fmt_double(dataset_rho) << "\n";
  o << "dataset.image_size = " << dataset_image_size << "\n";
  o << "dataset.seed = " << dataset_seed << "\n";
  o << "dataset.few_shot_fraction = " << fmt_double(dataset_few_shot_fraction) << "\n";
  o << "dataset.few_shot_rule = " << dataset_few_shot_rule << "\n";
  o << "dataset.balanced = " << (dataset_balanced ? "true" : "false") << "\n";
  o << "dataset.palette_size = " << dataset_palette_size << "\n";
  o << "dataset.shape_kinds = " << dataset_shape_kinds << "\n";
  o << "dataset.class_feature_seed = " << dataset_class_feature_seed << "\n";
  o << "dataset.path = " << dataset_path << "\n";
  o << "model.low_res = " << model_low_res << "\n";
  o << "model.lambda_uc = " << fmt_double(model_lambda_uc) << "\n";
  o << "model.z_dim = " << model_z_dim << "\n";
  o << "model.w_dim = " << model_w_dim << "\n";
  o << "model.embed_dim = " << model_embed_dim << "\n";
  o << "model.channel_base = " << model_channel_base << "\n";
  o << "model.channel_max = " << model_channel_max << "\n";
  o << "model.feature_dim = " << model_feature_dim << "\n";
  o << "model.conditional_low_blocks = " << (model_conditional_low_blocks ? "true" : "false") << "\n";
  o << "train.mode = " << train_mode << "\n";
  o << "train.iterations = " << train_iterations << "\n";
  o << "train.batch_size = " << train_batch_size << "\n";
  o << "train.lr = " << fmt_double(train_lr) << "\n";
  o << "train.beta1 = " << fmt_double(train_beta1) << "\n";
  o << "train.beta2 = " << fmt_double(train_beta2) << "\n";
  o << "train.eps = " << fmt_double(train_eps) << "\n";
  o << "train.sampler_beta = " << fmt_double(train_sampler_beta) << "\n";
  o << "train.fake_label_dist = " << train_fake_label_dist << "\n";
  o << "train.eval_every = " << train_eval_every << "\n";
  o << "train.seed = " << train_seed << "\n";
  o << "eval.embedder = " << eval_embedder << "\n";
  o << "eval.gen_count = " << eval_gen_count << "\n";
  o << "eval.label_dist = " << eval_label_dist << "\n";
  o << "eval.num_latents = " << eval_num_latents << "\n";
  o << "eval.fs_balanced_real = " << (eval_fs_balanced_real ? "true" : "false") << "\n";
  o << "eval.kid_block = " << eval_kid_block << "\n";
  o << "eval.dataset = " << eval_dataset << "\n";
  o << "eval.seed = " << eval_seed << "\n";
  return o.str();
}

}  // namespace utlo
