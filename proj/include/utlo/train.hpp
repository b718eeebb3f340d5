#pragma once

#include <bit>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "utlo/checkpoint.hpp"
#include "utlo/longtail.hpp"
#include "utlo/networks.hpp"
#include "utlo/optim.hpp"

namespace utlo {

enum class TrainMode { Utlo, Conditional };
enum class FakeLabelDist { MatchReal, Uniform };

template <class S>
struct GanNets {
  StyleMapper<S> mapper;
  SplitGenerator<S> gen;
  SplitDiscriminator<S> disc;

  GanNets() = default;
  GanNets(const UTLOConfig& cfg, Rng& rng)
      : mapper(cfg, rng), gen(cfg, rng), disc(cfg, rng) {}
};

template <class S>
struct AdvPair {
  Tensor<S> d;  // discriminator loss term
  Tensor<S> g;  // generator loss term
};

// L_c^D = E[sp(-D(x|y))] + E[sp(D(G(z,y)))],  L_c^G = E[sp(-D(G(z,y)))].
// Fakes are generated inside from (z, gen_labels).
template <class S>
inline AdvPair<S> loss_conditional(Tape<S>& tape, GanNets<S>& nets, Tensor<S> real,
                                   const std::vector<int>& real_labels, Tensor<S> z,
                                   const std::vector<int>& gen_labels) {
  auto styles = nets.mapper.map(tape, z, gen_labels);
  auto gout = nets.gen.generate(tape, styles);
  auto logit_real = nets.disc.logits(tape, real, real_labels);
  auto logit_fake = nets.disc.logits(tape, gout.image, gen_labels);
  AdvPair<S> out;
  out.d = tape.add(tape.mean(tape.softplus(tape.neg(logit_real))),
                   tape.mean(tape.softplus(logit_fake)));
  out.g = tape.mean(tape.softplus(tape.neg(logit_fake)));
  return out;
}

// Unconditional counterpart on the low-resolution pathway: real side is the
// bilinearly downsized batch, fake side is x_hat_l. No label enters either.
template <class S>
inline AdvPair<S> loss_unconditional(Tape<S>& tape, GanNets<S>& nets, Tensor<S> real_low,
                                     Tensor<S> z) {
  const int n = z.dim(0);
  std::vector<int> dummy_labels(n, 0);  // w_{z,y} is computed but unused below low_res
  auto styles = nets.mapper.map(tape, z, dummy_labels);
  auto gout = nets.gen.generate(tape, styles);
  auto logit_real = nets.disc.logits_uncond(tape, real_low);
  auto logit_fake = nets.disc.logits_uncond(tape, gout.image_low);
  AdvPair<S> out;
  out.d = tape.add(tape.mean(tape.softplus(tape.neg(logit_real))),
                   tape.mean(tape.softplus(logit_fake)));
  out.g = tape.mean(tape.softplus(tape.neg(logit_fake)));
  return out;
}

// L = L_c + lambda * L_uc, for both sides.
template <class S>
inline AdvPair<S> loss_total(Tape<S>& tape, const AdvPair<S>& cond, const AdvPair<S>& uncond,
                             double lambda) {
  if (lambda < 0.0) throw RangeError("loss_total: lambda must be >= 0, got " + std::to_string(lambda));
  AdvPair<S> out;
  out.d = tape.add(cond.d, tape.scale(uncond.d, static_cast<S>(lambda)));
  out.g = tape.add(cond.g, tape.scale(uncond.g, static_cast<S>(lambda)));
  return out;
}

// All six adversarial terms from one generator pass (the per-phase workhorse;
// the standalone loss_* entry points above keep the same math).
template <class S>
struct GanLosses {
  Tensor<S> d_cond, g_cond, d_uncond, g_uncond, d_total, g_total;
};

template <class S>
inline GanLosses<S> compute_gan_losses(Tape<S>& tape, GanNets<S>& nets, Tensor<S> real,
                                       const std::vector<int>& real_labels, Tensor<S> real_low,
                                       Tensor<S> z, const std::vector<int>& gen_labels,
                                       double lambda, bool include_uncond) {
  auto styles = nets.mapper.map(tape, z, gen_labels);
  auto gout = nets.gen.generate(tape, styles);
  GanLosses<S> out;
  auto logit_fake = nets.disc.logits(tape, gout.image, gen_labels);
  out.g_cond = tape.mean(tape.softplus(tape.neg(logit_fake)));
  if (real.defined()) {
    auto logit_real = nets.disc.logits(tape, real, real_labels);
    out.d_cond = tape.add(tape.mean(tape.softplus(tape.neg(logit_real))),
                          tape.mean(tape.softplus(logit_fake)));
  }
  if (include_uncond) {
    auto logit_fake_l = nets.disc.logits_uncond(tape, gout.image_low);
    out.g_uncond = tape.mean(tape.softplus(tape.neg(logit_fake_l)));
    out.g_total = tape.add(out.g_cond, tape.scale(out.g_uncond, static_cast<S>(lambda)));
    if (real_low.defined()) {
      auto logit_real_l = nets.disc.logits_uncond(tape, real_low);
      out.d_uncond = tape.add(tape.mean(tape.softplus(tape.neg(logit_real_l))),
                              tape.mean(tape.softplus(logit_fake_l)));
      out.d_total = tape.add(out.d_cond, tape.scale(out.d_uncond, static_cast<S>(lambda)));
    }
  } else {
    if (real.defined()) out.d_total = out.d_cond;
    out.g_total = out.g_cond;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training state and the alternating step
// ---------------------------------------------------------------------------

struct TrainOptions {
  TrainMode mode = TrainMode::Utlo;
  AdamConfig adam;
  double sampler_beta = 0.0;
  FakeLabelDist fake_labels = FakeLabelDist::MatchReal;
};

template <class S>
struct StepLog {
  double d_loss = 0, g_loss = 0, d_cond = 0, g_cond = 0, d_uncond = 0, g_uncond = 0;
};

template <class S>
class TrainState {
 public:
  TrainState(const UTLOConfig& cfg, const TrainOptions& opts, uint64_t run_seed)
      : cfg_(cfg), opts_(opts), run_seed_(run_seed), rng_(derive_seed(run_seed, "train")) {
    cfg_.validate();
    if (opts_.mode == TrainMode::Conditional) cfg_.conditional_low_blocks = true;
    Rng init_rng(derive_seed(run_seed, "init"));
    nets_ = GanNets<S>(cfg_, init_rng);
  }

  TrainState(const TrainState&) = delete;
  TrainState& operator=(const TrainState&) = delete;
  TrainState(TrainState&&) = default;
  TrainState& operator=(TrainState&&) = default;

  GanNets<S>& nets() { return nets_; }
  const UTLOConfig& config() const { return cfg_; }
  const TrainOptions& options() const { return opts_; }
  int64_t iteration() const { return iteration_; }
  uint64_t run_seed() const { return run_seed_; }
  Rng& rng() { return rng_; }

  std::vector<Parameter<S>*> gen_params() {
    auto out = nets_.gen.params();
    for (auto* p : nets_.mapper.params()) out.push_back(p);
    return out;
  }
  std::vector<Parameter<S>*> disc_params() {
    return opts_.mode == TrainMode::Conditional ? nets_.disc.params_cond_only()
                                                : nets_.disc.params();
  }

  // One discriminator update (generator frozen) followed by one generator
  // update (discriminator frozen). Deterministic under a fixed seed: the RNG
  // draw sequence is identical in both modes.
  StepLog<S> step(const Dataset& data, const SamplerWeights& sampler) {
    const bool uncond = opts_.mode == TrainMode::Utlo;
    const double lambda = cfg_.lambda_uc;
    StepLog<S> log;

    for (int phase = 0; phase < 2; ++phase) {
      // L_G has no real-data term, so only the discriminator phase draws
      // a real batch. One batch serves both objectives (downsampled copy
      // feeds the unconditional side).
      Tensor<S> real, real_low;
      std::vector<int> real_labels;
      if (phase == 0) {
        std::tie(real, real_labels) = draw_real(data, sampler);
        if (uncond) {
          real_low = Tensor<S>::zeros({cfg_.batch_size, 3, cfg_.low_res, cfg_.low_res});
          downsample_batch(real, real_low);
        }
      }
      auto z = draw_latents();
      auto gen_labels = draw_fake_labels(sampler);
      zero_grads(gen_params());
      zero_grads(disc_params());
      Tape<S> tape;
      auto losses = compute_gan_losses(tape, nets_, real, real_labels, real_low, z, gen_labels,
                                       lambda, uncond);
      if (phase == 0) {
        log.d_loss = check_finite(losses.d_total, "L_D");
        log.d_cond = losses.d_cond.data()[0];
        if (uncond) log.d_uncond = losses.d_uncond.data()[0];
        tape.backward(losses.d_total);
        adam_step(disc_params(), opts_.adam);
      } else {
        log.g_loss = check_finite(losses.g_total, "L_G");
        log.g_cond = losses.g_cond.data()[0];
        if (uncond) log.g_uncond = losses.g_uncond.data()[0];
        tape.backward(losses.g_total);
        adam_step(gen_params(), opts_.adam);
      }
    }
    iteration_ += 1;
    return log;
  }

  // Inference-only generation (no gradients recorded).
  void generate_images(const std::vector<float>& z_values, const std::vector<int>& labels,
                       std::vector<float>& images, std::vector<float>* images_low = nullptr) {
    const int n = static_cast<int>(labels.size());
    Tape<S> tape(false);
    std::vector<S> zv(z_values.begin(), z_values.end());
    auto z = Tensor<S>::from({n, cfg_.z_dim}, std::move(zv));
    auto styles = nets_.mapper.map(tape, z, labels);
    auto gout = nets_.gen.generate(tape, styles);
    images.assign(gout.image.values().begin(), gout.image.values().end());
    if (images_low)
      images_low->assign(gout.image_low.values().begin(), gout.image_low.values().end());
  }

  // ---- checkpointing -----------------------------------------------------

  void save(const std::string& path) { write_file(path, encode_checkpoint(to_records())); }

  static TrainState load(const std::string& path) {
    auto records = decode_checkpoint(read_file(path));
    std::map<std::string, const CheckpointRecord*> by_name;
    for (const auto& r : records) by_name[r.name] = &r;
    auto get = [&](const std::string& name) -> const CheckpointRecord& {
      auto it = by_name.find(name);
      if (it == by_name.end()) throw FormatError("checkpoint: missing record '" + name + "'");
      return *it->second;
    };
    auto get_int = [&](const std::string& name) { return static_cast<int>(get(name).data.at(0)); };
    auto get_double = [&](const std::string& name) {
      return std::bit_cast<double>(floats_to_u64(get(name).data));
    };

    UTLOConfig cfg;
    cfg.image_size = get_int("_cfg.image_size");
    cfg.low_res = get_int("_cfg.low_res");
    cfg.lambda_uc = get_double("_cfg.lambda_uc");
    cfg.z_dim = get_int("_cfg.z_dim");
    cfg.w_dim = get_int("_cfg.w_dim");
    cfg.embed_dim = get_int("_cfg.embed_dim");
    cfg.num_classes = get_int("_cfg.num_classes");
    cfg.channel_base = get_int("_cfg.channel_base");
    cfg.channel_max = get_int("_cfg.channel_max");
    cfg.feature_dim = get_int("_cfg.feature_dim");
    cfg.batch_size = get_int("_cfg.batch_size");
    cfg.conditional_low_blocks = get_int("_cfg.conditional_low_blocks") != 0;
    TrainOptions opts;
    opts.mode = get_int("_cfg.mode") == 0 ? TrainMode::Utlo : TrainMode::Conditional;
    opts.adam.lr = get_double("_opt.lr");
    opts.adam.beta1 = get_double("_opt.beta1");
    opts.adam.beta2 = get_double("_opt.beta2");
    opts.adam.eps = get_double("_opt.eps");
    opts.sampler_beta = get_double("_opt.sampler_beta");
    opts.fake_labels = get_int("_cfg.fake_label_dist") == 0 ? FakeLabelDist::MatchReal
                                                            : FakeLabelDist::Uniform;
    const uint64_t run_seed = floats_to_u64(get("_run.seed").data);

    TrainState state(cfg, opts, run_seed);
    state.iteration_ = static_cast<int64_t>(floats_to_u64(get("_run.iteration").data));
    state.rng_.set_state(floats_to_u64(get("_run.rng").data));
    for (auto* p : state.all_params()) {
      const auto& rec = get(p->name);
      if (rec.data.size() != static_cast<size_t>(p->tensor.size()))
        throw FormatError("checkpoint: shape mismatch for '" + p->name + "'");
      for (int64_t i = 0; i < p->tensor.size(); ++i)
        p->tensor.data()[i] = static_cast<S>(rec.data[i]);
      const auto& m = get(p->name + ".adam_m");
      const auto& v = get(p->name + ".adam_v");
      for (int64_t i = 0; i < p->tensor.size(); ++i) {
        p->adam_m[i] = static_cast<S>(m.data[i]);
        p->adam_v[i] = static_cast<S>(v.data[i]);
      }
      p->step_count = static_cast<int64_t>(get(p->name + ".step").data.at(0));
    }
    return state;
  }

  std::vector<Parameter<S>*> all_params() {
    auto out = gen_params();
    for (auto* p : nets_.disc.params()) out.push_back(p);
    return out;
  }

 private:
  std::vector<CheckpointRecord> to_records() {
    std::vector<CheckpointRecord> records;
    auto push_param = [&](Parameter<S>* p) {
      CheckpointRecord r;
      r.name = p->name;
      for (int d : p->tensor.shape()) r.dims.push_back(static_cast<uint32_t>(d));
      r.data.assign(p->tensor.values().begin(), p->tensor.values().end());
      records.push_back(r);
      CheckpointRecord m{p->name + ".adam_m", r.dims, {p->adam_m.begin(), p->adam_m.end()}};
      CheckpointRecord v{p->name + ".adam_v", r.dims, {p->adam_v.begin(), p->adam_v.end()}};
      CheckpointRecord s{p->name + ".step", {1}, {static_cast<float>(p->step_count)}};
      records.push_back(std::move(m));
      records.push_back(std::move(v));
      records.push_back(std::move(s));
    };
    for (auto* p : all_params()) push_param(p);
    auto push_u64 = [&](const std::string& name, uint64_t v) {
      records.push_back({name, {8}, u64_to_floats(v)});
    };
    auto push_int = [&](const std::string& name, int v) {
      records.push_back({name, {1}, {static_cast<float>(v)}});
    };
    auto push_double = [&](const std::string& name, double v) {
      push_u64(name, std::bit_cast<uint64_t>(v));
    };
    push_u64("_run.iteration", static_cast<uint64_t>(iteration_));
    push_u64("_run.rng", rng_.state());
    push_u64("_run.seed", run_seed_);
    push_int("_cfg.image_size", cfg_.image_size);
    push_int("_cfg.low_res", cfg_.low_res);
    push_double("_cfg.lambda_uc", cfg_.lambda_uc);
    push_int("_cfg.z_dim", cfg_.z_dim);
    push_int("_cfg.w_dim", cfg_.w_dim);
    push_int("_cfg.embed_dim", cfg_.embed_dim);
    push_int("_cfg.num_classes", cfg_.num_classes);
    push_int("_cfg.channel_base", cfg_.channel_base);
    push_int("_cfg.channel_max", cfg_.channel_max);
    push_int("_cfg.feature_dim", cfg_.feature_dim);
    push_int("_cfg.batch_size", cfg_.batch_size);
    push_int("_cfg.conditional_low_blocks", cfg_.conditional_low_blocks ? 1 : 0);
    push_int("_cfg.mode", opts_.mode == TrainMode::Utlo ? 0 : 1);
    push_int("_cfg.fake_label_dist", opts_.fake_labels == FakeLabelDist::MatchReal ? 0 : 1);
    push_double("_opt.lr", opts_.adam.lr);
    push_double("_opt.beta1", opts_.adam.beta1);
    push_double("_opt.beta2", opts_.adam.beta2);
    push_double("_opt.eps", opts_.adam.eps);
    push_double("_opt.sampler_beta", opts_.sampler_beta);
    return records;
  }

  std::pair<Tensor<S>, std::vector<int>> draw_real(const Dataset& data,
                                                   const SamplerWeights& sampler) {
    std::vector<float> images;
    std::vector<int> labels;
    sample_batch(data, sampler, cfg_.batch_size, rng_, images, labels);
    std::vector<S> values(images.begin(), images.end());
    auto t = Tensor<S>::from({cfg_.batch_size, 3, data.image_size, data.image_size},
                             std::move(values));
    return {t, labels};
  }

  Tensor<S> draw_latents() {
    auto z = Tensor<S>::zeros({cfg_.batch_size, cfg_.z_dim});
    for (int64_t i = 0; i < z.size(); ++i) z.data()[i] = static_cast<S>(rng_.normal());
    return z;
  }

  std::vector<int> draw_fake_labels(const SamplerWeights& sampler) {
    std::vector<int> labels(cfg_.batch_size);
    for (auto& l : labels)
      l = opts_.fake_labels == FakeLabelDist::Uniform
              ? static_cast<int>(rng_.uniform_int(cfg_.num_classes))
              : sample_class(sampler, rng_);
    return labels;
  }

  void downsample_batch(const Tensor<S>& src, Tensor<S>& dst) {
    std::vector<float> in(src.values().begin(), src.values().end());
    std::vector<float> out(dst.size());
    downsample_bilinear(in.data(), src.dim(0), 3, src.dim(2), out.data(), dst.dim(2));
    for (int64_t i = 0; i < dst.size(); ++i) dst.data()[i] = static_cast<S>(out[i]);
  }

  double check_finite(const Tensor<S>& loss, const char* name) {
    const double v = static_cast<double>(loss.data()[0]);
    if (!std::isfinite(v))
      throw NumericalError(std::string("training aborted: ") + name + " is not finite at iteration " +
                           std::to_string(iteration_));
    return v;
  }

  UTLOConfig cfg_;
  TrainOptions opts_;
  GanNets<S> nets_;
  int64_t iteration_ = 0;
  uint64_t run_seed_ = 0;
  Rng rng_;
};

}  // namespace utlo
