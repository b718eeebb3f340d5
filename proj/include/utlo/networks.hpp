#pragma once

#include <string>
#include <vector>

#include "utlo/optim.hpp"
#include "utlo/rng.hpp"
#include "utlo/tensor.hpp"

namespace utlo {

struct UTLOConfig {
  int image_size = 32;  // H
  int low_res = 8;      // L, the unconditional boundary resolution
  double lambda_uc = 1.0;
  int z_dim = 16;
  int w_dim = 32;
  int embed_dim = 16;
  int num_classes = 10;
  int channel_base = 256;  // channels at resolution r = min(channel_max, channel_base / r)
  int channel_max = 64;
  int feature_dim = 64;  // discriminator feature width before the heads
  int batch_size = 16;
  // Pass-through split: low blocks receive the class-conditional style too
  // (used by the conditional baseline and the lambda=0 regression twin).
  bool conditional_low_blocks = false;

  int channels_at(int res) const { return std::min(channel_max, channel_base / res); }

  void validate() const {
    if (!is_power_of_two(image_size) || !is_power_of_two(low_res))
      throw ConfigError("model: image_size and low_res must be powers of two");
    if (low_res < 4) throw ConfigError("model: low_res must be >= 4");
    if (low_res >= image_size)
      throw ConfigError("model: low_res " + std::to_string(low_res) +
                        " must be below image_size " + std::to_string(image_size));
    if (lambda_uc < 0.0) throw RangeError("model: lambda_uc must be >= 0");
    if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
    if (z_dim < 1 || w_dim < 1 || embed_dim < 1) throw ConfigError("model: dims must be positive");
  }
};

// ---------------------------------------------------------------------------
// Style mapper: w_{z,y} = mlp(concat(z, embed(y))), w_z = mlp(concat(z, 0)).
// Both share the mlp parameters; only the embedding input differs.
// ---------------------------------------------------------------------------

template <class S>
class StyleMapper {
 public:
  StyleMapper() = default;
  StyleMapper(const UTLOConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int in = cfg.z_dim + cfg.embed_dim;
    embed_ = Parameter<S>(normal_init<S>(rng, {cfg.num_classes, cfg.embed_dim}, 1.0), "mapper.embed");
    fc1_w_ = Parameter<S>(he_init<S>(rng, {in, cfg.w_dim}, in), "mapper.fc1.weight");
    fc1_b_ = Parameter<S>(Tensor<S>::zeros({cfg.w_dim}), "mapper.fc1.bias");
    fc2_w_ = Parameter<S>(he_init<S>(rng, {cfg.w_dim, cfg.w_dim}, cfg.w_dim), "mapper.fc2.weight");
    fc2_b_ = Parameter<S>(Tensor<S>::zeros({cfg.w_dim}), "mapper.fc2.bias");
  }

  struct Styles {
    Tensor<S> w_z;    // class-free
    Tensor<S> w_zy;   // class-conditional
  };

  Styles map(Tape<S>& tape, Tensor<S> z, const std::vector<int>& labels) const {
    const int n = z.dim(0);
    if (static_cast<int>(labels.size()) != n)
      throw DimensionError("map_styles: batch of " + std::to_string(n) + " latents vs " +
                           std::to_string(labels.size()) + " labels");
    auto zero_embed = Tensor<S>::zeros({n, cfg_.embed_dim});
    auto ey = tape.embedding_gather(embed_.tensor, labels);
    auto wz = run_mlp(tape, tape.concat_cols(z, zero_embed));
    auto wzy = run_mlp(tape, tape.concat_cols(z, ey));
    return {wz, wzy};
  }

  std::vector<Parameter<S>*> params() {
    return {&embed_, &fc1_w_, &fc1_b_, &fc2_w_, &fc2_b_};
  }
  Parameter<S>& class_embedding() { return embed_; }
  const Parameter<S>& class_embedding() const { return embed_; }

 private:
  Tensor<S> run_mlp(Tape<S>& tape, Tensor<S> in) const {
    auto h = tape.leaky_relu(tape.add_bias(tape.matmul(in, fc1_w_.tensor), fc1_b_.tensor), S(0.2));
    return tape.add_bias(tape.matmul(h, fc2_w_.tensor), fc2_b_.tensor);
  }

  UTLOConfig cfg_;
  mutable Parameter<S> embed_, fc1_w_, fc1_b_, fc2_w_, fc2_b_;
};

// ---------------------------------------------------------------------------
// Split generator. Blocks double the resolution from the learned 4x4
// constant; each block is conv3x3 + per-channel style affine + leaky relu,
// with a toRGB skip accumulated across resolutions. The RGB accumulation at
// low_res is read out as x_hat_l, the full accumulation as x_hat, both
// through tanh, in one pass.
// ---------------------------------------------------------------------------

template <class S>
class SplitGenerator {
 public:
  struct Block {
    int res = 0;
    Parameter<S> conv_w, conv_b;
    Parameter<S> style_s_w, style_s_b;  // w -> per-channel scale
    Parameter<S> style_t_w, style_t_b;  // w -> per-channel shift
    Parameter<S> rgb_w, rgb_b;
  };

  struct Output {
    Tensor<S> image;      // [N,3,H,H], pre-tanh accumulation through tanh
    Tensor<S> image_low;  // [N,3,L,L]
  };

  SplitGenerator() = default;
  SplitGenerator(const UTLOConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const int c4 = cfg.channels_at(4);
    constant_ = Parameter<S>(normal_init<S>(rng, {1, c4, 4, 4}, 1.0), "G.constant");
    int prev_c = c4;
    for (int res = 4; res <= cfg.image_size; res *= 2) {
      Block b;
      b.res = res;
      const int c = cfg.channels_at(res);
      const std::string base = "G.block" + std::to_string(res) + ".";
      b.conv_w = Parameter<S>(he_init<S>(rng, {c, prev_c, 3, 3}, prev_c * 9), base + "conv.weight");
      b.conv_b = Parameter<S>(Tensor<S>::zeros({c}), base + "conv.bias");
      b.style_s_w = Parameter<S>(he_init<S>(rng, {cfg.w_dim, c}, cfg.w_dim), base + "style_scale.weight");
      b.style_s_b = Parameter<S>(Tensor<S>::zeros({c}), base + "style_scale.bias");
      b.style_t_w = Parameter<S>(he_init<S>(rng, {cfg.w_dim, c}, cfg.w_dim), base + "style_shift.weight");
      b.style_t_b = Parameter<S>(Tensor<S>::zeros({c}), base + "style_shift.bias");
      b.rgb_w = Parameter<S>(he_init<S>(rng, {3, c, 1, 1}, c), base + "torgb.weight");
      b.rgb_b = Parameter<S>(Tensor<S>::zeros({3}), base + "torgb.bias");
      blocks_.push_back(std::move(b));
      prev_c = c;
    }
  }

  // One forward pass yields both resolutions. Blocks at res <= low_res are
  // styled by w_z, the rest by w_{z,y} (unless the pass-through split is on).
  Output generate(Tape<S>& tape, const typename StyleMapper<S>::Styles& styles) const {
    const int n = styles.w_z.dim(0);
    Tensor<S> h = tape.repeat_batch(constant_.tensor, n);
    Tensor<S> rgb;
    Output out;
    for (const auto& b : blocks_) {
      const bool low = b.res <= cfg_.low_res;
      const Tensor<S>& w = (low && !cfg_.conditional_low_blocks) ? styles.w_z : styles.w_zy;
      if (b.res > 4) h = tape.upsample_nearest(h, 2);
      h = tape.add_bias(tape.conv2d(h, b.conv_w.tensor, 1, 1), b.conv_b.tensor);
      auto s = tape.add_bias(tape.matmul(w, b.style_s_w.tensor), b.style_s_b.tensor);
      auto t = tape.add_bias(tape.matmul(w, b.style_t_w.tensor), b.style_t_b.tensor);
      h = tape.leaky_relu(tape.channel_affine(h, s, t), S(0.2));
      auto skip = tape.add_bias(tape.conv2d(h, b.rgb_w.tensor, 1, 0), b.rgb_b.tensor);
      rgb = rgb.defined() ? tape.add(tape.upsample_nearest(rgb, 2), skip) : skip;
      if (b.res == cfg_.low_res) out.image_low = tape.tanh(rgb);
    }
    out.image = tape.tanh(rgb);
    return out;
  }

  std::vector<Parameter<S>*> params() {
    std::vector<Parameter<S>*> out = {&constant_};
    for (auto& b : blocks_) append_block(out, b);
    return out;
  }
  // Parameters of G_l: the constant input plus every block at res <= low_res.
  std::vector<Parameter<S>*> params_low() {
    std::vector<Parameter<S>*> out = {&constant_};
    for (auto& b : blocks_)
      if (b.res <= cfg_.low_res) append_block(out, b);
    return out;
  }
  std::vector<Parameter<S>*> params_high() {
    std::vector<Parameter<S>*> out;
    for (auto& b : blocks_)
      if (b.res > cfg_.low_res) append_block(out, b);
    return out;
  }
  std::vector<Block>& blocks() { return blocks_; }
  const UTLOConfig& config() const { return cfg_; }

 private:
  static void append_block(std::vector<Parameter<S>*>& out, Block& b) {
    out.push_back(&b.conv_w);
    out.push_back(&b.conv_b);
    out.push_back(&b.style_s_w);
    out.push_back(&b.style_s_b);
    out.push_back(&b.style_t_w);
    out.push_back(&b.style_t_b);
    out.push_back(&b.rgb_w);
    out.push_back(&b.rgb_b);
  }

  UTLOConfig cfg_;
  mutable Parameter<S> constant_;
  mutable std::vector<Block> blocks_;
};

// ---------------------------------------------------------------------------
// Split discriminator. D_h downsamples the full-resolution image to the
// shared trunk width at low_res; fromRGB lifts a raw low-res image to the
// same width. D_l is shared by both pathways and ends in a feature vector
// consumed by two separate heads:
//   conditional:   logit = fc(f) + <embed[y], f>
//   unconditional: logit = fc_uc(f)
// ---------------------------------------------------------------------------

template <class S>
class SplitDiscriminator {
 public:
  struct Down {
    int res = 0;  // input resolution of this stage
    Parameter<S> conv_w, conv_b;
  };

  SplitDiscriminator() = default;
  SplitDiscriminator(const UTLOConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const int ch_h = cfg.channels_at(cfg.image_size);
    in_w_ = Parameter<S>(he_init<S>(rng, {ch_h, 3, 1, 1}, 3), "D.in.weight");
    in_b_ = Parameter<S>(Tensor<S>::zeros({ch_h}), "D.in.bias");
    for (int res = cfg.image_size; res > cfg.low_res; res /= 2)
      high_.push_back(make_down(res, rng, "D.h"));
    const int ch_l = cfg.channels_at(cfg.low_res);
    fromrgb_w_ = Parameter<S>(he_init<S>(rng, {ch_l, 3, 1, 1}, 3), "D.fromrgb.weight");
    fromrgb_b_ = Parameter<S>(Tensor<S>::zeros({ch_l}), "D.fromrgb.bias");
    for (int res = cfg.low_res; res > 4; res /= 2) low_.push_back(make_down(res, rng, "D.l"));
    const int flat = cfg.channels_at(4) * 4 * 4;
    fc_w_ = Parameter<S>(he_init<S>(rng, {flat, cfg.feature_dim}, flat), "D.l.fc.weight");
    fc_b_ = Parameter<S>(Tensor<S>::zeros({cfg.feature_dim}), "D.l.fc.bias");
    head_c_w_ = Parameter<S>(he_init<S>(rng, {cfg.feature_dim, 1}, cfg.feature_dim), "D.head_cond.weight");
    head_c_b_ = Parameter<S>(Tensor<S>::zeros({1}), "D.head_cond.bias");
    head_u_w_ = Parameter<S>(he_init<S>(rng, {cfg.feature_dim, 1}, cfg.feature_dim), "D.head_uncond.weight");
    head_u_b_ = Parameter<S>(Tensor<S>::zeros({1}), "D.head_uncond.bias");
    embed_ = Parameter<S>(normal_init<S>(rng, {cfg.num_classes, cfg.feature_dim},
                                         1.0 / std::sqrt(static_cast<double>(cfg.feature_dim))),
                          "D.embed");
  }

  // Conditional pathway on full-resolution images.
  Tensor<S> logits(Tape<S>& tape, Tensor<S> x, const std::vector<int>& labels) const {
    check_input(x, cfg_.image_size, "d_logits");
    auto h = tape.leaky_relu(tape.add_bias(tape.conv2d(x, in_w_.tensor, 1, 0), in_b_.tensor), S(0.2));
    for (const auto& d : high_) h = run_down(tape, h, d);
    auto f = trunk_features(tape, h);
    auto lin = tape.reshape(tape.add_bias(tape.matmul(f, head_c_w_.tensor), head_c_b_.tensor),
                            {x.dim(0)});
    auto proj = tape.row_sum(tape.mul(tape.embedding_gather(embed_.tensor, labels), f));
    return tape.add(lin, proj);
  }

  // Unconditional pathway on low-resolution images; label-free by design.
  Tensor<S> logits_uncond(Tape<S>& tape, Tensor<S> x_low) const {
    check_input(x_low, cfg_.low_res, "d_logits_uncond");
    auto h = tape.leaky_relu(
        tape.add_bias(tape.conv2d(x_low, fromrgb_w_.tensor, 1, 0), fromrgb_b_.tensor), S(0.2));
    auto f = trunk_features(tape, h);
    return tape.reshape(tape.add_bias(tape.matmul(f, head_u_w_.tensor), head_u_b_.tensor),
                        {x_low.dim(0)});
  }

  std::vector<Parameter<S>*> params() {
    auto out = params_cond_only();
    out.push_back(&fromrgb_w_);
    out.push_back(&fromrgb_b_);
    out.push_back(&head_u_w_);
    out.push_back(&head_u_b_);
    return out;
  }
  // Everything reachable from the conditional objective alone (the baseline
  // optimizer list: fromRGB and the unconditional head never see gradients
  // in conditional mode).
  std::vector<Parameter<S>*> params_cond_only() {
    std::vector<Parameter<S>*> out = {&in_w_, &in_b_};
    for (auto& d : high_) {
      out.push_back(&d.conv_w);
      out.push_back(&d.conv_b);
    }
    for (auto& d : low_) {
      out.push_back(&d.conv_w);
      out.push_back(&d.conv_b);
    }
    out.push_back(&fc_w_);
    out.push_back(&fc_b_);
    out.push_back(&head_c_w_);
    out.push_back(&head_c_b_);
    out.push_back(&embed_);
    return out;
  }
  // Shared trunk D_l (both pathways flow through these).
  std::vector<Parameter<S>*> params_shared_trunk() {
    std::vector<Parameter<S>*> out;
    for (auto& d : low_) {
      out.push_back(&d.conv_w);
      out.push_back(&d.conv_b);
    }
    out.push_back(&fc_w_);
    out.push_back(&fc_b_);
    return out;
  }
  Parameter<S>& class_embedding() { return embed_; }

 private:
  Down make_down(int res, Rng& rng, const std::string& prefix) {
    Down d;
    d.res = res;
    const int cin = cfg_.channels_at(res);
    const int cout = cfg_.channels_at(res / 2);
    const std::string base = prefix + std::to_string(res) + ".";
    d.conv_w = Parameter<S>(he_init<S>(rng, {cout, cin, 3, 3}, cin * 9), base + "conv.weight");
    d.conv_b = Parameter<S>(Tensor<S>::zeros({cout}), base + "conv.bias");
    return d;
  }

  Tensor<S> run_down(Tape<S>& tape, Tensor<S> h, const Down& d) const {
    h = tape.leaky_relu(tape.add_bias(tape.conv2d(h, d.conv_w.tensor, 1, 1), d.conv_b.tensor),
                        S(0.2));
    return tape.avg_pool(h, 2);
  }

  // Shared D_l: downsample to 4x4, flatten, fc to the feature vector.
  Tensor<S> trunk_features(Tape<S>& tape, Tensor<S> h) const {
    for (const auto& d : low_) h = run_down(tape, h, d);
    const int n = h.dim(0);
    auto flat = tape.reshape(h, {n, static_cast<int>(h.size() / n)});
    return tape.leaky_relu(tape.add_bias(tape.matmul(flat, fc_w_.tensor), fc_b_.tensor), S(0.2));
  }

  void check_input(const Tensor<S>& x, int res, const char* who) const {
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != res || x.dim(3) != res)
      throw DimensionError(std::string(who) + ": expected [N,3," + std::to_string(res) + "," +
                           std::to_string(res) + "], got " + shape_str(x.shape()));
  }

  UTLOConfig cfg_;
  mutable Parameter<S> in_w_, in_b_, fromrgb_w_, fromrgb_b_;
  mutable std::vector<Down> high_, low_;
  mutable Parameter<S> fc_w_, fc_b_, head_c_w_, head_c_b_, head_u_w_, head_u_b_, embed_;
};

}  // namespace utlo
