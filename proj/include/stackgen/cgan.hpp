#pragma once

#include <string>
#include <utility>
#include <vector>

#include "stackgen/cvae.hpp"
#include "stackgen/layers.hpp"
#include "stackgen/optim.hpp"
#include "stackgen/tensor.hpp"

namespace stackgen {

inline constexpr double kProbClamp = 1e-7;

// Stage-2 geometry. The generator downsamples the stage-1 sketch n_down
// times to an 8x8 bottleneck, injects the condition there, and upsamples
// n_down + 2 times, quadrupling the input resolution. The discriminator's
// conv stack always ends at a 4x4x128 map (2048 flattened features) which
// is reduced to 512 after conditioning.
struct Stage2Config {
  int input_size = 64;  // stage-1 resolution S; output is 4S
  int cond_dim = 128;
  int embed_dim = 64;
  int gen_base = 64;
  int n_down = 3;
};

namespace detail {
inline int int_log2(int v) {
  int k = 0;
  while ((1 << k) < v) ++k;
  return k;
}
}  // namespace detail

// Two 3x3 convs with batch norm, ReLU between, identity skip, ReLU after.
// With the second conv zero-initialized the block is an identity map on
// non-negative input.
template <typename T>
struct ResidualBlock {
  ResidualBlock() = default;
  ResidualBlock(int channels, Rng& rng)
      : conv1(conv_params<T>(channels, channels, 3, rng)),
        bn1(batch_norm_params<T>(channels)),
        conv2(conv_params<T>(channels, channels, 3, rng)),
        bn2(batch_norm_params<T>(channels)) {}

  Tensor<T> forward(const Tensor<T>& x, BnMode mode, bool update_running = true) {
    Tensor<T> h = relu(batch_norm(conv2d(x, conv1, 1, 1), bn1, mode, T(kBatchNormEps),
                                  update_running));
    h = batch_norm(conv2d(h, conv2, 1, 1), bn2, mode, T(kBatchNormEps), update_running);
    return relu(add(x, h));
  }

  LayerParams<T> conv1, bn1, conv2, bn2;
};

template <typename T>
class Stage2Generator {
 public:
  Stage2Generator() = default;

  Stage2Generator(const Stage2Config& cfg, Rng& rng) : cfg_(cfg) {
    const int s = cfg.input_size;
    if (s < 8 || (s & (s - 1)) != 0)
      throw ConfigError("stage2 generator: input_size must be a power of two >= 8");
    if (cfg.n_down < 1 || (s >> cfg.n_down) < 4)
      throw ConfigError("stage2 generator: n_down leaves no spatial bottleneck");

    int in_ch = 3;
    for (int i = 0; i < cfg.n_down; ++i) {
      const int out = cfg.gen_base << i;
      down_convs_.push_back(conv_params<T>(out, in_ch, 5, rng));
      down_bns_.push_back(batch_norm_params<T>(out));
      in_ch = out;
    }
    cond_proj_ = dense_params<T>(cfg.gen_base, cfg.cond_dim, rng);
    const int merged = in_ch + cfg.gen_base;
    res_blocks_.emplace_back(merged, rng);
    res_blocks_.emplace_back(merged, rng);

    const int n_up = cfg.n_down + 2;
    in_ch = merged;
    for (int i = 0; i < n_up; ++i) {
      const int out = i + 1 == n_up ? 3 : std::max(merged >> (i + 1), 8);
      up_deconvs_.push_back(deconv_params<T>(in_ch, out, 5, rng));
      if (i + 1 != n_up) up_bns_.push_back(batch_norm_params<T>(out));
      in_ch = out;
    }
  }

  const Stage2Config& config() const { return cfg_; }
  int output_size() const { return 4 * cfg_.input_size; }
  int bottleneck_size() const { return cfg_.input_size >> cfg_.n_down; }
  bool finite_checks = false;

  // s0 [B, 3, S, S] in [-1, 1], c_hat [B, cond_dim] -> [B, 3, 4S, 4S].
  Tensor<T> generate(const Tensor<T>& s0, const Tensor<T>& c_hat, BnMode mode,
                     bool update_running = true) {
    if (s0.rank() != 4 || s0.dim(1) != 3 || s0.dim(2) != cfg_.input_size ||
        s0.dim(3) != cfg_.input_size)
      throw DimensionError("stage2 generate: expected sketch [B, 3, " +
                           std::to_string(cfg_.input_size) + ", " +
                           std::to_string(cfg_.input_size) + "], got " + shape_str(s0.shape()));
    const T eps = T(kBatchNormEps);
    Tensor<T> x = s0;
    for (std::size_t i = 0; i < down_convs_.size(); ++i) {
      x = relu(batch_norm(conv2d(x, down_convs_[i], 2, 2), down_bns_[i], mode, eps,
                          update_running));
      probe("gen.down", x, i);
    }
    const int sb = bottleneck_size();
    Tensor<T> cp = replicate_spatial(relu(dense(c_hat, cond_proj_)), sb, sb);
    x = concat(x, cp, 1);
    for (std::size_t i = 0; i < res_blocks_.size(); ++i) {
      x = res_blocks_[i].forward(x, mode, update_running);
      probe("gen.res", x, i);
    }
    for (std::size_t i = 0; i < up_deconvs_.size(); ++i) {
      x = conv_transpose2d(x, up_deconvs_[i], 2, 2, 1);
      if (i + 1 < up_deconvs_.size()) {
        x = relu(batch_norm(x, up_bns_[i], mode, eps, update_running));
      } else {
        x = stackgen::tanh(x);
      }
      probe("gen.up", x, i);
    }
    return x;
  }

  std::vector<std::pair<std::string, Tensor<T>>> named_tensors() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    auto add_wb = [&](const std::string& n, LayerParams<T>& p) {
      out.emplace_back(n + ".w", p.weight);
      out.emplace_back(n + ".b", p.bias);
    };
    auto add_bn = [&](const std::string& n, LayerParams<T>& p) {
      out.emplace_back(n + ".gamma", p.gamma);
      out.emplace_back(n + ".beta", p.beta);
      out.emplace_back(n + ".rmean", p.running_mean);
      out.emplace_back(n + ".rvar", p.running_var);
    };
    for (std::size_t i = 0; i < down_convs_.size(); ++i) {
      add_wb("gen.down" + std::to_string(i), down_convs_[i]);
      add_bn("gen.dbn" + std::to_string(i), down_bns_[i]);
    }
    add_wb("gen.cond", cond_proj_);
    for (std::size_t i = 0; i < res_blocks_.size(); ++i) {
      const std::string n = "gen.res" + std::to_string(i);
      add_wb(n + ".conv1", res_blocks_[i].conv1);
      add_bn(n + ".bn1", res_blocks_[i].bn1);
      add_wb(n + ".conv2", res_blocks_[i].conv2);
      add_bn(n + ".bn2", res_blocks_[i].bn2);
    }
    for (std::size_t i = 0; i < up_deconvs_.size(); ++i) {
      add_wb("gen.up" + std::to_string(i), up_deconvs_[i]);
      if (i < up_bns_.size()) add_bn("gen.ubn" + std::to_string(i), up_bns_[i]);
    }
    return out;
  }

  std::vector<Tensor<T>> parameters() {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : named_tensors())
      if (!CvaeModel<T>::is_buffer_name(name)) out.push_back(t);
    return out;
  }

  void set_requires_grad(bool rg) {
    for (Tensor<T> p : parameters()) p.set_requires_grad(rg);
  }

  std::vector<ResidualBlock<T>>& res_blocks() { return res_blocks_; }

 private:
  void probe(const char* where, const Tensor<T>& t, std::size_t idx) {
    if (finite_checks && !all_finite(t))
      throw NumericError("non-finite output at " + std::string(where) + std::to_string(idx));
  }

  Stage2Config cfg_;
  std::vector<LayerParams<T>> down_convs_, down_bns_;
  LayerParams<T> cond_proj_;
  std::vector<ResidualBlock<T>> res_blocks_;
  std::vector<LayerParams<T>> up_deconvs_, up_bns_;
};

template <typename T>
class Stage2Discriminator {
 public:
  Stage2Discriminator() = default;

  Stage2Discriminator(const Stage2Config& cfg, Rng& rng) : cfg_(cfg) {
    const int image_size = 4 * cfg.input_size;
    const int n_conv = detail::int_log2(image_size / 4);
    int in_ch = 3;
    for (int i = 0; i < n_conv; ++i) {
      const int out = kConvFinal >> (n_conv - 1 - i);
      if (out < 1) throw ConfigError("stage2 discriminator: too many conv layers");
      convs_.push_back(conv_params<T>(out, in_ch, 5, rng));
      bns_.push_back(batch_norm_params<T>(out));
      in_ch = out;
    }
    cond_proj_ = dense_params<T>(kCondCh, cfg.embed_dim, rng);
    reduce_ = dense_params<T>(kReduceDim, 4 * 4 * (kConvFinal + kCondCh), rng);
    head_ = dense_params<T>(1, kReduceDim, rng);
  }

  const Stage2Config& config() const { return cfg_; }
  // Flattened width of the conv stack output (4*4*128).
  int conv_flat_dim() const { return 4 * 4 * kConvFinal; }
  int reduced_dim() const { return kReduceDim; }
  bool finite_checks = false;

  // image [B, 3, 4S, 4S], phi [B, embed_dim] -> probability [B, 1] in (0, 1).
  Tensor<T> discriminate(const Tensor<T>& image, const Tensor<T>& phi, BnMode mode,
                         bool update_running = true) {
    const int expect = 4 * cfg_.input_size;
    if (image.rank() != 4 || image.dim(1) != 3 || image.dim(2) != expect ||
        image.dim(3) != expect)
      throw DimensionError("stage2 discriminate: expected image [B, 3, " + std::to_string(expect) +
                           ", " + std::to_string(expect) + "], got " + shape_str(image.shape()));
    const T eps = T(kBatchNormEps);
    Tensor<T> x = image;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      x = leaky_relu(batch_norm(conv2d(x, convs_[i], 2, 2), bns_[i], mode, eps, update_running),
                     T(0.2));
      if (finite_checks && !all_finite(x))
        throw NumericError("non-finite output at disc.conv" + std::to_string(i));
    }
    Tensor<T> cp = replicate_spatial(leaky_relu(dense(phi, cond_proj_), T(0.2)), 4, 4);
    x = concat(x, cp, 1);
    const int B = image.dim(0);
    Tensor<T> h = leaky_relu(dense(reshape(x, {B, 4 * 4 * (kConvFinal + kCondCh)}), reduce_),
                             T(0.2));
    if (finite_checks && !all_finite(h))
      throw NumericError("non-finite output at disc.reduce");
    return sigmoid(dense(h, head_));
  }

  std::vector<std::pair<std::string, Tensor<T>>> named_tensors() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    auto add_wb = [&](const std::string& n, LayerParams<T>& p) {
      out.emplace_back(n + ".w", p.weight);
      out.emplace_back(n + ".b", p.bias);
    };
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      add_wb("disc.conv" + std::to_string(i), convs_[i]);
      out.emplace_back("disc.bn" + std::to_string(i) + ".gamma", bns_[i].gamma);
      out.emplace_back("disc.bn" + std::to_string(i) + ".beta", bns_[i].beta);
      out.emplace_back("disc.bn" + std::to_string(i) + ".rmean", bns_[i].running_mean);
      out.emplace_back("disc.bn" + std::to_string(i) + ".rvar", bns_[i].running_var);
    }
    add_wb("disc.cond", cond_proj_);
    add_wb("disc.reduce", reduce_);
    add_wb("disc.head", head_);
    return out;
  }

  std::vector<Tensor<T>> parameters() {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : named_tensors())
      if (!CvaeModel<T>::is_buffer_name(name)) out.push_back(t);
    return out;
  }

  void set_requires_grad(bool rg) {
    for (Tensor<T> p : parameters()) p.set_requires_grad(rg);
  }

  LayerParams<T>& head() { return head_; }

 private:
  static constexpr int kConvFinal = 128;
  static constexpr int kCondCh = 128;
  static constexpr int kReduceDim = 512;

  Stage2Config cfg_;
  std::vector<LayerParams<T>> convs_, bns_;
  LayerParams<T> cond_proj_, reduce_, head_;
};

// Discriminator objective (to be maximized): mean over the batch of
// log d_real + log(1 - d_fake), probabilities clamped 1e-7 from the
// boundaries. Always <= 0 after clamping.
template <typename T>
Tensor<T> d_loss(const Tensor<T>& d_real, const Tensor<T>& d_fake) {
  const T lo = T(kProbClamp), hi = T(1) - T(kProbClamp);
  Tensor<T> real_term = log(clamp(d_real, lo, hi));
  Tensor<T> fake_term = log(clamp(add_scalar(neg(d_fake), T(1)), lo, hi));
  return mean(add(real_term, fake_term));
}

// Generator objective (to be minimized): mean log(1 - d_fake) plus
// lambda times the conditioning KL.
template <typename T>
Tensor<T> g_loss(const Tensor<T>& d_fake, const Tensor<T>& kl_cond, T lambda) {
  const T lo = T(kProbClamp), hi = T(1) - T(kProbClamp);
  Tensor<T> adv = mean(log(clamp(add_scalar(neg(d_fake), T(1)), lo, hi)));
  return add(adv, scale(kl_cond, lambda));
}

struct CganStepResult {
  double loss_d = 0;  // Eq.-style discriminator value (maximized)
  double loss_g = 0;  // generator value (minimized)
};

// One adversarial round: refresh sketches from the frozen stage-1 model,
// one discriminator ascent step, one generator descent step. No gradient
// or buffer mutation crosses into stage 1 or across the G/D boundary.
template <typename T>
CganStepResult cgan_train_step(Stage2Generator<T>& gen, Stage2Discriminator<T>& disc,
                               CvaeModel<T>& stage1, const Tensor<T>& real_images,
                               const Tensor<T>& phis, Adam<T>& opt_g, Adam<T>& opt_d, T lr_g,
                               T lr_d, T lambda, Rng& rng) {
  const int B = real_images.dim(0);
  const CvaeConfig& s1cfg = stage1.config();

  // Conditions, sketches and the conditioning KL come from the frozen
  // stage-1 head; none of them carry gradients.
  Tensor<T> c_hat, s0, kl_c, fake_const;
  {
    NoGradGuard ng;
    auto [mu_c, lv_c] = stage1.cond().to_gaussian(phis);
    Tensor<T> eps_c = Tensor<T>::randn({B, s1cfg.cond_dim}, rng);
    c_hat = sample_condition(mu_c, lv_c, eps_c);
    kl_c = kl_to_standard_normal(mu_c, lv_c);
    Tensor<T> z = Tensor<T>::randn({B, s1cfg.latent_dim}, rng);
    s0 = stage1.decode(z, c_hat, BnMode::kEval);
    // Same values the generator step recomputes with recording on.
    fake_const = gen.generate(s0, c_hat, BnMode::kTrain, /*update_running=*/false);
  }

  // Discriminator step (ascent on d_loss). Real and fake halves share one
  // forward so batch-norm statistics cannot separate them by themselves.
  opt_d.zero_grad();
  Tensor<T> phis2 = concat(phis, phis, 0);
  Tensor<T> d_both = disc.discriminate(concat(real_images, fake_const, 0), phis2, BnMode::kTrain);
  Tensor<T> d_real = slice(d_both, 0, 0, B);
  Tensor<T> d_fake = slice(d_both, 0, B, B);
  Tensor<T> ld = d_loss(d_real, d_fake);
  check_finite("d_loss", ld);
  neg(ld).backward();
  opt_d.step(lr_d);
  opt_d.zero_grad();

  // Generator step with the discriminator frozen (no parameter gradients,
  // no running-stat updates). The fake half is scored under the same
  // mixed-batch normalization the discriminator step saw.
  disc.set_requires_grad(false);
  Tensor<T> fake = gen.generate(s0, c_hat, BnMode::kTrain, /*update_running=*/true);
  Tensor<T> d_all = disc.discriminate(concat(real_images, fake, 0), phis2, BnMode::kTrain,
                                      /*update_running=*/false);
  Tensor<T> lg = g_loss(slice(d_all, 0, B, B), kl_c, lambda);
  check_finite("g_loss", lg);
  opt_g.zero_grad();
  lg.backward();
  opt_g.step(lr_g);
  opt_g.zero_grad();
  disc.set_requires_grad(true);

  return {static_cast<double>(ld.item()), static_cast<double>(lg.item())};
}

}  // namespace stackgen
