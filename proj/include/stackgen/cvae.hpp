#pragma once

#include <string>
#include <utility>
#include <vector>

#include "stackgen/cond_aug.hpp"
#include "stackgen/layers.hpp"
#include "stackgen/optim.hpp"
#include "stackgen/rng.hpp"
#include "stackgen/tensor.hpp"

namespace stackgen {

// Geometry of the stage-1 conditional VAE. The conv stack always bottoms out
// at a 4x4 map, so the number of stride-2 stages is log2(image_size/4);
// channel widths start at base_channels and double per stage, capped at 512.
struct CvaeConfig {
  int image_size = 64;
  int latent_dim = 100;
  int cond_dim = 128;
  int embed_dim = 64;
  int base_channels = 64;
  int bottleneck_dense = 2048;
};

template <typename T>
class CvaeModel {
 public:
  CvaeModel() = default;

  CvaeModel(const CvaeConfig& cfg, Rng& rng) : cfg_(cfg) {
    int s = cfg.image_size;
    if (s < 8 || (s & (s - 1)) != 0)
      throw ConfigError("cvae: image_size must be a power of two >= 8, got " + std::to_string(s));
    int stages = 0;
    while (s > 4) {
      s /= 2;
      ++stages;
    }
    for (int i = 0; i < stages; ++i)
      channels_.push_back(std::min(cfg.base_channels << i, 512));

    cond_ = CondAugmenter<T>(cfg.embed_dim, cfg.cond_dim, rng);
    embed_plane_ = dense_params<T>(cfg.image_size * cfg.image_size, cfg.embed_dim, rng);

    int in_ch = 4;  // RGB + conditioning plane
    for (int c : channels_) {
      enc_convs_.push_back(conv_params<T>(c, in_ch, 5, rng));
      enc_bns_.push_back(batch_norm_params<T>(c));
      in_ch = c;
    }
    const int flat = channels_.back() * 4 * 4;
    enc_dense_ = dense_params<T>(cfg.bottleneck_dense, flat, rng);
    mu_head_ = dense_params<T>(cfg.latent_dim, cfg.bottleneck_dense, rng);
    log_var_head_ = dense_params<T>(cfg.latent_dim, cfg.bottleneck_dense, rng);

    dec_dense_ = dense_params<T>(flat, cfg.latent_dim + cfg.cond_dim, rng);
    dec_bn0_ = batch_norm_params<T>(channels_.back());
    for (int i = static_cast<int>(channels_.size()) - 1; i >= 0; --i) {
      const int out = i == 0 ? 3 : channels_[static_cast<std::size_t>(i) - 1];
      dec_deconvs_.push_back(deconv_params<T>(channels_[static_cast<std::size_t>(i)], out, 5, rng));
      if (i != 0) dec_bns_.push_back(batch_norm_params<T>(out));
    }
  }

  const CvaeConfig& config() const { return cfg_; }
  CondAugmenter<T>& cond() { return cond_; }
  const CondAugmenter<T>& cond() const { return cond_; }
  int bottleneck_dense_dim() const { return cfg_.bottleneck_dense; }
  int encoder_flat_dim() const { return channels_.back() * 4 * 4; }

  // When set, every block's output is scanned and the first non-finite one
  // aborts the step with its layer name.
  bool finite_checks = false;

  // image [B, 3, S, S] in [-1, 1], phi [B, embed_dim]
  // -> (mu_z, log_var_z) each [B, latent_dim].
  std::pair<Tensor<T>, Tensor<T>> encode(const Tensor<T>& image, const Tensor<T>& phi,
                                         BnMode mode) {
    if (image.rank() != 4 || image.dim(1) != 3 || image.dim(2) != cfg_.image_size ||
        image.dim(3) != cfg_.image_size)
      throw DimensionError("cvae encode: expected image [B, 3, " +
                           std::to_string(cfg_.image_size) + ", " +
                           std::to_string(cfg_.image_size) + "], got " + shape_str(image.shape()));
    const int B = image.dim(0);
    Tensor<T> plane = reshape(dense(phi, embed_plane_), {B, 1, cfg_.image_size, cfg_.image_size});
    Tensor<T> x = concat(image, plane, 1);
    probe("enc.input", x);
    for (std::size_t i = 0; i < enc_convs_.size(); ++i) {
      x = relu(batch_norm(conv2d(x, enc_convs_[i], 2, 2), enc_bns_[i], mode));
      probe("enc.conv", x, i);
    }
    Tensor<T> h = relu(dense(reshape(x, {B, encoder_flat_dim()}), enc_dense_));
    probe("enc.dense", h);
    return {dense(h, mu_head_), dense(h, log_var_head_)};
  }

  // z [B, latent_dim], c_hat [B, cond_dim] -> image [B, 3, S, S] in [-1, 1].
  Tensor<T> decode(const Tensor<T>& z, const Tensor<T>& c_hat, BnMode mode) {
    if (z.rank() != 2 || z.dim(1) != cfg_.latent_dim)
      throw ConfigError("cvae decode: z must be [B, " + std::to_string(cfg_.latent_dim) +
                        "], got " + shape_str(z.shape()));
    if (c_hat.rank() != 2 || c_hat.dim(1) != cfg_.cond_dim)
      throw ConfigError("cvae decode: c_hat must be [B, " + std::to_string(cfg_.cond_dim) +
                        "], got " + shape_str(c_hat.shape()));
    const int B = z.dim(0);
    Tensor<T> x = dense(concat(z, c_hat, 1), dec_dense_);
    x = reshape(x, {B, channels_.back(), 4, 4});
    x = relu(batch_norm(x, dec_bn0_, mode));
    probe("dec.dense", x);
    for (std::size_t i = 0; i < dec_deconvs_.size(); ++i) {
      x = conv_transpose2d(x, dec_deconvs_[i], 2, 2, 1);
      if (i + 1 < dec_deconvs_.size()) {
        x = relu(batch_norm(x, dec_bns_[i], mode));
      } else {
        x = stackgen::tanh(x);
      }
      probe("dec.deconv", x, i);
    }
    return x;
  }

  // Draws z ~ N(0, I) and c_hat from the conditioning head, then decodes.
  // Runs in eval mode without recording a graph.
  Tensor<T> generate(const Tensor<T>& phi, Rng& rng) {
    NoGradGuard ng;
    const int B = phi.dim(0);
    auto [mu_c, lv_c] = cond_.to_gaussian(phi);
    Tensor<T> eps_c = Tensor<T>::randn({B, cfg_.cond_dim}, rng);
    Tensor<T> c_hat = sample_condition(mu_c, lv_c, eps_c);
    Tensor<T> z = Tensor<T>::randn({B, cfg_.latent_dim}, rng);
    return decode(z, c_hat, BnMode::kEval);
  }

  // Trainable tensors, in the stable named_tensors() order (batch-norm
  // running stats are buffers, not parameters).
  std::vector<Tensor<T>> parameters() {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : named_tensors())
      if (!is_buffer_name(name)) out.push_back(t);
    return out;
  }

  void set_requires_grad(bool rg) {
    for (Tensor<T> p : parameters()) p.set_requires_grad(rg);
  }

  static bool is_buffer_name(const std::string& name) {
    return name.ends_with(".rmean") || name.ends_with(".rvar");
  }

  // Deterministically ordered (name, tensor) pairs covering trainable
  // parameters and batch-norm buffers.
  std::vector<std::pair<std::string, Tensor<T>>> named_tensors() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    auto add_dense = [&](const std::string& n, LayerParams<T>& p) {
      out.emplace_back(n + ".w", p.weight);
      out.emplace_back(n + ".b", p.bias);
    };
    auto add_bn = [&](const std::string& n, LayerParams<T>& p) {
      out.emplace_back(n + ".gamma", p.gamma);
      out.emplace_back(n + ".beta", p.beta);
      out.emplace_back(n + ".rmean", p.running_mean);
      out.emplace_back(n + ".rvar", p.running_var);
    };
    add_dense("cond.head", cond_.head());
    add_dense("enc.plane", embed_plane_);
    for (std::size_t i = 0; i < enc_convs_.size(); ++i) {
      add_dense("enc.conv" + std::to_string(i), enc_convs_[i]);
      add_bn("enc.bn" + std::to_string(i), enc_bns_[i]);
    }
    add_dense("enc.dense", enc_dense_);
    add_dense("enc.mu", mu_head_);
    add_dense("enc.logvar", log_var_head_);
    add_dense("dec.dense", dec_dense_);
    add_bn("dec.bn_in", dec_bn0_);
    for (std::size_t i = 0; i < dec_deconvs_.size(); ++i) {
      add_dense("dec.deconv" + std::to_string(i), dec_deconvs_[i]);
      if (i < dec_bns_.size()) add_bn("dec.bn" + std::to_string(i), dec_bns_[i]);
    }
    return out;
  }

 private:
  void probe(const char* where, const Tensor<T>& t, std::size_t idx = SIZE_MAX) {
    if (!finite_checks) return;
    if (!all_finite(t))
      throw NumericError("non-finite output at " + std::string(where) +
                         (idx == SIZE_MAX ? "" : std::to_string(idx)));
  }

  CvaeConfig cfg_;
  std::vector<int> channels_;
  CondAugmenter<T> cond_;
  LayerParams<T> embed_plane_;
  std::vector<LayerParams<T>> enc_convs_, enc_bns_;
  LayerParams<T> enc_dense_, mu_head_, log_var_head_;
  LayerParams<T> dec_dense_, dec_bn0_;
  std::vector<LayerParams<T>> dec_deconvs_, dec_bns_;
};

template <typename T>
struct CvaeLoss {
  Tensor<T> recon;  // squared pixel error, summed per sample, mean over batch
  Tensor<T> kl;     // latent KL to N(0, I), mean over batch
  Tensor<T> total;  // recon + beta * kl
};

template <typename T>
CvaeLoss<T> cvae_loss(const Tensor<T>& x, const Tensor<T>& x_hat, const Tensor<T>& mu_z,
                      const Tensor<T>& log_var_z, T beta = T(1)) {
  detail::check_same_shape("cvae_loss", x, x_hat);
  const int B = x.rank() >= 1 ? x.dim(0) : 1;
  Tensor<T> diff = sub(x_hat, x);
  CvaeLoss<T> out;
  out.recon = scale(sum(mul(diff, diff)), T(1) / static_cast<T>(B));
  out.kl = kl_to_standard_normal(mu_z, log_var_z);
  out.total = beta == T(1) ? add(out.recon, out.kl) : add(out.recon, scale(out.kl, beta));
  return out;
}

template <typename T>
struct CvaeStepResult {
  double recon = 0;
  double kl = 0;
  double cond_kl = 0;
  double total = 0;
};

// One optimization step: encode, reparameterize, decode under the sampled
// condition, backprop reconstruction + latent KL + conditioning KL.
template <typename T>
CvaeStepResult<T> cvae_train_step(CvaeModel<T>& model, const Tensor<T>& images,
                                  const Tensor<T>& phis, Adam<T>& opt, T lr, Rng& rng) {
  const int B = images.dim(0);
  const auto& cfg = model.config();

  auto [mu_c, lv_c] = model.cond().to_gaussian(phis);
  Tensor<T> eps_c = Tensor<T>::randn({B, cfg.cond_dim}, rng);
  Tensor<T> c_hat = sample_condition(mu_c, lv_c, eps_c);

  auto [mu_z, lv_z] = model.encode(images, phis, BnMode::kTrain);
  Tensor<T> eps_z = Tensor<T>::randn({B, cfg.latent_dim}, rng);
  Tensor<T> z = sample_condition(mu_z, lv_z, eps_z);

  Tensor<T> x_hat = model.decode(z, c_hat, BnMode::kTrain);
  CvaeLoss<T> loss = cvae_loss(images, x_hat, mu_z, lv_z);
  Tensor<T> cond_kl = kl_to_standard_normal(mu_c, lv_c);
  Tensor<T> objective = add(loss.total, cond_kl);
  check_finite("loss", objective);

  opt.zero_grad();
  objective.backward();
  opt.step(lr);
  opt.zero_grad();

  CvaeStepResult<T> r;
  r.recon = static_cast<double>(loss.recon.item());
  r.kl = static_cast<double>(loss.kl.item());
  r.cond_kl = static_cast<double>(cond_kl.item());
  r.total = static_cast<double>(loss.total.item());
  return r;
}

}  // namespace stackgen
