#include "stackgen/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "stackgen/cgan.hpp"
#include "stackgen/cond_aug.hpp"
#include "stackgen/cvae.hpp"
#include "stackgen/layers.hpp"
#include "stackgen/tensor.hpp"

namespace stackgen {

namespace {

using DT = double;
constexpr double kStep = 1e-5;

double rel_err(double analytic, double fd) {
  return std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-2});
}

// Central differences are only a derivative oracle where the loss is smooth
// across [x-h, x+h] and only down to the rounding noise of the loss
// evaluation itself. Each coordinate is probed at steps h and h/2 plus the
// base point, which yields, independently of the analytic value:
//   - a pooled noise scale sigma = median |fd(h) - fd(h/2)| (truncation is
//     O(h^2), so for smooth coordinates this difference samples pure
//     evaluation roundoff);
//   - an off-center kink flag: the two estimates disagree far beyond sigma;
//   - a centered kink flag: the second difference (lp + lm - 2*l0)/h stays
//     constant under step halving instead of halving like smooth curvature.
// Kink-flagged coordinates are not valid probe points and are excluded. A
// surviving coordinate passes if the relative error is below tolerance or
// the absolute gap is below the oracle's measured resolution (10 sigma);
// wiring bugs produce errors of the gradient's own magnitude and stay
// caught. Every parameter must retain at least one scored coordinate across
// the seed sweep.
struct ProbeSample {
  double analytic = 0;
  double fd1 = 0;
  double fd2 = 0;
  double curv1 = 0;
  double curv2 = 0;
};

struct ProbeResult {
  double worst = 0;
  std::vector<std::size_t> scored;  // per parameter
};

ProbeResult fd_probe(std::vector<Tensor<DT>> params, const std::function<Tensor<DT>()>& loss_fn,
                     int coords_per_tensor, Rng& pick) {
  for (auto& p : params) p.zero_grad();
  loss_fn().backward();
  const double l0 = loss_fn().item();

  std::vector<std::vector<ProbeSample>> samples(params.size());
  double lmag = std::abs(l0);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& data = params[pi].data();
    const auto& grad = params[pi].grad();
    std::vector<std::size_t> coords;
    if (coords_per_tensor <= 0 || static_cast<std::size_t>(coords_per_tensor) >= data.size()) {
      coords.resize(data.size());
      for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    } else {
      coords.push_back(0);
      coords.push_back(data.size() - 1);
      while (coords.size() < static_cast<std::size_t>(coords_per_tensor) + 1)
        coords.push_back(static_cast<std::size_t>(pick.bounded(data.size())));
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }
    for (std::size_t c : coords) {
      const DT keep = data[c];
      auto eval = [&](double x) {
        data[c] = static_cast<DT>(x);
        const double v = loss_fn().item();
        data[c] = keep;
        return v;
      };
      const double lp = eval(keep + kStep);
      const double lm = eval(keep - kStep);
      const double lp2 = eval(keep + kStep / 2);
      const double lm2 = eval(keep - kStep / 2);
      lmag = std::max({lmag, std::abs(lp), std::abs(lm)});
      ProbeSample s;
      s.analytic = grad[c];
      s.fd1 = (lp - lm) / (2 * kStep);
      s.fd2 = (lp2 - lm2) / kStep;
      s.curv1 = (lp + lm - 2 * l0) / kStep;
      s.curv2 = (lp2 + lm2 - 2 * l0) / (kStep / 2);
      samples[pi].push_back(s);
    }
  }

  // Pooled noise scale; the floor covers exactly-linear losses where the
  // two estimates agree bitwise.
  std::vector<double> gaps;
  for (const auto& per_param : samples)
    for (const ProbeSample& s : per_param) gaps.push_back(std::abs(s.fd1 - s.fd2));
  std::sort(gaps.begin(), gaps.end());
  const double floor = 1e2 * 2.2e-16 * std::max(1.0, lmag) / kStep;
  const double sigma = std::max(gaps.empty() ? 0.0 : gaps[gaps.size() / 2], floor);

  ProbeResult out;
  out.scored.assign(params.size(), 0);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (const ProbeSample& s : samples[pi]) {
      const double scale = std::max({std::abs(s.fd1), std::abs(s.fd2), 1e-2});
      const bool off_center = std::abs(s.fd1 - s.fd2) > std::max(5e-5 * scale, 12 * sigma);
      const bool centered = std::abs(s.curv1) > 25 * sigma &&
                            std::abs(s.curv2) > 0.65 * std::abs(s.curv1);
      if (off_center || centered) continue;
      ++out.scored[pi];
      const double rel = rel_err(s.analytic, s.fd1);
      if (rel >= 1e-4 && std::abs(s.analytic - s.fd1) <= 10 * sigma)
        continue;  // disagreement below the oracle's own resolution
      out.worst = std::max(out.worst, rel);
    }
  }
  return out;
}

Tensor<DT> weighted_sum(const Tensor<DT>& t, Rng& rng) {
  Tensor<DT> r = Tensor<DT>::randn(t.shape(), rng);
  return sum(mul(t, r));
}

ProbeResult check_elementwise(std::uint64_t seed) {
  Rng rng(seed);
  Tensor<DT> x = Tensor<DT>::randn({2, 6}, rng);
  Tensor<DT> y = Tensor<DT>::randn({2, 6}, rng);
  x.set_requires_grad(true);
  y.set_requires_grad(true);
  Tensor<DT> r1 = Tensor<DT>::randn({2, 6}, rng);
  Tensor<DT> r2 = Tensor<DT>::randn({2, 3, 3, 4}, rng);
  auto loss = [&] {
    Tensor<DT> t = concat(x, y, 1);                               // [2, 12]
    Tensor<DT> s = slice(t, 1, 3, 6);                             // [2, 6]
    Tensor<DT> u = exp(scale(s, DT(0.3)));
    Tensor<DT> v = log(add_scalar(mul(u, u), DT(1)));
    Tensor<DT> w = clamp(sub(v, neg(x)), DT(-2.5), DT(2.5));
    Tensor<DT> rep = replicate_spatial(reshape(slice(add(x, y), 1, 0, 3), {2, 3}), 3, 4);
    return add(sum(mul(w, r1)), add(mean(mul(rep, r2)), sum(w)));
  };
  return fd_probe({x, y}, loss, 0, rng);
}

ProbeResult check_conv2d(std::uint64_t seed) {
  Rng rng(seed);
  Tensor<DT> x = Tensor<DT>::randn({2, 3, 7, 6}, rng);
  x.set_requires_grad(true);
  LayerParams<DT> p = conv_params<DT>(4, 3, 3, rng);
  rng.fill_normal(p.bias.data(), 0.0, 0.1);
  Tensor<DT> r = Tensor<DT>::randn({2, 4, 4, 3}, rng);
  auto loss = [&] {
    Tensor<DT> y = conv2d(x, p, 2, 1);
    return sum(mul(mul(y, y), r));
  };
  return fd_probe({x, p.weight, p.bias}, loss, 0, rng);
}

ProbeResult check_conv_transpose2d(std::uint64_t seed) {
  Rng rng(seed);
  Tensor<DT> x = Tensor<DT>::randn({2, 4, 4, 5}, rng);
  x.set_requires_grad(true);
  LayerParams<DT> p = deconv_params<DT>(4, 3, 3, rng);
  rng.fill_normal(p.bias.data(), 0.0, 0.1);
  Tensor<DT> r = Tensor<DT>::randn({2, 3, 8, 10}, rng);
  auto loss = [&] {
    Tensor<DT> y = conv_transpose2d(x, p, 2, 1, 1);
    return sum(mul(mul(y, y), r));
  };
  return fd_probe({x, p.weight, p.bias}, loss, 0, rng);
}

ProbeResult check_batch_norm(std::uint64_t seed, BnMode mode) {
  Rng rng(seed);
  Tensor<DT> x = Tensor<DT>::randn({3, 2, 2, 3}, rng);
  x.set_requires_grad(true);
  LayerParams<DT> p = batch_norm_params<DT>(2);
  rng.fill_normal(p.gamma.data(), 1.0, 0.2);
  rng.fill_normal(p.beta.data(), 0.0, 0.2);
  rng.fill_normal(p.running_mean.data(), 0.0, 0.3);
  for (auto& v : p.running_var.data()) v = 0.5 + std::abs(rng.normal());
  Tensor<DT> r = Tensor<DT>::randn({3, 2, 2, 3}, rng);
  auto loss = [&] {
    Tensor<DT> y = batch_norm(x, p, mode, DT(kBatchNormEps), /*update_running=*/false);
    return sum(mul(mul(y, y), r));
  };
  return fd_probe({x, p.gamma, p.beta}, loss, 0, rng);
}

ProbeResult check_dense(std::uint64_t seed) {
  Rng rng(seed);
  Tensor<DT> x = Tensor<DT>::randn({3, 5}, rng);
  x.set_requires_grad(true);
  LayerParams<DT> p = dense_params<DT>(4, 5, rng);
  rng.fill_normal(p.bias.data(), 0.0, 0.1);
  Tensor<DT> r = Tensor<DT>::randn({3, 4}, rng);
  auto loss = [&] {
    Tensor<DT> y = dense(x, p);
    return sum(mul(mul(y, y), r));
  };
  return fd_probe({x, p.weight, p.bias}, loss, 0, rng);
}

ProbeResult check_activations(std::uint64_t seed) {
  Rng rng(seed);
  Tensor<DT> x = Tensor<DT>::randn({4, 7}, rng);
  x.set_requires_grad(true);
  Tensor<DT> r1 = Tensor<DT>::randn({4, 7}, rng);
  Tensor<DT> r2 = Tensor<DT>::randn({4, 7}, rng);
  Tensor<DT> r3 = Tensor<DT>::randn({4, 7}, rng);
  Tensor<DT> r4 = Tensor<DT>::randn({4, 7}, rng);
  auto loss = [&] {
    Tensor<DT> a = sum(mul(relu(x), r1));
    Tensor<DT> b = sum(mul(leaky_relu(x, DT(0.2)), r2));
    Tensor<DT> c = sum(mul(stackgen::tanh(x), r3));
    Tensor<DT> d = sum(mul(sigmoid(x), r4));
    return add(add(a, b), add(c, d));
  };
  return fd_probe({x}, loss, 0, rng);
}

ProbeResult check_softmax(std::uint64_t seed) {
  Rng rng(seed);
  Tensor<DT> x = Tensor<DT>::randn({3, 5}, rng);
  x.set_requires_grad(true);
  Tensor<DT> r = Tensor<DT>::randn({3, 5}, rng);
  auto loss = [&] { return sum(mul(softmax(x), r)); };
  return fd_probe({x}, loss, 0, rng);
}

ProbeResult check_cross_entropy(std::uint64_t seed) {
  Rng rng(seed);
  Tensor<DT> x = Tensor<DT>::randn({4, 6}, rng);
  x.set_requires_grad(true);
  const std::vector<int> labels{1, 5, 0, 3};
  auto loss = [&] { return cross_entropy_logits(x, labels); };
  return fd_probe({x}, loss, 0, rng);
}

ProbeResult check_cond_aug(std::uint64_t seed) {
  Rng rng(seed);
  CondAugmenter<DT> ca(6, 4, rng);
  Tensor<DT> phi = Tensor<DT>::randn({2, 6}, rng);
  Tensor<DT> eps = Tensor<DT>::randn({2, 4}, rng);
  Tensor<DT> r = Tensor<DT>::randn({2, 4}, rng);
  auto loss = [&] {
    auto [mu, lv] = ca.to_gaussian(phi);
    Tensor<DT> c = sample_condition(mu, lv, eps);
    return add(sum(mul(c, r)), kl_to_standard_normal(mu, lv));
  };
  return fd_probe({ca.head().weight, ca.head().bias}, loss, 0, rng);
}

// Full stage-1 model at desk dims: reconstruction + latent KL + conditioning
// KL, exactly the training objective, with sampling noise held fixed.
ProbeResult check_cvae_model(std::uint64_t seed, int coords) {
  Rng rng(seed);
  CvaeConfig cfg;
  cfg.image_size = 16;
  cfg.base_channels = 16;
  cfg.embed_dim = 64;
  CvaeModel<DT> model(cfg, rng);
  const int B = 2;
  Tensor<DT> images = Tensor<DT>::randn({B, 3, 16, 16}, rng, 0.0, 0.5);
  Tensor<DT> phi = Tensor<DT>::randn({B, cfg.embed_dim}, rng);
  Tensor<DT> eps_c = Tensor<DT>::randn({B, cfg.cond_dim}, rng);
  Tensor<DT> eps_z = Tensor<DT>::randn({B, cfg.latent_dim}, rng);
  auto loss = [&] {
    auto [mu_c, lv_c] = model.cond().to_gaussian(phi);
    Tensor<DT> c_hat = sample_condition(mu_c, lv_c, eps_c);
    auto [mu_z, lv_z] = model.encode(images, phi, BnMode::kTrain);
    Tensor<DT> z = sample_condition(mu_z, lv_z, eps_z);
    Tensor<DT> x_hat = model.decode(z, c_hat, BnMode::kTrain);
    CvaeLoss<DT> l = cvae_loss(images, x_hat, mu_z, lv_z);
    return add(l.total, kl_to_standard_normal(mu_c, lv_c));
  };
  return fd_probe(model.parameters(), loss, coords, rng);
}

// All generator parameters, through a smooth random readout of the
// generated image plus the conditioning-KL term of the generator objective.
ProbeResult check_cgan_generator(std::uint64_t seed, int coords) {
  Rng rng(seed);
  Stage2Config cfg;
  cfg.input_size = 16;
  cfg.cond_dim = 32;
  cfg.embed_dim = 24;
  cfg.gen_base = 8;
  cfg.n_down = 1;
  Stage2Generator<DT> gen(cfg, rng);
  const int B = 2;
  Tensor<DT> s0 = stackgen::tanh(Tensor<DT>::randn({B, 3, 16, 16}, rng));
  Tensor<DT> c_hat = Tensor<DT>::randn({B, cfg.cond_dim}, rng);
  Tensor<DT> mu = Tensor<DT>::randn({B, cfg.cond_dim}, rng, 0.0, 0.3);
  Tensor<DT> lv = Tensor<DT>::randn({B, cfg.cond_dim}, rng, 0.0, 0.3);
  mu.set_requires_grad(true);
  lv.set_requires_grad(true);
  Tensor<DT> readout = Tensor<DT>::randn({B, 3, 64, 64}, rng);
  auto loss = [&] {
    Tensor<DT> fake = gen.generate(s0, c_hat, BnMode::kTrain, /*update_running=*/false);
    return add(mean(mul(fake, readout)), kl_to_standard_normal(mu, lv));
  };
  std::vector<Tensor<DT>> params = gen.parameters();
  params.push_back(mu);
  params.push_back(lv);
  return fd_probe(params, loss, coords, rng);
}

// The adversarial composition: all generator gradients through the frozen
// discriminator's log(1 - D(G(s0, c))) objective plus the conditioning KL.
// Batch norm centers pre-activations, so at a generic point nearly every
// coordinate's finite-difference interval straddles a ReLU kink and no
// probe is valid. Setting every batch-norm beta to 3 moves all post-norm
// activations ~3 sigma into the linear region: the objective becomes smooth
// on the probe intervals while every op, slope and cross-network chain-rule
// step stays active.
ProbeResult check_cgan_stacked(std::uint64_t seed, int coords) {
  Rng rng(seed);
  Stage2Config cfg;
  cfg.input_size = 16;
  cfg.cond_dim = 32;
  cfg.embed_dim = 24;
  cfg.gen_base = 8;
  cfg.n_down = 1;
  Stage2Generator<DT> gen(cfg, rng);
  Stage2Discriminator<DT> disc(cfg, rng);
  disc.set_requires_grad(false);
  for (auto& [name, t] : gen.named_tensors())
    if (name.ends_with(".beta")) std::fill(t.data().begin(), t.data().end(), DT(3));
  for (auto& [name, t] : disc.named_tensors())
    if (name.ends_with(".beta")) std::fill(t.data().begin(), t.data().end(), DT(3));
  const int B = 2;
  Tensor<DT> s0 = stackgen::tanh(Tensor<DT>::randn({B, 3, 16, 16}, rng));
  Tensor<DT> c_hat = Tensor<DT>::randn({B, cfg.cond_dim}, rng);
  Tensor<DT> phi = Tensor<DT>::randn({B, cfg.embed_dim}, rng);
  Tensor<DT> mu = Tensor<DT>::randn({B, cfg.cond_dim}, rng, 0.0, 0.3);
  Tensor<DT> lv = Tensor<DT>::randn({B, cfg.cond_dim}, rng, 0.0, 0.3);
  mu.set_requires_grad(true);
  lv.set_requires_grad(true);
  auto loss = [&] {
    Tensor<DT> fake = gen.generate(s0, c_hat, BnMode::kTrain, /*update_running=*/false);
    Tensor<DT> d = disc.discriminate(fake, phi, BnMode::kTrain, /*update_running=*/false);
    return g_loss(d, kl_to_standard_normal(mu, lv), DT(1));
  };
  std::vector<Tensor<DT>> params = gen.parameters();
  params.push_back(mu);
  params.push_back(lv);
  return fd_probe(params, loss, coords, rng);
}

ProbeResult check_cgan_discriminator(std::uint64_t seed, int coords) {
  Rng rng(seed);
  Stage2Config cfg;
  cfg.input_size = 16;
  cfg.cond_dim = 32;
  cfg.embed_dim = 24;
  cfg.gen_base = 8;
  cfg.n_down = 1;
  Stage2Discriminator<DT> disc(cfg, rng);
  const int B = 2;
  Tensor<DT> real = stackgen::tanh(Tensor<DT>::randn({B, 3, 64, 64}, rng));
  Tensor<DT> fake = stackgen::tanh(Tensor<DT>::randn({B, 3, 64, 64}, rng));
  Tensor<DT> phi = Tensor<DT>::randn({B, cfg.embed_dim}, rng);
  auto loss = [&] {
    Tensor<DT> dr = disc.discriminate(real, phi, BnMode::kTrain, /*update_running=*/false);
    Tensor<DT> df = disc.discriminate(fake, phi, BnMode::kTrain, /*update_running=*/false);
    return neg(d_loss(dr, df));
  };
  return fd_probe(disc.parameters(), loss, coords, rng);
}

constexpr std::uint64_t kSeedBase = 20240501;

}  // namespace

GradCheckReport run_gradcheck(int n_seeds) {
  GradCheckReport rep;
  auto run = [&](const std::string& name, auto&& fn) {
    double worst = 0;
    std::vector<std::size_t> scored;
    for (int s = 0; s < n_seeds; ++s) {
      const ProbeResult r = fn(kSeedBase + static_cast<std::uint64_t>(s));
      worst = std::max(worst, r.worst);
      if (scored.size() < r.scored.size()) scored.resize(r.scored.size(), 0);
      for (std::size_t i = 0; i < r.scored.size(); ++i) scored[i] += r.scored[i];
    }
    // Every parameter needs at least one valid probe point over the sweep.
    bool covered = !scored.empty();
    for (std::size_t c : scored)
      if (c == 0) covered = false;
    if (!covered) worst = 1.0;
    rep.checks.push_back({name, worst, worst < rep.tolerance});
  };

  run("elementwise", check_elementwise);
  run("conv2d", check_conv2d);
  run("conv_transpose2d", check_conv_transpose2d);
  run("batch_norm(train)", [](std::uint64_t s) { return check_batch_norm(s, BnMode::kTrain); });
  run("batch_norm(eval)", [](std::uint64_t s) { return check_batch_norm(s, BnMode::kEval); });
  run("dense", check_dense);
  run("activations", check_activations);
  run("softmax", check_softmax);
  run("cross_entropy", check_cross_entropy);
  run("cond_aug", check_cond_aug);
  run("cvae_model", [](std::uint64_t s) { return check_cvae_model(s, 3); });
  run("cgan_generator", [](std::uint64_t s) { return check_cgan_generator(s, 3); });
  run("cgan_discriminator", [](std::uint64_t s) { return check_cgan_discriminator(s, 3); });
  run("cgan_stacked", [](std::uint64_t s) { return check_cgan_stacked(s, 2); });
  return rep;
}

}  // namespace stackgen
