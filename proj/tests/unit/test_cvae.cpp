#include <doctest.h>

#include <cmath>
#include <numeric>

#include "stackgen/cvae.hpp"

using namespace stackgen;

namespace {

CvaeConfig desk_config() {
  CvaeConfig cfg;
  cfg.image_size = 16;
  cfg.base_channels = 16;
  cfg.embed_dim = 64;
  return cfg;
}

}  // namespace

TEST_SUITE("cvae") {
  TEST_CASE("encoder emits two 100-vectors through a 2048-dim bottleneck dense") {
    Rng rng(1);
    CvaeModel<float> m(desk_config(), rng);
    CHECK(m.bottleneck_dense_dim() == 2048);
    NoGradGuard ng;
    Tensor<float> img = Tensor<float>::randn({2, 3, 16, 16}, rng);
    Tensor<float> phi = Tensor<float>::randn({2, 64}, rng);
    auto [mu, lv] = m.encode(img, phi, BnMode::kTrain);
    CHECK(mu.shape() == Shape{2, 100});
    CHECK(lv.shape() == Shape{2, 100});
    Tensor<float> wrong = Tensor<float>::randn({2, 3, 32, 32}, rng);
    CHECK_THROWS_AS(m.encode(wrong, phi, BnMode::kTrain), DimensionError);
  }

  TEST_CASE("paper dims: four stride-2 stages reach a 4x4 bottleneck (8192 flat)") {
    Rng rng(2);
    CvaeConfig cfg;
    cfg.image_size = 64;
    cfg.base_channels = 64;
    cfg.embed_dim = 64;
    CvaeModel<float> m(cfg, rng);
    CHECK(m.encoder_flat_dim() == 512 * 4 * 4);
    CHECK(m.bottleneck_dense_dim() == 2048);
    NoGradGuard ng;
    Tensor<float> z = Tensor<float>::randn({1, 100}, rng);
    Tensor<float> c = Tensor<float>::randn({1, 128}, rng);
    CHECK(m.decode(z, c, BnMode::kEval).shape() == Shape{1, 3, 64, 64});
  }

  TEST_CASE("all-zero encoder weights give zero latent statistics") {
    Rng rng(3);
    CvaeModel<double> m(desk_config(), rng);
    for (auto& [name, t] : m.named_tensors())
      if (name.rfind("enc.", 0) == 0 && (name.ends_with(".w") || name.ends_with(".b")))
        std::fill(t.data().begin(), t.data().end(), 0.0);
    NoGradGuard ng;
    Tensor<double> img = Tensor<double>::randn({2, 3, 16, 16}, rng);
    Tensor<double> phi = Tensor<double>::randn({2, 64}, rng);
    auto [mu, lv] = m.encode(img, phi, BnMode::kTrain);
    for (double v : mu.data()) CHECK(v == 0.0);
    for (double v : lv.data()) CHECK(v == 0.0);
  }

  TEST_CASE("decode output is the configured size with values in [-1, 1]") {
    Rng rng(4);
    CvaeModel<float> m(desk_config(), rng);
    NoGradGuard ng;
    Tensor<float> z = Tensor<float>::randn({3, 100}, rng);
    Tensor<float> c = Tensor<float>::randn({3, 128}, rng);
    Tensor<float> img = m.decode(z, c, BnMode::kTrain);
    CHECK(img.shape() == Shape{3, 3, 16, 16});
    for (float v : img.data()) {
      CHECK(v >= -1.0f);
      CHECK(v <= 1.0f);
    }
    Tensor<float> bad = Tensor<float>::randn({3, 7}, rng);
    CHECK_THROWS_AS(m.decode(bad, c, BnMode::kTrain), ConfigError);
  }

  TEST_CASE("encoder/decoder are shape-inverse across configured sizes") {
    for (int size : {8, 16, 32}) {
      Rng rng(100 + size);
      CvaeConfig cfg = desk_config();
      cfg.image_size = size;
      CvaeModel<float> m(cfg, rng);
      NoGradGuard ng;
      Tensor<float> img = Tensor<float>::randn({2, 3, size, size}, rng);
      Tensor<float> phi = Tensor<float>::randn({2, 64}, rng);
      auto [mu, lv] = m.encode(img, phi, BnMode::kTrain);
      Tensor<float> z = Tensor<float>::randn({2, 100}, rng);
      Tensor<float> c = Tensor<float>::randn({2, 128}, rng);
      CHECK(m.decode(z, c, BnMode::kTrain).shape() == img.shape());
    }
  }

  TEST_CASE("loss: perfect reconstruction with zero stats is (0, 0, 0)") {
    Rng rng(5);
    Tensor<double> x = Tensor<double>::randn({2, 3, 4, 4}, rng);
    Tensor<double> zeros({2, 100}, 0.0);
    CvaeLoss<double> l = cvae_loss(x, x, zeros, zeros);
    CHECK(l.recon.item() == 0.0);
    CHECK(l.kl.item() == 0.0);
    CHECK(l.total.item() == 0.0);
  }

  TEST_CASE("loss: single pixel 0 vs 0.5 gives recon 0.25") {
    Tensor<double> x({1, 1, 1, 1}, {0.0});
    Tensor<double> xh({1, 1, 1, 1}, {0.5});
    Tensor<double> zeros({1, 1}, 0.0);
    CvaeLoss<double> l = cvae_loss(x, xh, zeros, zeros);
    CHECK(l.recon.item() == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(l.total.item() == doctest::Approx(0.25).epsilon(1e-12));
  }

  TEST_CASE("loss: recon 2.0 plus scalar KL 0.5 totals 2.5") {
    Tensor<double> x({1, 1, 1, 1}, {0.0});
    Tensor<double> xh({1, 1, 1, 1}, {std::sqrt(2.0)});
    Tensor<double> mu({1, 1}, {1.0});
    Tensor<double> lv({1, 1}, {0.0});
    CvaeLoss<double> l = cvae_loss(x, xh, mu, lv);
    CHECK(l.recon.item() == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(l.kl.item() == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(l.total.item() == doctest::Approx(2.5).epsilon(1e-12));
  }

  TEST_CASE("total equals recon + kl exactly at beta = 1") {
    Rng rng(6);
    Tensor<float> x = Tensor<float>::randn({4, 3, 8, 8}, rng);
    Tensor<float> xh = Tensor<float>::randn({4, 3, 8, 8}, rng);
    Tensor<float> mu = Tensor<float>::randn({4, 100}, rng);
    Tensor<float> lv = Tensor<float>::randn({4, 100}, rng);
    CvaeLoss<float> l = cvae_loss(x, xh, mu, lv);
    CHECK(l.total.item() == l.recon.item() + l.kl.item());
  }

  TEST_CASE("recon is equivariant under a shared pixel permutation; KL ignores pixels") {
    Rng rng(7);
    Tensor<double> x = Tensor<double>::randn({1, 1, 4, 4}, rng);
    Tensor<double> xh = Tensor<double>::randn({1, 1, 4, 4}, rng);
    Tensor<double> mu = Tensor<double>::randn({1, 8}, rng);
    Tensor<double> lv = Tensor<double>::randn({1, 8}, rng);
    CvaeLoss<double> base = cvae_loss(x, xh, mu, lv);
    std::vector<int> perm(16);
    std::iota(perm.begin(), perm.end(), 0);
    Rng shuffler(8);
    shuffler.shuffle(perm);
    Tensor<double> px({1, 1, 4, 4}, 0.0), pxh({1, 1, 4, 4}, 0.0);
    for (int i = 0; i < 16; ++i) {
      px.data()[static_cast<std::size_t>(i)] = x.data()[static_cast<std::size_t>(perm[i])];
      pxh.data()[static_cast<std::size_t>(i)] = xh.data()[static_cast<std::size_t>(perm[i])];
    }
    CvaeLoss<double> permuted = cvae_loss(px, pxh, mu, lv);
    CHECK(permuted.recon.item() == doctest::Approx(base.recon.item()).epsilon(1e-9));
    CHECK(permuted.kl.item() == base.kl.item());
  }

  TEST_CASE("reparameterization gradient matches finite differences") {
    Rng rng(9);
    Tensor<double> x = Tensor<double>::randn({2, 3, 4, 4}, rng, 0.0, 0.5);
    Tensor<double> xh_base = Tensor<double>::randn({2, 3, 4, 4}, rng, 0.0, 0.5);
    Tensor<double> mu = Tensor<double>::randn({2, 6}, rng);
    Tensor<double> lv = Tensor<double>::randn({2, 6}, rng, 0.0, 0.5);
    mu.set_requires_grad(true);
    auto loss_fn = [&] { return cvae_loss(x, xh_base, mu, lv).total; };
    loss_fn().backward();
    const auto analytic = mu.grad();
    for (std::size_t c = 0; c < mu.data().size(); ++c) {
      const double keep = mu.data()[c];
      mu.data()[c] = keep + 1e-5;
      const double lp = loss_fn().item();
      mu.data()[c] = keep - 1e-5;
      const double lm = loss_fn().item();
      mu.data()[c] = keep;
      const double fd = (lp - lm) / 2e-5;
      CHECK(std::abs(analytic[c] - fd) <=
            1e-4 * std::max({std::abs(analytic[c]), std::abs(fd), 1e-2}));
    }
  }

  TEST_CASE("train step changes at least one parameter and is seed-deterministic") {
    auto run = [] {
      Rng rng(11);
      CvaeModel<float> m(desk_config(), rng);
      Adam<float> opt(m.parameters());
      Tensor<float> img = stackgen::tanh(Tensor<float>::randn({4, 3, 16, 16}, rng));
      Tensor<float> phi = Tensor<float>::randn({4, 64}, rng);
      std::vector<double> losses;
      for (int i = 0; i < 3; ++i)
        losses.push_back(cvae_train_step(m, img, phi, opt, 1e-3f, rng).total);
      return losses;
    };
    Rng rng(11);
    CvaeModel<float> m(desk_config(), rng);
    Adam<float> opt(m.parameters());
    Tensor<float> img = stackgen::tanh(Tensor<float>::randn({4, 3, 16, 16}, rng));
    Tensor<float> phi = Tensor<float>::randn({4, 64}, rng);
    const std::vector<float> before = m.parameters()[0].data();
    cvae_train_step(m, img, phi, opt, 1e-3f, rng);
    CHECK(m.parameters()[0].data() != before);

    CHECK(run() == run());
  }

  TEST_CASE("generation is deterministic per seed and in range") {
    Rng init(12);
    CvaeModel<float> m(desk_config(), init);
    Tensor<float> phi = Tensor<float>::randn({2, 64}, init);
    Rng a(42), b(42), c(43);
    Tensor<float> ia = m.generate(phi, a);
    Tensor<float> ib = m.generate(phi, b);
    Tensor<float> ic = m.generate(phi, c);
    CHECK(ia.shape() == Shape{2, 3, 16, 16});
    CHECK(ia.data() == ib.data());
    CHECK(ia.data() != ic.data());
    for (float v : ia.data()) {
      CHECK(v >= -1.0f);
      CHECK(v <= 1.0f);
    }
  }
}
