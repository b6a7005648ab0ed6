#include <doctest.h>

#include <cmath>

#include "stackgen/cond_aug.hpp"

using namespace stackgen;

TEST_SUITE("cond_aug") {
  TEST_CASE("zero weights give mu = 0 and log_var = 0 (unit covariance)") {
    Rng rng(1);
    CondAugmenter<double> ca(64, 128, rng);
    std::fill(ca.head().weight.data().begin(), ca.head().weight.data().end(), 0.0);
    std::fill(ca.head().bias.data().begin(), ca.head().bias.data().end(), 0.0);
    Tensor<double> phi = Tensor<double>::randn({2, 64}, rng);
    auto [mu, lv] = ca.to_gaussian(phi);
    for (double v : mu.data()) CHECK(v == 0.0);
    for (double v : lv.data()) CHECK(v == 0.0);
  }

  TEST_CASE("64-dim embedding maps to two 128-dim vectors") {
    Rng rng(2);
    CondAugmenter<float> ca(64, 128, rng);
    Tensor<float> phi = Tensor<float>::randn({3, 64}, rng);
    auto [mu, lv] = ca.to_gaussian(phi);
    CHECK(mu.shape() == Shape{3, 128});
    CHECK(lv.shape() == Shape{3, 128});
    Tensor<float> bad = Tensor<float>::randn({3, 32}, rng);
    CHECK_THROWS_AS(ca.to_gaussian(bad), ConfigError);
  }

  TEST_CASE("identity-like weight copies the first inputs into mu") {
    Rng rng(3);
    const int embed = 130, cond = 128;
    CondAugmenter<double> ca(embed, cond, rng);
    std::fill(ca.head().weight.data().begin(), ca.head().weight.data().end(), 0.0);
    std::fill(ca.head().bias.data().begin(), ca.head().bias.data().end(), 0.0);
    for (int i = 0; i < cond; ++i)
      ca.head().weight.data()[static_cast<std::size_t>(i) * embed + i] = 1.0;
    Tensor<double> phi = Tensor<double>::randn({1, embed}, rng);
    auto [mu, lv] = ca.to_gaussian(phi);
    for (int i = 0; i < cond; ++i) CHECK(mu.data()[i] == phi.data()[i]);
  }

  TEST_CASE("sampling: zero noise returns mu; unit scale returns the noise") {
    Tensor<double> mu({1, 4}, {1, 2, 3, 4});
    Tensor<double> lv({1, 4}, 0.0);
    Tensor<double> zero({1, 4}, 0.0);
    CHECK(sample_condition(mu, lv, zero).data() == mu.data());
    Tensor<double> zero_mu({1, 4}, 0.0);
    Tensor<double> eps({1, 4}, {0.3, -0.7, 1.1, 0.0});
    CHECK(sample_condition(zero_mu, lv, eps).data() == eps.data());
  }

  TEST_CASE("reparameterization closed form: 1 + exp(ln4 / 2) * 0.5 = 2") {
    Tensor<double> mu({1, 1}, {1.0});
    Tensor<double> lv({1, 1}, {std::log(4.0)});
    Tensor<double> eps({1, 1}, {0.5});
    CHECK(sample_condition(mu, lv, eps).data()[0] == doctest::Approx(2.0).epsilon(1e-12));
  }

  TEST_CASE("KL closed forms: 0, 0.5, (e-2)/2") {
    Tensor<double> z({1, 1}, 0.0);
    CHECK(kl_to_standard_normal(z, z).item() == doctest::Approx(0.0));
    Tensor<double> mu1({1, 1}, {1.0});
    CHECK(kl_to_standard_normal(mu1, z).item() == doctest::Approx(0.5).epsilon(1e-12));
    Tensor<double> lv1({1, 1}, {1.0});
    const double expect = 0.5 * (std::exp(1.0) - 2.0);
    CHECK(expect == doctest::Approx(0.35914091422952255).epsilon(1e-12));
    CHECK(kl_to_standard_normal(z, lv1).item() == doctest::Approx(expect).epsilon(1e-12));
  }

  TEST_CASE("KL is non-negative and zero only at the standard normal") {
    Rng rng(4);
    for (int i = 0; i < 100; ++i) {
      Tensor<double> mu = Tensor<double>::randn({2, 8}, rng, 0.0, 2.0);
      Tensor<double> lv = Tensor<double>::randn({2, 8}, rng, 0.0, 1.5);
      const double kl = kl_to_standard_normal(mu, lv).item();
      CHECK(kl >= 0.0);
      CHECK(kl > 0.0);
    }
  }

  TEST_CASE("gradient of the KL with respect to mu equals mu exactly") {
    Tensor<double> mu({1, 5}, {0.5, -1.25, 2.0, 0.0, -0.375});
    Tensor<double> lv({1, 5}, 0.0);
    mu.set_requires_grad(true);
    kl_to_standard_normal(mu, lv).backward();
    for (int i = 0; i < 5; ++i) CHECK(mu.grad()[i] == mu.data()[i]);
  }

  TEST_CASE("sampling is deterministic per seed and the sample mean approaches mu") {
    Rng a(77), b(77);
    Tensor<double> ea = Tensor<double>::randn({1, 4}, a);
    Tensor<double> eb = Tensor<double>::randn({1, 4}, b);
    CHECK(ea.data() == eb.data());

    const int n = 100000;
    Tensor<double> mu({1, 4}, {0.5, -1.0, 2.0, 0.0});
    Tensor<double> lv({1, 4}, {0.0, 1.0, -1.0, 0.5});
    Rng rng(99);
    std::vector<double> acc(4, 0.0);
    for (int i = 0; i < n; ++i) {
      Tensor<double> eps = Tensor<double>::randn({1, 4}, rng);
      Tensor<double> cs = sample_condition(mu, lv, eps);
      const auto& c = cs.data();
      for (int k = 0; k < 4; ++k) acc[static_cast<std::size_t>(k)] += c[static_cast<std::size_t>(k)];
    }
    for (int k = 0; k < 4; ++k) {
      const double bound = 4.0 * std::exp(lv.data()[static_cast<std::size_t>(k)] / 2) / std::sqrt(n);
      CHECK(std::abs(acc[static_cast<std::size_t>(k)] / n - mu.data()[static_cast<std::size_t>(k)]) <=
            bound);
    }
  }
}
