#include <doctest.h>

#include <cmath>

#include "stackgen/optim.hpp"

using namespace stackgen;

TEST_SUITE("optim") {
  TEST_CASE("first Adam step with constant unit gradient moves by ~ -lr") {
    Tensor<double> p({1}, 0.0);
    p.set_requires_grad(true);
    p.grad()[0] = 1.0;
    Adam<double> opt({p});
    opt.step(0.001);
    // Bias correction makes m_hat = v_hat = 1, so the update is lr/(1 + eps).
    CHECK(p.data()[0] == doctest::Approx(-0.001).epsilon(1e-7));
    CHECK(opt.step_count() == 1);
  }

  TEST_CASE("all-zero gradient leaves parameters bitwise unchanged") {
    Tensor<float> p({3}, {0.25f, -1.5f, 3.75f});
    p.set_requires_grad(true);
    const std::vector<float> before = p.data();
    p.grad();  // materializes a zero gradient
    Adam<float> opt({p});
    opt.step(0.01f);
    CHECK(p.data() == before);
  }

  TEST_CASE("identical inputs give bitwise identical updates") {
    auto run = [] {
      Rng rng(5);
      Tensor<float> p = Tensor<float>::randn({16}, rng);
      p.set_requires_grad(true);
      Adam<float> opt({p});
      for (int i = 0; i < 5; ++i) {
        rng.fill_normal(p.grad(), 0.0, 1.0);
        opt.step(0.002f);
      }
      return p.data();
    };
    CHECK(run() == run());
  }

  TEST_CASE("missing gradient is a contract error") {
    Tensor<double> p({2}, 1.0);
    p.set_requires_grad(true);
    Adam<double> opt({p});
    CHECK_THROWS_AS(opt.step(0.001), ContractError);
  }

  TEST_CASE("per-coordinate update magnitude is bounded by lr/(1-beta1)") {
    Rng rng(6);
    Tensor<double> p = Tensor<double>::randn({64}, rng);
    p.set_requires_grad(true);
    Adam<double> opt({p});
    const double lr = 0.05;
    const double bound = lr / (1.0 - kAdamBeta1) + 1e-12;
    for (int step = 0; step < 50; ++step) {
      std::vector<double> before = p.data();
      rng.fill_normal(p.grad(), 0.0, 3.0);
      opt.step(lr);
      for (std::size_t i = 0; i < before.size(); ++i)
        CHECK(std::abs(p.data()[i] - before[i]) <= bound);
      p.zero_grad();
    }
  }

  TEST_CASE("lr schedule: step decay by 0.2 every 25 epochs") {
    LrSchedule s1{2e-4, 0.2, 25};
    CHECK(lr_at(s1, 0) == doctest::Approx(2e-4).epsilon(1e-12));
    CHECK(lr_at(s1, 24) == doctest::Approx(2e-4).epsilon(1e-12));
    CHECK(lr_at(s1, 25) == doctest::Approx(4e-5).epsilon(1e-9));
    LrSchedule s2{2e-3, 0.2, 25};
    CHECK(lr_at(s2, 50) == doctest::Approx(8e-5).epsilon(1e-9));
    CHECK_THROWS_AS(lr_at(s1, -1), ContractError);
  }

  TEST_CASE("lr schedule is positive and monotone non-increasing") {
    LrSchedule s{2e-3, 0.2, 25};
    double prev = lr_at(s, 0);
    for (int e = 1; e < 200; ++e) {
      const double lr = lr_at(s, e);
      CHECK(lr > 0.0);
      CHECK(lr <= prev);
      prev = lr;
    }
  }
}
