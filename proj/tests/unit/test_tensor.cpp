#include <doctest.h>

#include <cmath>

#include "stackgen/tensor.hpp"

using namespace stackgen;

TEST_SUITE("tensor") {
  TEST_CASE("linear map gradient: d sum(w*x) / dw = x") {
    Tensor<double> w({4}, {1.0, -2.0, 0.5, 3.0});
    w.set_requires_grad(true);
    Tensor<double> x({4}, {0.5, 1.5, -2.5, 4.0});
    sum(mul(w, x)).backward();
    for (int i = 0; i < 4; ++i) CHECK(w.grad()[i] == doctest::Approx(x.data()[i]).epsilon(1e-12));
  }

  TEST_CASE("closed-form derivative: d mean((w-1)^2) at w=3 is 4") {
    Tensor<double> w = Tensor<double>::scalar(3.0);
    w.set_requires_grad(true);
    Tensor<double> d = add_scalar(w, -1.0);
    mean(mul(d, d)).backward();
    CHECK(w.grad()[0] == doctest::Approx(4.0).epsilon(1e-12));
  }

  TEST_CASE("backward on a non-scalar is a contract error") {
    Tensor<double> t({2, 2}, 1.0);
    t.set_requires_grad(true);
    CHECK_THROWS_AS(add(t, t).backward(), ContractError);
  }

  TEST_CASE("repeated backward accumulates until cleared") {
    Tensor<double> w({3}, {1.0, 2.0, 3.0});
    w.set_requires_grad(true);
    Tensor<double> loss = sum(mul(w, w));
    loss.backward();
    const double once = w.grad()[1];
    loss.backward();
    CHECK(w.grad()[1] == doctest::Approx(2 * once));
    w.zero_grad();
    loss.backward();
    CHECK(w.grad()[1] == doctest::Approx(once));
  }

  TEST_CASE("NoGradGuard suppresses graph recording") {
    Tensor<double> w({2}, {1.0, 2.0});
    w.set_requires_grad(true);
    NoGradGuard ng;
    Tensor<double> y = mul(w, w);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->parents.empty());
  }

  TEST_CASE("concat/slice round trip and gradients") {
    Tensor<double> a({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor<double> b({2, 2}, {7, 8, 9, 10});
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    Tensor<double> c = concat(a, b, 1);
    REQUIRE(c.shape() == Shape{2, 5});
    CHECK(c.data() == std::vector<double>{1, 2, 3, 7, 8, 4, 5, 6, 9, 10});
    Tensor<double> back = slice(c, 1, 3, 2);
    CHECK(back.data() == b.data());
    sum(back).backward();
    for (double g : a.grad()) CHECK(g == 0.0);
    for (double g : b.grad()) CHECK(g == 1.0);
  }

  TEST_CASE("clamp passes gradient only inside the bounds") {
    Tensor<double> x({3}, {-2.0, 0.5, 2.0});
    x.set_requires_grad(true);
    sum(clamp(x, -1.0, 1.0)).backward();
    CHECK(x.grad() == std::vector<double>{0.0, 1.0, 0.0});
  }

  TEST_CASE("shape/data mismatch is a dimension error") {
    CHECK_THROWS_AS(Tensor<double>({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
    Tensor<double> a({2, 2}, 1.0);
    Tensor<double> b({4}, 1.0);
    CHECK_THROWS_AS(add(a, b), DimensionError);
    CHECK_THROWS_AS(reshape(a, {3}), DimensionError);
    CHECK_THROWS_AS(slice(a, 1, 1, 3), DimensionError);
  }

  TEST_CASE("elementwise ops on finite inputs stay finite") {
    Rng rng(5);
    Tensor<float> x = Tensor<float>::randn({4, 16}, rng, 0.0, 3.0);
    Tensor<float> y = exp(clamp(x, -5.0f, 5.0f));
    CHECK(all_finite(y));
    CHECK(all_finite(log(add_scalar(mul(y, y), 1.0f))));
  }
}
