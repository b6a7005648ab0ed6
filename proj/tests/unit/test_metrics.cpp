#include <doctest.h>

#include <cmath>

#include "stackgen/data.hpp"
#include "stackgen/metrics.hpp"

using namespace stackgen;

TEST_SUITE("metrics") {
  TEST_CASE("fit_gaussian: two points, unbiased covariance") {
    Eigen::MatrixXd f(2, 2);
    f << 0, 0, 2, 0;
    GaussianStats s = fit_gaussian(f);
    CHECK(s.mean(0) == doctest::Approx(1.0));
    CHECK(s.mean(1) == doctest::Approx(0.0));
    CHECK(s.cov(0, 0) == doctest::Approx(2.0));  // divisor N-1 = 1
    CHECK(s.cov(0, 1) == doctest::Approx(0.0));
    CHECK(s.cov(1, 1) == doctest::Approx(0.0));
  }

  TEST_CASE("fit_gaussian: identical points give zero covariance; N < 2 errors") {
    Eigen::MatrixXd f(3, 2);
    f << 1, 2, 1, 2, 1, 2;
    GaussianStats s = fit_gaussian(f);
    CHECK(s.cov.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
    CHECK((s.cov - s.cov.transpose()).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK_THROWS_AS(fit_gaussian(Eigen::MatrixXd::Zero(1, 2)), DataError);
  }

  TEST_CASE("matrix_sqrt_psd: identity, diagonal, and the [[2,1],[1,2]] root") {
    CHECK((matrix_sqrt_psd(Eigen::MatrixXd::Identity(3, 3)) -
           Eigen::MatrixXd::Identity(3, 3))
              .cwiseAbs()
              .maxCoeff() <= 1e-12);

    Eigen::MatrixXd d = Eigen::Vector2d(4.0, 9.0).asDiagonal();
    Eigen::MatrixXd sd = matrix_sqrt_psd(d);
    CHECK(sd(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(sd(1, 1) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(sd(0, 1) == doctest::Approx(0.0));

    Eigen::MatrixXd a(2, 2);
    a << 2, 1, 1, 2;
    Eigen::MatrixXd s = matrix_sqrt_psd(a);
    CHECK(s(0, 0) == doctest::Approx(1.36603).epsilon(1e-5));
    CHECK(s(0, 1) == doctest::Approx(0.36603).epsilon(1e-5));
    CHECK(s(1, 0) == doctest::Approx(0.36603).epsilon(1e-5));
    CHECK(s(1, 1) == doctest::Approx(1.36603).epsilon(1e-5));
    CHECK((s * s - a).cwiseAbs().maxCoeff() <= 1e-12);  // verify by squaring
  }

  TEST_CASE("matrix_sqrt_psd: S*S reconstructs random PSD inputs to 1e-8 relative") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      const int d = 1 + static_cast<int>(rng.bounded(8));
      Eigen::MatrixXd b(d, d);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) b(i, j) = rng.normal();
      Eigen::MatrixXd a = b * b.transpose();
      Eigen::MatrixXd s = matrix_sqrt_psd(a);
      const double rel = (s * s - a).norm() / std::max(a.norm(), 1e-12);
      CHECK(rel <= 1e-8);
    }
  }

  TEST_CASE("matrix_sqrt_psd rejects asymmetric input") {
    Eigen::MatrixXd a(2, 2);
    a << 1, 0.5, 0.1, 1;
    CHECK_THROWS_AS(matrix_sqrt_psd(a), ContractError);
  }

  TEST_CASE("fid closed forms: 0, 1.0, 2.0") {
    GaussianStats a{Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2)};
    CHECK(fid(a, a) == doctest::Approx(0.0).epsilon(1e-9));

    GaussianStats n01{Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1)};
    GaussianStats n11{Eigen::VectorXd::Ones(1), Eigen::MatrixXd::Identity(1, 1)};
    CHECK(fid(n01, n11) == doctest::Approx(1.0).epsilon(1e-9));

    GaussianStats wide{Eigen::VectorXd::Zero(2), 4.0 * Eigen::MatrixXd::Identity(2, 2)};
    CHECK(fid(a, wide) == doctest::Approx(2.0).epsilon(1e-9));

    GaussianStats mismatch{Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3)};
    CHECK_THROWS_AS(fid(a, mismatch), DimensionError);
  }

  TEST_CASE("fid is symmetric and non-negative on random stats") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
      const int d = 3;
      Eigen::MatrixXd fa(16, d), fb(16, d);
      for (int i = 0; i < 16; ++i)
        for (int j = 0; j < d; ++j) {
          fa(i, j) = rng.normal();
          fb(i, j) = 0.5 * rng.normal() + 1.0;
        }
      GaussianStats a = fit_gaussian(fa), b = fit_gaussian(fb);
      const double ab = fid(a, b), ba = fid(b, a);
      CHECK(ab >= 0.0);
      CHECK(ab == doctest::Approx(ba).epsilon(1e-6));
    }
  }

  TEST_CASE("inception score: uniform rows, balanced one-hots, collapsed one-hots") {
    const int C = 3, N = 30;
    Eigen::MatrixXd uniform = Eigen::MatrixXd::Constant(N, C, 1.0 / C);
    auto [mu, su] = inception_score(uniform, 10);
    CHECK(mu == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(su == doctest::Approx(0.0).epsilon(1e-9));

    // Interleaved one-hots: every split sees all classes equally.
    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(N, C);
    for (int i = 0; i < N; ++i) onehot(i, i % C) = 1.0;
    auto [m1, s1] = inception_score(onehot, 10);
    CHECK(m1 == doctest::Approx(3.0).epsilon(1e-6));
    CHECK(s1 == doctest::Approx(0.0).epsilon(1e-6));

    Eigen::MatrixXd collapsed = Eigen::MatrixXd::Zero(N, C);
    for (int i = 0; i < N; ++i) collapsed(i, 1) = 1.0;
    auto [m2, s2] = inception_score(collapsed, 10);
    CHECK(m2 == doctest::Approx(1.0).epsilon(1e-6));

    CHECK_THROWS_AS(inception_score(Eigen::MatrixXd::Constant(5, 3, 1.0 / 3), 10),
                    ContractError);
  }

  TEST_CASE("inception score lies in [1, C] for random posteriors") {
    Rng rng(6);
    const int C = 5;
    Eigen::MatrixXd probs(40, C);
    for (int i = 0; i < 40; ++i) {
      double s = 0;
      for (int j = 0; j < C; ++j) {
        probs(i, j) = std::exp(rng.normal());
        s += probs(i, j);
      }
      for (int j = 0; j < C; ++j) probs(i, j) /= s;
    }
    auto [m, sd] = inception_score(probs, 10);
    CHECK(m >= 1.0 - 1e-9);
    CHECK(m <= C + 1e-9);
  }

  TEST_CASE("classifier: softmax rows sum to one and features have length 128") {
    SurrogateClassifier cls(16, kSyntheticClasses, 9);
    CHECK(cls.feature_dim() == 128);
    Rng rng(9);
    Tensor<float> imgs = stackgen::tanh(Tensor<float>::randn({4, 3, 16, 16}, rng));
    auto [probs, feats] = cls.predict(imgs);
    REQUIRE(probs.shape() == Shape{4, kSyntheticClasses});
    REQUIRE(feats.shape() == Shape{4, 128});
    for (int b = 0; b < 4; ++b) {
      double s = 0;
      for (int c = 0; c < kSyntheticClasses; ++c)
        s += probs.data()[static_cast<std::size_t>(b) * kSyntheticClasses + c];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
    }
  }

  TEST_CASE("classifier learns the synthetic classes well above chance") {
    Rng rng(10);
    std::vector<std::vector<float>> images;
    std::vector<int> labels;
    for (int i = 0; i < 600; ++i) {
      const SyntheticSpec spec = random_synthetic_spec(rng);
      SyntheticSample s = render_synthetic(spec, 16, rng);
      images.push_back(std::move(s.image_chw));
      labels.push_back(s.class_label);
    }
    SurrogateClassifier cls(16, kSyntheticClasses, 10);
    const double acc = train_classifier(cls, images, labels, 10, 32, 2e-3, 10);
    CHECK(acc == cls.test_accuracy());
    CHECK(acc > 0.5);  // chance is ~0.042 for 24 classes
  }

  TEST_CASE("metric report serializes all fields") {
    MetricReport r;
    r.inception_score_mean = 2.5;
    r.inception_score_std = 0.1;
    r.fid = 42.0;
    r.n_samples = 128;
    r.classifier_id = "surrogate-cnn-v1/x";
    r.warnings.push_back("something");
    const std::string j = metric_report_json(r);
    CHECK(j.find("\"fid\": 42.0") != std::string::npos);
    CHECK(j.find("surrogate-cnn-v1/x") != std::string::npos);
    CHECK(j.find("something") != std::string::npos);
  }
}
