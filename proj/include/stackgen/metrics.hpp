#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stackgen/layers.hpp"
#include "stackgen/tensor.hpp"

namespace stackgen {

inline constexpr double kIsProbFloor = 1e-12;
inline constexpr int kIsSplits = 10;
inline constexpr int kClassifierFeatureDim = 128;

// Sample mean and unbiased sample covariance of a feature cloud.
struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// features: one row per sample. Throws DataError for fewer than 2 rows.
GaussianStats fit_gaussian(const Eigen::MatrixXd& features);

// Symmetric PSD square root via eigendecomposition; eigenvalues above -1e-8
// are clamped to zero, asymmetry beyond tolerance is a contract error.
Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& a);

// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}), with the cross root
// computed from the symmetrized product sqrt(sqrt(S1) S2 sqrt(S1)) so the
// result stays real. Tiny negative totals are clamped to zero.
double fid(const GaussianStats& a, const GaussianStats& b);

// probs: rows sum to one. Per contiguous split, exp of the mean KL between
// row posteriors and the split marginal; returns (mean, std) across splits.
std::pair<double, double> inception_score(const Eigen::MatrixXd& probs, int n_splits = kIsSplits);

struct MetricReport {
  double inception_score_mean = 0;
  double inception_score_std = 0;
  double fid = 0;
  int n_samples = 0;
  std::string classifier_id;
  std::vector<std::string> warnings;
};

std::string metric_report_json(const MetricReport& report);
void write_metric_report(const std::string& path, const MetricReport& report);

// Small conv classifier standing in for a large pretrained feature network:
// three stride-2 convs, a 128-dim penultimate feature layer and a softmax
// head over the synthetic classes.
class SurrogateClassifier {
 public:
  SurrogateClassifier() = default;
  SurrogateClassifier(int image_size, int n_classes, std::uint64_t seed);

  // images [B, 3, S, S] -> (logits [B, C], features [B, 128]).
  std::pair<Tensor<float>, Tensor<float>> forward(const Tensor<float>& images);

  // Softmax probabilities and penultimate features, no graph recorded.
  std::pair<Tensor<float>, Tensor<float>> predict(const Tensor<float>& images);

  int image_size() const { return image_size_; }
  int n_classes() const { return n_classes_; }
  int feature_dim() const { return kClassifierFeatureDim; }
  double test_accuracy() const { return test_accuracy_; }
  void set_test_accuracy(double a) { test_accuracy_ = a; }

  // Stable identifier carried on every report so scores from different
  // classifiers are never compared.
  std::string id() const;

  std::vector<std::pair<std::string, Tensor<float>>> named_tensors();
  std::vector<Tensor<float>> parameters();

 private:
  int image_size_ = 0;
  int n_classes_ = 0;
  std::uint64_t seed_ = 0;
  double test_accuracy_ = 0;
  std::vector<LayerParams<float>> convs_;
  LayerParams<float> feat_, head_;
};

// Trains on a record-level 80/20 holdout of the labeled images (all classes
// appear on both sides) and stores the held-out accuracy on the classifier.
double train_classifier(SurrogateClassifier& cls, const std::vector<std::vector<float>>& images,
                        const std::vector<int>& labels, int epochs, int batch_size, double lr,
                        std::uint64_t seed);

}  // namespace stackgen
