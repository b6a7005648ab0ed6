#include "stackgen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "stackgen/optim.hpp"
#include "stackgen/rng.hpp"

namespace stackgen {

GaussianStats fit_gaussian(const Eigen::MatrixXd& features) {
  const auto n = features.rows();
  if (n < 2)
    throw DataError("fit_gaussian: need at least 2 samples, got " + std::to_string(n));
  GaussianStats s;
  s.mean = features.colwise().mean();
  Eigen::MatrixXd centered = features.rowwise() - s.mean.transpose();
  s.cov = centered.transpose() * centered / static_cast<double>(n - 1);
  s.cov = ((s.cov + s.cov.transpose()) / 2.0).eval();
  return s;
}

Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols()) throw DimensionError("matrix_sqrt_psd: matrix must be square");
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-8 * scale)
    throw ContractError("matrix_sqrt_psd: input asymmetry " + std::to_string(asym) +
                        " exceeds tolerance");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es((a + a.transpose()) / 2.0);
  if (es.info() != Eigen::Success)
    throw NumericError("matrix_sqrt_psd: eigendecomposition failed");
  Eigen::VectorXd lam = es.eigenvalues();
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    if (lam[i] < -1e-8 * scale)
      throw ContractError("matrix_sqrt_psd: eigenvalue " + std::to_string(lam[i]) +
                          " below the PSD floor");
    lam[i] = std::sqrt(std::max(lam[i], 0.0));
  }
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

double fid(const GaussianStats& a, const GaussianStats& b) {
  if (a.mean.size() != b.mean.size())
    throw DimensionError("fid: dimension mismatch " + std::to_string(a.mean.size()) + " vs " +
                         std::to_string(b.mean.size()));
  const Eigen::MatrixXd sqrt_a = matrix_sqrt_psd(a.cov);
  const Eigen::MatrixXd cross = matrix_sqrt_psd(sqrt_a * b.cov * sqrt_a);
  const double mean_term = (a.mean - b.mean).squaredNorm();
  const double trace_term = a.cov.trace() + b.cov.trace() - 2.0 * cross.trace();
  const double value = mean_term + trace_term;
  return value < 0.0 ? 0.0 : value;
}

std::pair<double, double> inception_score(const Eigen::MatrixXd& probs, int n_splits) {
  const auto n = probs.rows();
  const auto c = probs.cols();
  if (n_splits < 1) throw ContractError("inception_score: n_splits must be positive");
  if (n < n_splits)
    throw ContractError("inception_score: need at least n_splits (" + std::to_string(n_splits) +
                        ") rows, got " + std::to_string(n));

  std::vector<double> scores;
  scores.reserve(static_cast<std::size_t>(n_splits));
  for (int s = 0; s < n_splits; ++s) {
    const auto lo = n * s / n_splits;
    const auto hi = n * (s + 1) / n_splits;
    const auto rows = hi - lo;
    Eigen::VectorXd marginal = Eigen::VectorXd::Zero(c);
    for (auto i = lo; i < hi; ++i) marginal += probs.row(i).transpose();
    marginal /= static_cast<double>(rows);
    double mean_kl = 0.0;
    for (auto i = lo; i < hi; ++i) {
      double kl = 0.0;
      for (Eigen::Index k = 0; k < c; ++k) {
        const double p = probs(i, k);
        if (p <= 0.0) continue;
        kl += p * (std::log(std::max(p, kIsProbFloor)) -
                   std::log(std::max(marginal[k], kIsProbFloor)));
      }
      mean_kl += kl;
    }
    scores.push_back(std::exp(mean_kl / static_cast<double>(rows)));
  }

  double mean = 0.0;
  for (double v : scores) mean += v;
  mean /= static_cast<double>(scores.size());
  double var = 0.0;
  for (double v : scores) var += (v - mean) * (v - mean);
  var /= static_cast<double>(scores.size());
  return {mean, std::sqrt(var)};
}

std::string metric_report_json(const MetricReport& report) {
  nlohmann::json j;
  j["inception_score_mean"] = report.inception_score_mean;
  j["inception_score_std"] = report.inception_score_std;
  j["fid"] = report.fid;
  j["n_samples"] = report.n_samples;
  j["classifier_id"] = report.classifier_id;
  j["warnings"] = report.warnings;
  return j.dump(2);
}

void write_metric_report(const std::string& path, const MetricReport& report) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("metric report '" + path + "': cannot open for writing");
  os << metric_report_json(report) << "\n";
}

// ---------------------------------------------------------------------------
// Surrogate classifier
// ---------------------------------------------------------------------------

SurrogateClassifier::SurrogateClassifier(int image_size, int n_classes, std::uint64_t seed)
    : image_size_(image_size), n_classes_(n_classes), seed_(seed) {
  if (image_size < 8 || image_size % 8 != 0)
    throw ConfigError("classifier: image_size must be a multiple of 8");
  Rng rng(seed);
  // He-scaled init: the plain ReLU stack trains much faster than with the
  // generative models' 0.02-std convention.
  auto he_scale = [](LayerParams<float>& p, int fan_in) {
    const float s = std::sqrt(2.0f / static_cast<float>(fan_in)) / 0.02f;
    for (auto& w : p.weight.data()) w *= s;
  };
  const int widths[3] = {16, 32, 64};
  int in_ch = 3;
  for (int w : widths) {
    convs_.push_back(conv_params<float>(w, in_ch, 5, rng));
    he_scale(convs_.back(), in_ch * 25);
    in_ch = w;
  }
  const int spatial = image_size / 8;
  feat_ = dense_params<float>(kClassifierFeatureDim, in_ch * spatial * spatial, rng);
  he_scale(feat_, in_ch * spatial * spatial);
  head_ = dense_params<float>(n_classes, kClassifierFeatureDim, rng);
  he_scale(head_, kClassifierFeatureDim);
}

std::pair<Tensor<float>, Tensor<float>> SurrogateClassifier::forward(const Tensor<float>& images) {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != image_size_ ||
      images.dim(3) != image_size_)
    throw DimensionError("classifier: expected [B, 3, " + std::to_string(image_size_) + ", " +
                         std::to_string(image_size_) + "], got " + shape_str(images.shape()));
  const int B = images.dim(0);
  Tensor<float> x = images;
  for (auto& conv : convs_) x = relu(conv2d(x, conv, 2, 2));
  const int spatial = image_size_ / 8;
  Tensor<float> features = relu(dense(reshape(x, {B, 64 * spatial * spatial}), feat_));
  Tensor<float> logits = dense(features, head_);
  return {logits, features};
}

std::pair<Tensor<float>, Tensor<float>> SurrogateClassifier::predict(const Tensor<float>& images) {
  NoGradGuard ng;
  auto [logits, features] = forward(images);
  return {softmax(logits), features};
}

std::string SurrogateClassifier::id() const {
  std::ostringstream os;
  os << "surrogate-cnn-v1/s" << image_size_ << "/c" << n_classes_ << "/seed" << seed_;
  return os.str();
}

std::vector<std::pair<std::string, Tensor<float>>> SurrogateClassifier::named_tensors() {
  std::vector<std::pair<std::string, Tensor<float>>> out;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    out.emplace_back("cls.conv" + std::to_string(i) + ".w", convs_[i].weight);
    out.emplace_back("cls.conv" + std::to_string(i) + ".b", convs_[i].bias);
  }
  out.emplace_back("cls.feat.w", feat_.weight);
  out.emplace_back("cls.feat.b", feat_.bias);
  out.emplace_back("cls.head.w", head_.weight);
  out.emplace_back("cls.head.b", head_.bias);
  return out;
}

std::vector<Tensor<float>> SurrogateClassifier::parameters() {
  std::vector<Tensor<float>> out;
  for (auto& [name, t] : named_tensors()) out.push_back(t);
  return out;
}

double train_classifier(SurrogateClassifier& cls, const std::vector<std::vector<float>>& images,
                        const std::vector<int>& labels, int epochs, int batch_size, double lr,
                        std::uint64_t seed) {
  if (images.size() != labels.size())
    throw ContractError("train_classifier: image/label count mismatch");
  if (images.size() < 10) throw DataError("train_classifier: too few samples");

  Rng rng(seed);
  std::vector<int> order(images.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);
  const std::size_t n_train = images.size() * 8 / 10;
  std::vector<int> train_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<int> test_idx(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());

  const int S = cls.image_size();
  const std::size_t pix = static_cast<std::size_t>(3) * S * S;
  auto gather = [&](const std::vector<int>& idx) {
    Tensor<float> t(Shape{static_cast<int>(idx.size()), 3, S, S});
    for (std::size_t i = 0; i < idx.size(); ++i)
      std::copy_n(images[static_cast<std::size_t>(idx[i])].data(), pix, t.data().data() + i * pix);
    return t;
  };
  auto flip_horizontal = [&](Tensor<float>& t, std::size_t i) {
    float* img = t.data().data() + i * pix;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < S; ++y) {
        float* row = img + (static_cast<std::size_t>(c) * S + y) * S;
        std::reverse(row, row + S);
      }
  };
  const int max_shift = std::max(1, S / 16);
  auto shift = [&](Tensor<float>& t, std::size_t i, int dx, int dy) {
    float* img = t.data().data() + i * pix;
    std::vector<float> tmp(pix, -1.0f);  // background
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < S; ++y) {
        const int sy = y - dy;
        if (sy < 0 || sy >= S) continue;
        for (int x = 0; x < S; ++x) {
          const int sx = x - dx;
          if (sx < 0 || sx >= S) continue;
          tmp[(static_cast<std::size_t>(c) * S + y) * S + x] =
              img[(static_cast<std::size_t>(c) * S + sy) * S + sx];
        }
      }
    std::copy(tmp.begin(), tmp.end(), img);
  };

  Adam<float> opt(cls.parameters());
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(train_idx);
    const int nb = static_cast<int>(train_idx.size()) / batch_size;
    for (int b = 0; b < nb; ++b) {
      std::vector<int> batch(train_idx.begin() + static_cast<std::ptrdiff_t>(b) * batch_size,
                             train_idx.begin() + static_cast<std::ptrdiff_t>(b + 1) * batch_size);
      Tensor<float> x = gather(batch);
      // Mirror and small-shift augmentation; the shape classes are
      // reflection- and translation-invariant.
      for (std::size_t i = 0; i < batch.size(); ++i) {
        if (rng.bounded(2)) flip_horizontal(x, i);
        const int dx = static_cast<int>(rng.bounded(2 * max_shift + 1)) - max_shift;
        const int dy = static_cast<int>(rng.bounded(2 * max_shift + 1)) - max_shift;
        if (dx != 0 || dy != 0) shift(x, i, dx, dy);
      }
      std::vector<int> y(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i)
        y[i] = labels[static_cast<std::size_t>(batch[i])];
      auto [logits, features] = cls.forward(x);
      Tensor<float> loss = cross_entropy_logits(logits, y);
      opt.zero_grad();
      loss.backward();
      opt.step(static_cast<float>(lr));
      opt.zero_grad();
    }
  }

  // Held-out accuracy.
  int correct = 0;
  const int eval_bs = 128;
  for (std::size_t at = 0; at < test_idx.size(); at += eval_bs) {
    std::vector<int> batch(test_idx.begin() + static_cast<std::ptrdiff_t>(at),
                           test_idx.begin() +
                               static_cast<std::ptrdiff_t>(std::min(at + eval_bs, test_idx.size())));
    Tensor<float> x = gather(batch);
    auto [probs, features] = cls.predict(x);
    const int C = cls.n_classes();
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const float* row = probs.data().data() + i * static_cast<std::size_t>(C);
      const int pred = static_cast<int>(std::max_element(row, row + C) - row);
      if (pred == labels[static_cast<std::size_t>(batch[i])]) ++correct;
    }
  }
  const double acc =
      test_idx.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(test_idx.size());
  cls.set_test_accuracy(acc);
  return acc;
}

}  // namespace stackgen
