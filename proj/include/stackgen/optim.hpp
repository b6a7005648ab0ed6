#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "stackgen/tensor.hpp"

namespace stackgen {

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// Step-decay schedule: lr(epoch) = base_lr * decay_factor^floor(epoch/decay_every).
struct LrSchedule {
  double base_lr = 2e-4;
  double decay_factor = 0.2;
  int decay_every = 25;
};

inline double lr_at(const LrSchedule& s, int epoch) {
  if (epoch < 0) throw ContractError("lr_at: epoch must be non-negative");
  return s.base_lr * std::pow(s.decay_factor, static_cast<double>(epoch / s.decay_every));
}

// Adam with bias correction over a fixed parameter list. Moment buffers
// mirror parameter shapes; v stays elementwise non-negative.
template <typename T>
class Adam {
 public:
  explicit Adam(std::vector<Tensor<T>> params, T beta1 = T(kAdamBeta1), T beta2 = T(kAdamBeta2),
                T eps = T(kAdamEps))
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].data().size(), T(0));
      v_[i].assign(params_[i].data().size(), T(0));
    }
  }

  void step(T lr) {
    if (lr <= T(0)) throw ContractError("adam step: lr must be positive");
    ++step_count_;
    const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1_), step_count_));
    const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2_), step_count_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<T>& p = params_[i];
      if (!p.has_grad())
        throw ContractError("adam step: parameter " + std::to_string(i) +
                            " has no gradient; run backward() first");
      auto& w = p.data();
      const auto& g = p.grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = beta1_ * m[j] + (T(1) - beta1_) * g[j];
        v[j] = beta2_ * v[j] + (T(1) - beta2_) * g[j] * g[j];
        const T mhat = m[j] / bc1;
        const T vhat = v[j] / bc2;
        w[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::int64_t step_count() const { return step_count_; }
  void set_step_count(std::int64_t t) { step_count_ = t; }

  std::size_t size() const { return params_.size(); }
  std::vector<T>& moment1(std::size_t i) { return m_[i]; }
  std::vector<T>& moment2(std::size_t i) { return v_[i]; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  T beta1_, beta2_, eps_;
  std::int64_t step_count_ = 0;
};

}  // namespace stackgen
