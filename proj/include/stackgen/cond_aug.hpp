#pragma once

#include <string>
#include <utility>
#include <vector>

#include "stackgen/layers.hpp"
#include "stackgen/tensor.hpp"

namespace stackgen {

// Conditioning augmentation: one dense head maps a text embedding to the
// mean and log-variance of a diagonal Gaussian over conditioning space;
// conditions are drawn from it by reparameterization.
template <typename T>
class CondAugmenter {
 public:
  CondAugmenter() = default;

  CondAugmenter(int embed_dim, int cond_dim, Rng& rng)
      : embed_dim_(embed_dim), cond_dim_(cond_dim) {
    head_ = dense_params<T>(2 * cond_dim, embed_dim, rng);
  }

  int embed_dim() const { return embed_dim_; }
  int cond_dim() const { return cond_dim_; }

  // phi [B, embed_dim] -> (mu [B, cond_dim], log_var [B, cond_dim]).
  std::pair<Tensor<T>, Tensor<T>> to_gaussian(const Tensor<T>& phi) const {
    if (phi.rank() != 2 || phi.dim(1) != embed_dim_)
      throw ConfigError("cond_aug: embedding must be [batch, " + std::to_string(embed_dim_) +
                        "], got " + shape_str(phi.shape()));
    Tensor<T> both = dense(phi, head_);
    Tensor<T> mu = slice(both, 1, 0, cond_dim_);
    Tensor<T> log_var = slice(both, 1, cond_dim_, cond_dim_);
    return {mu, log_var};
  }

  LayerParams<T>& head() { return head_; }
  const LayerParams<T>& head() const { return head_; }

  std::vector<Tensor<T>> parameters() { return {head_.weight, head_.bias}; }

 private:
  int embed_dim_ = 0;
  int cond_dim_ = 0;
  LayerParams<T> head_;
};

// c_hat = mu + exp(log_var/2) * epsilon. Gradients flow to mu and log_var;
// epsilon is treated as a constant draw.
template <typename T>
Tensor<T> sample_condition(const Tensor<T>& mu, const Tensor<T>& log_var,
                           const Tensor<T>& epsilon) {
  detail::check_same_shape("sample_condition", mu, log_var);
  detail::check_same_shape("sample_condition", mu, epsilon);
  return add(mu, mul(exp(scale(log_var, T(0.5))), epsilon));
}

// KL(N(mu, diag(exp(log_var))) || N(0, I)) summed over coordinates and
// averaged over batch rows: 1/2 sum(mu^2 + exp(log_var) - 1 - log_var).
// Non-negative, zero iff mu = 0 and log_var = 0.
template <typename T>
Tensor<T> kl_to_standard_normal(const Tensor<T>& mu, const Tensor<T>& log_var) {
  detail::check_same_shape("kl_to_standard_normal", mu, log_var);
  const int batch = mu.rank() == 2 ? mu.dim(0) : 1;
  Tensor<T> ev = exp(log_var);
  Tensor<T> terms = sub(add(mul(mu, mu), ev), add_scalar(log_var, T(1)));
  return scale(sum(terms), T(0.5) / static_cast<T>(batch));
}

}  // namespace stackgen
