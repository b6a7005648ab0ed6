#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stackgen/rng.hpp"
#include "stackgen/tensor.hpp"

namespace stackgen {

inline constexpr double kWeightInitStd = 0.02;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

// Parameter bundle for one layer. Unused fields stay undefined; batch-norm
// layers use gamma/beta (trainable) plus running_mean/running_var (buffers,
// running_var strictly positive).
template <typename T>
struct LayerParams {
  Tensor<T> weight;
  Tensor<T> bias;
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(kBatchNormMomentum);
};

// Weights ~ Normal(0, 0.02), biases zero. Conv weight layout [Cout, Cin, K, K].
template <typename T>
LayerParams<T> conv_params(int out_ch, int in_ch, int k, Rng& rng, bool with_bias = true) {
  LayerParams<T> p;
  p.weight = Tensor<T>::randn(Shape{out_ch, in_ch, k, k}, rng, 0.0, kWeightInitStd);
  p.weight.set_requires_grad(true);
  if (with_bias) {
    p.bias = Tensor<T>(Shape{out_ch});
    p.bias.set_requires_grad(true);
  }
  return p;
}

// Transposed-conv weight layout [Cin, Cout, K, K]; shared with conv2d so one
// kernel tensor serves both directions of the adjoint pair.
template <typename T>
LayerParams<T> deconv_params(int in_ch, int out_ch, int k, Rng& rng, bool with_bias = true) {
  LayerParams<T> p;
  p.weight = Tensor<T>::randn(Shape{in_ch, out_ch, k, k}, rng, 0.0, kWeightInitStd);
  p.weight.set_requires_grad(true);
  if (with_bias) {
    p.bias = Tensor<T>(Shape{out_ch});
    p.bias.set_requires_grad(true);
  }
  return p;
}

// Dense weight layout [out_features, in_features]; y = x W^T + b.
template <typename T>
LayerParams<T> dense_params(int out_f, int in_f, Rng& rng, bool with_bias = true) {
  LayerParams<T> p;
  p.weight = Tensor<T>::randn(Shape{out_f, in_f}, rng, 0.0, kWeightInitStd);
  p.weight.set_requires_grad(true);
  if (with_bias) {
    p.bias = Tensor<T>(Shape{out_f});
    p.bias.set_requires_grad(true);
  }
  return p;
}

// gamma 1, beta 0, running stats at the standard-normal fixed point.
template <typename T>
LayerParams<T> batch_norm_params(int channels) {
  LayerParams<T> p;
  p.gamma = Tensor<T>(Shape{channels}, T(1));
  p.gamma.set_requires_grad(true);
  p.beta = Tensor<T>(Shape{channels});
  p.beta.set_requires_grad(true);
  p.running_mean = Tensor<T>(Shape{channels});
  p.running_var = Tensor<T>(Shape{channels}, T(1));
  return p;
}

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const RowMat<T>>;

// Unfolds one CHW sample into a [C*K*K, OH*OW] patch matrix.
template <typename T>
void im2col(const T* x, int C, int H, int W, int K, int stride, int pad, int OH, int OW, T* col) {
  const std::int64_t plane = static_cast<std::int64_t>(OH) * OW;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < K; ++ky) {
      for (int kx = 0; kx < K; ++kx) {
        T* row = col + ((static_cast<std::int64_t>(c) * K + ky) * K + kx) * plane;
        for (int oh = 0; oh < OH; ++oh) {
          const int iy = oh * stride - pad + ky;
          T* dst = row + static_cast<std::int64_t>(oh) * OW;
          if (iy < 0 || iy >= H) {
            std::fill_n(dst, OW, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::int64_t>(c) * H + iy) * W;
          for (int ow = 0; ow < OW; ++ow) {
            const int ix = ow * stride - pad + kx;
            dst[ow] = (ix >= 0 && ix < W) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds a patch matrix back onto a CHW image.
template <typename T>
void col2im_add(const T* col, int C, int H, int W, int K, int stride, int pad, int OH, int OW,
                T* x) {
  const std::int64_t plane = static_cast<std::int64_t>(OH) * OW;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < K; ++ky) {
      for (int kx = 0; kx < K; ++kx) {
        const T* row = col + ((static_cast<std::int64_t>(c) * K + ky) * K + kx) * plane;
        for (int oh = 0; oh < OH; ++oh) {
          const int iy = oh * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          const T* src = row + static_cast<std::int64_t>(oh) * OW;
          T* dst = x + (static_cast<std::int64_t>(c) * H + iy) * W;
          for (int ow = 0; ow < OW; ++ow) {
            const int ix = ow * stride - pad + kx;
            if (ix >= 0 && ix < W) dst[ix] += src[ow];
          }
        }
      }
    }
  }
}

template <typename T>
void require_rank4(const char* op, const Tensor<T>& t, const char* what) {
  if (t.rank() != 4)
    throw DimensionError(std::string(op) + ": " + what + " must be rank-4 (BCHW), got " +
                         shape_str(t.shape()));
}

}  // namespace detail

// 2-D convolution over BCHW input, weight [Cout, Cin, K, K].
// Output spatial extent: floor((H + 2*pad - K)/stride) + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const LayerParams<T>& p, int stride, int padding) {
  detail::require_rank4("conv2d", input, "input");
  detail::require_rank4("conv2d", p.weight, "weight");
  if (stride < 1) throw ConfigError("conv2d: stride must be positive");
  if (padding < 0) throw ConfigError("conv2d: padding must be non-negative");

  const int B = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int Cout = p.weight.dim(0), K = p.weight.dim(2);
  if (p.weight.dim(1) != Cin)
    throw DimensionError("conv2d: input channel axis (1) is " + std::to_string(Cin) +
                         " but kernel expects " + std::to_string(p.weight.dim(1)));
  if (p.weight.dim(3) != K) throw DimensionError("conv2d: kernel must be square");
  if (K > H + 2 * padding || K > W + 2 * padding)
    throw DimensionError("conv2d: kernel size " + std::to_string(K) +
                         " exceeds padded input spatial axes (2,3) of " + shape_str(input.shape()));
  if (p.bias.defined() && p.bias.dim(0) != Cout)
    throw DimensionError("conv2d: bias axis 0 must match output channels");

  const int OH = (H + 2 * padding - K) / stride + 1;
  const int OW = (W + 2 * padding - K) / stride + 1;
  const std::int64_t ckk = static_cast<std::int64_t>(Cin) * K * K;
  const std::int64_t oplane = static_cast<std::int64_t>(OH) * OW;
  const std::int64_t iplane = static_cast<std::int64_t>(Cin) * H * W;

  const bool rec = Tensor<T>::recording({&input, &p.weight, &p.bias});

  std::vector<T> col(static_cast<std::size_t>(B) * ckk * oplane);
  std::vector<T> y(static_cast<std::size_t>(B) * Cout * oplane);
  detail::CMatMap<T> wm(p.weight.data().data(), Cout, ckk);

#pragma omp parallel for schedule(static)
  for (int b = 0; b < B; ++b) {
    T* col_b = col.data() + b * ckk * oplane;
    detail::im2col(input.data().data() + b * iplane, Cin, H, W, K, stride, padding, OH, OW, col_b);
    detail::MatMap<T> ym(y.data() + b * Cout * oplane, Cout, oplane);
    ym.noalias() = wm * detail::CMatMap<T>(col_b, ckk, oplane);
  }
  if (p.bias.defined()) {
    const auto& bias = p.bias.data();
    for (int b = 0; b < B; ++b)
      for (int co = 0; co < Cout; ++co) {
        T* row = y.data() + (static_cast<std::int64_t>(b) * Cout + co) * oplane;
        for (std::int64_t i = 0; i < oplane; ++i) row[i] += bias[co];
      }
  }

  auto xn = input.node();
  auto wn = p.weight.node();
  auto biasn = p.bias.defined() ? p.bias.node() : nullptr;
  std::vector<std::shared_ptr<TensorNode<T>>> parents{xn, wn};
  if (biasn) parents.push_back(biasn);

  std::function<void(const TensorNode<T>&)> backprop;
  if (rec) {
    backprop = [xn, wn, biasn, col = std::move(col), B, Cin, H, W, Cout, K, stride, padding, OH,
                OW, ckk, oplane, iplane](const TensorNode<T>& self) {
      if (wn->requires_grad) {
        wn->ensure_grad();
        detail::MatMap<T> wg(wn->grad.data(), Cout, ckk);
        for (int b = 0; b < B; ++b) {
          detail::CMatMap<T> dy(self.grad.data() + b * Cout * oplane, Cout, oplane);
          detail::CMatMap<T> cb(col.data() + b * ckk * oplane, ckk, oplane);
          wg.noalias() += dy * cb.transpose();
        }
      }
      if (biasn && biasn->requires_grad) {
        biasn->ensure_grad();
        for (int b = 0; b < B; ++b)
          for (int co = 0; co < Cout; ++co) {
            const T* row = self.grad.data() + (static_cast<std::int64_t>(b) * Cout + co) * oplane;
            T acc = T(0);
            for (std::int64_t i = 0; i < oplane; ++i) acc += row[i];
            biasn->grad[co] += acc;
          }
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        detail::CMatMap<T> wm(wn->value.data(), Cout, ckk);
#pragma omp parallel for schedule(static)
        for (int b = 0; b < B; ++b) {
          detail::RowMat<T> dcol(ckk, oplane);
          detail::CMatMap<T> dy(self.grad.data() + b * Cout * oplane, Cout, oplane);
          dcol.noalias() = wm.transpose() * dy;
          detail::col2im_add(dcol.data(), Cin, H, W, K, stride, padding, OH, OW,
                             xn->grad.data() + b * iplane);
        }
      }
    };
  }
  return Tensor<T>::make(Shape{B, Cout, OH, OW}, std::move(y), std::move(parents),
                         std::move(backprop));
}

// Transposed convolution (linear adjoint of conv2d with the same geometry).
// Weight [Cin, Cout, K, K]; output extent (H-1)*stride - 2*pad + K + output_padding.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const LayerParams<T>& p, int stride,
                           int padding, int output_padding = 0) {
  detail::require_rank4("conv_transpose2d", input, "input");
  detail::require_rank4("conv_transpose2d", p.weight, "weight");
  if (stride < 1) throw ConfigError("conv_transpose2d: stride must be positive");
  if (padding < 0) throw ConfigError("conv_transpose2d: padding must be non-negative");
  if (output_padding < 0 || output_padding >= stride)
    throw ConfigError("conv_transpose2d: output_padding " + std::to_string(output_padding) +
                      " must satisfy 0 <= output_padding < stride (" + std::to_string(stride) +
                      ")");

  const int B = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (p.weight.dim(0) != Cin)
    throw DimensionError("conv_transpose2d: input channel axis (1) is " + std::to_string(Cin) +
                         " but kernel expects " + std::to_string(p.weight.dim(0)));
  const int Cout = p.weight.dim(1), K = p.weight.dim(2);
  if (p.weight.dim(3) != K) throw DimensionError("conv_transpose2d: kernel must be square");
  if (p.bias.defined() && p.bias.dim(0) != Cout)
    throw DimensionError("conv_transpose2d: bias axis 0 must match output channels");

  const int OH = (H - 1) * stride - 2 * padding + K + output_padding;
  const int OW = (W - 1) * stride - 2 * padding + K + output_padding;
  if (OH < 1 || OW < 1) throw ConfigError("conv_transpose2d: geometry yields empty output");

  const std::int64_t ckk = static_cast<std::int64_t>(Cout) * K * K;
  const std::int64_t splane = static_cast<std::int64_t>(H) * W;      // source spatial
  const std::int64_t oplane = static_cast<std::int64_t>(OH) * OW;    // output spatial
  const std::int64_t ostride = static_cast<std::int64_t>(Cout) * oplane;
  const std::int64_t istride = static_cast<std::int64_t>(Cin) * splane;

  const bool rec = Tensor<T>::recording({&input, &p.weight, &p.bias});

  std::vector<T> y(static_cast<std::size_t>(B) * ostride, T(0));
  detail::CMatMap<T> wm(p.weight.data().data(), Cin, ckk);

#pragma omp parallel for schedule(static)
  for (int b = 0; b < B; ++b) {
    detail::RowMat<T> col(ckk, splane);
    detail::CMatMap<T> xm(input.data().data() + b * istride, Cin, splane);
    col.noalias() = wm.transpose() * xm;
    detail::col2im_add(col.data(), Cout, OH, OW, K, stride, padding, H, W, y.data() + b * ostride);
  }
  if (p.bias.defined()) {
    const auto& bias = p.bias.data();
    for (int b = 0; b < B; ++b)
      for (int co = 0; co < Cout; ++co) {
        T* row = y.data() + b * ostride + co * oplane;
        for (std::int64_t i = 0; i < oplane; ++i) row[i] += bias[co];
      }
  }

  auto xn = input.node();
  auto wn = p.weight.node();
  auto biasn = p.bias.defined() ? p.bias.node() : nullptr;
  std::vector<std::shared_ptr<TensorNode<T>>> parents{xn, wn};
  if (biasn) parents.push_back(biasn);

  std::function<void(const TensorNode<T>&)> backprop;
  if (rec) {
    backprop = [xn, wn, biasn, B, Cin, H, W, Cout, K, stride, padding, OH, OW, ckk, splane,
                oplane, ostride, istride](const TensorNode<T>& self) {
      // dX = W * im2col(dY); dW = X * im2col(dY)^T (per sample, accumulated).
      const bool need_x = xn->requires_grad;
      const bool need_w = wn->requires_grad;
      if (need_x) xn->ensure_grad();
      if (need_w) wn->ensure_grad();
      if (need_x || need_w) {
        detail::CMatMap<T> wm(wn->value.data(), Cin, ckk);
        detail::MatMap<T> wg(need_w ? wn->grad.data() : wn->value.data(), Cin, ckk);
        std::vector<T> dcol(static_cast<std::size_t>(ckk) * splane);
        for (int b = 0; b < B; ++b) {
          detail::im2col(self.grad.data() + b * ostride, Cout, OH, OW, K, stride, padding, H, W,
                         dcol.data());
          detail::CMatMap<T> dc(dcol.data(), ckk, splane);
          if (need_x) {
            detail::MatMap<T> xg(xn->grad.data() + b * istride, Cin, splane);
            xg.noalias() += wm * dc;
          }
          if (need_w) {
            detail::CMatMap<T> xm(xn->value.data() + b * istride, Cin, splane);
            wg.noalias() += xm * dc.transpose();
          }
        }
      }
      if (biasn && biasn->requires_grad) {
        biasn->ensure_grad();
        for (int b = 0; b < B; ++b)
          for (int co = 0; co < Cout; ++co) {
            const T* row = self.grad.data() + b * ostride + co * oplane;
            T acc = T(0);
            for (std::int64_t i = 0; i < oplane; ++i) acc += row[i];
            biasn->grad[co] += acc;
          }
      }
    };
  }
  return Tensor<T>::make(Shape{B, Cout, OH, OW}, std::move(y), std::move(parents),
                         std::move(backprop));
}

enum class BnMode { kTrain, kEval };

// Channelwise batch normalization over BCHW. Train mode normalizes with batch
// statistics and advances the running stats by EMA; eval mode uses the stored
// running stats. The affine transform (gamma, beta) applies in both modes.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, LayerParams<T>& p, BnMode mode,
                     T eps = T(kBatchNormEps), bool update_running = true) {
  detail::require_rank4("batch_norm", input, "input");
  const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (p.gamma.dim(0) != C || p.beta.dim(0) != C)
    throw DimensionError("batch_norm: gamma/beta must match channel axis (1) = " +
                         std::to_string(C));
  if (mode == BnMode::kTrain && B < 2)
    throw ContractError("batch_norm: degenerate batch of size " + std::to_string(B) +
                        " in train mode (need >= 2)");

  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  const std::int64_t n = static_cast<std::int64_t>(B) * plane;
  const auto& x = input.data();
  const auto& gamma = p.gamma.data();
  const auto& beta = p.beta.data();

  std::vector<T> mean_c(C), inv_std_c(C);
  if (mode == BnMode::kTrain) {
    for (int c = 0; c < C; ++c) {
      double s = 0.0;
      for (int b = 0; b < B; ++b) {
        const T* row = x.data() + (static_cast<std::int64_t>(b) * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) s += static_cast<double>(row[i]);
      }
      const double m = s / static_cast<double>(n);
      double v = 0.0;
      for (int b = 0; b < B; ++b) {
        const T* row = x.data() + (static_cast<std::int64_t>(b) * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const double d = static_cast<double>(row[i]) - m;
          v += d * d;
        }
      }
      v /= static_cast<double>(n);
      mean_c[c] = static_cast<T>(m);
      inv_std_c[c] = static_cast<T>(1.0 / std::sqrt(v + static_cast<double>(eps)));
      if (update_running) {
        const double unbiased = v * static_cast<double>(n) / static_cast<double>(n - 1);
        auto& rm = p.running_mean.data();
        auto& rv = p.running_var.data();
        rm[c] = static_cast<T>(p.momentum * rm[c] + (T(1) - p.momentum) * static_cast<T>(m));
        rv[c] = static_cast<T>(p.momentum * rv[c] + (T(1) - p.momentum) * static_cast<T>(unbiased));
      }
    }
  } else {
    const auto& rm = p.running_mean.data();
    const auto& rv = p.running_var.data();
    for (int c = 0; c < C; ++c) {
      mean_c[c] = rm[c];
      inv_std_c[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(rv[c]) +
                                                    static_cast<double>(eps)));
    }
  }

  std::vector<T> xhat(x.size());
  std::vector<T> y(x.size());
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const std::int64_t off = (static_cast<std::int64_t>(b) * C + c) * plane;
      const T m = mean_c[c], is = inv_std_c[c], g = gamma[c], bt = beta[c];
      for (std::int64_t i = 0; i < plane; ++i) {
        const T xh = (x[off + i] - m) * is;
        xhat[off + i] = xh;
        y[off + i] = g * xh + bt;
      }
    }

  auto xn = input.node();
  auto gn = p.gamma.node();
  auto betan = p.beta.node();
  const bool train = mode == BnMode::kTrain;

  return Tensor<T>::make(
      input.shape(), std::move(y), {xn, gn, betan},
      [xn, gn, betan, xhat = std::move(xhat), inv_std_c = std::move(inv_std_c), B, C, plane, n,
       train](const TensorNode<T>& self) {
        const auto& dy = self.grad;
        for (int c = 0; c < C; ++c) {
          // Per-channel reductions of dy and dy*xhat.
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int b = 0; b < B; ++b) {
            const std::int64_t off = (static_cast<std::int64_t>(b) * C + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
              sum_dy += static_cast<double>(dy[off + i]);
              sum_dy_xhat += static_cast<double>(dy[off + i]) * static_cast<double>(xhat[off + i]);
            }
          }
          if (gn->requires_grad) {
            gn->ensure_grad();
            gn->grad[c] += static_cast<T>(sum_dy_xhat);
          }
          if (betan->requires_grad) {
            betan->ensure_grad();
            betan->grad[c] += static_cast<T>(sum_dy);
          }
          if (xn->requires_grad) {
            xn->ensure_grad();
            const T g = gn->value[c], is = inv_std_c[c];
            if (train) {
              const T k1 = static_cast<T>(sum_dy / static_cast<double>(n));
              const T k2 = static_cast<T>(sum_dy_xhat / static_cast<double>(n));
              for (int b = 0; b < B; ++b) {
                const std::int64_t off = (static_cast<std::int64_t>(b) * C + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i)
                  xn->grad[off + i] += g * is * (dy[off + i] - k1 - xhat[off + i] * k2);
              }
            } else {
              for (int b = 0; b < B; ++b) {
                const std::int64_t off = (static_cast<std::int64_t>(b) * C + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) xn->grad[off + i] += g * is * dy[off + i];
              }
            }
          }
        }
      });
}

// y = x W^T + b over [B, F] input.
template <typename T>
Tensor<T> dense(const Tensor<T>& input, const LayerParams<T>& p) {
  if (input.rank() != 2)
    throw DimensionError("dense: input must be rank-2 (batch, features), got " +
                         shape_str(input.shape()));
  const int B = input.dim(0), F = input.dim(1);
  const int Fo = p.weight.dim(0);
  if (p.weight.dim(1) != F)
    throw DimensionError("dense: feature axis (1) is " + std::to_string(F) +
                         " but weight expects " + std::to_string(p.weight.dim(1)));
  if (p.bias.defined() && p.bias.dim(0) != Fo)
    throw DimensionError("dense: bias axis 0 must match output features");

  std::vector<T> y(static_cast<std::size_t>(B) * Fo);
  {
    detail::CMatMap<T> xm(input.data().data(), B, F);
    detail::CMatMap<T> wm(p.weight.data().data(), Fo, F);
    detail::MatMap<T> ym(y.data(), B, Fo);
    ym.noalias() = xm * wm.transpose();
    if (p.bias.defined()) {
      const auto& bias = p.bias.data();
      for (int b = 0; b < B; ++b)
        for (int o = 0; o < Fo; ++o) y[static_cast<std::size_t>(b) * Fo + o] += bias[o];
    }
  }

  auto xn = input.node();
  auto wn = p.weight.node();
  auto biasn = p.bias.defined() ? p.bias.node() : nullptr;
  std::vector<std::shared_ptr<TensorNode<T>>> parents{xn, wn};
  if (biasn) parents.push_back(biasn);

  return Tensor<T>::make(
      Shape{B, Fo}, std::move(y), std::move(parents),
      [xn, wn, biasn, B, F, Fo](const TensorNode<T>& self) {
        detail::CMatMap<T> dy(self.grad.data(), B, Fo);
        if (xn->requires_grad) {
          xn->ensure_grad();
          detail::MatMap<T> xg(xn->grad.data(), B, F);
          detail::CMatMap<T> wm(wn->value.data(), Fo, F);
          xg.noalias() += dy * wm;
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          detail::MatMap<T> wg(wn->grad.data(), Fo, F);
          detail::CMatMap<T> xm(xn->value.data(), B, F);
          wg.noalias() += dy.transpose() * xm;
        }
        if (biasn && biasn->requires_grad) {
          biasn->ensure_grad();
          for (int b = 0; b < B; ++b)
            for (int o = 0; o < Fo; ++o) biasn->grad[o] += self.grad[static_cast<std::size_t>(b) * Fo + o];
        }
      });
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  const auto& av = a.data();
  std::vector<T> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] > T(0) ? av[i] : T(0);
  auto an = a.node();
  return Tensor<T>::make(a.shape(), std::move(y), {an}, [an](const TensorNode<T>& self) {
    detail::accum_grad(an, static_cast<std::int64_t>(self.grad.size()), [&](std::int64_t i) {
      return an->value[i] > T(0) ? self.grad[i] : T(0);
    });
  });
}

// x for x >= 0, alpha*x otherwise.
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T alpha = T(0.2)) {
  const auto& av = a.data();
  std::vector<T> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] >= T(0) ? av[i] : alpha * av[i];
  auto an = a.node();
  return Tensor<T>::make(a.shape(), std::move(y), {an}, [an, alpha](const TensorNode<T>& self) {
    detail::accum_grad(an, static_cast<std::int64_t>(self.grad.size()), [&](std::int64_t i) {
      return an->value[i] >= T(0) ? self.grad[i] : alpha * self.grad[i];
    });
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  const auto& av = a.data();
  std::vector<T> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(av[i]);
  auto an = a.node();
  return Tensor<T>::make(a.shape(), std::move(y), {an}, [an](const TensorNode<T>& self) {
    detail::accum_grad(an, static_cast<std::int64_t>(self.grad.size()), [&](std::int64_t i) {
      return self.grad[i] * (T(1) - self.value[i] * self.value[i]);
    });
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  const auto& av = a.data();
  std::vector<T> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = T(1) / (T(1) + std::exp(-av[i]));
  auto an = a.node();
  return Tensor<T>::make(a.shape(), std::move(y), {an}, [an](const TensorNode<T>& self) {
    detail::accum_grad(an, static_cast<std::int64_t>(self.grad.size()), [&](std::int64_t i) {
      return self.grad[i] * self.value[i] * (T(1) - self.value[i]);
    });
  });
}

// Row softmax over the class axis of a [B, C] tensor.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis = 1) {
  if (a.rank() != 2 || axis != 1)
    throw ContractError("softmax: requires a [batch, classes] tensor with class axis 1");
  const int B = a.dim(0), C = a.dim(1);
  const auto& av = a.data();
  std::vector<T> y(av.size());
  for (int b = 0; b < B; ++b) {
    const T* row = av.data() + static_cast<std::int64_t>(b) * C;
    T* out = y.data() + static_cast<std::int64_t>(b) * C;
    T m = row[0];
    for (int c = 1; c < C; ++c) m = std::max(m, row[c]);
    T s = T(0);
    for (int c = 0; c < C; ++c) {
      out[c] = std::exp(row[c] - m);
      s += out[c];
    }
    for (int c = 0; c < C; ++c) out[c] /= s;
  }
  auto an = a.node();
  return Tensor<T>::make(a.shape(), std::move(y), {an}, [an, B, C](const TensorNode<T>& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (int b = 0; b < B; ++b) {
      const std::int64_t off = static_cast<std::int64_t>(b) * C;
      T dot = T(0);
      for (int c = 0; c < C; ++c) dot += self.grad[off + c] * self.value[off + c];
      for (int c = 0; c < C; ++c)
        an->grad[off + c] += self.value[off + c] * (self.grad[off + c] - dot);
    }
  });
}

// Mean softmax cross-entropy from logits [B, C] against integer labels.
template <typename T>
Tensor<T> cross_entropy_logits(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2)
    throw DimensionError("cross_entropy_logits: logits must be [batch, classes]");
  const int B = logits.dim(0), C = logits.dim(1);
  if (static_cast<int>(labels.size()) != B)
    throw DimensionError("cross_entropy_logits: label count must match batch axis 0");

  const auto& x = logits.data();
  std::vector<T> probs(x.size());
  double loss = 0.0;
  for (int b = 0; b < B; ++b) {
    const T* row = x.data() + static_cast<std::int64_t>(b) * C;
    T* p = probs.data() + static_cast<std::int64_t>(b) * C;
    T m = row[0];
    for (int c = 1; c < C; ++c) m = std::max(m, row[c]);
    double s = 0.0;
    for (int c = 0; c < C; ++c) {
      p[c] = std::exp(row[c] - m);
      s += static_cast<double>(p[c]);
    }
    for (int c = 0; c < C; ++c) p[c] = static_cast<T>(p[c] / s);
    const int lbl = labels[static_cast<std::size_t>(b)];
    if (lbl < 0 || lbl >= C) throw ContractError("cross_entropy_logits: label out of range");
    loss -= std::log(std::max(static_cast<double>(p[lbl]), 1e-30));
  }
  loss /= static_cast<double>(B);

  auto xn = logits.node();
  return Tensor<T>::make(
      Shape{1}, std::vector<T>{static_cast<T>(loss)}, {xn},
      [xn, probs = std::move(probs), labels, B, C](const TensorNode<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const T g = self.grad[0] / static_cast<T>(B);
        for (int b = 0; b < B; ++b) {
          const std::int64_t off = static_cast<std::int64_t>(b) * C;
          for (int c = 0; c < C; ++c) {
            const T onehot = c == labels[static_cast<std::size_t>(b)] ? T(1) : T(0);
            xn->grad[off + c] += g * (probs[off + c] - onehot);
          }
        }
      });
}

// Broadcasts [B, C] features over an HxW grid, yielding [B, C, H, W].
template <typename T>
Tensor<T> replicate_spatial(const Tensor<T>& a, int h, int w) {
  if (a.rank() != 2) throw DimensionError("replicate_spatial: input must be [batch, channels]");
  const int B = a.dim(0), C = a.dim(1);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const auto& av = a.data();
  std::vector<T> y(static_cast<std::size_t>(B) * C * plane);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      std::fill_n(y.data() + (static_cast<std::int64_t>(b) * C + c) * plane, plane,
                  av[static_cast<std::size_t>(b) * C + c]);
  auto an = a.node();
  return Tensor<T>::make(Shape{B, C, h, w}, std::move(y), {an},
                         [an, B, C, plane](const TensorNode<T>& self) {
                           if (!an->requires_grad) return;
                           an->ensure_grad();
                           for (int b = 0; b < B; ++b)
                             for (int c = 0; c < C; ++c) {
                               const T* src =
                                   self.grad.data() + (static_cast<std::int64_t>(b) * C + c) * plane;
                               T acc = T(0);
                               for (std::int64_t i = 0; i < plane; ++i) acc += src[i];
                               an->grad[static_cast<std::size_t>(b) * C + c] += acc;
                             }
                         });
}

}  // namespace stackgen
