#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "stackgen/error.hpp"
#include "stackgen/rng.hpp"

namespace stackgen {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace detail {
inline thread_local bool grad_enabled = true;
}

// Disables graph recording for the enclosing scope. Inference passes run
// under this guard so they allocate no tape.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_recording_enabled() { return detail::grad_enabled; }

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // sized on first use
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(const TensorNode<T>&)> backprop;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
};

// Value-semantics handle to a node of the define-by-run graph. Values are
// immutable once produced by an op; only leaf tensors (parameters, inputs)
// are mutated in place, and only between graph constructions.
template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) {
    n_ = std::make_shared<TensorNode<T>>();
    n_->shape = std::move(shape);
    n_->value.assign(static_cast<std::size_t>(shape_numel(n_->shape)), fill);
  }

  Tensor(Shape shape, std::vector<T> data) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    n_ = std::make_shared<TensorNode<T>>();
    n_->shape = std::move(shape);
    n_->value = std::move(data);
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  static Tensor randn(Shape shape, Rng& rng, double mean = 0.0, double stddev = 1.0) {
    Tensor t(std::move(shape));
    rng.fill_normal(t.data(), mean, stddev);
    return t;
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return node_ref().shape; }
  int rank() const { return static_cast<int>(shape().size()); }
  int dim(int i) const { return shape().at(static_cast<std::size_t>(i)); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_ref().value.size()); }

  std::vector<T>& data() { return node_ref().value; }
  const std::vector<T>& data() const { return node_ref().value; }

  T item() const {
    if (numel() != 1)
      throw ContractError("item() requires a scalar tensor, got shape " + shape_str(shape()));
    return data()[0];
  }

  bool requires_grad() const { return n_ && n_->requires_grad; }

  void set_requires_grad(bool rg) {
    auto& n = node_ref();
    if (!n.is_leaf) throw ContractError("requires_grad can only be toggled on leaf tensors");
    n.requires_grad = rg;
  }

  std::vector<T>& grad() {
    auto& n = node_ref();
    n.ensure_grad();
    return n.grad;
  }

  const std::vector<T>& grad() const {
    auto& n = node_ref();
    if (n.grad.empty())
      throw ContractError("gradient not populated; run backward() first");
    return n.grad;
  }

  bool has_grad() const { return n_ && !n_->grad.empty(); }

  void zero_grad() {
    if (n_ && !n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
  }

  // Reverse-mode sweep from a scalar. Gradients accumulate across calls
  // until cleared.
  void backward() const {
    auto& root = node_ref();
    if (root.value.size() != 1)
      throw ContractError("backward() requires a scalar loss, got shape " + shape_str(root.shape));
    if (!root.requires_grad)
      throw ContractError("backward() on a tensor that does not require grad");

    std::vector<TensorNode<T>*> order;
    std::unordered_set<TensorNode<T>*> seen;
    struct Frame {
      TensorNode<T>* node;
      std::size_t next;
    };
    std::vector<Frame> stack;
    stack.push_back({&root, 0});
    seen.insert(&root);
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next < f.node->parents.size()) {
        TensorNode<T>* p = f.node->parents[f.next++].get();
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.push_back({p, 0});
        }
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }

    // Adjoints of interior nodes are per-sweep temporaries; only leaf
    // gradients persist and accumulate across calls.
    for (TensorNode<T>* n : order)
      if (!n->is_leaf && !n->grad.empty()) std::fill(n->grad.begin(), n->grad.end(), T(0));

    root.ensure_grad();
    root.grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backprop) (*it)->backprop(**it);
    }
  }

  std::shared_ptr<TensorNode<T>> node() const { return n_; }

  // True when an op over these inputs must record a backward closure.
  static bool recording(std::initializer_list<const Tensor<T>*> inputs) {
    if (!detail::grad_enabled) return false;
    for (const Tensor<T>* t : inputs)
      if (t->defined() && t->requires_grad()) return true;
    return false;
  }

  // Builds an op-result node. Parents and the closure are kept only when
  // recording is active for the given inputs.
  static Tensor make(Shape shape, std::vector<T> value,
                     std::vector<std::shared_ptr<TensorNode<T>>> parents,
                     std::function<void(const TensorNode<T>&)> backprop) {
    Tensor out(std::move(shape), std::move(value));
    bool rg = detail::grad_enabled;
    if (rg) {
      rg = false;
      for (const auto& p : parents)
        if (p && p->requires_grad) {
          rg = true;
          break;
        }
    }
    if (rg) {
      out.n_->requires_grad = true;
      out.n_->is_leaf = false;
      out.n_->parents = std::move(parents);
      out.n_->backprop = std::move(backprop);
    }
    return out;
  }

 private:
  TensorNode<T>& node_ref() const {
    if (!n_) throw ContractError("operation on an undefined tensor");
    return *n_;
  }

  std::shared_ptr<TensorNode<T>> n_;
};

namespace detail {

template <typename T, typename F>
inline void accum_grad(const std::shared_ptr<TensorNode<T>>& p, std::int64_t n, F&& contrib) {
  if (!p->requires_grad) return;
  p->ensure_grad();
  for (std::int64_t i = 0; i < n; ++i) p->grad[static_cast<std::size_t>(i)] += contrib(i);
}

template <typename T>
inline void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("add", a, b);
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<T> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  auto an = a.node(), bn = b.node();
  return Tensor<T>::make(a.shape(), std::move(y), {an, bn}, [an, bn](const TensorNode<T>& self) {
    const std::int64_t n = static_cast<std::int64_t>(self.grad.size());
    detail::accum_grad(an, n, [&](std::int64_t i) { return self.grad[i]; });
    detail::accum_grad(bn, n, [&](std::int64_t i) { return self.grad[i]; });
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("sub", a, b);
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<T> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] - bv[i];
  auto an = a.node(), bn = b.node();
  return Tensor<T>::make(a.shape(), std::move(y), {an, bn}, [an, bn](const TensorNode<T>& self) {
    const std::int64_t n = static_cast<std::int64_t>(self.grad.size());
    detail::accum_grad(an, n, [&](std::int64_t i) { return self.grad[i]; });
    detail::accum_grad(bn, n, [&](std::int64_t i) { return -self.grad[i]; });
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("mul", a, b);
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<T> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  auto an = a.node(), bn = b.node();
  return Tensor<T>::make(a.shape(), std::move(y), {an, bn}, [an, bn](const TensorNode<T>& self) {
    const std::int64_t n = static_cast<std::int64_t>(self.grad.size());
    detail::accum_grad(an, n, [&](std::int64_t i) { return self.grad[i] * bn->value[i]; });
    detail::accum_grad(bn, n, [&](std::int64_t i) { return self.grad[i] * an->value[i]; });
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  const auto& av = a.data();
  std::vector<T> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * c;
  auto an = a.node();
  return Tensor<T>::make(a.shape(), std::move(y), {an}, [an, c](const TensorNode<T>& self) {
    detail::accum_grad(an, static_cast<std::int64_t>(self.grad.size()),
                       [&](std::int64_t i) { return self.grad[i] * c; });
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  const auto& av = a.data();
  std::vector<T> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + c;
  auto an = a.node();
  return Tensor<T>::make(a.shape(), std::move(y), {an}, [an](const TensorNode<T>& self) {
    detail::accum_grad(an, static_cast<std::int64_t>(self.grad.size()),
                       [&](std::int64_t i) { return self.grad[i]; });
  });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, T(-1));
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  const auto& av = a.data();
  std::vector<T> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::exp(av[i]);
  auto an = a.node();
  return Tensor<T>::make(a.shape(), std::move(y), {an}, [an](const TensorNode<T>& self) {
    detail::accum_grad(an, static_cast<std::int64_t>(self.grad.size()),
                       [&](std::int64_t i) { return self.grad[i] * self.value[i]; });
  });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  const auto& av = a.data();
  std::vector<T> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::log(av[i]);
  auto an = a.node();
  return Tensor<T>::make(a.shape(), std::move(y), {an}, [an](const TensorNode<T>& self) {
    detail::accum_grad(an, static_cast<std::int64_t>(self.grad.size()),
                       [&](std::int64_t i) { return self.grad[i] / an->value[i]; });
  });
}

// Gradient passes through unchanged inside [lo, hi] and is zero outside.
template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  const auto& av = a.data();
  std::vector<T> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::min(std::max(av[i], lo), hi);
  auto an = a.node();
  return Tensor<T>::make(a.shape(), std::move(y), {an}, [an, lo, hi](const TensorNode<T>& self) {
    detail::accum_grad(an, static_cast<std::int64_t>(self.grad.size()), [&](std::int64_t i) {
      const T x = an->value[i];
      return (x >= lo && x <= hi) ? self.grad[i] : T(0);
    });
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  const auto& av = a.data();
  T acc = T(0);
  for (T v : av) acc += v;
  auto an = a.node();
  return Tensor<T>::make(Shape{1}, std::vector<T>{acc}, {an}, [an](const TensorNode<T>& self) {
    const T g = self.grad[0];
    detail::accum_grad(an, static_cast<std::int64_t>(an->value.size()),
                       [&](std::int64_t) { return g; });
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  const std::int64_t n = a.numel();
  return scale(sum(a), T(1) / static_cast<T>(n));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
  auto an = a.node();
  return Tensor<T>::make(std::move(shape), a.data(), {an}, [an](const TensorNode<T>& self) {
    detail::accum_grad(an, static_cast<std::int64_t>(self.grad.size()),
                       [&](std::int64_t i) { return self.grad[i]; });
  });
}

namespace detail {
// Iteration decomposition for axis ops: treat the tensor as
// [outer, axis_extent, inner].
inline void axis_extents(const Shape& s, int axis, std::int64_t& outer, std::int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
}
}  // namespace detail

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, int axis) {
  if (a.rank() != b.rank())
    throw DimensionError("concat: rank mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  if (axis < 0 || axis >= a.rank()) throw DimensionError("concat: axis out of range");
  for (int i = 0; i < a.rank(); ++i)
    if (i != axis && a.dim(i) != b.dim(i))
      throw DimensionError("concat: inputs disagree on axis " + std::to_string(i) + ": " +
                           shape_str(a.shape()) + " vs " + shape_str(b.shape()));

  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] += b.dim(axis);
  std::int64_t outer, inner;
  detail::axis_extents(a.shape(), axis, outer, inner);
  const std::int64_t ea = a.dim(axis), eb = b.dim(axis);

  std::vector<T> y(static_cast<std::size_t>(shape_numel(out_shape)));
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    T* dst = y.data() + o * (ea + eb) * inner;
    std::copy_n(av.data() + o * ea * inner, ea * inner, dst);
    std::copy_n(bv.data() + o * eb * inner, eb * inner, dst + ea * inner);
  }

  auto an = a.node(), bn = b.node();
  return Tensor<T>::make(
      std::move(out_shape), std::move(y), {an, bn},
      [an, bn, outer, inner, ea, eb](const TensorNode<T>& self) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::int64_t o = 0; o < outer; ++o) {
            const T* src = self.grad.data() + o * (ea + eb) * inner;
            T* dst = an->grad.data() + o * ea * inner;
            for (std::int64_t i = 0; i < ea * inner; ++i) dst[i] += src[i];
          }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::int64_t o = 0; o < outer; ++o) {
            const T* src = self.grad.data() + o * (ea + eb) * inner + ea * inner;
            T* dst = bn->grad.data() + o * eb * inner;
            for (std::int64_t i = 0; i < eb * inner; ++i) dst[i] += src[i];
          }
        }
      });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, int start, int len) {
  if (axis < 0 || axis >= a.rank()) throw DimensionError("slice: axis out of range");
  if (start < 0 || len <= 0 || start + len > a.dim(axis))
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") exceeds axis " + std::to_string(axis) +
                         " of " + shape_str(a.shape()));
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] = len;
  std::int64_t outer, inner;
  detail::axis_extents(a.shape(), axis, outer, inner);
  const std::int64_t e = a.dim(axis);

  std::vector<T> y(static_cast<std::size_t>(shape_numel(out_shape)));
  const auto& av = a.data();
  for (std::int64_t o = 0; o < outer; ++o)
    std::copy_n(av.data() + (o * e + start) * inner, len * inner, y.data() + o * len * inner);

  auto an = a.node();
  return Tensor<T>::make(std::move(out_shape), std::move(y), {an},
                         [an, outer, inner, e, start, len](const TensorNode<T>& self) {
                           if (!an->requires_grad) return;
                           an->ensure_grad();
                           for (std::int64_t o = 0; o < outer; ++o) {
                             const T* src = self.grad.data() + o * len * inner;
                             T* dst = an->grad.data() + (o * e + start) * inner;
                             for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                           }
                         });
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.data())
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

// Throws NumericError naming `where` if any element is non-finite.
template <typename T>
void check_finite(const char* where, const Tensor<T>& t) {
  if (!all_finite(t))
    throw NumericError(std::string("non-finite output at ") + where);
}

}  // namespace stackgen
