// Dense tensors with reverse-mode automatic differentiation.
//
// A Tensor<T> is a value-semantic handle to an immutable payload; every
// operation returns a fresh tensor and, while gradient recording is on,
// links it to its inputs so that backward() can replay the chain rule.
// Gradients accumulate additively across uses of the same tensor.

#ifndef SOVMAS_TENSOR_HPP
#define SOVMAS_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace sovmas {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

[[noreturn]] inline void reject(const std::string& msg) {
  throw std::invalid_argument(msg);
}

// Thread-local switch; inference and finite-difference probes run with
// recording off so no graph is built.
inline bool& grad_recording() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  NoGradGuard() : prev_(grad_recording()) { grad_recording() = false; }
  ~NoGradGuard() { grad_recording() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until backward touches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl<T>>> parents;
  std::function<void(TensorImpl<T>&)> backward_fn;

  bool is_leaf() const { return parents.empty(); }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static Tensor filled(Shape shape, T value, bool requires_grad = false) {
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->data.assign(static_cast<size_t>(shape_numel(shape)), value);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (static_cast<int64_t>(values.size()) != shape_numel(shape))
      reject("tensor: data length " + std::to_string(values.size()) +
             " does not match shape " + shape_str(shape));
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  static Tensor scalar(T value) { return from({1}, {value}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t rank() const { return static_cast<int64_t>(impl_->shape.size()); }
  int64_t dim(int64_t i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }
  bool is_scalar() const { return numel() == 1; }

  std::span<const T> values() const { return impl_->data; }
  T value() const {
    if (!is_scalar()) reject("tensor: value() on non-scalar " + shape_str(shape()));
    return impl_->data[0];
  }
  T at(int64_t flat_index) const { return impl_->data[static_cast<size_t>(flat_index)]; }

  // Direct writes are for leaf initialization and optimizer updates only;
  // mutating a tensor that already participates in a graph is not supported.
  std::span<T> mutable_values() { return impl_->data; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }
  std::span<const T> grad() const {
    if (!has_grad()) reject("tensor: gradient not populated");
    return impl_->grad;
  }
  std::span<T> mutable_grad() {
    impl_->ensure_grad();
    return impl_->grad;
  }
  void zero_grad() {
    impl_->grad.assign(impl_->data.size(), T(0));
  }

  // Reverse-mode sweep from a scalar loss. Every requires_grad tensor
  // reachable through the recorded lineage receives its gradient; leaf
  // gradients accumulate across calls, interior ones are reset per sweep.
  void backward() const {
    if (!is_scalar()) reject("backward: loss must be scalar, got " + shape_str(shape()));
    std::vector<TensorImpl<T>*> order;
    topo_sort(order);
    for (TensorImpl<T>* node : order) {
      if (node->is_leaf()) {
        node->ensure_grad();
      } else {
        node->grad.assign(node->data.size(), T(0));
      }
    }
    impl_->grad[0] = T(1);
    for (TensorImpl<T>* node : order) {
      if (node->backward_fn) node->backward_fn(*node);
    }
  }

  std::shared_ptr<TensorImpl<T>> impl() const { return impl_; }

  explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

 private:
  void topo_sort(std::vector<TensorImpl<T>*>& order) const {
    std::unordered_set<TensorImpl<T>*> seen;
    std::vector<std::pair<TensorImpl<T>*, size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    seen.insert(impl_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        TensorImpl<T>* parent = node->parents[next++].get();
        if (parent->requires_grad && seen.insert(parent).second)
          stack.emplace_back(parent, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    std::reverse(order.begin(), order.end());  // loss first, leaves last
  }

  std::shared_ptr<TensorImpl<T>> impl_;
};

namespace detail {

template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> data,
                  std::vector<Tensor<T>> inputs,
                  std::function<void(TensorImpl<T>&)> backward_fn) {
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs && grad_recording()) {
    impl->requires_grad = true;
    for (const auto& in : inputs) impl->parents.push_back(in.impl());
    impl->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(impl));
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    reject(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
           shape_str(b.shape()));
}

// C (+)= op(A) * op(B); A is [m x k] (or [k x m] when trans_a), B is
// [k x n] (or [n x k] when trans_b), C is [m x n], all row-major.
template <typename T>
void raw_gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
              const T* a, const T* b, T* c) {
  if (!trans_a && !trans_b) {
    for (int64_t i = 0; i < m; ++i)
      for (int64_t p = 0; p < k; ++p) {
        const T av = a[i * k + p];
        if (av == T(0)) continue;
        const T* brow = b + p * n;
        T* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
  } else if (!trans_a && trans_b) {
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) {
        const T* arow = a + i * k;
        const T* brow = b + j * k;
        T acc = T(0);
        for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        c[i * n + j] += acc;
      }
  } else if (trans_a && !trans_b) {
    for (int64_t p = 0; p < k; ++p)
      for (int64_t i = 0; i < m; ++i) {
        const T av = a[p * m + i];
        if (av == T(0)) continue;
        const T* brow = b + p * n;
        T* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
  } else {
    for (int64_t j = 0; j < n; ++j)
      for (int64_t p = 0; p < k; ++p) {
        const T bv = b[j * k + p];
        if (bv == T(0)) continue;
        for (int64_t i = 0; i < m; ++i) c[i * n + j] += a[p * m + i] * bv;
      }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false,
                 bool trans_b = false) {
  if (a.rank() != 2 || b.rank() != 2)
    reject("matmul: operands must be rank 2, got " + shape_str(a.shape()) + " and " +
           shape_str(b.shape()));
  const int64_t m = trans_a ? a.dim(1) : a.dim(0);
  const int64_t ka = trans_a ? a.dim(0) : a.dim(1);
  const int64_t kb = trans_b ? b.dim(1) : b.dim(0);
  const int64_t n = trans_b ? b.dim(0) : b.dim(1);
  if (ka != kb)
    reject("matmul: inner extents differ, " + shape_str(a.shape()) +
           (trans_a ? "^T" : "") + " * " + shape_str(b.shape()) + (trans_b ? "^T" : ""));
  std::vector<T> out(static_cast<size_t>(m * n), T(0));
  detail::raw_gemm(trans_a, trans_b, m, n, ka, a.values().data(), b.values().data(),
                   out.data());
  auto ai = a.impl();
  auto bi = b.impl();
  return detail::make_op<T>(
      {m, n}, std::move(out), {a, b},
      [ai, bi, m, n, k = ka, trans_a, trans_b](TensorImpl<T>& node) {
        const T* g = node.grad.data();
        if (ai->requires_grad) {
          ai->ensure_grad();
          // dA for each of the four transpose cases
          if (!trans_a)
            detail::raw_gemm(false, !trans_b, m, k, n, g, bi->data.data(),
                             ai->grad.data());
          else if (!trans_b)
            detail::raw_gemm(false, true, k, m, n, bi->data.data(), g, ai->grad.data());
          else
            detail::raw_gemm(true, true, k, m, n, bi->data.data(), g, ai->grad.data());
        }
        if (bi->requires_grad) {
          bi->ensure_grad();
          if (!trans_b)
            detail::raw_gemm(!trans_a, false, k, n, m, ai->data.data(), g,
                             bi->grad.data());
          else if (!trans_a)
            detail::raw_gemm(true, false, n, k, m, g, ai->data.data(), bi->grad.data());
          else
            detail::raw_gemm(true, true, n, k, m, g, ai->data.data(), bi->grad.data());
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<T> out(a.values().begin(), a.values().end());
  for (int64_t i = 0; i < b.numel(); ++i) out[static_cast<size_t>(i)] += b.at(i);
  auto ai = a.impl();
  auto bi = b.impl();
  return detail::make_op<T>(a.shape(), std::move(out), {a, b},
                            [ai, bi](TensorImpl<T>& node) {
                              for (auto* p : {ai.get(), bi.get()}) {
                                if (!p->requires_grad) continue;
                                p->ensure_grad();
                                for (size_t i = 0; i < node.grad.size(); ++i)
                                  p->grad[i] += node.grad[i];
                              }
                            });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<T> out(a.values().begin(), a.values().end());
  for (int64_t i = 0; i < b.numel(); ++i) out[static_cast<size_t>(i)] -= b.at(i);
  auto ai = a.impl();
  auto bi = b.impl();
  return detail::make_op<T>(a.shape(), std::move(out), {a, b},
                            [ai, bi](TensorImpl<T>& node) {
                              if (ai->requires_grad) {
                                ai->ensure_grad();
                                for (size_t i = 0; i < node.grad.size(); ++i)
                                  ai->grad[i] += node.grad[i];
                              }
                              if (bi->requires_grad) {
                                bi->ensure_grad();
                                for (size_t i = 0; i < node.grad.size(); ++i)
                                  bi->grad[i] -= node.grad[i];
                              }
                            });
}

// Hadamard product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<T> out(static_cast<size_t>(a.numel()));
  for (int64_t i = 0; i < a.numel(); ++i)
    out[static_cast<size_t>(i)] = a.at(i) * b.at(i);
  auto ai = a.impl();
  auto bi = b.impl();
  return detail::make_op<T>(a.shape(), std::move(out), {a, b},
                            [ai, bi](TensorImpl<T>& node) {
                              if (ai->requires_grad) {
                                ai->ensure_grad();
                                for (size_t i = 0; i < node.grad.size(); ++i)
                                  ai->grad[i] += node.grad[i] * bi->data[i];
                              }
                              if (bi->requires_grad) {
                                bi->ensure_grad();
                                for (size_t i = 0; i < node.grad.size(); ++i)
                                  bi->grad[i] += node.grad[i] * ai->data[i];
                              }
                            });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(static_cast<size_t>(a.numel()));
  for (int64_t i = 0; i < a.numel(); ++i) out[static_cast<size_t>(i)] = a.at(i) * factor;
  auto ai = a.impl();
  return detail::make_op<T>(a.shape(), std::move(out), {a},
                            [ai, factor](TensorImpl<T>& node) {
                              if (!ai->requires_grad) return;
                              ai->ensure_grad();
                              for (size_t i = 0; i < node.grad.size(); ++i)
                                ai->grad[i] += node.grad[i] * factor;
                            });
}

// x [r x c] + row [c], broadcast over rows.
template <typename T>
Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& row) {
  if (x.rank() != 2 || row.rank() != 1 || row.dim(0) != x.dim(1))
    reject("add_row: need [r x c] + [c], got " + shape_str(x.shape()) + " + " +
           shape_str(row.shape()));
  const int64_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(x.values().begin(), x.values().end());
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out[static_cast<size_t>(i * c + j)] += row.at(j);
  auto xi = x.impl();
  auto ri = row.impl();
  return detail::make_op<T>(x.shape(), std::move(out), {x, row},
                            [xi, ri, r, c](TensorImpl<T>& node) {
                              if (xi->requires_grad) {
                                xi->ensure_grad();
                                for (size_t i = 0; i < node.grad.size(); ++i)
                                  xi->grad[i] += node.grad[i];
                              }
                              if (ri->requires_grad) {
                                ri->ensure_grad();
                                for (int64_t i = 0; i < r; ++i)
                                  for (int64_t j = 0; j < c; ++j)
                                    ri->grad[static_cast<size_t>(j)] +=
                                        node.grad[static_cast<size_t>(i * c + j)];
                              }
                            });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(static_cast<size_t>(x.numel()));
  for (int64_t i = 0; i < x.numel(); ++i) out[static_cast<size_t>(i)] = std::max(x.at(i), T(0));
  auto xi = x.impl();
  return detail::make_op<T>(x.shape(), std::move(out), {x},
                            [xi](TensorImpl<T>& node) {
                              if (!xi->requires_grad) return;
                              xi->ensure_grad();
                              for (size_t i = 0; i < node.grad.size(); ++i)
                                if (xi->data[i] > T(0)) xi->grad[i] += node.grad[i];
                            });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(static_cast<size_t>(x.numel()));
  for (int64_t i = 0; i < x.numel(); ++i) {
    const T v = x.at(i);
    out[static_cast<size_t>(i)] =
        v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                  : std::exp(v) / (T(1) + std::exp(v));
  }
  auto xi = x.impl();
  return detail::make_op<T>(x.shape(), std::move(out), {x},
                            [xi](TensorImpl<T>& node) {
                              if (!xi->requires_grad) return;
                              xi->ensure_grad();
                              for (size_t i = 0; i < node.grad.size(); ++i) {
                                const T y = node.data[i];
                                xi->grad[i] += node.grad[i] * y * (T(1) - y);
                              }
                            });
}

// ---------------------------------------------------------------------------
// Reductions and normalizations

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0;
  for (int64_t i = 0; i < x.numel(); ++i) acc += static_cast<double>(x.at(i));
  auto xi = x.impl();
  return detail::make_op<T>({1}, {static_cast<T>(acc)}, {x},
                            [xi](TensorImpl<T>& node) {
                              if (!xi->requires_grad) return;
                              xi->ensure_grad();
                              const T g = node.grad[0];
                              for (auto& v : xi->grad) v += g;
                            });
}

// Softmax along `axis`; stabilized by max subtraction, with double
// accumulation so rows sum to 1 within 1e-6 regardless of extent.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int64_t axis) {
  if (axis < 0) axis += x.rank();
  if (axis < 0 || axis >= x.rank())
    reject("softmax: axis out of range for " + shape_str(x.shape()));
  for (int64_t i = 0; i < x.numel(); ++i)
    if (!std::isfinite(static_cast<double>(x.at(i))))
      reject("softmax: non-finite input");
  const int64_t extent = x.dim(axis);
  int64_t inner = 1, outer = 1;
  for (int64_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  for (int64_t i = 0; i < axis; ++i) outer *= x.dim(i);
  std::vector<T> out(static_cast<size_t>(x.numel()));
  const auto vals = x.values();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * extent * inner + in;
      T mx = vals[static_cast<size_t>(base)];
      for (int64_t e = 1; e < extent; ++e)
        mx = std::max(mx, vals[static_cast<size_t>(base + e * inner)]);
      double denom = 0;
      for (int64_t e = 0; e < extent; ++e) {
        const double ev = std::exp(static_cast<double>(vals[static_cast<size_t>(base + e * inner)] - mx));
        out[static_cast<size_t>(base + e * inner)] = static_cast<T>(ev);
        denom += ev;
      }
      for (int64_t e = 0; e < extent; ++e) {
        auto& slot = out[static_cast<size_t>(base + e * inner)];
        slot = static_cast<T>(static_cast<double>(slot) / denom);
      }
    }
  }
  auto xi = x.impl();
  return detail::make_op<T>(
      x.shape(), std::move(out), {x},
      [xi, extent, inner, outer](TensorImpl<T>& node) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        for (int64_t o = 0; o < outer; ++o) {
          for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * extent * inner + in;
            double dot = 0;
            for (int64_t e = 0; e < extent; ++e) {
              const size_t idx = static_cast<size_t>(base + e * inner);
              dot += static_cast<double>(node.grad[idx]) * node.data[idx];
            }
            for (int64_t e = 0; e < extent; ++e) {
              const size_t idx = static_cast<size_t>(base + e * inner);
              xi->grad[idx] += node.data[idx] * (node.grad[idx] - static_cast<T>(dot));
            }
          }
        }
      });
}

// Log-softmax over the last axis.
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  if (x.rank() < 1) reject("log_softmax: rank must be >= 1");
  const int64_t cols = x.dim(x.rank() - 1);
  const int64_t rows = x.numel() / cols;
  std::vector<T> out(static_cast<size_t>(x.numel()));
  const auto vals = x.values();
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = vals.data() + r * cols;
    T mx = row[0];
    for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    double denom = 0;
    for (int64_t j = 0; j < cols; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
    const T lse = mx + static_cast<T>(std::log(denom));
    for (int64_t j = 0; j < cols; ++j)
      out[static_cast<size_t>(r * cols + j)] = row[j] - lse;
  }
  auto xi = x.impl();
  return detail::make_op<T>(
      x.shape(), std::move(out), {x},
      [xi, rows, cols](TensorImpl<T>& node) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
          double gsum = 0;
          for (int64_t j = 0; j < cols; ++j)
            gsum += static_cast<double>(node.grad[static_cast<size_t>(r * cols + j)]);
          for (int64_t j = 0; j < cols; ++j) {
            const size_t idx = static_cast<size_t>(r * cols + j);
            xi->grad[idx] += node.grad[idx] -
                             static_cast<T>(std::exp(static_cast<double>(node.data[idx])) * gsum);
          }
        }
      });
}

// Row-wise RMS normalization with learned gain: y = x / rms(x) * gain.
template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain, T eps = T(1e-6)) {
  if (x.rank() != 2 || gain.rank() != 1 || gain.dim(0) != x.dim(1))
    reject("rms_norm: need [r x c] with gain [c]");
  const int64_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(static_cast<size_t>(x.numel()));
  std::vector<T> inv_rms(static_cast<size_t>(r));
  for (int64_t i = 0; i < r; ++i) {
    double ssq = 0;
    for (int64_t j = 0; j < c; ++j) {
      const double v = x.at(i * c + j);
      ssq += v * v;
    }
    const T inv = static_cast<T>(1.0 / std::sqrt(ssq / static_cast<double>(c) + static_cast<double>(eps)));
    inv_rms[static_cast<size_t>(i)] = inv;
    for (int64_t j = 0; j < c; ++j)
      out[static_cast<size_t>(i * c + j)] = x.at(i * c + j) * inv * gain.at(j);
  }
  auto xi = x.impl();
  auto gi = gain.impl();
  return detail::make_op<T>(
      x.shape(), std::move(out), {x, gain},
      [xi, gi, r, c, inv_rms](TensorImpl<T>& node) {
        if (gi->requires_grad) {
          gi->ensure_grad();
          for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j)
              gi->grad[static_cast<size_t>(j)] +=
                  node.grad[static_cast<size_t>(i * c + j)] * xi->data[static_cast<size_t>(i * c + j)] *
                  inv_rms[static_cast<size_t>(i)];
        }
        if (xi->requires_grad) {
          xi->ensure_grad();
          for (int64_t i = 0; i < r; ++i) {
            const T inv = inv_rms[static_cast<size_t>(i)];
            double dot = 0;  // sum_j dy_j * g_j * x_j
            for (int64_t j = 0; j < c; ++j) {
              const size_t idx = static_cast<size_t>(i * c + j);
              dot += static_cast<double>(node.grad[idx]) * gi->data[static_cast<size_t>(j)] *
                     xi->data[idx];
            }
            const double k = dot * inv * inv * inv / static_cast<double>(c);
            for (int64_t j = 0; j < c; ++j) {
              const size_t idx = static_cast<size_t>(i * c + j);
              xi->grad[idx] += node.grad[idx] * gi->data[static_cast<size_t>(j)] * inv -
                               static_cast<T>(k) * xi->data[idx];
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    reject("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<T> out(x.values().begin(), x.values().end());
  auto xi = x.impl();
  return detail::make_op<T>(std::move(shape), std::move(out), {x},
                            [xi](TensorImpl<T>& node) {
                              if (!xi->requires_grad) return;
                              xi->ensure_grad();
                              for (size_t i = 0; i < node.grad.size(); ++i)
                                xi->grad[i] += node.grad[i];
                            });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, int64_t start, int64_t len) {
  if (x.rank() != 2 || start < 0 || len <= 0 || start + len > x.dim(1))
    reject("slice_cols: invalid range [" + std::to_string(start) + ", +" +
           std::to_string(len) + ") for " + shape_str(x.shape()));
  const int64_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(static_cast<size_t>(r * len));
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < len; ++j)
      out[static_cast<size_t>(i * len + j)] = x.at(i * c + start + j);
  auto xi = x.impl();
  return detail::make_op<T>({r, len}, std::move(out), {x},
                            [xi, r, c, start, len](TensorImpl<T>& node) {
                              if (!xi->requires_grad) return;
                              xi->ensure_grad();
                              for (int64_t i = 0; i < r; ++i)
                                for (int64_t j = 0; j < len; ++j)
                                  xi->grad[static_cast<size_t>(i * c + start + j)] +=
                                      node.grad[static_cast<size_t>(i * len + j)];
                            });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, int64_t start, int64_t len) {
  if (x.rank() != 2 || start < 0 || len <= 0 || start + len > x.dim(0))
    reject("slice_rows: invalid range for " + shape_str(x.shape()));
  const int64_t c = x.dim(1);
  std::vector<T> out(x.values().begin() + start * c,
                     x.values().begin() + (start + len) * c);
  auto xi = x.impl();
  return detail::make_op<T>({len, c}, std::move(out), {x},
                            [xi, c, start, len](TensorImpl<T>& node) {
                              if (!xi->requires_grad) return;
                              xi->ensure_grad();
                              for (int64_t i = 0; i < len * c; ++i)
                                xi->grad[static_cast<size_t>(start * c + i)] +=
                                    node.grad[static_cast<size_t>(i)];
                            });
}

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
    reject("concat_cols: need matching row counts, got " + shape_str(a.shape()) +
           " and " + shape_str(b.shape()));
  const int64_t r = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  std::vector<T> out(static_cast<size_t>(r * (ca + cb)));
  for (int64_t i = 0; i < r; ++i) {
    for (int64_t j = 0; j < ca; ++j)
      out[static_cast<size_t>(i * (ca + cb) + j)] = a.at(i * ca + j);
    for (int64_t j = 0; j < cb; ++j)
      out[static_cast<size_t>(i * (ca + cb) + ca + j)] = b.at(i * cb + j);
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return detail::make_op<T>(
      {r, ca + cb}, std::move(out), {a, b},
      [ai, bi, r, ca, cb](TensorImpl<T>& node) {
        if (ai->requires_grad) {
          ai->ensure_grad();
          for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < ca; ++j)
              ai->grad[static_cast<size_t>(i * ca + j)] +=
                  node.grad[static_cast<size_t>(i * (ca + cb) + j)];
        }
        if (bi->requires_grad) {
          bi->ensure_grad();
          for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < cb; ++j)
              bi->grad[static_cast<size_t>(i * cb + j)] +=
                  node.grad[static_cast<size_t>(i * (ca + cb) + ca + j)];
        }
      });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) reject("concat_rows: empty input");
  const int64_t c = parts[0].dim(1);
  int64_t rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(1) != c) reject("concat_rows: column mismatch");
    rows += p.dim(0);
  }
  std::vector<T> out;
  out.reserve(static_cast<size_t>(rows * c));
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  std::vector<std::shared_ptr<TensorImpl<T>>> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  return detail::make_op<T>(
      {rows, c}, std::move(out), parts,
      [impls, c](TensorImpl<T>& node) {
        int64_t offset = 0;
        for (const auto& pi : impls) {
          const int64_t n = static_cast<int64_t>(pi->data.size());
          if (pi->requires_grad) {
            pi->ensure_grad();
            for (int64_t i = 0; i < n; ++i)
              pi->grad[static_cast<size_t>(i)] += node.grad[static_cast<size_t>(offset + i)];
          }
          offset += n;
        }
      });
}

// ---------------------------------------------------------------------------
// Lookup, dropout

// Row gather: out[i] = table[ids[i]]. Backward scatter-adds into the table.
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int32_t> ids) {
  if (table.rank() != 2) reject("embedding: table must be rank 2");
  const int64_t v = table.dim(0), w = table.dim(1);
  std::vector<T> out(ids.size() * static_cast<size_t>(w));
  for (size_t i = 0; i < ids.size(); ++i) {
    const int32_t id = ids[i];
    if (id < 0 || id >= v)
      reject("embedding: id " + std::to_string(id) + " outside vocabulary of " +
             std::to_string(v));
    std::copy_n(table.values().data() + static_cast<int64_t>(id) * w, w,
                out.data() + static_cast<int64_t>(i) * w);
  }
  auto ti = table.impl();
  std::vector<int32_t> ids_copy(ids.begin(), ids.end());
  return detail::make_op<T>(
      {static_cast<int64_t>(ids.size()), w}, std::move(out), {table},
      [ti, w, ids_copy](TensorImpl<T>& node) {
        if (!ti->requires_grad) return;
        ti->ensure_grad();
        for (size_t i = 0; i < ids_copy.size(); ++i)
          for (int64_t j = 0; j < w; ++j)
            ti->grad[static_cast<size_t>(ids_copy[i] * w + j)] +=
                node.grad[i * static_cast<size_t>(w) + static_cast<size_t>(j)];
      });
}

// Inverted dropout; identity when not training or rate == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, std::mt19937_64* rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) reject("dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  if (rng == nullptr) reject("dropout: rng required in training mode");
  std::bernoulli_distribution keep(1.0 - rate);
  const T inv_keep = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(static_cast<size_t>(x.numel()));
  std::vector<T> out(static_cast<size_t>(x.numel()));
  for (int64_t i = 0; i < x.numel(); ++i) {
    const T m = keep(*rng) ? inv_keep : T(0);
    mask[static_cast<size_t>(i)] = m;
    out[static_cast<size_t>(i)] = x.at(i) * m;
  }
  auto xi = x.impl();
  return detail::make_op<T>(x.shape(), std::move(out), {x},
                            [xi, mask](TensorImpl<T>& node) {
                              if (!xi->requires_grad) return;
                              xi->ensure_grad();
                              for (size_t i = 0; i < node.grad.size(); ++i)
                                xi->grad[i] += node.grad[i] * mask[i];
                            });
}

// ---------------------------------------------------------------------------
// Losses

inline constexpr int64_t kCrossEntropyNoPad = -1;
inline constexpr double kKlFloor = 1e-9;

// Label-smoothed negative log-likelihood, averaged over non-pad positions.
// `logits` is [... x V] with one target id per leading row; rows whose
// target equals pad_id are excluded. Accepts unnormalized logits or
// already-normalized log-probabilities (the internal log-sum-exp is zero
// for the latter).
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int32_t> targets,
                        double label_smoothing, int64_t pad_id = kCrossEntropyNoPad) {
  if (logits.rank() < 2) reject("cross_entropy: logits must have rank >= 2");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0)
    reject("cross_entropy: label_smoothing must be in [0, 1)");
  const int64_t v = logits.dim(logits.rank() - 1);
  const int64_t rows = logits.numel() / v;
  if (static_cast<int64_t>(targets.size()) != rows)
    reject("cross_entropy: got " + std::to_string(targets.size()) + " targets for " +
           std::to_string(rows) + " rows");
  const auto vals = logits.values();
  double total = 0;
  int64_t live = 0;
  for (int64_t r = 0; r < rows; ++r) {
    const int32_t t = targets[static_cast<size_t>(r)];
    if (t == pad_id) continue;
    if (t < 0 || t >= v)
      reject("cross_entropy: target id " + std::to_string(t) + " outside vocabulary of " +
             std::to_string(v));
    const T* row = vals.data() + r * v;
    T mx = row[0];
    for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double denom = 0, rowsum = 0;
    for (int64_t j = 0; j < v; ++j) {
      denom += std::exp(static_cast<double>(row[j] - mx));
      rowsum += static_cast<double>(row[j]);
    }
    const double lse = static_cast<double>(mx) + std::log(denom);
    total += lse - (1.0 - label_smoothing) * static_cast<double>(row[t]) -
             label_smoothing / static_cast<double>(v) * rowsum;
    ++live;
  }
  if (live == 0) reject("cross_entropy: every position is padding");
  auto li = logits.impl();
  std::vector<int32_t> tgt(targets.begin(), targets.end());
  return detail::make_op<T>(
      {1}, {static_cast<T>(total / static_cast<double>(live))}, {logits},
      [li, tgt, rows, v, live, pad_id, label_smoothing](TensorImpl<T>& node) {
        if (!li->requires_grad) return;
        li->ensure_grad();
        const double g = static_cast<double>(node.grad[0]) / static_cast<double>(live);
        const double off = label_smoothing / static_cast<double>(v);
        for (int64_t r = 0; r < rows; ++r) {
          const int32_t t = tgt[static_cast<size_t>(r)];
          if (t == pad_id) continue;
          const T* row = li->data.data() + r * v;
          T mx = row[0];
          for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
          double denom = 0;
          for (int64_t j = 0; j < v; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
          for (int64_t j = 0; j < v; ++j) {
            const double p = std::exp(static_cast<double>(row[j] - mx)) / denom;
            const double tj = (j == t ? 1.0 - label_smoothing : 0.0) + off;
            li->grad[static_cast<size_t>(r * v + j)] += static_cast<T>(g * (p - tj));
          }
        }
      });
}

// KL(q || p) summed over rows; both inputs are distributions along the last
// axis. q is treated as data (no gradient flows to it); p is floored at 1e-9
// before the log.
template <typename T>
Tensor<T> kl_divergence(const Tensor<T>& q, const Tensor<T>& p) {
  detail::check_same_shape(q, p, "kl_divergence");
  if (q.rank() < 1) reject("kl_divergence: rank must be >= 1");
  const int64_t c = q.dim(q.rank() - 1);
  const int64_t rows = q.numel() / c;
  for (const Tensor<T>* dist : {&q, &p}) {
    const auto vals = dist->values();
    for (int64_t r = 0; r < rows; ++r) {
      double s = 0;
      for (int64_t j = 0; j < c; ++j) {
        const double val = static_cast<double>(vals[static_cast<size_t>(r * c + j)]);
        if (val < -1e-9 || !std::isfinite(val))
          reject("kl_divergence: input is not a distribution (negative or non-finite entry)");
        s += val;
      }
      if (std::abs(s - 1.0) > 1e-6)
        reject("kl_divergence: row does not sum to 1 (got " + std::to_string(s) + ")");
    }
  }
  double total = 0;
  for (int64_t i = 0; i < q.numel(); ++i) {
    const double qi = static_cast<double>(q.at(i));
    if (qi <= 0) continue;
    const double pi = std::max(static_cast<double>(p.at(i)), kKlFloor);
    total += qi * (std::log(qi) - std::log(pi));
  }
  auto qi_impl = q.impl();
  auto pi_impl = p.impl();
  return detail::make_op<T>(
      {1}, {static_cast<T>(total)}, {q, p},
      [qi_impl, pi_impl](TensorImpl<T>& node) {
        if (!pi_impl->requires_grad) return;
        pi_impl->ensure_grad();
        const T g = node.grad[0];
        for (size_t i = 0; i < pi_impl->data.size(); ++i) {
          const double qv = static_cast<double>(qi_impl->data[i]);
          if (qv <= 0) continue;
          const double pv = static_cast<double>(pi_impl->data[i]);
          if (pv < kKlFloor) continue;  // clamped region, zero slope
          pi_impl->grad[i] -= static_cast<T>(static_cast<double>(g) * qv / pv);
        }
      });
}

}  // namespace sovmas

#endif  // SOVMAS_TENSOR_HPP
