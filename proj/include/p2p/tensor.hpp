// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors with tape-based reverse-mode differentiation.
//
// Operations record an adjoint closure on the thread's active Tape whenever
// one is installed (see TapeScope) and at least one operand requires a
// gradient. Without an active tape the same functions evaluate eagerly and
// record nothing, which is the inference path.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "p2p/errors.hpp"

namespace p2p {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

class Tape;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  const Tape* tape = nullptr;

  double* ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad.data();
  }
};

using ImplPtr = std::shared_ptr<TensorImpl>;

inline bool& finite_check_flag() {
  thread_local bool enabled = false;
  return enabled;
}

inline Tape*& active_tape_slot() {
  thread_local Tape* tape = nullptr;
  return tape;
}

}  // namespace detail

/// Enables NaN/Inf scanning of every op output on this thread. Off by default.
inline void set_finite_checks(bool enabled) { detail::finite_check_flag() = enabled; }
inline bool finite_checks_enabled() { return detail::finite_check_flag(); }

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : impl_(std::make_shared<detail::TensorImpl>()) {
    impl_->data.assign(shape_size(shape), fill);
    impl_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<double> data) : impl_(std::make_shared<detail::TensorImpl>()) {
    if (shape_size(shape) != data.size()) {
      throw DimensionError("tensor of shape " + shape_str(shape) + " cannot hold " +
                           std::to_string(data.size()) + " values");
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
  }

  static Tensor scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }
  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(Shape{n}, std::move(values));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor(Shape{rows, cols}, std::move(values));
  }
  /// A leaf that accumulates gradients during backward.
  static Tensor parameter(Shape shape, std::vector<double> values) {
    Tensor t(std::move(shape), std::move(values));
    t.impl_->requires_grad = true;
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->data.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t rows() const { return rank() == 0 ? 1 : dim(0); }
  std::size_t cols() const { return rank() < 2 ? 1 : size() / rows(); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  std::span<const double> grad() const { return impl_->grad; }
  bool has_grad() const { return impl_->grad.size() == impl_->data.size() && !impl_->data.empty(); }
  bool requires_grad() const { return impl_->requires_grad; }
  bool is_leaf() const { return impl_->leaf; }

  void set_requires_grad(bool on) {
    if (!impl_->leaf) throw TapeError("requires_grad can only be toggled on leaf tensors");
    impl_->requires_grad = on;
  }

  double item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
  }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }

  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }

  /// Copy of the values with no gradient history.
  Tensor detach() const { return Tensor(impl_->shape, impl_->data); }

  /// Stable identity of the underlying storage (two handles may share one tensor).
  const void* id() const { return impl_.get(); }

  const detail::ImplPtr& impl() const { return impl_; }

 private:
  detail::ImplPtr impl_;
};

/// Append-only record of differentiable operations. Backward replays the
/// adjoints in strict reverse append order, each exactly once.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::string_view op, detail::ImplPtr output, std::function<void()> adjoint) {
    output->tape = this;
    nodes_.push_back(Node{op, std::move(output), std::move(adjoint)});
  }

  std::size_t size() const { return nodes_.size(); }
  std::string_view op_at(std::size_t i) const { return nodes_.at(i).op; }
  void clear() { nodes_.clear(); }

  /// Populates grad of every reachable leaf with d(loss)/d(leaf). Leaf grads
  /// accumulate across calls until zeroed; intermediate grads are reset here.
  void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
      throw TapeError("backward requires a scalar loss, got " +
                      (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    }
    if (!loss.requires_grad()) throw TapeError("loss does not depend on any parameter");
    const auto& impl = loss.impl();
    if (impl->leaf) {
      impl->ensure_grad()[0] += 1.0;
      return;
    }
    if (impl->tape != this) throw TapeError("loss was not recorded on this tape");
    for (auto& node : nodes_) {
      if (!node.output->grad.empty()) std::fill(node.output->grad.begin(), node.output->grad.end(), 0.0);
    }
    impl->ensure_grad()[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (!it->output->grad.empty()) it->adjoint();
    }
  }

 private:
  struct Node {
    std::string_view op;
    detail::ImplPtr output;
    std::function<void()> adjoint;
  };
  std::vector<Node> nodes_;
};

inline Tape* active_tape() { return detail::active_tape_slot(); }

/// Installs a tape as the thread's recording target for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : previous_(detail::active_tape_slot()) { detail::active_tape_slot() = &tape; }
  ~TapeScope() { detail::active_tape_slot() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording (evaluation paths inside a training step).
class NoGradScope {
 public:
  NoGradScope() : previous_(detail::active_tape_slot()) { detail::active_tape_slot() = nullptr; }
  ~NoGradScope() { detail::active_tape_slot() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

inline void backward(const Tensor& loss) {
  Tape* tape = active_tape();
  if (tape == nullptr) throw TapeError("backward called without an active tape");
  tape->backward(loss);
}

namespace detail {

inline Tape* recording_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = active_tape();
  if (tape == nullptr) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

inline void check_finite(std::string_view op, const std::vector<double>& values) {
  if (!finite_check_flag()) return;
  for (double v : values) {
    if (!std::isfinite(v)) throw NonFiniteError("non-finite value produced by " + std::string(op));
  }
}

inline Tensor finish(std::string_view op, Shape shape, std::vector<double> values, Tape* tape,
                     const std::function<void(const ImplPtr&)>& make_adjoint) {
  check_finite(op, values);
  Tensor out(std::move(shape), std::move(values));
  if (tape != nullptr) {
    const ImplPtr& impl = out.impl();
    impl->requires_grad = true;
    impl->leaf = false;
    make_adjoint(impl);
  }
  return out;
}

inline void require_matrix(const Tensor& t, std::string_view op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a rank-2 tensor, got " + shape_str(t.shape()));
  }
}

/// Fixed-order SIMD reduction: deterministic for a given build.
inline double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
#pragma omp simd reduction(+ : s)
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

enum class Binary { kAdd, kSub, kMul };

inline Tensor binary(Binary kind, const Tensor& a, const Tensor& b) {
  static constexpr std::string_view kNames[] = {"add", "sub", "mul"};
  const std::string_view name = kNames[static_cast<int>(kind)];
  const bool same = a.shape() == b.shape();
  // With two single-element operands the higher-rank shape wins.
  const bool a_scalar = !same && a.size() == 1 && !(b.size() == 1 && b.rank() < a.rank());
  const bool b_scalar = !same && b.size() == 1 && !a_scalar;
  if (!same && !a_scalar && !b_scalar) {
    throw DimensionError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const Shape shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_size(shape);
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = ad[a_scalar ? 0 : i];
    const double y = bd[b_scalar ? 0 : i];
    out[i] = kind == Binary::kAdd ? x + y : kind == Binary::kSub ? x - y : x * y;
  }
  Tape* tape = recording_tape({&a, &b});
  ImplPtr ai = a.impl(), bi = b.impl();
  return finish(name, shape, std::move(out), tape, [&](const ImplPtr& o) {
    tape->record(name, o, [kind, ai, bi, o, a_scalar, b_scalar, n] {
      const double* g = o->grad.data();
      if (ai->requires_grad) {
        double* ga = ai->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          const double d = kind == Binary::kMul ? g[i] * bi->data[b_scalar ? 0 : i] : g[i];
          ga[a_scalar ? 0 : i] += d;
        }
      }
      if (bi->requires_grad) {
        double* gb = bi->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          const double d = kind == Binary::kMul   ? g[i] * ai->data[a_scalar ? 0 : i]
                           : kind == Binary::kSub ? -g[i]
                                                  : g[i];
          gb[b_scalar ? 0 : i] += d;
        }
      }
    });
  });
}

/// Elementwise op whose derivative is expressed through input x and output y.
template <typename Fwd, typename Deriv>
Tensor unary(std::string_view name, const Tensor& a, Fwd fwd, Deriv deriv) {
  const std::size_t n = a.size();
  const auto ad = a.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(ad[i]);
  Tape* tape = recording_tape({&a});
  ImplPtr ai = a.impl();
  return finish(name, a.shape(), std::move(out), tape, [&](const ImplPtr& o) {
    tape->record(name, o, [ai, o, n, deriv] {
      double* ga = ai->ensure_grad();
      const double* g = o->grad.data();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * deriv(ai->data[i], o->data[i]);
    });
  });
}

inline void check_axis(const Tensor& t, std::size_t axis, std::string_view op) {
  if (axis >= t.rank()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for rank " +
                         std::to_string(t.rank()));
  }
}

/// (outer, extent, inner) decomposition of a row-major shape around one axis.
struct AxisView {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary(detail::Binary::kAdd, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary(detail::Binary::kSub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary(detail::Binary::kMul, a, b); }
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

inline Tensor scale(const Tensor& a, double factor) {
  return detail::unary("scale", a, [factor](double x) { return factor * x; },
                       [factor](double, double) { return factor; });
}
inline Tensor negate(const Tensor& a) {
  return detail::unary("negate", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}
inline Tensor operator-(const Tensor& a) { return negate(a); }

inline Tensor tanh(const Tensor& a) {
  return detail::unary("tanh", a, [](double x) { return std::tanh(x); },
                       [](double, double y) { return 1.0 - y * y; });
}
inline Tensor sigmoid(const Tensor& a) {
  return detail::unary("sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                       [](double, double y) { return y * (1.0 - y); });
}
inline Tensor exp(const Tensor& a) {
  return detail::unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}
inline Tensor square(const Tensor& a) {
  return detail::unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}
inline Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return detail::unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}
/// sqrt accepts zero; its adjoint at zero is taken as 0 (subgradient).
inline Tensor sqrt(const Tensor& a) {
  for (double v : a.data()) {
    if (v < 0.0 || std::isnan(v)) throw DomainError("sqrt of negative value " + std::to_string(v));
  }
  return detail::unary("sqrt", a, [](double x) { return std::sqrt(x); },
                       [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) detail::axpy(ad[i * k + p], bd + p * n, out.data() + i * n, n);
  }
  Tape* tape = detail::recording_tape({&a, &b});
  detail::ImplPtr ai = a.impl(), bi = b.impl();
  return detail::finish("matmul", Shape{m, n}, std::move(out), tape, [&](const detail::ImplPtr& o) {
    tape->record("matmul", o, [ai, bi, o, m, k, n] {
      const double* g = o->grad.data();
      if (ai->requires_grad) {
        double* ga = ai->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += detail::dot(g + i * n, bi->data.data() + p * n, n);
      }
      if (bi->requires_grad) {
        double* gb = bi->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) detail::axpy(ai->data[i * k + p], g + i * n, gb + p * n, n);
      }
    });
  });
}

/// Affine map applied to each row: y = x·Wᵀ + b with x[rows×in], W[out×in], b[out].
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  detail::require_matrix(x, "linear");
  detail::require_matrix(weight, "linear");
  const std::size_t rows = x.dim(0), in = x.dim(1), out_w = weight.dim(0);
  if (weight.dim(1) != in || bias.size() != out_w) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()) + " and bias " + shape_str(bias.shape()));
  }
  std::vector<double> out(rows * out_w);
  const double* xd = x.data().data();
  const double* wd = weight.data().data();
  const double* bd = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < out_w; ++o) out[r * out_w + o] = bd[o] + detail::dot(xd + r * in, wd + o * in, in);
  Tape* tape = detail::recording_tape({&x, &weight, &bias});
  detail::ImplPtr xi = x.impl(), wi = weight.impl(), bi = bias.impl();
  return detail::finish("linear", Shape{rows, out_w}, std::move(out), tape, [&](const detail::ImplPtr& o) {
    tape->record("linear", o, [xi, wi, bi, o, rows, in, out_w] {
      const double* g = o->grad.data();
      if (xi->requires_grad) {
        double* gx = xi->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t k = 0; k < out_w; ++k) detail::axpy(g[r * out_w + k], wi->data.data() + k * in, gx + r * in, in);
      }
      if (wi->requires_grad) {
        double* gw = wi->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t k = 0; k < out_w; ++k) detail::axpy(g[r * out_w + k], xi->data.data() + r * in, gw + k * in, in);
      }
      if (bi->requires_grad) {
        double* gb = bi->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t k = 0; k < out_w; ++k) gb[k] += g[r * out_w + k];
      }
    });
  });
}

inline Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  Tape* tape = detail::recording_tape({&a});
  detail::ImplPtr ai = a.impl();
  const std::size_t n = a.size();
  return detail::finish("sum", Shape{}, {total}, tape, [&](const detail::ImplPtr& o) {
    tape->record("sum", o, [ai, o, n] {
      double* ga = ai->ensure_grad();
      const double g = o->grad[0];
      for (std::size_t i = 0; i < n; ++i) ga[i] += g;
    });
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

/// Sum over one axis; the axis is removed from the result shape.
inline Tensor sum(const Tensor& a, std::size_t axis) {
  detail::check_axis(a, axis, "sum");
  const detail::AxisView v = detail::axis_view(a.shape(), axis);
  Shape shape = a.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(v.outer * v.inner, 0.0);
  const auto ad = a.data();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t e = 0; e < v.extent; ++e)
      for (std::size_t i = 0; i < v.inner; ++i) out[o * v.inner + i] += ad[(o * v.extent + e) * v.inner + i];
  Tape* tape = detail::recording_tape({&a});
  detail::ImplPtr ai = a.impl();
  return detail::finish("sum_axis", std::move(shape), std::move(out), tape, [&](const detail::ImplPtr& res) {
    tape->record("sum_axis", res, [ai, res, v] {
      double* ga = ai->ensure_grad();
      const double* g = res->grad.data();
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t e = 0; e < v.extent; ++e)
          for (std::size_t i = 0; i < v.inner; ++i) ga[(o * v.extent + e) * v.inner + i] += g[o * v.inner + i];
    });
  });
}

inline Tensor mean(const Tensor& a, std::size_t axis) {
  detail::check_axis(a, axis, "mean");
  if (a.dim(axis) == 0) throw DimensionError("mean over empty axis");
  return scale(sum(a, axis), 1.0 / static_cast<double>(a.dim(axis)));
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Tensor& first = parts.front();
  detail::check_axis(first, axis, "concat");
  Shape shape = first.shape();
  shape[axis] = 0;
  std::vector<detail::AxisView> views;
  for (const Tensor& p : parts) {
    if (p.rank() != first.rank()) throw DimensionError("concat: rank mismatch");
    for (std::size_t d = 0; d < p.rank(); ++d) {
      if (d != axis && p.dim(d) != first.dim(d)) {
        throw DimensionError("concat: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(first.shape()));
      }
    }
    shape[axis] += p.dim(axis);
    views.push_back(detail::axis_view(p.shape(), axis));
  }
  const std::size_t outer = views.front().outer, inner = views.front().inner;
  const std::size_t row = shape[axis] * inner;
  std::vector<double> out(shape_size(shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    offsets.push_back(offset);
    const std::size_t chunk = views[k].extent * inner;
    const auto pd = parts[k].data();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(pd.data() + o * chunk, chunk, out.data() + o * row + offset);
    offset += chunk;
  }
  Tape* tape = nullptr;
  if (Tape* t = active_tape()) {
    for (const Tensor& p : parts) {
      if (p.requires_grad()) tape = t;
    }
  }
  std::vector<detail::ImplPtr> inputs;
  for (const Tensor& p : parts) inputs.push_back(p.impl());
  return detail::finish("concat", std::move(shape), std::move(out), tape, [&](const detail::ImplPtr& res) {
    tape->record("concat", res, [inputs, offsets, views, res, outer, inner, row] {
      const double* g = res->grad.data();
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        if (!inputs[k]->requires_grad) continue;
        double* gp = inputs[k]->ensure_grad();
        const std::size_t chunk = views[k].extent * inner;
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < chunk; ++i) gp[o * chunk + i] += g[o * row + offsets[k] + i];
      }
    });
  });
}

/// Elements [begin, end) along one axis.
inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  detail::check_axis(a, axis, "slice");
  if (begin > end || end > a.dim(axis)) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of bounds for extent " + std::to_string(a.dim(axis)));
  }
  const detail::AxisView v = detail::axis_view(a.shape(), axis);
  Shape shape = a.shape();
  shape[axis] = end - begin;
  const std::size_t chunk = (end - begin) * v.inner, src_row = v.extent * v.inner, skip = begin * v.inner;
  std::vector<double> out(v.outer * chunk);
  const auto ad = a.data();
  for (std::size_t o = 0; o < v.outer; ++o) std::copy_n(ad.data() + o * src_row + skip, chunk, out.data() + o * chunk);
  Tape* tape = detail::recording_tape({&a});
  detail::ImplPtr ai = a.impl();
  return detail::finish("slice", std::move(shape), std::move(out), tape, [&](const detail::ImplPtr& res) {
    tape->record("slice", res, [ai, res, v, chunk, src_row, skip] {
      double* ga = ai->ensure_grad();
      const double* g = res->grad.data();
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < chunk; ++i) ga[o * src_row + skip + i] += g[o * chunk + i];
    });
  });
}

/// Row-wise selection: row r of the result is a[r] where keep[r] is true, else b[r].
/// The unselected operand receives no gradient for that row.
inline Tensor select_rows(std::span<const char> keep, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("select_rows: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t rows = a.rows(), width = a.cols();
  if (keep.size() != rows) throw DimensionError("select_rows: mask length does not match row count");
  std::vector<double> out(a.size());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = (keep[r] ? ad.data() : bd.data()) + r * width;
    std::copy_n(src, width, out.data() + r * width);
  }
  Tape* tape = detail::recording_tape({&a, &b});
  detail::ImplPtr ai = a.impl(), bi = b.impl();
  std::vector<char> mask(keep.begin(), keep.end());
  return detail::finish("select_rows", a.shape(), std::move(out), tape, [&](const detail::ImplPtr& res) {
    tape->record("select_rows", res, [ai, bi, res, mask, width] {
      const double* g = res->grad.data();
      for (std::size_t r = 0; r < mask.size(); ++r) {
        const detail::ImplPtr& target = mask[r] ? ai : bi;
        if (!target->requires_grad) continue;
        double* gt = target->ensure_grad();
        for (std::size_t i = 0; i < width; ++i) gt[r * width + i] += g[r * width + i];
      }
    });
  });
}

}  // namespace p2p
