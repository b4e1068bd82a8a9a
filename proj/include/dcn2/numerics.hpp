#pragma once

// Dense kernels shared by every layer. Everything here is templated on the
// scalar type: training runs in float, gradient checks in double.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dcn2/errors.hpp"

namespace dcn2 {

template <typename T>
class DenseVector {
 public:
  DenseVector() = default;
  explicit DenseVector(std::size_t len, T fill = T(0)) : data_(len, fill) {}
  DenseVector(std::initializer_list<T> values) : data_(values) {}
  explicit DenseVector(std::vector<T> values) : data_(std::move(values)) {}

  std::size_t size() const { return data_.size(); }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  const std::vector<T>& values() const { return data_; }
  std::vector<T>& values() { return data_; }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  bool operator==(const DenseVector&) const = default;

 private:
  std::vector<T> data_;
};

// Row-major matrix.
template <typename T>
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("DenseMatrix: data length " +
                       std::to_string(data_.size()) + " != rows*cols " +
                       std::to_string(rows_ * cols_));
    }
  }

  static DenseMatrix from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    DenseMatrix m;
    m.rows_ = rows.size();
    m.cols_ = rows.size() == 0 ? 0 : rows.begin()->size();
    for (const auto& r : rows) {
      if (r.size() != m.cols_) throw ShapeError("DenseMatrix::from_rows: ragged rows");
      m.data_.insert(m.data_.end(), r.begin(), r.end());
    }
    return m;
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  const std::vector<T>& values() const { return data_; }

  bool operator==(const DenseMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

// A named view over one contiguous parameter buffer.
template <typename T>
struct ParamBlock {
  std::string name;
  std::span<T> values;
};

namespace detail {

inline void require_dim(std::string_view op, std::string_view lhs_name,
                        std::size_t lhs, std::string_view rhs_name,
                        std::size_t rhs) {
  if (lhs != rhs) {
    throw ShapeError(std::string(op) + ": " + std::string(lhs_name) + "=" +
                     std::to_string(lhs) + " != " + std::string(rhs_name) +
                     "=" + std::to_string(rhs));
  }
}

}  // namespace detail

// out = W x + b
template <typename T>
void affine_into(const DenseMatrix<T>& W, std::span<const T> x,
                 std::span<const T> b, std::span<T> out) {
  detail::require_dim("affine_forward", "W.cols", W.cols(), "x.len", x.size());
  detail::require_dim("affine_forward", "b.len", b.size(), "W.rows", W.rows());
  detail::require_dim("affine_forward", "out.len", out.size(), "W.rows", W.rows());
  const std::size_t n = W.cols();
  const T* w = W.span().data();
  for (std::size_t r = 0; r < W.rows(); ++r) {
    const T* wr = w + r * n;
    T acc = T(0);
    for (std::size_t c = 0; c < n; ++c) acc += wr[c] * x[c];
    out[r] = acc + b[r];
  }
}

template <typename T>
DenseVector<T> affine_forward(const DenseMatrix<T>& W, const DenseVector<T>& x,
                              const DenseVector<T>& b) {
  DenseVector<T> out(W.rows());
  affine_into<T>(W, x.span(), b.span(), out.span());
  return out;
}

// grad_W += upstream (x) x, grad_b += upstream, grad_x = W^T upstream.
// grad_x may be empty when the input gradient is not needed.
template <typename T>
void affine_backward_into(const DenseMatrix<T>& W, std::span<const T> x,
                          std::span<const T> upstream, std::span<T> grad_W,
                          std::span<T> grad_b, std::span<T> grad_x) {
  detail::require_dim("affine_backward", "W.cols", W.cols(), "x.len", x.size());
  detail::require_dim("affine_backward", "upstream.len", upstream.size(),
                      "W.rows", W.rows());
  detail::require_dim("affine_backward", "grad_W.len", grad_W.size(), "W.size",
                      W.size());
  detail::require_dim("affine_backward", "grad_b.len", grad_b.size(), "W.rows",
                      W.rows());
  const std::size_t n = W.cols();
  const T* w = W.span().data();
  for (std::size_t r = 0; r < W.rows(); ++r) {
    const T u = upstream[r];
    grad_b[r] += u;
    if (u == T(0)) continue;
    T* gw = grad_W.data() + r * n;
    for (std::size_t c = 0; c < n; ++c) gw[c] += u * x[c];
  }
  if (grad_x.empty()) return;
  detail::require_dim("affine_backward", "grad_x.len", grad_x.size(), "W.cols", n);
  for (std::size_t c = 0; c < n; ++c) grad_x[c] = T(0);
  for (std::size_t r = 0; r < W.rows(); ++r) {
    const T u = upstream[r];
    if (u == T(0)) continue;
    const T* wr = w + r * n;
    for (std::size_t c = 0; c < n; ++c) grad_x[c] += wr[c] * u;
  }
}

template <typename T>
struct AffineGradients {
  DenseMatrix<T> grad_W;
  DenseVector<T> grad_x;
  DenseVector<T> grad_b;
};

template <typename T>
AffineGradients<T> affine_backward(const DenseMatrix<T>& W, const DenseVector<T>& x,
                                   const DenseVector<T>& upstream) {
  AffineGradients<T> g{DenseMatrix<T>(W.rows(), W.cols()), DenseVector<T>(W.cols()),
                       DenseVector<T>(W.rows())};
  affine_backward_into<T>(W, x.span(), upstream.span(), g.grad_W.span(),
                          g.grad_b.span(), g.grad_x.span());
  return g;
}

template <typename T>
DenseVector<T> relu(const DenseVector<T>& x) {
  DenseVector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

// Subgradient at 0 is 0.
template <typename T>
DenseVector<T> relu_backward(const DenseVector<T>& x, const DenseVector<T>& upstream) {
  detail::require_dim("relu_backward", "x.len", x.size(), "upstream.len",
                      upstream.size());
  DenseVector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? upstream[i] : T(0);
  return out;
}

enum class Activation { kIdentity, kRelu, kTanh };

template <typename T>
T activate(Activation a, T z) {
  switch (a) {
    case Activation::kRelu:
      return z > T(0) ? z : T(0);
    case Activation::kTanh:
      return std::tanh(z);
    case Activation::kIdentity:
      break;
  }
  return z;
}

// Derivative given the pre-activation z and the activated value y.
template <typename T>
T activation_derivative(Activation a, T z, T y) {
  switch (a) {
    case Activation::kRelu:
      return z > T(0) ? T(1) : T(0);
    case Activation::kTanh:
      return T(1) - y * y;
    case Activation::kIdentity:
      break;
  }
  return T(1);
}

template <typename T>
T sigmoid(T z) {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

template <typename T>
struct BceResult {
  T loss;
  T grad_logit;
};

// Binary cross-entropy on a logit, in the max(z,0) - z*y + log1p(exp(-|z|)) form.
template <typename T>
BceResult<T> sigmoid_bce(T logit, int label) {
  const T y = label ? T(1) : T(0);
  const T loss = (logit > T(0) ? logit : T(0)) - logit * y +
                 std::log1p(std::exp(-std::abs(logit)));
  return {loss, sigmoid(logit) - y};
}

struct AdamHyperparameters {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<T> first_moment;
  std::vector<T> second_moment;
  std::int64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double learning_rate = 1e-3;

  AdamState() = default;
  AdamState(std::size_t size, const AdamHyperparameters& h)
      : first_moment(size, T(0)),
        second_moment(size, T(0)),
        beta1(h.beta1),
        beta2(h.beta2),
        epsilon(h.epsilon),
        learning_rate(h.learning_rate) {}
};

namespace detail {

template <typename T>
void check_finite(std::span<const T> grads, std::string_view group) {
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(static_cast<double>(grads[i]))) {
      throw NonFiniteError("adam_step: non-finite gradient in group '" +
                           std::string(group) + "' at index " + std::to_string(i));
    }
  }
}

struct AdamCoefficients {
  double step_size;  // lr / (1 - beta1^t)
  double inv_bias2;  // 1 / (1 - beta2^t)
};

template <typename T>
AdamCoefficients advance(AdamState<T>& state) {
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  return {state.learning_rate / bc1, 1.0 / bc2};
}

template <typename T>
void adam_update(T* p, const T* g, T* m, T* v, std::size_t n, const AdamState<T>& s,
                 const AdamCoefficients& c) {
  const T b1 = T(s.beta1), b2 = T(s.beta2);
  const T one_b1 = T(1.0 - s.beta1), one_b2 = T(1.0 - s.beta2);
  const T step = T(c.step_size), inv_bc2 = T(c.inv_bias2), eps = T(s.epsilon);
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = b1 * m[i] + one_b1 * g[i];
    v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
    p[i] -= step * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
  }
}

}  // namespace detail

// Bias-corrected Adam. The step counter advances before bias correction.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state,
               std::string_view group = "params") {
  detail::require_dim("adam_step", "params.len", params.size(), "grads.len",
                      grads.size());
  detail::require_dim("adam_step", "first_moment.len", state.first_moment.size(),
                      "params.len", params.size());
  detail::require_dim("adam_step", "second_moment.len", state.second_moment.size(),
                      "params.len", params.size());
  detail::check_finite(grads, group);
  const auto c = detail::advance(state);
  detail::adam_update(params.data(), grads.data(), state.first_moment.data(),
                      state.second_moment.data(), params.size(), state, c);
}

// Adam restricted to a set of rows of a row-major parameter buffer. Rows not
// listed keep their parameters and moments; the step counter is shared.
// `grads` holds one `width`-sized block per entry of `rows`, in order.
template <typename T>
void adam_step_rows(std::span<T> params, std::span<const T> grads,
                    std::span<const std::uint32_t> rows, std::size_t width,
                    AdamState<T>& state, std::string_view group = "rows") {
  detail::require_dim("adam_step_rows", "grads.len", grads.size(), "rows*width",
                      rows.size() * width);
  detail::require_dim("adam_step_rows", "first_moment.len", state.first_moment.size(),
                      "params.len", params.size());
  detail::check_finite(grads, group);
  const auto c = detail::advance(state);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t off = static_cast<std::size_t>(rows[k]) * width;
    if (off + width > params.size()) throw ShapeError("adam_step_rows: row out of range");
    detail::adam_update(params.data() + off, grads.data() + k * width,
                        state.first_moment.data() + off,
                        state.second_moment.data() + off, width, state, c);
  }
}

// One parameter buffer and its analytic gradient, both in fp64.
struct GradientGroup {
  std::string name;
  std::span<double> params;
  std::span<const double> analytic;
};

struct GroupCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  bool passed = true;
};

struct GradientCheckReport {
  std::vector<GroupCheck> groups;
  double tolerance = 0.0;

  bool passed() const {
    for (const auto& g : groups)
      if (!g.passed) return false;
    return true;
  }
  double max_rel_error() const {
    double m = 0.0;
    for (const auto& g : groups) m = std::max(m, g.max_rel_error);
    return m;
  }
};

// Compares analytic gradients against central differences of `forward`,
// which must re-read the parameters through the spans on every call.
// Relative error is |a - n| / max(|a|, |n|, 1e-6).
inline GradientCheckReport finite_difference_check(
    const std::function<double()>& forward, std::span<const GradientGroup> groups,
    double tolerance, double step = 1e-5) {
  GradientCheckReport report;
  report.tolerance = tolerance;
  for (const auto& group : groups) {
    detail::require_dim("finite_difference_check", "params.len", group.params.size(),
                        "analytic.len", group.analytic.size());
    GroupCheck check;
    check.name = group.name;
    for (std::size_t i = 0; i < group.params.size(); ++i) {
      const double saved = group.params[i];
      group.params[i] = saved + step;
      const double up = forward();
      group.params[i] = saved - step;
      const double down = forward();
      group.params[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = group.analytic[i];
      const double denom =
          std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      const double rel = std::abs(analytic - numeric) / denom;
      if (rel > check.max_rel_error) {
        check.max_rel_error = rel;
        check.worst_index = i;
      }
    }
    check.passed = check.max_rel_error < tolerance;
    report.groups.push_back(std::move(check));
  }
  return report;
}

}  // namespace dcn2
