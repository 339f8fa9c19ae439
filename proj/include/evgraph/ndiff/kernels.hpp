#pragma once

// Forward and analytic backward kernels. Every kernel is a pure function of
// its inputs; backward functions take whatever the forward needs plus the
// upstream gradient and return gradients for each differentiable input.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "evgraph/ndiff/matrix.hpp"

namespace evg::nd {

using Index = std::uint32_t;

namespace detail {
inline std::string dims(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}
}  // namespace detail

// ---------------------------------------------------------------- matmul

template <std::floating_point T>
Matrix<T> matmul(const Matrix<T>& x, const Matrix<T>& w) {
  if (x.cols() != w.rows()) {
    throw ShapeError("matmul: x is " + x.shape_str() + " but W is " + w.shape_str() +
                     " (x.cols must equal W.rows)");
  }
  const std::size_t n = x.rows(), k_dim = x.cols(), m = w.cols();
  Matrix<T> out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    T* o = out.row(i).data();
    const T* xi = x.row(i).data();
    for (std::size_t k = 0; k < k_dim; ++k) {
      const T a = xi[k];
      if (a == T{0}) continue;
      const T* wk = w.row(k).data();
      for (std::size_t j = 0; j < m; ++j) o[j] += a * wk[j];
    }
  }
  return out;
}

template <std::floating_point T>
struct MatmulGrads {
  Matrix<T> x;
  Matrix<T> w;
};

template <std::floating_point T>
MatmulGrads<T> matmul_backward(const Matrix<T>& x, const Matrix<T>& w,
                               const Matrix<T>& grad_out) {
  if (grad_out.rows() != x.rows() || grad_out.cols() != w.cols()) {
    throw ShapeError("matmul_backward: grad_out is " + grad_out.shape_str() + ", expected " +
                     detail::dims(x.rows(), w.cols()));
  }
  const std::size_t n = x.rows(), k_dim = x.cols(), m = w.cols();
  MatmulGrads<T> g{Matrix<T>(n, k_dim), Matrix<T>(k_dim, m)};
  for (std::size_t i = 0; i < n; ++i) {
    const T* go = grad_out.row(i).data();
    const T* xi = x.row(i).data();
    T* gx = g.x.row(i).data();
    for (std::size_t k = 0; k < k_dim; ++k) {
      const T* wk = w.row(k).data();
      T* gwk = g.w.row(k).data();
      T acc{0};
      const T a = xi[k];
      for (std::size_t j = 0; j < m; ++j) {
        acc += go[j] * wk[j];
        gwk[j] += a * go[j];
      }
      gx[k] = acc;
    }
  }
  return g;
}

// ---------------------------------------------------------------- affine

// out = x·W + b, with b (1×Cout) broadcast over rows.
template <std::floating_point T>
Matrix<T> affine(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b) {
  if (b.rows() != 1 || b.cols() != w.cols()) {
    throw ShapeError("affine: bias is " + b.shape_str() + ", expected " +
                     detail::dims(1, w.cols()));
  }
  Matrix<T> out = matmul(x, w);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[j];
  }
  return out;
}

template <std::floating_point T>
struct AffineGrads {
  Matrix<T> x;
  Matrix<T> w;
  Matrix<T> b;
};

template <std::floating_point T>
AffineGrads<T> affine_backward(const Matrix<T>& x, const Matrix<T>& w,
                               const Matrix<T>& grad_out) {
  auto mg = matmul_backward(x, w, grad_out);
  Matrix<T> gb(1, w.cols());
  for (std::size_t i = 0; i < grad_out.rows(); ++i) {
    const auto r = grad_out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) gb[j] += r[j];
  }
  return {std::move(mg.x), std::move(mg.w), std::move(gb)};
}

// ---------------------------------------------------------------- activations

enum class Activation { relu, elu };

Activation parse_activation(std::string_view name);
std::string_view to_string(Activation kind);

template <std::floating_point T>
Matrix<T> activation(const Matrix<T>& x, Activation kind) {
  Matrix<T> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    switch (kind) {
      case Activation::relu: out[i] = v > T{0} ? v : T{0}; break;
      case Activation::elu: out[i] = v > T{0} ? v : std::expm1(v); break;
    }
  }
  return out;
}

// Derivative at exactly 0 is 0 for relu and 1 for elu (left limit of e^x).
template <std::floating_point T>
Matrix<T> activation_backward(const Matrix<T>& x, const Matrix<T>& grad_out, Activation kind) {
  x.require_same_shape(grad_out, "activation_backward");
  Matrix<T> g(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    T d{0};
    switch (kind) {
      case Activation::relu: d = v > T{0} ? T{1} : T{0}; break;
      case Activation::elu: d = v > T{0} ? T{1} : std::exp(v); break;
    }
    g[i] = grad_out[i] * d;
  }
  return g;
}

template <std::floating_point T>
Matrix<T> sigmoid(const Matrix<T>& x) {
  Matrix<T> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    out[i] = v >= T{0} ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
  }
  return out;
}

// Takes the forward output, not the input.
template <std::floating_point T>
Matrix<T> sigmoid_backward(const Matrix<T>& out, const Matrix<T>& grad_out) {
  out.require_same_shape(grad_out, "sigmoid_backward");
  Matrix<T> g(out.rows(), out.cols());
  for (std::size_t i = 0; i < out.size(); ++i) g[i] = grad_out[i] * out[i] * (T{1} - out[i]);
  return g;
}

// ---------------------------------------------------------------- elementwise

template <std::floating_point T>
Matrix<T> add(const Matrix<T>& a, const Matrix<T>& b) {
  a.require_same_shape(b, "add");
  Matrix<T> out = a;
  out += b;
  return out;
}

template <std::floating_point T>
Matrix<T> sub(const Matrix<T>& a, const Matrix<T>& b) {
  a.require_same_shape(b, "sub");
  Matrix<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

// out[i, :] = coef[i] · x[i, :]; coef is treated as a constant.
template <std::floating_point T>
Matrix<T> scale_rows(const Matrix<T>& x, std::span<const T> coef) {
  if (coef.size() != x.rows()) {
    throw ShapeError("scale_rows: " + std::to_string(coef.size()) + " coefficients for " +
                     std::to_string(x.rows()) + " rows");
  }
  Matrix<T> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto src = x.row(i);
    auto dst = out.row(i);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] = coef[i] * src[j];
  }
  return out;
}

// ---------------------------------------------------------------- gather / scatter

template <std::floating_point T>
void check_indices(std::span<const Index> idx, std::size_t bound, const char* what) {
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= bound) {
      throw IndexError(std::string(what) + ": index " + std::to_string(idx[k]) + " at position " +
                       std::to_string(k) + " out of range [0, " + std::to_string(bound) + ")");
    }
  }
}

template <std::floating_point T>
Matrix<T> gather_rows(const Matrix<T>& x, std::span<const Index> idx) {
  check_indices<T>(idx, x.rows(), "gather_rows");
  Matrix<T> out(idx.size(), x.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto src = x.row(idx[k]);
    std::copy(src.begin(), src.end(), out.row(k).begin());
  }
  return out;
}

// Duplicate indices accumulate.
template <std::floating_point T>
Matrix<T> gather_rows_backward(const Matrix<T>& grad_out, std::span<const Index> idx,
                               std::size_t n_rows) {
  check_indices<T>(idx, n_rows, "gather_rows_backward");
  if (grad_out.rows() != idx.size()) {
    throw ShapeError("gather_rows_backward: grad_out has " + std::to_string(grad_out.rows()) +
                     " rows for " + std::to_string(idx.size()) + " indices");
  }
  Matrix<T> g(n_rows, grad_out.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto src = grad_out.row(k);
    auto dst = g.row(idx[k]);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
  }
  return g;
}

enum class Reduce { sum, mean, max };

Reduce parse_reduce(std::string_view name);

template <std::floating_point T>
struct ScatterResult {
  Matrix<T> out;
  // For max: message row that won each (slot, column), or -1 for empty slots.
  std::vector<std::int64_t> argmax;
  std::vector<std::size_t> counts;
};

template <std::floating_point T>
ScatterResult<T> scatter_reduce(const Matrix<T>& msgs, std::span<const Index> dst,
                                std::size_t n_out, Reduce mode) {
  if (dst.size() != msgs.rows()) {
    throw ShapeError("scatter_reduce: " + std::to_string(dst.size()) + " destinations for " +
                     std::to_string(msgs.rows()) + " messages");
  }
  check_indices<T>(dst, n_out, "scatter_reduce");
  const std::size_t c = msgs.cols();
  ScatterResult<T> r{Matrix<T>(n_out, c), {}, std::vector<std::size_t>(n_out, 0)};
  for (Index d : dst) ++r.counts[d];

  if (mode == Reduce::max) {
    r.argmax.assign(n_out * c, -1);
    for (std::size_t e = 0; e < msgs.rows(); ++e) {
      const auto m = msgs.row(e);
      auto o = r.out.row(dst[e]);
      std::int64_t* am = r.argmax.data() + static_cast<std::size_t>(dst[e]) * c;
      for (std::size_t j = 0; j < c; ++j) {
        // strict > keeps the first occurrence on ties
        if (am[j] < 0 || m[j] > o[j]) {
          o[j] = m[j];
          am[j] = static_cast<std::int64_t>(e);
        }
      }
    }
    return r;
  }

  for (std::size_t e = 0; e < msgs.rows(); ++e) {
    const auto m = msgs.row(e);
    auto o = r.out.row(dst[e]);
    for (std::size_t j = 0; j < c; ++j) o[j] += m[j];
  }
  if (mode == Reduce::mean) {
    for (std::size_t s = 0; s < n_out; ++s) {
      if (r.counts[s] == 0) continue;
      const T inv = T{1} / static_cast<T>(r.counts[s]);
      for (T& v : r.out.row(s)) v *= inv;
    }
  }
  return r;
}

template <std::floating_point T>
Matrix<T> scatter_reduce_backward(const Matrix<T>& grad_out, std::span<const Index> dst,
                                  const ScatterResult<T>& fwd, Reduce mode) {
  const std::size_t c = grad_out.cols();
  Matrix<T> g(dst.size(), c);
  if (mode == Reduce::max) {
    for (std::size_t s = 0; s < grad_out.rows(); ++s) {
      const auto go = grad_out.row(s);
      const std::int64_t* am = fwd.argmax.data() + s * c;
      for (std::size_t j = 0; j < c; ++j) {
        if (am[j] >= 0) g(static_cast<std::size_t>(am[j]), j) += go[j];
      }
    }
    return g;
  }
  for (std::size_t e = 0; e < dst.size(); ++e) {
    const auto go = grad_out.row(dst[e]);
    auto ge = g.row(e);
    const T scale =
        mode == Reduce::mean ? T{1} / static_cast<T>(fwd.counts[dst[e]]) : T{1};
    for (std::size_t j = 0; j < c; ++j) ge[j] = go[j] * scale;
  }
  return g;
}

// Fused scatter_reduce(gather_rows(x, src), dst, max): out[i] is the
// column-wise max of x[src[e]] over edges with dst[e] = i, without
// materializing the per-edge rows. argmax records the winning row of x
// (first edge wins ties), so the result and its gradient match the unfused
// pair exactly.
template <std::floating_point T>
ScatterResult<T> gather_scatter_max(const Matrix<T>& x, std::span<const Index> src,
                                    std::span<const Index> dst, std::size_t n_out) {
  if (src.size() != dst.size()) {
    throw ShapeError("gather_scatter_max: " + std::to_string(src.size()) + " sources for " +
                     std::to_string(dst.size()) + " destinations");
  }
  check_indices<T>(src, x.rows(), "gather_scatter_max");
  check_indices<T>(dst, n_out, "gather_scatter_max");
  const std::size_t c = x.cols();
  ScatterResult<T> r{Matrix<T>(n_out, c), std::vector<std::int64_t>(n_out * c, -1),
                     std::vector<std::size_t>(n_out, 0)};
  for (std::size_t e = 0; e < src.size(); ++e) {
    ++r.counts[dst[e]];
    const auto m = x.row(src[e]);
    auto o = r.out.row(dst[e]);
    std::int64_t* am = r.argmax.data() + static_cast<std::size_t>(dst[e]) * c;
    for (std::size_t j = 0; j < c; ++j) {
      if (am[j] < 0 || m[j] > o[j]) {
        o[j] = m[j];
        am[j] = static_cast<std::int64_t>(src[e]);
      }
    }
  }
  return r;
}

template <std::floating_point T>
Matrix<T> gather_scatter_max_backward(const Matrix<T>& grad_out, const ScatterResult<T>& fwd,
                                      std::size_t n_rows) {
  const std::size_t c = grad_out.cols();
  Matrix<T> g(n_rows, c);
  for (std::size_t s = 0; s < grad_out.rows(); ++s) {
    const auto go = grad_out.row(s);
    const std::int64_t* am = fwd.argmax.data() + s * c;
    for (std::size_t j = 0; j < c; ++j) {
      if (am[j] >= 0) g(static_cast<std::size_t>(am[j]), j) += go[j];
    }
  }
  return g;
}

// ---------------------------------------------------------------- column / row slicing

template <std::floating_point T>
Matrix<T> concat_cols(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("concat_cols: row counts differ (" + std::to_string(a.rows()) + " vs " +
                     std::to_string(b.rows()) + ")");
  }
  Matrix<T> out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto o = out.row(i);
    std::copy(a.row(i).begin(), a.row(i).end(), o.begin());
    std::copy(b.row(i).begin(), b.row(i).end(), o.begin() + static_cast<std::ptrdiff_t>(a.cols()));
  }
  return out;
}

template <std::floating_point T>
Matrix<T> slice_cols(const Matrix<T>& x, std::size_t begin, std::size_t count) {
  if (begin + count > x.cols()) {
    throw ShapeError("slice_cols: columns [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") exceed width " + std::to_string(x.cols()));
  }
  Matrix<T> out(x.rows(), count);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto r = x.row(i).subspan(begin, count);
    std::copy(r.begin(), r.end(), out.row(i).begin());
  }
  return out;
}

// Places grad (rows×count) into a zero matrix of width `total` at column `begin`.
template <std::floating_point T>
Matrix<T> slice_cols_backward(const Matrix<T>& grad, std::size_t begin, std::size_t total) {
  Matrix<T> g(grad.rows(), total);
  for (std::size_t i = 0; i < grad.rows(); ++i) {
    std::copy(grad.row(i).begin(), grad.row(i).end(),
              g.row(i).begin() + static_cast<std::ptrdiff_t>(begin));
  }
  return g;
}

template <std::floating_point T>
std::pair<Matrix<T>, Matrix<T>> concat_cols_backward(const Matrix<T>& grad, std::size_t a_cols) {
  return {slice_cols(grad, 0, a_cols), slice_cols(grad, a_cols, grad.cols() - a_cols)};
}

template <std::floating_point T>
Matrix<T> slice_rows(const Matrix<T>& x, std::size_t begin, std::size_t count) {
  if (begin + count > x.rows()) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") exceed height " + std::to_string(x.rows()));
  }
  const auto first = x.values().begin() + static_cast<std::ptrdiff_t>(begin * x.cols());
  return Matrix<T>(count, x.cols(),
                   std::vector<T>(first, first + static_cast<std::ptrdiff_t>(count * x.cols())));
}

template <std::floating_point T>
Matrix<T> slice_rows_backward(const Matrix<T>& grad, std::size_t begin, std::size_t total) {
  Matrix<T> g(total, grad.cols());
  std::copy(grad.values().begin(), grad.values().end(),
            g.values().begin() + static_cast<std::ptrdiff_t>(begin * grad.cols()));
  return g;
}

// ---------------------------------------------------------------- losses

template <std::floating_point T>
struct LossResult {
  T loss{};
  Matrix<T> grad;  // d loss / d input
};

// Mean over rows of -log softmax(logits)[label].
template <std::floating_point T>
LossResult<T> softmax_cross_entropy(const Matrix<T>& logits, std::span<const Index> labels) {
  if (labels.size() != logits.rows()) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(logits.rows()) + " rows");
  }
  check_indices<T>(labels, logits.cols(), "softmax_cross_entropy label");
  const std::size_t n = logits.rows(), k = logits.cols();
  LossResult<T> r{T{0}, Matrix<T>(n, k)};
  if (n == 0) return r;
  const T inv_n = T{1} / static_cast<T>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto z = logits.row(i);
    const T zmax = *std::max_element(z.begin(), z.end());
    T denom{0};
    for (T v : z) denom += std::exp(v - zmax);
    const T log_denom = std::log(denom);
    r.loss -= (z[labels[i]] - zmax - log_denom);
    auto g = r.grad.row(i);
    for (std::size_t j = 0; j < k; ++j) g[j] = std::exp(z[j] - zmax - log_denom) * inv_n;
    g[labels[i]] -= inv_n;
  }
  r.loss *= inv_n;
  return r;
}

// Mean over all elements of 0.5d² (|d| < 1) or |d| - 0.5.
template <std::floating_point T>
LossResult<T> smooth_l1(const Matrix<T>& pred, const Matrix<T>& target) {
  pred.require_same_shape(target, "smooth_l1");
  LossResult<T> r{T{0}, Matrix<T>(pred.rows(), pred.cols())};
  if (pred.empty()) return r;
  const T inv = T{1} / static_cast<T>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T d = pred[i] - target[i];
    if (std::abs(d) < T{1}) {
      r.loss += T{0.5} * d * d;
      r.grad[i] = d * inv;
    } else {
      r.loss += std::abs(d) - T{0.5};
      r.grad[i] = (d > T{0} ? T{1} : T{-1}) * inv;
    }
  }
  r.loss *= inv;
  return r;
}

}  // namespace evg::nd
