#include "tbps/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <type_traits>

namespace tbps::ops {

namespace {

template <typename Real>
using NodePtr = std::shared_ptr<TensorNode<Real>>;

template <typename Real>
void check_finite(const std::vector<Real>& values, const char* op) {
  for (Real v : values)
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
}

// Builds the output node; attaches parents and the backward closure only when
// recording is on and some input needs a gradient.
template <typename Real, typename Backward>
T<Real> make_result(Shape shape, std::vector<Real> data, const char* op,
                    std::vector<NodePtr<Real>> parents, Backward&& bw) {
  check_finite(data, op);
  auto node = std::make_shared<TensorNode<Real>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool needs = false;
  if (grad_enabled())
    for (const auto& p : parents) needs = needs || p->requires_grad;
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::forward<Backward>(bw);
  }
  return T<Real>::from_node(std::move(node));
}

template <typename Real>
std::vector<Real>* grad_of(const NodePtr<Real>& p) {
  if (!p->requires_grad) return nullptr;
  p->ensure_grad();
  return &p->grad;
}

Shape two_d(std::size_t r, std::size_t c) { return Shape{r, c}; }

// Reductions over float data accumulate in double.
template <typename Real>
using Acc = std::conditional_t<std::is_same_v<Real, float>, double, Real>;

template <typename Real>
void require_same_shape(const T<Real>& a, const T<Real>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

// Row-wise ops keep a 1-D input 1-D.
template <typename Real>
Shape rowwise_shape(const T<Real>& x) {
  return x.shape();
}

}  // namespace

template <typename Real>
T<Real> matmul(const T<Real>& a, const T<Real>& b) {
  const std::size_t m = a.rows(), k = a.cols(), k2 = b.rows(), p = b.cols();
  if (k != k2)
    throw ShapeError("matmul: inner dimensions differ, A " + shape_str(a.shape()) + " B " +
                     shape_str(b.shape()));
  const auto& A = a.node()->data;
  const auto& B = b.node()->data;
  std::vector<Real> c(m * p);
  std::vector<Acc<Real>> row(p);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(row.begin(), row.end(), Acc<Real>(0));
    for (std::size_t t = 0; t < k; ++t) {
      const Acc<Real> av = A[i * k + t];
      const Real* brow = &B[t * p];
      for (std::size_t j = 0; j < p; ++j) row[j] += av * brow[j];
    }
    for (std::size_t j = 0; j < p; ++j) c[i * p + j] = static_cast<Real>(row[j]);
  }
  return make_result<Real>(two_d(m, p), std::move(c), "matmul", {a.node(), b.node()},
                           [m, k, p](TensorNode<Real>& out) {
                             const auto& G = out.grad;
                             const auto& A = out.parents[0]->data;
                             const auto& B = out.parents[1]->data;
                             if (auto* gA = grad_of(out.parents[0])) {
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t t = 0; t < k; ++t) {
                                   Acc<Real> acc = 0;
                                   for (std::size_t j = 0; j < p; ++j)
                                     acc += static_cast<Acc<Real>>(G[i * p + j]) * B[t * p + j];
                                   (*gA)[i * k + t] += acc;
                                 }
                             }
                             if (auto* gB = grad_of(out.parents[1])) {
                               std::vector<Acc<Real>> acc(k * p, Acc<Real>(0));
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t t = 0; t < k; ++t) {
                                   const Acc<Real> av = A[i * k + t];
                                   for (std::size_t j = 0; j < p; ++j) acc[t * p + j] += av * G[i * p + j];
                                 }
                               for (std::size_t e = 0; e < acc.size(); ++e) (*gB)[e] += acc[e];
                             }
                           });
}

template <typename Real>
T<Real> transpose(const T<Real>& a) {
  const std::size_t m = a.rows(), n = a.cols();
  const auto& A = a.node()->data;
  std::vector<Real> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
  return make_result<Real>(two_d(n, m), std::move(out), "transpose", {a.node()},
                           [m, n](TensorNode<Real>& o) {
                             if (auto* g = grad_of(o.parents[0]))
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t j = 0; j < n; ++j) (*g)[i * n + j] += o.grad[j * m + i];
                           });
}

template <typename Real>
T<Real> add(const T<Real>& a, const T<Real>& b) {
  require_same_shape(a, b, "add");
  const auto& A = a.node()->data;
  const auto& B = b.node()->data;
  std::vector<Real> out(A.size());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] + B[i];
  return make_result<Real>(a.shape(), std::move(out), "add", {a.node(), b.node()}, [](TensorNode<Real>& o) {
    for (int s = 0; s < 2; ++s)
      if (auto* g = grad_of(o.parents[s]))
        for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i];
  });
}

template <typename Real>
T<Real> sub(const T<Real>& a, const T<Real>& b) {
  require_same_shape(a, b, "sub");
  const auto& A = a.node()->data;
  const auto& B = b.node()->data;
  std::vector<Real> out(A.size());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] - B[i];
  return make_result<Real>(a.shape(), std::move(out), "sub", {a.node(), b.node()}, [](TensorNode<Real>& o) {
    if (auto* g = grad_of(o.parents[0]))
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i];
    if (auto* g = grad_of(o.parents[1]))
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] -= o.grad[i];
  });
}

template <typename Real>
T<Real> mul(const T<Real>& a, const T<Real>& b) {
  require_same_shape(a, b, "mul");
  const auto& A = a.node()->data;
  const auto& B = b.node()->data;
  std::vector<Real> out(A.size());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] * B[i];
  return make_result<Real>(a.shape(), std::move(out), "mul", {a.node(), b.node()}, [](TensorNode<Real>& o) {
    const auto& A = o.parents[0]->data;
    const auto& B = o.parents[1]->data;
    if (auto* g = grad_of(o.parents[0]))
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i] * B[i];
    if (auto* g = grad_of(o.parents[1]))
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i] * A[i];
  });
}

template <typename Real>
T<Real> scale(const T<Real>& a, Real s) {
  const auto& A = a.node()->data;
  std::vector<Real> out(A.size());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] * s;
  return make_result<Real>(a.shape(), std::move(out), "scale", {a.node()}, [s](TensorNode<Real>& o) {
    if (auto* g = grad_of(o.parents[0]))
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i] * s;
  });
}

template <typename Real>
T<Real> add_row(const T<Real>& x, const T<Real>& b) {
  const std::size_t m = x.rows(), n = x.cols();
  if (b.numel() != n)
    throw ShapeError("add_row: row vector " + shape_str(b.shape()) + " does not match " + shape_str(x.shape()));
  const auto& X = x.node()->data;
  const auto& B = b.node()->data;
  std::vector<Real> out(X.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = X[i * n + j] + B[j];
  return make_result<Real>(x.shape(), std::move(out), "add_row", {x.node(), b.node()},
                           [m, n](TensorNode<Real>& o) {
                             if (auto* g = grad_of(o.parents[0]))
                               for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i];
                             if (auto* g = grad_of(o.parents[1]))
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t j = 0; j < n; ++j) (*g)[j] += o.grad[i * n + j];
                           });
}

template <typename Real>
T<Real> mul_col(const T<Real>& x, const T<Real>& s) {
  const std::size_t m = x.rows(), n = x.cols();
  if (s.numel() != m)
    throw ShapeError("mul_col: column vector " + shape_str(s.shape()) + " does not match " + shape_str(x.shape()));
  const auto& X = x.node()->data;
  const auto& S = s.node()->data;
  std::vector<Real> out(X.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = X[i * n + j] * S[i];
  return make_result<Real>(x.shape(), std::move(out), "mul_col", {x.node(), s.node()},
                           [m, n](TensorNode<Real>& o) {
                             const auto& X = o.parents[0]->data;
                             const auto& S = o.parents[1]->data;
                             if (auto* g = grad_of(o.parents[0]))
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t j = 0; j < n; ++j) (*g)[i * n + j] += o.grad[i * n + j] * S[i];
                             if (auto* g = grad_of(o.parents[1]))
                               for (std::size_t i = 0; i < m; ++i) {
                                 Acc<Real> acc = 0;
                                 for (std::size_t j = 0; j < n; ++j)
                                   acc += static_cast<Acc<Real>>(o.grad[i * n + j]) * X[i * n + j];
                                 (*g)[i] += acc;
                               }
                           });
}

template <typename Real>
T<Real> softmax_rows(const T<Real>& x, Real scale, std::span<const std::uint8_t> col_mask) {
  if (!(scale > Real(0))) throw ContractError("softmax_rows: scale must be positive");
  const std::size_t m = x.rows(), n = x.cols();
  if (!col_mask.empty() && col_mask.size() != n)
    throw ShapeError("softmax_rows: mask length " + std::to_string(col_mask.size()) + " for " +
                     std::to_string(n) + " columns");
  const auto& X = x.node()->data;
  check_finite(X, "softmax_rows input");
  std::vector<Real> y(X.size(), Real(0));
  Mask mask(col_mask.begin(), col_mask.end());
  auto valid = [&mask](std::size_t j) { return mask.empty() || mask[j] != 0; };
  for (std::size_t i = 0; i < m; ++i) {
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (valid(j)) mx = std::max(mx, scale * X[i * n + j]);
    if (!std::isfinite(mx)) throw ShapeError("softmax_rows: every column is masked");
    std::vector<Acc<Real>> e(n, Acc<Real>(0));
    Acc<Real> total = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (valid(j)) {
        e[j] = std::exp(static_cast<Acc<Real>>(scale) * X[i * n + j] - mx);
        total += e[j];
      }
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = static_cast<Real>(e[j] / total);
  }
  return make_result<Real>(rowwise_shape(x), y, "softmax_rows", {x.node()},
                           [m, n, scale, y](TensorNode<Real>& o) {
                             auto* g = grad_of(o.parents[0]);
                             if (!g) return;
                             for (std::size_t i = 0; i < m; ++i) {
                               Acc<Real> dot = 0;
                               for (std::size_t j = 0; j < n; ++j)
                                 dot += static_cast<Acc<Real>>(o.grad[i * n + j]) * y[i * n + j];
                               for (std::size_t j = 0; j < n; ++j)
                                 (*g)[i * n + j] += static_cast<Acc<Real>>(scale) * y[i * n + j] * (o.grad[i * n + j] - dot);
                             }
                           });
}

template <typename Real>
T<Real> log_softmax_rows(const T<Real>& x) {
  const std::size_t m = x.rows(), n = x.cols();
  const auto& X = x.node()->data;
  check_finite(X, "log_softmax_rows input");
  std::vector<Real> y(X.size());
  for (std::size_t i = 0; i < m; ++i) {
    Real mx = X[i * n];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, X[i * n + j]);
    Acc<Real> total = 0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(static_cast<Acc<Real>>(X[i * n + j]) - mx);
    const Acc<Real> lse = mx + std::log(total);
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = static_cast<Real>(X[i * n + j] - lse);
  }
  return make_result<Real>(rowwise_shape(x), y, "log_softmax_rows", {x.node()},
                           [m, n, y](TensorNode<Real>& o) {
                             auto* g = grad_of(o.parents[0]);
                             if (!g) return;
                             for (std::size_t i = 0; i < m; ++i) {
                               Acc<Real> gsum = 0;
                               for (std::size_t j = 0; j < n; ++j) gsum += o.grad[i * n + j];
                               for (std::size_t j = 0; j < n; ++j)
                                 (*g)[i * n + j] += o.grad[i * n + j] - std::exp(static_cast<Acc<Real>>(y[i * n + j])) * gsum;
                             }
                           });
}

template <typename Real>
T<Real> exp(const T<Real>& x) {
  const auto& X = x.node()->data;
  std::vector<Real> y(X.size());
  for (std::size_t i = 0; i < X.size(); ++i) y[i] = std::exp(X[i]);
  return make_result<Real>(x.shape(), y, "exp", {x.node()}, [y](TensorNode<Real>& o) {
    if (auto* g = grad_of(o.parents[0]))
      for (std::size_t i = 0; i < y.size(); ++i) (*g)[i] += o.grad[i] * y[i];
  });
}

template <typename Real>
T<Real> log(const T<Real>& x) {
  const auto& X = x.node()->data;
  std::vector<Real> y(X.size());
  for (std::size_t i = 0; i < X.size(); ++i) y[i] = std::log(X[i]);
  return make_result<Real>(x.shape(), std::move(y), "log", {x.node()}, [](TensorNode<Real>& o) {
    const auto& X = o.parents[0]->data;
    if (auto* g = grad_of(o.parents[0]))
      for (std::size_t i = 0; i < X.size(); ++i) (*g)[i] += o.grad[i] / X[i];
  });
}

template <typename Real>
T<Real> l2_normalize_rows(const T<Real>& x, Real eps) {
  if (!(eps > Real(0))) throw ContractError("l2_normalize_rows: eps must be positive");
  const std::size_t m = x.rows(), n = x.cols();
  const auto& X = x.node()->data;
  std::vector<Real> y(X.size());
  std::vector<Acc<Real>> denom(m);
  std::vector<std::uint8_t> clamped(m);
  for (std::size_t i = 0; i < m; ++i) {
    Acc<Real> ss = 0;
    for (std::size_t j = 0; j < n; ++j) ss += static_cast<Acc<Real>>(X[i * n + j]) * X[i * n + j];
    const Acc<Real> norm = std::sqrt(ss);
    clamped[i] = norm <= eps;
    denom[i] = clamped[i] ? eps : norm;
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = static_cast<Real>(X[i * n + j] / denom[i]);
  }
  return make_result<Real>(rowwise_shape(x), y, "l2_normalize_rows", {x.node()},
                           [m, n, y, denom, clamped](TensorNode<Real>& o) {
                             auto* g = grad_of(o.parents[0]);
                             if (!g) return;
                             for (std::size_t i = 0; i < m; ++i) {
                               if (clamped[i]) {
                                 for (std::size_t j = 0; j < n; ++j)
                                   (*g)[i * n + j] += o.grad[i * n + j] / denom[i];
                                 continue;
                               }
                               Acc<Real> dot = 0;
                               for (std::size_t j = 0; j < n; ++j)
                                 dot += static_cast<Acc<Real>>(o.grad[i * n + j]) * y[i * n + j];
                               for (std::size_t j = 0; j < n; ++j)
                                 (*g)[i * n + j] += (o.grad[i * n + j] - y[i * n + j] * dot) / denom[i];
                             }
                           });
}

template <typename Real>
T<Real> row_dot(const T<Real>& a, const T<Real>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("row_dot: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t m = a.rows(), n = a.cols();
  const auto& A = a.node()->data;
  const auto& B = b.node()->data;
  std::vector<Real> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    Acc<Real> acc = 0;
    for (std::size_t j = 0; j < n; ++j) acc += static_cast<Acc<Real>>(A[i * n + j]) * B[i * n + j];
    out[i] = static_cast<Real>(acc);
  }
  return make_result<Real>(two_d(m, 1), std::move(out), "row_dot", {a.node(), b.node()},
                           [m, n](TensorNode<Real>& o) {
                             const auto& A = o.parents[0]->data;
                             const auto& B = o.parents[1]->data;
                             if (auto* g = grad_of(o.parents[0]))
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t j = 0; j < n; ++j) (*g)[i * n + j] += o.grad[i] * B[i * n + j];
                             if (auto* g = grad_of(o.parents[1]))
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t j = 0; j < n; ++j) (*g)[i * n + j] += o.grad[i] * A[i * n + j];
                           });
}

template <typename Real>
T<Real> cosine(const T<Real>& u, const T<Real>& v, Real eps) {
  if (u.numel() != v.numel())
    throw ShapeError("cosine: length mismatch " + shape_str(u.shape()) + " vs " + shape_str(v.shape()));
  if (u.rows() != 1 || v.rows() != 1) throw ShapeError("cosine: expects vectors");
  return sum(row_dot(l2_normalize_rows(u, eps), l2_normalize_rows(v, eps)));
}

template <typename Real>
T<Real> sum(const T<Real>& x) {
  Acc<Real> total = 0;
  for (Real v : x.node()->data) total += v;
  return make_result<Real>(Shape{1}, {static_cast<Real>(total)}, "sum", {x.node()}, [](TensorNode<Real>& o) {
    if (auto* g = grad_of(o.parents[0]))
      for (auto& gi : *g) gi += o.grad[0];
  });
}

template <typename Real>
T<Real> mean(const T<Real>& x) {
  return scale(sum(x), Real(1) / static_cast<Real>(x.numel()));
}

template <typename Real>
T<Real> layer_norm_rows(const T<Real>& x, const T<Real>& gamma, const T<Real>& beta, Real eps) {
  const std::size_t m = x.rows(), n = x.cols();
  if (gamma.numel() != n || beta.numel() != n)
    throw ShapeError("layer_norm_rows: affine parameters do not match width " + std::to_string(n));
  const auto& X = x.node()->data;
  const auto& G = gamma.node()->data;
  const auto& B = beta.node()->data;
  std::vector<Real> out(X.size());
  std::vector<Acc<Real>> xhat(X.size()), rstd(m);
  for (std::size_t i = 0; i < m; ++i) {
    Acc<Real> mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += X[i * n + j];
    mu /= static_cast<Acc<Real>>(n);
    Acc<Real> var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (X[i * n + j] - mu) * (X[i * n + j] - mu);
    var /= static_cast<Acc<Real>>(n);
    rstd[i] = Acc<Real>(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const Acc<Real> xh = (X[i * n + j] - mu) * rstd[i];
      xhat[i * n + j] = xh;
      out[i * n + j] = static_cast<Real>(xh * G[j] + B[j]);
    }
  }
  return make_result<Real>(rowwise_shape(x), std::move(out), "layer_norm_rows",
                           {x.node(), gamma.node(), beta.node()},
                           [m, n, xhat, rstd](TensorNode<Real>& o) {
                             const auto& G = o.parents[1]->data;
                             if (auto* gg = grad_of(o.parents[1]))
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t j = 0; j < n; ++j) (*gg)[j] += o.grad[i * n + j] * xhat[i * n + j];
                             if (auto* gb = grad_of(o.parents[2]))
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t j = 0; j < n; ++j) (*gb)[j] += o.grad[i * n + j];
                             if (auto* gx = grad_of(o.parents[0])) {
                               const Acc<Real> inv_n = Acc<Real>(1) / static_cast<Acc<Real>>(n);
                               for (std::size_t i = 0; i < m; ++i) {
                                 Acc<Real> s1 = 0, s2 = 0;
                                 for (std::size_t j = 0; j < n; ++j) {
                                   const Acc<Real> dxh = static_cast<Acc<Real>>(o.grad[i * n + j]) * G[j];
                                   s1 += dxh;
                                   s2 += dxh * xhat[i * n + j];
                                 }
                                 for (std::size_t j = 0; j < n; ++j) {
                                   const Acc<Real> dxh = static_cast<Acc<Real>>(o.grad[i * n + j]) * G[j];
                                   (*gx)[i * n + j] += rstd[i] * (dxh - inv_n * s1 - xhat[i * n + j] * inv_n * s2);
                                 }
                               }
                             }
                           });
}

template <typename Real>
T<Real> gelu(const T<Real>& x) {
  const Acc<Real> c = std::sqrt(Acc<Real>(2) / std::numbers::pi_v<Acc<Real>>);
  const Acc<Real> k = Acc<Real>(0.044715);
  const auto& X = x.node()->data;
  std::vector<Real> y(X.size());
  for (std::size_t i = 0; i < X.size(); ++i) {
    const Acc<Real> v = X[i];
    y[i] = static_cast<Real>(0.5 * v * (1 + std::tanh(c * (v + k * v * v * v))));
  }
  return make_result<Real>(x.shape(), std::move(y), "gelu", {x.node()}, [c, k](TensorNode<Real>& o) {
    const auto& X = o.parents[0]->data;
    auto* g = grad_of(o.parents[0]);
    if (!g) return;
    for (std::size_t i = 0; i < X.size(); ++i) {
      const Acc<Real> v = X[i];
      const Acc<Real> th = std::tanh(c * (v + k * v * v * v));
      const Acc<Real> dth = (1 - th * th) * c * (1 + 3 * k * v * v);
      (*g)[i] += o.grad[i] * (0.5 * (1 + th) + 0.5 * v * dth);
    }
  });
}

template <typename Real>
T<Real> dropout(const T<Real>& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must be in [0, 1)");
  if (p == 0.0) return x;
  const auto& X = x.node()->data;
  const Real keep_scale = static_cast<Real>(1.0 / (1.0 - p));
  std::vector<Real> m(X.size()), y(X.size());
  for (std::size_t i = 0; i < X.size(); ++i) {
    m[i] = rng.uniform() >= p ? keep_scale : Real(0);
    y[i] = X[i] * m[i];
  }
  return make_result<Real>(x.shape(), std::move(y), "dropout", {x.node()}, [m](TensorNode<Real>& o) {
    if (auto* g = grad_of(o.parents[0]))
      for (std::size_t i = 0; i < m.size(); ++i) (*g)[i] += o.grad[i] * m[i];
  });
}

template <typename Real>
T<Real> slice_rows(const T<Real>& x, std::size_t begin, std::size_t end) {
  const std::size_t m = x.rows(), n = x.cols();
  if (begin >= end || end > m)
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of " +
                     shape_str(x.shape()));
  const auto& X = x.node()->data;
  std::vector<Real> out(X.begin() + static_cast<std::ptrdiff_t>(begin * n),
                        X.begin() + static_cast<std::ptrdiff_t>(end * n));
  return make_result<Real>(two_d(end - begin, n), std::move(out), "slice_rows", {x.node()},
                           [begin, n](TensorNode<Real>& o) {
                             if (auto* g = grad_of(o.parents[0]))
                               for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[begin * n + i] += o.grad[i];
                           });
}

template <typename Real>
T<Real> slice_cols(const T<Real>& x, std::size_t begin, std::size_t end) {
  const std::size_t m = x.rows(), n = x.cols();
  if (begin >= end || end > n)
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of " +
                     shape_str(x.shape()));
  const std::size_t w = end - begin;
  const auto& X = x.node()->data;
  std::vector<Real> out(m * w);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = X[i * n + begin + j];
  return make_result<Real>(two_d(m, w), std::move(out), "slice_cols", {x.node()},
                           [m, n, w, begin](TensorNode<Real>& o) {
                             if (auto* g = grad_of(o.parents[0]))
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t j = 0; j < w; ++j) (*g)[i * n + begin + j] += o.grad[i * w + j];
                           });
}

template <typename Real>
T<Real> concat_rows(std::span<const T<Real>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  std::vector<NodePtr<Real>> parents;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.cols() != n)
      throw ShapeError("concat_rows: width mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    offsets.push_back(m * n);
    m += p.rows();
    parents.push_back(p.node());
  }
  std::vector<Real> out;
  out.reserve(m * n);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result<Real>(two_d(m, n), std::move(out), "concat_rows", std::move(parents),
                           [offsets](TensorNode<Real>& o) {
                             for (std::size_t s = 0; s < o.parents.size(); ++s)
                               if (auto* g = grad_of(o.parents[s]))
                                 for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += o.grad[offsets[s] + i];
                           });
}

template <typename Real>
T<Real> concat_cols(std::span<const T<Real>> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  std::vector<NodePtr<Real>> parents;
  std::vector<std::size_t> offsets, widths;
  for (const auto& p : parts) {
    if (p.rows() != m)
      throw ShapeError("concat_cols: height mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    offsets.push_back(n);
    widths.push_back(p.cols());
    n += p.cols();
    parents.push_back(p.node());
  }
  std::vector<Real> out(m * n);
  for (std::size_t s = 0; s < parts.size(); ++s) {
    const auto& P = parts[s].node()->data;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[s]; ++j) out[i * n + offsets[s] + j] = P[i * widths[s] + j];
  }
  return make_result<Real>(two_d(m, n), std::move(out), "concat_cols", std::move(parents),
                           [m, n, offsets, widths](TensorNode<Real>& o) {
                             for (std::size_t s = 0; s < o.parents.size(); ++s)
                               if (auto* g = grad_of(o.parents[s]))
                                 for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t j = 0; j < widths[s]; ++j)
                                     (*g)[i * widths[s] + j] += o.grad[i * n + offsets[s] + j];
                           });
}

template <typename Real>
T<Real> gather_rows(const T<Real>& w, std::span<const int> ids) {
  const std::size_t vocab = w.rows(), n = w.cols();
  if (ids.empty()) throw ShapeError("gather_rows: empty id list");
  std::vector<int> idx(ids.begin(), ids.end());
  const auto& W = w.node()->data;
  std::vector<Real> out(idx.size() * n);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= vocab)
      throw DataError("gather_rows: id " + std::to_string(idx[i]) + " outside table of " + std::to_string(vocab) +
                      " rows");
    std::copy_n(W.begin() + static_cast<std::ptrdiff_t>(idx[i] * n), n, out.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  return make_result<Real>(two_d(idx.size(), n), std::move(out), "gather_rows", {w.node()},
                           [idx, n](TensorNode<Real>& o) {
                             if (auto* g = grad_of(o.parents[0]))
                               for (std::size_t i = 0; i < idx.size(); ++i)
                                 for (std::size_t j = 0; j < n; ++j) (*g)[idx[i] * n + j] += o.grad[i * n + j];
                           });
}

template <typename Real>
T<Real> pick(const T<Real>& x, std::span<const int> idx_in) {
  const std::size_t m = x.rows(), n = x.cols();
  if (idx_in.size() != m)
    throw ShapeError("pick: " + std::to_string(idx_in.size()) + " indices for " + std::to_string(m) + " rows");
  std::vector<int> idx(idx_in.begin(), idx_in.end());
  std::vector<Real> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= n)
      throw DataError("pick: column " + std::to_string(idx[i]) + " out of range for width " + std::to_string(n));
    out[i] = x.node()->data[i * n + idx[i]];
  }
  return make_result<Real>(two_d(m, 1), std::move(out), "pick", {x.node()}, [idx, n](TensorNode<Real>& o) {
    if (auto* g = grad_of(o.parents[0]))
      for (std::size_t i = 0; i < idx.size(); ++i) (*g)[i * n + idx[i]] += o.grad[i];
  });
}

template <typename Real>
Real cosine_similarity(std::span<const Real> u, std::span<const Real> v, Real eps) {
  if (u.size() != v.size())
    throw ShapeError("cosine: length mismatch " + std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  Real dot = 0, uu = 0, vv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  const Real c = dot / (std::max(std::sqrt(uu), eps) * std::max(std::sqrt(vv), eps));
  return std::clamp(c, Real(-1), Real(1));
}

template <typename Real>
std::vector<Real> l2_normalize(std::span<const Real> v, Real eps) {
  Real ss = 0;
  for (Real x : v) ss += x * x;
  const Real d = std::max(std::sqrt(ss), eps);
  std::vector<Real> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / d;
  return out;
}

#define TBPS_INSTANTIATE_OPS(R)                                                          \
  template T<R> matmul(const T<R>&, const T<R>&);                                        \
  template T<R> transpose(const T<R>&);                                                  \
  template T<R> add(const T<R>&, const T<R>&);                                           \
  template T<R> sub(const T<R>&, const T<R>&);                                           \
  template T<R> mul(const T<R>&, const T<R>&);                                           \
  template T<R> scale(const T<R>&, R);                                                   \
  template T<R> add_row(const T<R>&, const T<R>&);                                       \
  template T<R> mul_col(const T<R>&, const T<R>&);                                       \
  template T<R> softmax_rows(const T<R>&, R, std::span<const std::uint8_t>);             \
  template T<R> log_softmax_rows(const T<R>&);                                           \
  template T<R> exp(const T<R>&);                                                        \
  template T<R> log(const T<R>&);                                                        \
  template T<R> l2_normalize_rows(const T<R>&, R);                                       \
  template T<R> row_dot(const T<R>&, const T<R>&);                                       \
  template T<R> cosine(const T<R>&, const T<R>&, R);                                     \
  template T<R> sum(const T<R>&);                                                        \
  template T<R> mean(const T<R>&);                                                       \
  template T<R> layer_norm_rows(const T<R>&, const T<R>&, const T<R>&, R);               \
  template T<R> gelu(const T<R>&);                                                       \
  template T<R> dropout(const T<R>&, double, Rng&);                                      \
  template T<R> slice_rows(const T<R>&, std::size_t, std::size_t);                       \
  template T<R> slice_cols(const T<R>&, std::size_t, std::size_t);                       \
  template T<R> concat_rows(std::span<const T<R>>);                                      \
  template T<R> concat_cols(std::span<const T<R>>);                                      \
  template T<R> gather_rows(const T<R>&, std::span<const int>);                           \
  template T<R> pick(const T<R>&, std::span<const int>);                                 \
  template R cosine_similarity(std::span<const R>, std::span<const R>, R);               \
  template std::vector<R> l2_normalize(std::span<const R>, R);

TBPS_INSTANTIATE_OPS(float)
TBPS_INSTANTIATE_OPS(double)
TBPS_INSTANTIATE_OPS(long double)

#undef TBPS_INSTANTIATE_OPS

}  // namespace tbps::ops
