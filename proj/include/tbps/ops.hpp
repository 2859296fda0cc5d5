#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tbps/rng.hpp"
#include "tbps/tensor.hpp"

// Differentiable tensor operations. All matrix ops work on the 2-D view of
// their inputs (a 1-D tensor is a single row). There is no implicit
// broadcasting; row/column broadcasts are separate, explicitly named ops.
namespace tbps::ops {

template <typename Real>
using T = Tensor<Real>;

/// C = A·B. Throws ShapeError naming both shapes when inner dims differ.
template <typename Real>
T<Real> matmul(const T<Real>& a, const T<Real>& b);

template <typename Real>
T<Real> transpose(const T<Real>& a);

template <typename Real>
T<Real> add(const T<Real>& a, const T<Real>& b);
template <typename Real>
T<Real> sub(const T<Real>& a, const T<Real>& b);
/// Elementwise (Hadamard) product.
template <typename Real>
T<Real> mul(const T<Real>& a, const T<Real>& b);
template <typename Real>
T<Real> scale(const T<Real>& a, Real s);

/// X[m×n] + b[n] added to every row.
template <typename Real>
T<Real> add_row(const T<Real>& x, const T<Real>& b);
/// X[m×n] with row i multiplied by s[i]; s has m entries.
template <typename Real>
T<Real> mul_col(const T<Real>& x, const T<Real>& s);

/// Row-wise softmax of scale·X. Columns whose mask byte is zero get weight
/// exactly 0; an empty mask means every column is valid. Max-subtracted.
template <typename Real>
T<Real> softmax_rows(const T<Real>& x, Real scale = Real(1), std::span<const std::uint8_t> col_mask = {});

template <typename Real>
T<Real> log_softmax_rows(const T<Real>& x);

template <typename Real>
T<Real> exp(const T<Real>& x);
template <typename Real>
T<Real> log(const T<Real>& x);

/// Each row divided by max(‖row‖₂, eps).
template <typename Real>
T<Real> l2_normalize_rows(const T<Real>& x, Real eps = Real(1e-12));

/// Out[i] = Σ_j A[i][j]·B[i][j], shape (m, 1).
template <typename Real>
T<Real> row_dot(const T<Real>& a, const T<Real>& b);

/// Cosine similarity of two equal-length vectors as a differentiable scalar.
template <typename Real>
T<Real> cosine(const T<Real>& u, const T<Real>& v, Real eps = Real(1e-12));

template <typename Real>
T<Real> sum(const T<Real>& x);
template <typename Real>
T<Real> mean(const T<Real>& x);

template <typename Real>
T<Real> layer_norm_rows(const T<Real>& x, const T<Real>& gamma, const T<Real>& beta, Real eps = Real(1e-5));

// tanh approximation
template <typename Real>
T<Real> gelu(const T<Real>& x);

/// Inverted dropout; identity when p == 0.
template <typename Real>
T<Real> dropout(const T<Real>& x, double p, Rng& rng);

template <typename Real>
T<Real> slice_rows(const T<Real>& x, std::size_t begin, std::size_t end);
template <typename Real>
T<Real> slice_cols(const T<Real>& x, std::size_t begin, std::size_t end);
template <typename Real>
T<Real> concat_rows(std::span<const T<Real>> parts);
template <typename Real>
T<Real> concat_cols(std::span<const T<Real>> parts);

/// Embedding lookup: row i of the result is W[ids[i]].
template <typename Real>
T<Real> gather_rows(const T<Real>& w, std::span<const int> ids);

/// Out[i] = X[i][idx[i]], shape (m, 1).
template <typename Real>
T<Real> pick(const T<Real>& x, std::span<const int> idx);

// Plain (non-differentiable) helpers over raw values.
template <typename Real>
Real cosine_similarity(std::span<const Real> u, std::span<const Real> v, Real eps = Real(1e-12));

template <typename Real>
std::vector<Real> l2_normalize(std::span<const Real> v, Real eps = Real(1e-12));

}  // namespace tbps::ops
