#pragma once

#include "bit/diffcore/tensor.hpp"

#include <functional>
#include <utility>
#include <vector>

namespace bit::diff {

// Linear algebra ------------------------------------------------------------

/// Matrix product; throws DimensionError naming both shapes when inner extents differ.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Pointwise -------------------------------------------------------------------
//
// Binary operations accept equal shapes, or a 1x1 scalar on either side.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor neg(const Tensor& a);
/// x (R x C) + b (1 x C) broadcast over rows.
Tensor add_row(const Tensor& x, const Tensor& b);

/// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Natural log; DomainError on any non-positive entry.
Tensor log(const Tensor& x);
Tensor relu(const Tensor& x);
/// Clamps into [lo, hi]; the gradient is zero where clamping is active.
Tensor clamp(const Tensor& x, double lo, double hi);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// Row-wise --------------------------------------------------------------------

/// Numerically stable softmax applied independently to each row.
Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);

/// Per-row normalization with population variance, eps inside the square root,
/// followed by gamma (1 x C) scale and beta (1 x C) shift.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Divides each row by max(||row||_2, eps).
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);

// Reductions ------------------------------------------------------------------

/// N x C -> 1 x C mean over rows.
Tensor mean_pool_rows(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sum of several scalars in one node.
Tensor sum_scalars(const std::vector<Tensor>& xs);

// Indexing and layout -------------------------------------------------------

/// Selects entries x(r, c) into a 1 x n row.
Tensor gather(const Tensor& x, const std::vector<std::pair<Index, Index>>& at);
Tensor slice_cols(const Tensor& x, Index begin, Index count);
Tensor hconcat(const std::vector<Tensor>& xs);
Tensor vconcat(const std::vector<Tensor>& xs);

/// Euclidean distances between all rows of x; entries are clamped below at
/// sqrt(eps) so the gradient stays finite for coincident rows.
Tensor pairwise_distances(const Tensor& x, double eps = 1e-12);

// Verification ----------------------------------------------------------------

/// Max over coordinates of |analytic - central difference| / max(1, |central difference|).
///
/// `f` must be scalar-valued and deterministic. `h` must lie in [1e-7, 1e-3].
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Matrix& x, double h = 1e-5);

/// Same measure over a set of trainable leaves that `f` closes over.
///
/// Leaves are perturbed in place and restored. Existing gradients on the
/// leaves are cleared.
double grad_check_params(const std::function<Tensor()>& f, const std::vector<Tensor>& leaves,
                         double h = 1e-5);

}  // namespace bit::diff
