#include "bit/diffcore/ops.hpp"

#include "bit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace bit::diff {

namespace {

std::string shape_str(const Tensor& t) {
  std::ostringstream os;
  os << "[" << t.rows() << "x" << t.cols() << "]";
  return os.str();
}

enum class Broadcast { kSame, kLeftScalar, kRightScalar };

Broadcast broadcast_kind(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::kSame;
  if (a.is_scalar()) return Broadcast::kLeftScalar;
  if (b.is_scalar()) return Broadcast::kRightScalar;
  throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are not broadcast-compatible");
}

// Reduces a full-shape gradient onto an operand that may have been broadcast.
void accumulate(Matrix* dst, const Matrix& full) {
  if (!dst) return;
  if (dst->rows() == full.rows() && dst->cols() == full.cols()) {
    *dst += full;
  } else {
    (*dst)(0, 0) += full.sum();
  }
}

Matrix expand(const Tensor& t, Index rows, Index cols) {
  if (t.rows() == rows && t.cols() == cols) return t.value();
  return Matrix::Constant(rows, cols, t.item());
}

constexpr double kGeluC = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner extents differ for " + shape_str(a) + " * " +
                         shape_str(b));
  }
  Matrix out = a.value() * b.value();
  return Tensor::from_op("matmul", std::move(out), {a, b},
                         [a, b](const Matrix& g, std::span<Matrix* const> in) {
                           if (in[0]) in[0]->noalias() += g * b.value().transpose();
                           if (in[1]) in[1]->noalias() += a.value().transpose() * g;
                         });
}

Tensor transpose(const Tensor& a) {
  Matrix out = a.value().transpose();
  return Tensor::from_op("transpose", std::move(out), {a},
                         [](const Matrix& g, std::span<Matrix* const> in) {
                           if (in[0]) *in[0] += g.transpose();
                         });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const auto kind = broadcast_kind("add", a, b);
  Matrix out;
  switch (kind) {
    case Broadcast::kSame: out = a.value() + b.value(); break;
    case Broadcast::kLeftScalar: out = b.value().array() + a.item(); break;
    case Broadcast::kRightScalar: out = a.value().array() + b.item(); break;
  }
  return Tensor::from_op("add", std::move(out), {a, b},
                         [](const Matrix& g, std::span<Matrix* const> in) {
                           accumulate(in[0], g);
                           accumulate(in[1], g);
                         });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const auto kind = broadcast_kind("sub", a, b);
  Matrix out;
  switch (kind) {
    case Broadcast::kSame: out = a.value() - b.value(); break;
    case Broadcast::kLeftScalar: out = (-b.value().array()) + a.item(); break;
    case Broadcast::kRightScalar: out = a.value().array() - b.item(); break;
  }
  return Tensor::from_op("sub", std::move(out), {a, b},
                         [](const Matrix& g, std::span<Matrix* const> in) {
                           accumulate(in[0], g);
                           accumulate(in[1], -g);
                         });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  broadcast_kind("mul", a, b);
  const Index r = std::max(a.rows(), b.rows());
  const Index c = std::max(a.cols(), b.cols());
  Matrix out = expand(a, r, c).cwiseProduct(expand(b, r, c));
  return Tensor::from_op("mul", std::move(out), {a, b},
                         [a, b, r, c](const Matrix& g, std::span<Matrix* const> in) {
                           if (in[0]) accumulate(in[0], g.cwiseProduct(expand(b, r, c)));
                           if (in[1]) accumulate(in[1], g.cwiseProduct(expand(a, r, c)));
                         });
}

Tensor scale(const Tensor& a, double s) {
  Matrix out = a.value() * s;
  return Tensor::from_op("scale", std::move(out), {a},
                         [s](const Matrix& g, std::span<Matrix* const> in) {
                           if (in[0]) *in[0] += g * s;
                         });
}

Tensor neg(const Tensor& a) {
  Matrix out = -a.value();
  return Tensor::from_op("neg", std::move(out), {a},
                         [](const Matrix& g, std::span<Matrix* const> in) {
                           if (in[0]) *in[0] -= g;
                         });
}

Tensor add_row(const Tensor& x, const Tensor& b) {
  if (b.rows() != 1 || b.cols() != x.cols()) {
    throw DimensionError("add_row: bias " + shape_str(b) + " does not match " + shape_str(x));
  }
  Matrix out = x.value().rowwise() + b.value().row(0);
  return Tensor::from_op("add_row", std::move(out), {x, b},
                         [](const Matrix& g, std::span<Matrix* const> in) {
                           if (in[0]) *in[0] += g;
                           if (in[1]) *in[1] += g.colwise().sum();
                         });
}

Tensor gelu(const Tensor& x) {
  const auto& v = x.value().array();
  Matrix t = (kSqrt2OverPi * (v + kGeluC * v.cube())).tanh().matrix();
  Matrix out = (0.5 * v * (1.0 + t.array())).matrix();
  return Tensor::from_op(
      "gelu", std::move(out), {x}, [x, t = std::move(t)](const Matrix& g, std::span<Matrix* const> in) {
        if (!in[0]) return;
        const auto& v = x.value().array();
        const auto ta = t.array();
        auto d = 0.5 * (1.0 + ta) +
                 0.5 * v * (1.0 - ta.square()) * kSqrt2OverPi * (1.0 + 3.0 * kGeluC * v.square());
        in[0]->array() += g.array() * d;
      });
}

Tensor sigmoid(const Tensor& x) {
  Matrix out = x.value().unaryExpr([](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  Matrix y = out;
  return Tensor::from_op("sigmoid", std::move(out), {x},
                         [y = std::move(y)](const Matrix& g, std::span<Matrix* const> in) {
                           if (in[0]) in[0]->array() += g.array() * y.array() * (1.0 - y.array());
                         });
}

Tensor log(const Tensor& x) {
  if ((x.value().array() <= 0.0).any()) {
    throw DomainError("log: argument has a non-positive entry");
  }
  Matrix out = x.value().array().log().matrix();
  return Tensor::from_op("log", std::move(out), {x},
                         [x](const Matrix& g, std::span<Matrix* const> in) {
                           if (in[0]) in[0]->array() += g.array() / x.value().array();
                         });
}

Tensor relu(const Tensor& x) {
  Matrix out = x.value().cwiseMax(0.0);
  return Tensor::from_op("relu", std::move(out), {x},
                         [x](const Matrix& g, std::span<Matrix* const> in) {
                           if (in[0]) {
                             in[0]->array() += (x.value().array() > 0.0).select(g.array(), 0.0);
                           }
                         });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw UsageError("clamp: lo must not exceed hi");
  Matrix out = x.value().cwiseMax(lo).cwiseMin(hi);
  return Tensor::from_op("clamp", std::move(out), {x},
                         [x, lo, hi](const Matrix& g, std::span<Matrix* const> in) {
                           if (!in[0]) return;
                           const auto& v = x.value().array();
                           in[0]->array() += (v >= lo && v <= hi).select(g.array(), 0.0);
                         });
}

Tensor softmax_rows(const Tensor& x) {
  if (x.cols() < 1) throw DimensionError("softmax_rows: rows must be non-empty");
  Matrix out = (x.value().colwise() - x.value().rowwise().maxCoeff()).array().exp().matrix();
  out.array().colwise() /= out.rowwise().sum().array();
  Matrix y = out;
  return Tensor::from_op("softmax_rows", std::move(out), {x},
                         [y = std::move(y)](const Matrix& g, std::span<Matrix* const> in) {
                           if (!in[0]) return;
                           Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
                           in[0]->array() += y.array() * (g.colwise() - dot).array();
                         });
}

Tensor log_softmax_rows(const Tensor& x) {
  if (x.cols() < 1) throw DimensionError("log_softmax_rows: rows must be non-empty");
  Eigen::VectorXd mx = x.value().rowwise().maxCoeff();
  Matrix shifted = x.value().colwise() - mx;
  Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log().matrix();
  Matrix out = shifted.colwise() - lse;
  Matrix p = out.array().exp().matrix();
  return Tensor::from_op("log_softmax_rows", std::move(out), {x},
                         [p = std::move(p)](const Matrix& g, std::span<Matrix* const> in) {
                           if (!in[0]) return;
                           Eigen::VectorXd gs = g.rowwise().sum();
                           *in[0] += g - Matrix(p.array().colwise() * gs.array());
                         });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const Index c = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != c || beta.rows() != 1 || beta.cols() != c) {
    throw DimensionError("layer_norm: gamma " + shape_str(gamma) + " / beta " + shape_str(beta) +
                         " do not match " + shape_str(x));
  }
  if (!(eps > 0)) throw UsageError("layer_norm: eps must be positive");
  Eigen::VectorXd mu = x.value().rowwise().mean();
  Matrix centered = x.value().colwise() - mu;
  Eigen::VectorXd inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<double>(c)) + eps).rsqrt().matrix();
  Matrix xhat = centered.array().colwise() * inv_std.array();
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  return Tensor::from_op(
      "layer_norm", std::move(out), {x, gamma, beta},
      [gamma, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          const Matrix& g, std::span<Matrix* const> in) {
        if (in[0]) {
          Matrix dxhat = g.array().rowwise() * gamma.value().row(0).array();
          Eigen::VectorXd m1 = dxhat.rowwise().mean();
          Eigen::VectorXd m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
          Matrix dx = (dxhat.colwise() - m1) - Matrix(xhat.array().colwise() * m2.array());
          in[0]->array() += dx.array().colwise() * inv_std.array();
        }
        if (in[1]) *in[1] += g.cwiseProduct(xhat).colwise().sum();
        if (in[2]) *in[2] += g.colwise().sum();
      });
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  if (!(eps > 0)) throw UsageError("l2_normalize_rows: eps must be positive");
  Eigen::VectorXd norms = x.value().rowwise().norm();
  Eigen::VectorXd denom = norms.cwiseMax(eps);
  Matrix out = x.value().array().colwise() / denom.array();
  Matrix y = out;
  return Tensor::from_op(
      "l2_normalize_rows", std::move(out), {x},
      [y = std::move(y), norms = std::move(norms), denom, eps](const Matrix& g,
                                                               std::span<Matrix* const> in) {
        if (!in[0]) return;
        for (Index r = 0; r < y.rows(); ++r) {
          if (norms(r) >= eps) {
            const double d = g.row(r).dot(y.row(r));
            in[0]->row(r) += (g.row(r) - d * y.row(r)) / denom(r);
          } else {
            in[0]->row(r) += g.row(r) / eps;
          }
        }
      });
}

Tensor mean_pool_rows(const Tensor& x) {
  if (x.rows() < 1) throw DimensionError("mean_pool_rows: no rows to pool");
  Matrix out = x.value().colwise().mean();
  const double inv = 1.0 / static_cast<double>(x.rows());
  return Tensor::from_op("mean_pool_rows", std::move(out), {x},
                         [inv](const Matrix& g, std::span<Matrix* const> in) {
                           if (in[0]) in[0]->rowwise() += g.row(0) * inv;
                         });
}

Tensor sum(const Tensor& x) {
  Matrix out = Matrix::Constant(1, 1, x.value().sum());
  return Tensor::from_op("sum", std::move(out), {x},
                         [](const Matrix& g, std::span<Matrix* const> in) {
                           if (in[0]) in[0]->array() += g(0, 0);
                         });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw DimensionError("mean: empty tensor");
  const double inv = 1.0 / static_cast<double>(x.size());
  Matrix out = Matrix::Constant(1, 1, x.value().sum() * inv);
  return Tensor::from_op("mean", std::move(out), {x},
                         [inv](const Matrix& g, std::span<Matrix* const> in) {
                           if (in[0]) in[0]->array() += g(0, 0) * inv;
                         });
}

Tensor sum_scalars(const std::vector<Tensor>& xs) {
  double total = 0.0;
  for (const auto& x : xs) total += x.item();
  return Tensor::from_op("sum_scalars", Matrix::Constant(1, 1, total), xs,
                         [](const Matrix& g, std::span<Matrix* const> in) {
                           for (Matrix* d : in) {
                             if (d) (*d)(0, 0) += g(0, 0);
                           }
                         });
}

Tensor gather(const Tensor& x, const std::vector<std::pair<Index, Index>>& at) {
  Matrix out(1, static_cast<Index>(at.size()));
  for (std::size_t i = 0; i < at.size(); ++i) {
    const auto [r, c] = at[i];
    if (r < 0 || r >= x.rows() || c < 0 || c >= x.cols()) {
      throw DimensionError("gather: index (" + std::to_string(r) + "," + std::to_string(c) +
                           ") outside " + shape_str(x));
    }
    out(0, static_cast<Index>(i)) = x.value()(r, c);
  }
  return Tensor::from_op("gather", std::move(out), {x},
                         [at](const Matrix& g, std::span<Matrix* const> in) {
                           if (!in[0]) return;
                           for (std::size_t i = 0; i < at.size(); ++i) {
                             (*in[0])(at[i].first, at[i].second) += g(0, static_cast<Index>(i));
                           }
                         });
}

Tensor slice_cols(const Tensor& x, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > x.cols()) {
    throw DimensionError("slice_cols: range outside " + shape_str(x));
  }
  Matrix out = x.value().middleCols(begin, count);
  return Tensor::from_op("slice_cols", std::move(out), {x},
                         [begin, count](const Matrix& g, std::span<Matrix* const> in) {
                           if (in[0]) in[0]->middleCols(begin, count) += g;
                         });
}

Tensor hconcat(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw DimensionError("hconcat: no operands");
  Index cols = 0;
  for (const auto& x : xs) {
    if (x.rows() != xs.front().rows()) throw DimensionError("hconcat: row extents differ");
    cols += x.cols();
  }
  Matrix out(xs.front().rows(), cols);
  std::vector<Index> offsets;
  Index at = 0;
  for (const auto& x : xs) {
    offsets.push_back(at);
    out.middleCols(at, x.cols()) = x.value();
    at += x.cols();
  }
  return Tensor::from_op("hconcat", std::move(out), xs,
                         [offsets](const Matrix& g, std::span<Matrix* const> in) {
                           for (std::size_t i = 0; i < in.size(); ++i) {
                             if (in[i]) *in[i] += g.middleCols(offsets[i], in[i]->cols());
                           }
                         });
}

Tensor vconcat(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw DimensionError("vconcat: no operands");
  Index rows = 0;
  for (const auto& x : xs) {
    if (x.cols() != xs.front().cols()) throw DimensionError("vconcat: column extents differ");
    rows += x.rows();
  }
  Matrix out(rows, xs.front().cols());
  std::vector<Index> offsets;
  Index at = 0;
  for (const auto& x : xs) {
    offsets.push_back(at);
    out.middleRows(at, x.rows()) = x.value();
    at += x.rows();
  }
  return Tensor::from_op("vconcat", std::move(out), xs,
                         [offsets](const Matrix& g, std::span<Matrix* const> in) {
                           for (std::size_t i = 0; i < in.size(); ++i) {
                             if (in[i]) *in[i] += g.middleRows(offsets[i], in[i]->rows());
                           }
                         });
}

Tensor pairwise_distances(const Tensor& x, double eps) {
  const Index n = x.rows();
  const Matrix& v = x.value();
  // Direct differences; the |a|^2 - 2ab + |b|^2 expansion cancels badly for near rows.
  Matrix d2(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) d2(i, j) = (v.row(i) - v.row(j)).squaredNorm();
  }
  Matrix out = d2.cwiseMax(eps).cwiseSqrt();
  Matrix dist = out;
  return Tensor::from_op(
      "pairwise_distances", std::move(out), {x},
      [x, dist = std::move(dist), d2 = std::move(d2), eps](const Matrix& g,
                                                         std::span<Matrix* const> in) {
        if (!in[0]) return;
        const Matrix& v = x.value();
        for (Index i = 0; i < v.rows(); ++i) {
          for (Index j = 0; j < v.rows(); ++j) {
            if (i == j || d2(i, j) <= eps || g(i, j) == 0.0) continue;
            const double s = g(i, j) / dist(i, j);
            in[0]->row(i) += s * (v.row(i) - v.row(j));
            in[0]->row(j) -= s * (v.row(i) - v.row(j));
          }
        }
      });
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Matrix& x, double h) {
  Tensor leaf = Tensor::parameter(x);
  return grad_check_params([&] { return f(leaf); }, {leaf}, h);
}

double grad_check_params(const std::function<Tensor()>& f, const std::vector<Tensor>& leaves,
                         double h) {
  if (!(h >= 1e-7 && h <= 1e-3)) throw UsageError("grad_check: h must lie in [1e-7, 1e-3]");
  std::vector<Tensor> params = leaves;
  for (auto& p : params) {
    if (!p.is_leaf() || !p.requires_grad()) {
      throw UsageError("grad_check: every checked tensor must be a trainable leaf");
    }
    p.clear_grad();
  }
  Tensor loss = f();
  if (!loss.is_scalar()) throw UsageError("grad_check: function must be scalar-valued");
  backward(loss);

  double worst = 0.0;
  for (auto& p : params) {
    const Matrix analytic = p.has_grad() ? p.grad() : Matrix::Zero(p.rows(), p.cols());
    Matrix& value = p.mutable_value();
    for (Index r = 0; r < value.rows(); ++r) {
      for (Index c = 0; c < value.cols(); ++c) {
        const double saved = value(r, c);
        value(r, c) = saved + h;
        const double up = f().item();
        value(r, c) = saved - h;
        const double down = f().item();
        value(r, c) = saved;
        const double fd = (up - down) / (2.0 * h);
        const double err = std::abs(analytic(r, c) - fd) / std::max(1.0, std::abs(fd));
        worst = std::max(worst, err);
      }
    }
    p.clear_grad();
  }
  return worst;
}

}  // namespace bit::diff
