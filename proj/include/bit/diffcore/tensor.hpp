#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bit {

/// Row-major dense matrix; the storage type behind every tensor.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

}  // namespace bit

namespace bit::diff {

/// Propagates the gradient of an operation's output to its inputs.
///
/// `grad_in[i]` points at the gradient buffer of input `i`, or is null when that
/// input does not participate in differentiation. Rules must accumulate (`+=`).
using BackwardRule =
    std::function<void(const Matrix& grad_out, std::span<Matrix* const> grad_in)>;

namespace detail {

struct Node {
  Matrix value;
  std::optional<Matrix> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::uint64_t seq = 0;
  std::string op;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardRule rule;
};

}  // namespace detail

/// Dense 2-D f64 value with an optional gradient slot.
///
/// A `Tensor` is a cheap handle: copies share the same node. Every value a
/// model computes is stored as a (rows x cols) matrix; vectors are 1 x C rows
/// and scalars are 1 x 1.
class Tensor {
 public:
  Tensor() = default;

  /// A leaf that gradients do not flow into.
  static Tensor constant(Matrix value);
  /// A trainable leaf; gradients accumulate into it.
  static Tensor parameter(Matrix value);
  static Tensor scalar(double v) { return constant(Matrix::Constant(1, 1, v)); }

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const;
  /// Direct write access for optimizers. Only valid on leaves.
  Matrix& mutable_value();

  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Index size() const { return value().size(); }
  std::vector<Index> shape() const { return {rows(), cols()}; }
  bool is_scalar() const { return rows() == 1 && cols() == 1; }
  double item() const;
  double operator()(Index r, Index c) const { return value()(r, c); }

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  /// Gradient buffer; throws UsageError if none has been populated.
  const Matrix& grad() const;
  /// Sets the gradient buffer to zeros (allocating it if needed).
  void zero_grad();
  void clear_grad();
  const std::string& op() const;

  /// Builds the result of a differentiable operation.
  ///
  /// The result requires grad iff any input does; in that case `rule` is kept
  /// and called once during `backward`.
  static Tensor from_op(std::string_view op, Matrix value, std::vector<Tensor> inputs,
                        BackwardRule rule);

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;

  friend class Tape;
  friend void backward(const Tensor& loss);
};

/// The recorded operations reachable from a loss, in reverse execution order.
///
/// Operations are numbered as they execute, so sorting by descending sequence
/// number is a valid reverse topological order.
class Tape {
 public:
  static Tape record(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  /// Operation names in replay order (loss first).
  std::vector<std::string> ops() const;

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  friend void backward(const Tensor& loss);
};

/// Reverse-mode pass: accumulates d(loss)/d(leaf) into every reachable trainable leaf.
///
/// Intermediate gradients and backward rules are released afterwards, so a
/// graph can be differentiated once.
void backward(const Tensor& loss);

/// Checks that every stored value is finite.
bool all_finite(const Matrix& m);

namespace testing {

/// Scales the gradient flowing into every operation named `op` by `factor`
/// during backward. Used to exercise the gradient checker; `""` disables it.
void corrupt_rule(std::string op, double factor = 1.5);

}  // namespace testing

}  // namespace bit::diff

namespace bit {
using diff::Tensor;
}  // namespace bit
