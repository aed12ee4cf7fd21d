#include "bit/diffcore/tensor.hpp"

#include "bit/errors.hpp"

#include <algorithm>
#include <atomic>
#include <unordered_set>

namespace bit::diff {

namespace {

std::atomic<std::uint64_t> g_next_seq{1};

struct FaultHook {
  std::string op;
  double factor = 1.0;
};

FaultHook& fault_hook() {
  static FaultHook hook;
  return hook;
}

std::shared_ptr<detail::Node> make_node(Matrix value, bool requires_grad) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  node->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
  return node;
}

}  // namespace

bool all_finite(const Matrix& m) { return m.allFinite(); }

Tensor Tensor::constant(Matrix value) {
  auto node = make_node(std::move(value), false);
  node->op = "constant";
  return Tensor(std::move(node));
}

Tensor Tensor::parameter(Matrix value) {
  auto node = make_node(std::move(value), true);
  node->op = "parameter";
  return Tensor(std::move(node));
}

const Matrix& Tensor::value() const {
  if (!node_) throw UsageError("access to an undefined tensor");
  return node_->value;
}

Matrix& Tensor::mutable_value() {
  if (!node_) throw UsageError("access to an undefined tensor");
  if (!node_->leaf) throw UsageError("mutable_value() on a non-leaf tensor");
  return node_->value;
}

double Tensor::item() const {
  if (!is_scalar()) {
    throw UsageError("item() on a tensor of shape " + std::to_string(rows()) + "x" +
                     std::to_string(cols()));
  }
  return value()(0, 0);
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return node_ && node_->leaf; }
bool Tensor::has_grad() const { return node_ && node_->grad.has_value(); }

const Matrix& Tensor::grad() const {
  if (!has_grad()) throw UsageError("tensor has no gradient");
  return *node_->grad;
}

void Tensor::zero_grad() {
  if (!node_) return;
  node_->grad = Matrix::Zero(node_->value.rows(), node_->value.cols());
}

void Tensor::clear_grad() {
  if (node_) node_->grad.reset();
}

const std::string& Tensor::op() const {
  if (!node_) throw UsageError("access to an undefined tensor");
  return node_->op;
}

Tensor Tensor::from_op(std::string_view op, Matrix value, std::vector<Tensor> inputs,
                       BackwardRule rule) {
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
  auto node = make_node(std::move(value), needs);
  node->op = std::string(op);
  node->leaf = false;
  if (needs) {
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(std::move(in.node_));
    node->rule = std::move(rule);
  }
  return Tensor(std::move(node));
}

Tape Tape::record(const Tensor& loss) {
  Tape tape;
  if (!loss.requires_grad()) return tape;
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::shared_ptr<detail::Node>> stack{loss.node_};
  seen.insert(loss.node_.get());
  while (!stack.empty()) {
    auto node = std::move(stack.back());
    stack.pop_back();
    for (const auto& in : node->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in);
    }
    if (!node->leaf) tape.nodes_.push_back(std::move(node));
  }
  std::sort(tape.nodes_.begin(), tape.nodes_.end(),
            [](const auto& a, const auto& b) { return a->seq > b->seq; });
  return tape;
}

std::vector<std::string> Tape::ops() const {
  std::vector<std::string> out;
  out.reserve(nodes_.size());
  for (const auto& n : nodes_) out.push_back(n->op);
  return out;
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw UsageError("backward() on an undefined tensor");
  if (!loss.is_scalar()) {
    throw UsageError("backward() requires a scalar loss, got shape " +
                     std::to_string(loss.rows()) + "x" + std::to_string(loss.cols()));
  }
  if (!loss.requires_grad()) return;

  auto& root = *loss.node_;
  if (root.leaf) {
    if (!root.grad) root.grad = Matrix::Zero(1, 1);
    (*root.grad)(0, 0) += 1.0;
    return;
  }

  Tape tape = Tape::record(loss);
  root.grad = Matrix::Ones(1, 1);
  const FaultHook& hook = fault_hook();

  std::vector<Matrix*> grad_in;
  for (auto& node : tape.nodes_) {
    if (node->grad && node->rule) {
      if (!hook.op.empty() && hook.op == node->op) *node->grad *= hook.factor;
      grad_in.clear();
      for (auto& in : node->inputs) {
        if (!in->requires_grad) {
          grad_in.push_back(nullptr);
          continue;
        }
        if (!in->grad) in->grad = Matrix::Zero(in->value.rows(), in->value.cols());
        grad_in.push_back(&*in->grad);
      }
      node->rule(*node->grad, grad_in);
    }
    // Consume: the recorded operation can not be replayed.
    node->grad.reset();
    node->rule = nullptr;
    node->inputs.clear();
  }
}

namespace testing {

void corrupt_rule(std::string op, double factor) {
  fault_hook() = FaultHook{std::move(op), factor};
}

}  // namespace testing

}  // namespace bit::diff
