#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace pyramnet {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename Scalar>
using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

// One recorded value in the differentiation graph. `backward` reads `grad`
// and accumulates into the grads of `parents`.
template <typename Scalar>
struct Node {
  Shape shape;
  Array<Scalar> value;
  Array<Scalar> grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Array<Scalar>& grad_buffer() {
    if (grad.size() != value.size()) grad = Array<Scalar>::Zero(value.size());
    return grad;
  }
};

/// Dense row-major tensor handle. Copies share the underlying node.
template <typename Scalar>
class Tensor {
 public:
  using NodeType = Node<Scalar>;

  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, Array<Scalar> values, bool requires_grad = false);
  explicit Tensor(std::shared_ptr<NodeType> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, Scalar value);
  static Tensor ones(Shape shape) { return full(std::move(shape), Scalar(1)); }
  static Tensor scalar(Scalar value) { return full({1}, value); }
  static Tensor from(Shape shape, std::initializer_list<Scalar> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  // Negative axes count from the back.
  Index dim(int axis) const;
  Index size() const { return node_->value.size(); }

  const Array<Scalar>& value() const { return node_->value; }
  // Direct write access; only for leaves (parameters, finite-difference probes).
  Array<Scalar>& mutable_value() { return node_->value; }
  Scalar item() const;

  // View as a (size / last-dim) x last-dim matrix.
  ConstMatrixMap<Scalar> matrix() const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool flag) {
    node_->requires_grad = flag;
    return *this;
  }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  const Array<Scalar>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.resize(0); }

  const std::string& op() const { return node_->op; }
  const std::shared_ptr<NodeType>& node() const { return node_; }

  /// Fresh leaf holding a copy of the value, disconnected from the graph.
  Tensor detach() const { return Tensor(shape(), value()); }

 private:
  std::shared_ptr<NodeType> node_;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool grad_enabled();

 private:
  bool previous_;
};

/// Records an op result. When no input requires a gradient (or recording is
/// disabled) the result is a plain leaf and `backward` is dropped.
template <typename Scalar>
Tensor<Scalar> make_op(std::string op, Shape shape, Array<Scalar> value,
                       const std::vector<Tensor<Scalar>>& inputs,
                       std::function<void(Node<Scalar>&)> backward);

/// Reverse sweep from a scalar loss. Gradients accumulate, so call
/// zero_grad() on leaves between steps.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss);

/// Nodes reachable from `root` in the order backward() visits them
/// (root first). Throws InternalError on a cycle.
template <typename Scalar>
std::vector<Node<Scalar>*> reverse_topological_order(const Tensor<Scalar>& root);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace pyramnet
