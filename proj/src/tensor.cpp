#include "pyramnet/tensor.hpp"

#include "pyramnet/errors.hpp"

#include <sstream>
#include <unordered_map>
#include <utility>

namespace pyramnet {

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  return out.str();
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, bool requires_grad)
    : Tensor(shape, Array<Scalar>::Zero(numel(shape)), requires_grad) {}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Array<Scalar> values, bool requires_grad)
    : node_(std::make_shared<NodeType>()) {
  for (Index d : shape) {
    if (d < 0) throw DimensionError("negative extent in shape " + to_string(shape));
  }
  if (numel(shape) != values.size()) {
    throw DimensionError("shape " + to_string(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::full(Shape shape, Scalar value) {
  const Index n = numel(shape);
  return Tensor(std::move(shape), Array<Scalar>::Constant(n, value));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from(Shape shape, std::initializer_list<Scalar> values) {
  Array<Scalar> data(static_cast<Index>(values.size()));
  Index i = 0;
  for (Scalar v : values) data[i++] = v;
  return Tensor(std::move(shape), std::move(data));
}

template <typename Scalar>
Index Tensor<Scalar>::dim(int axis) const {
  const int r = rank();
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(shape()));
  }
  return node_->shape[static_cast<std::size_t>(a)];
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

template <typename Scalar>
ConstMatrixMap<Scalar> Tensor<Scalar>::matrix() const {
  const Index cols = rank() == 0 ? 1 : dim(-1);
  const Index rows = cols == 0 ? 0 : size() / cols;
  return ConstMatrixMap<Scalar>(node_->value.data(), rows, cols);
}

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool NoGradGuard::grad_enabled() { return g_grad_enabled; }

template <typename Scalar>
Tensor<Scalar> make_op(std::string op, Shape shape, Array<Scalar> value,
                       const std::vector<Tensor<Scalar>>& inputs,
                       std::function<void(Node<Scalar>&)> backward_fn) {
  Tensor<Scalar> out(std::move(shape), std::move(value));
  auto& node = *out.node();
  node.op = std::move(op);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node.requires_grad = true;
    node.parents.reserve(inputs.size());
    for (const auto& in : inputs) node.parents.push_back(in.node());
    node.backward = std::move(backward_fn);
  }
  return out;
}

template <typename Scalar>
std::vector<Node<Scalar>*> reverse_topological_order(const Tensor<Scalar>& root) {
  enum class Mark { kOpen, kDone };
  std::unordered_map<Node<Scalar>*, Mark> marks;
  std::vector<Node<Scalar>*> post;
  // Iterative DFS; each frame remembers the next parent to visit.
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  marks[root.node().get()] = Mark::kOpen;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Scalar>* parent = node->parents[next++].get();
      if (!parent->requires_grad) continue;
      auto it = marks.find(parent);
      if (it == marks.end()) {
        marks[parent] = Mark::kOpen;
        stack.emplace_back(parent, 0);
      } else if (it->second == Mark::kOpen) {
        throw InternalError("cycle in recorded graph at op '" + parent->op + "'");
      }
    } else {
      marks[node] = Mark::kDone;
      post.push_back(node);
      stack.pop_back();
    }
  }
  return {post.rbegin(), post.rend()};
}

template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  if (loss.size() != 1) {
    throw DimensionError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  const auto order = reverse_topological_order(loss);
  loss.node()->grad_buffer()[0] += Scalar(1);
  for (Node<Scalar>* node : order) {
    if (node->backward && node->grad.size() == node->value.size()) node->backward(*node);
  }
}

template class Tensor<float>;
template class Tensor<double>;

#define PYRAMNET_INSTANTIATE(S)                                                           \
  template Tensor<S> make_op<S>(std::string, Shape, Array<S>, const std::vector<Tensor<S>>&, \
                                std::function<void(Node<S>&)>);                           \
  template std::vector<Node<S>*> reverse_topological_order<S>(const Tensor<S>&);          \
  template void backward<S>(const Tensor<S>&);

PYRAMNET_INSTANTIATE(float)
PYRAMNET_INSTANTIATE(double)
#undef PYRAMNET_INSTANTIATE

}  // namespace pyramnet
