#include "ppgn/numerics/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "ppgn/errors.hpp"

PPGN_NAMESPACE_BEGIN
namespace nn {

namespace {
thread_local Tape* g_current_tape = nullptr;
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << "]";
  return out.str();
}

std::span<Scalar> detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), Scalar(0));
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Scalar(0), requires_grad);
}

Tensor Tensor::full(Shape shape, Scalar value, bool requires_grad) {
  auto node = std::make_shared<detail::Node>();
  node->data.assign(nn::numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<Scalar> values, bool requires_grad) {
  if (values.size() != nn::numel(shape)) {
    std::ostringstream msg;
    msg << "tensor of shape " << shape_str(shape) << " needs " << nn::numel(shape)
        << " values, got " << values.size();
    throw ShapeError(msg.str());
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(Scalar value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Scalar Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  }
  return node_->data[0];
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) {
    std::fill(node_->grad.begin(), node_->grad.end(), Scalar(0));
  }
}

Tensor Tensor::clone(bool requires_grad) const {
  return from(shape(), node_->data, requires_grad);
}

void Tape::record(std::shared_ptr<detail::Node> node) {
  nodes_.push_back(std::move(node));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw InvalidInputError("backward() needs a scalar loss, got shape " +
                            (loss.defined() ? shape_str(loss.shape()) : "<null>"));
  }
  const auto it = std::find(nodes_.rbegin(), nodes_.rend(), loss.node_ptr());
  if (it == nodes_.rend()) {
    throw InvalidInputError("backward(): loss was not produced on this tape");
  }
  for (auto& n : nodes_) {
    if (!n->is_leaf) n->grad.clear();
  }
  loss.node()->grad_buffer()[0] = Scalar(1);
  // Nodes recorded after the loss cannot contribute to it.
  for (auto node = it; node != nodes_.rend(); ++node) {
    detail::Node& n = **node;
    if (n.grad.empty() || !n.backward) continue;
    n.backward(n);
  }
}

Tape* Tape::current() noexcept { return g_current_tape; }

TapeScope::TapeScope(Tape& tape) noexcept : previous_(g_current_tape) {
  g_current_tape = &tape;
}

TapeScope::~TapeScope() { g_current_tape = previous_; }

}  // namespace nn
PPGN_NAMESPACE_END
