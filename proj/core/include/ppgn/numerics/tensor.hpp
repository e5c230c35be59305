#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ppgn/config.hpp"

PPGN_NAMESPACE_BEGIN
namespace nn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<Scalar> data;
  std::vector<Scalar> grad;  // empty until first written
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  /// Allocates a zero gradient buffer on first use.
  std::span<Scalar> grad_buffer();
};

}  // namespace detail

/// Dense row-major tensor handle. Copies share storage; use clone() for a
/// deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  /// Throws ShapeError if values.size() does not match the shape.
  static Tensor from(Shape shape, std::vector<Scalar> values,
                     bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<Scalar> data() { return node_->data; }
  std::span<const Scalar> data() const { return node_->data; }
  Scalar item() const;
  Scalar at(std::size_t flat) const { return node_->data.at(flat); }

  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
  /// Gradient buffer, allocated (zeroed) on first access.
  std::span<Scalar> grad() { return node_->grad_buffer(); }
  std::span<const Scalar> grad() const { return node_->grad_buffer(); }
  void zero_grad();

  /// Deep copy without history.
  Tensor clone(bool requires_grad = false) const;

  detail::Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const noexcept { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Ordered record of differentiable operations executed while the tape is
/// active (see TapeScope). Backward replays it in reverse.
class Tape {
 public:
  void record(std::shared_ptr<detail::Node> node);

  /// Propagates d(loss)/d(x) to every tensor reachable on the tape.
  /// Intermediate gradients are reset first; leaf gradients accumulate.
  /// Throws InvalidInputError for a non-scalar or unrecorded loss.
  void backward(const Tensor& loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  void clear() noexcept { nodes_.clear(); }

  /// Tape active on this thread, or nullptr (inference).
  static Tape* current() noexcept;

 private:
  friend class TapeScope;
  std::vector<std::shared_ptr<detail::Node>> nodes_;
};

/// Activates a tape for the current thread until destruction.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) noexcept;
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

}  // namespace nn
PPGN_NAMESPACE_END
