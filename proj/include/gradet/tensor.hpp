#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gradet/common.hpp"

namespace gradet {

using Shape = std::vector<Index>;

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape);

/// Raised by tensor operations on incompatible operands; the message names the op and shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
struct TensorNode {
  Shape shape;
  Vector<Scalar> value;
  Vector<Scalar> grad;  // empty until something accumulates into it
  bool requires_grad = false;

  Vector<Scalar>& grad_buffer() {
    if (grad.size() != value.size()) grad = Vector<Scalar>::Zero(value.size());
    return grad;
  }
};

/// Dense row-major tensor handle. Copies share the underlying node.
template <typename Scalar>
class Tensor {
 public:
  using Node = TensorNode<Scalar>;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor() = default;
  Tensor(Shape shape, Vector<Scalar> value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    if (numel(shape) != value.size()) {
      throw ShapeError("tensor: shape " + to_string(shape) + " does not match " + std::to_string(value.size()) +
                       " values");
    }
    node_->shape = std::move(shape);
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const Index n = numel(shape);
    return Tensor(std::move(shape), Vector<Scalar>::Zero(n), requires_grad);
  }
  static Tensor full(Shape shape, Scalar v, bool requires_grad = false) {
    const Index n = numel(shape);
    return Tensor(std::move(shape), Vector<Scalar>::Constant(n, v), requires_grad);
  }
  static Tensor from(Shape shape, std::initializer_list<Scalar> values, bool requires_grad = false) {
    Vector<Scalar> v(static_cast<Index>(values.size()));
    Index i = 0;
    for (Scalar x : values) v[i++] = x;
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }
  static Tensor scalar(Scalar v) { return Tensor(Shape{}, Vector<Scalar>::Constant(1, v)); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index ndim() const { return static_cast<Index>(node_->shape.size()); }
  /// Size of dimension i; negative i counts from the back.
  Index dim(Index i) const { return node_->shape[static_cast<std::size_t>(i < 0 ? ndim() + i : i)]; }
  Index size() const { return node_->value.size(); }

  const Vector<Scalar>& value() const { return node_->value; }
  Vector<Scalar>& value() { return node_->value; }
  const Scalar* data() const { return node_->value.data(); }
  Scalar* data() { return node_->value.data(); }
  Scalar item() const { return node_->value[0]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  const Vector<Scalar>& grad() const { return node_->grad; }
  Vector<Scalar>& grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.resize(0); }

  /// View as (prod(leading dims), last dim).
  ConstMatrixMap matrix() const { return ConstMatrixMap(data(), rows(), cols()); }
  MatrixMap matrix() { return MatrixMap(data(), rows(), cols()); }
  Index rows() const { return ndim() == 0 ? 1 : size() / dim(-1); }
  Index cols() const { return ndim() == 0 ? 1 : dim(-1); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Recording of differentiable operations in execution order.
template <typename Scalar>
class Tape {
 public:
  struct Entry {
    const char* op;
    std::shared_ptr<TensorNode<Scalar>> output;
    std::function<void()> backward;
  };

  void record(const char* op, const Tensor<Scalar>& output, std::function<void()> backward) {
    entries_.push_back(Entry{op, output.node(), std::move(backward)});
  }

  /// Seeds d(loss)/d(loss) = 1 and runs the recorded rules in reverse. Gradients of
  /// intermediate values restart from zero; leaf gradients accumulate.
  void backward(const Tensor<Scalar>& loss) {
    if (loss.size() != 1) throw ShapeError("backward: loss must be a scalar, got " + to_string(loss.shape()));
    if (!loss.requires_grad()) throw std::logic_error("backward: loss does not depend on any trainable tensor");
    for (auto& e : entries_) e.output->grad = Vector<Scalar>::Zero(e.output->value.size());
    loss.node()->grad_buffer()[0] = Scalar(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
  }

  std::size_t size() const { return entries_.size(); }
  std::span<const Entry> entries() const { return entries_; }
  void clear() { entries_.clear(); }

 private:
  std::vector<Entry> entries_;
};

template <typename Scalar>
Tape<Scalar>*& active_tape() {
  thread_local Tape<Scalar>* tape = nullptr;
  return tape;
}

/// Makes `tape` the recording target on this thread for the lifetime of the scope.
template <typename Scalar>
class TapeScope {
 public:
  explicit TapeScope(Tape<Scalar>& tape) : previous_(active_tape<Scalar>()) { active_tape<Scalar>() = &tape; }
  ~TapeScope() { active_tape<Scalar>() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<Scalar>* previous_;
};

/// Runs `loss`'s recorded rules on the active tape.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  Tape<Scalar>* tape = active_tape<Scalar>();
  if (tape == nullptr) throw std::logic_error("backward: no active tape");
  tape->backward(loss);
}

}  // namespace gradet
