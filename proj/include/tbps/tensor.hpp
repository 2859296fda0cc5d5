#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tbps/errors.hpp"

namespace tbps {

using Shape = std::vector<std::size_t>;

// One byte per row/column; non-zero marks a valid position.
using Mask = std::vector<std::uint8_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename Real>
struct TensorNode {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until first written
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this node's grad and accumulates into parents that require grad.
  std::function<void(TensorNode&)> backward;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
  }
};

// Reference-counted handle to a dense row-major array. Copies share storage;
// use detach() or clone() for a value copy. Operations in ops.hpp record
// themselves on the implicit tape whenever an input requires grad.
template <typename Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<Real> values, bool requires_grad = false);

  static Tensor scalar(Real value) { return Tensor(Shape{1}, std::vector<Real>{value}); }
  static Tensor from_node(std::shared_ptr<TensorNode<Real>> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  // 2-D view: a 1-D tensor is one row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const Real> data() const { return node_->data; }
  std::span<Real> mutable_data() { return node_->data; }
  std::vector<Real> to_vector() const { return node_->data; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const Real> grad() const { return node_->grad; }
  std::span<Real> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->data.size(), Real(0)); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  Real item() const;
  Real at(std::size_t i) const { return node_->data.at(i); }
  Real at(std::size_t r, std::size_t c) const { return node_->data.at(r * cols() + c); }

  // Same values, no graph history, no grad.
  Tensor detach() const;

  const std::shared_ptr<TensorNode<Real>>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode<Real>> node_;
};

// Disables tape recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Reverse-mode sweep from a scalar. Accumulates d(loss)/d(leaf) into every
// reachable leaf that requires grad.
template <typename Real>
void backward(const Tensor<Real>& loss);

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  std::vector<To> values(t.data().begin(), t.data().end());
  return Tensor<To>(t.shape(), std::move(values));
}

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tensor<long double>;

}  // namespace tbps
