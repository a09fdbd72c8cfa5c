#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace stf {

using Shape = std::vector<std::size_t>;

/// Raised for any incompatible tensor shapes passed to an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an API is used in a way its contract forbids (non-scalar
/// loss, backward called twice, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major tensor of doubles.
///
/// A Tensor is a handle: copies alias the same storage, the way autodiff
/// graphs need them to. Use clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), requires_grad);
  }
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false) {
    return full({1}, value, requires_grad);
  }

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return impl().shape.size(); }
  std::size_t numel() const { return impl().data.size(); }

  std::span<const double> data() const { return impl().data; }
  std::span<double> mutable_data() { return impl().data; }
  double operator[](std::size_t i) const { return impl().data[i]; }
  double& operator[](std::size_t i) { return impl().data[i]; }
  /// Value of a single-element tensor.
  double item() const;

  bool requires_grad() const { return impl().requires_grad; }
  void set_requires_grad(bool value) { impl().requires_grad = value; }

  bool has_grad() const { return !impl().grad.empty(); }
  std::span<const double> grad() const { return impl().grad; }
  /// Gradient buffer, allocated (zero-filled) on first access.
  std::span<double> grad_mut();
  void zero_grad();
  void drop_grad() { impl().grad.clear(); }

  Tensor clone() const;
  bool all_finite() const;
  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  Impl& impl();
  const Impl& impl() const;

  std::shared_ptr<Impl> impl_;
};

/// Records differentiable operations for one forward pass.
///
/// backward() replays the recorded rules in exact reverse order and can be
/// called at most once per tape.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  /// Records one node. Nodes whose output does not require grad are skipped.
  void record(const Tensor& output, BackwardFn backward);
  void backward(const Tensor& loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

 private:
  struct Node {
    Tensor output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

/// True when any of the inputs participates in differentiation.
bool any_requires_grad(std::initializer_list<const Tensor*> inputs);

}  // namespace stf
