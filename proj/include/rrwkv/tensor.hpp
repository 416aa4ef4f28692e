#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rrwkv {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool has_grad = false;
  bool requires_grad = false;

  // Allocates a zeroed gradient buffer on first use and returns it.
  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense row-major tensor of 64-bit floats with optional gradient tracking.
///
/// A Tensor is a shared handle: copies alias the same storage. Values produced
/// by operations are treated as immutable; only the gradient buffer changes
/// after creation.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double operator[](std::size_t i) const { return data()[i]; }
  double item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Deep copy without gradient history.
  Tensor detach() const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

namespace autograd {

/// Ordered record of executed differentiable operations. One tape per thread;
/// backward() replays the recorded closures in exact reverse order and clears
/// the tape.
class Tape {
 public:
  void record(std::function<void()> backward_fn);
  void run_backward();
  void clear();
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<std::function<void()>> entries_;
};

Tape& tape();

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// True when grad mode is on and any input requires grad.
bool should_record(std::initializer_list<const Tensor*> inputs);

/// Seeds d(root)/d(root) = 1 (root must be a scalar) and back-propagates.
void backward(const Tensor& root);

/// Back-propagates an arbitrary seed gradient of root's shape.
void backward(const Tensor& root, std::span<const double> seed);

}  // namespace autograd

}  // namespace rrwkv
