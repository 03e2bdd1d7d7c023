#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mk {

using Shape = std::vector<std::size_t>;

/// Thrown when tensor shapes do not conform to an operation's contract.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

/// Thrown for out-of-domain values (bad labels, invalid probabilities, ...).
class ValueError : public std::runtime_error {
 public:
  explicit ValueError(const std::string& what) : std::runtime_error(what) {}
};

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Shared storage behind a Tensor. Gradient buffer is allocated lazily.
struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

/// Dense n-dimensional array of 64-bit floats with value semantics over a
/// shared buffer. Copying a Tensor aliases the storage; clone() deep-copies.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->values.size(); }
  std::size_t extent(std::size_t axis) const { return impl_->shape.at(axis); }

  std::span<double> values() { return impl_->values; }
  std::span<const double> values() const { return impl_->values; }
  double& operator[](std::size_t i) { return impl_->values[i]; }
  double operator[](std::size_t i) const { return impl_->values[i]; }

  /// Scalar extraction; throws unless size() == 1.
  double value() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
  }

  /// Gradient buffer, allocated (zero-filled) on first access.
  std::span<double> grad() {
    impl_->ensure_grad();
    return impl_->grad;
  }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }

  /// Deep copy of values; the copy starts detached (no grad, requires_grad off).
  Tensor clone() const;

  const std::shared_ptr<TensorData>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorData> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorData> impl_;
};

inline std::size_t idx2(const Shape& s, std::size_t i, std::size_t j) {
  return i * s[1] + j;
}
inline std::size_t idx4(const Shape& s, std::size_t a, std::size_t b,
                        std::size_t c, std::size_t d) {
  return ((a * s[1] + b) * s[2] + c) * s[3] + d;
}

bool all_finite(const Tensor& t);

}  // namespace mk
