#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace eegscribe::nx {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// Every extent is positive and `data().size() == product(shape)`. The
/// gradient buffer, once allocated, always matches the data size.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
  /// 1-D tensor from a list of values.
  static Tensor vector(std::initializer_list<double> values);
  /// 2-D tensor from nested rows.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  /// Same data viewed under a new shape of equal element count.
  Tensor reshaped(Shape shape) const;

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool flag) { requires_grad_ = flag; }

  bool has_grad() const noexcept { return !grad_.empty(); }
  /// Gradient buffer, allocated (zero-filled) on first access.
  std::span<double> grad();
  std::span<const double> grad() const noexcept { return grad_; }
  void zero_grad();
  void drop_grad() { grad_.clear(); }

  bool all_finite() const noexcept;
  /// Throws ContractError naming `what` when a NaN/Inf is present.
  void require_finite(const char* what) const;

  /// Bitwise comparison of shape and data (gradients ignored).
  bool identical(const Tensor& other) const noexcept;

 private:
  Shape shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
  std::vector<double> grad_;
};

}  // namespace eegscribe::nx
