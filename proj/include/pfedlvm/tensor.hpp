#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pfedlvm {

/// Raised for malformed shapes, layer wiring, or configuration values.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an operation is invoked outside its contract, e.g. updating
/// frozen parameters.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised when a numeric routine produces NaN/Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }

  // 4-D accessor for NCHW tensors.
  double& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  Tensor reshaped(Shape shape) const;
  void fill(double v);
  bool all_finite() const;

  /// Bitwise equality of shape and contents.
  bool identical(const Tensor& other) const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Rows [begin, end) along axis 0.
Tensor slice_batch(const Tensor& t, std::size_t begin, std::size_t end);

/// Concatenation along axis 0; all trailing dims must agree.
Tensor concat_batch(std::span<const Tensor> parts);

/// Concatenation along axis 1 of NCHW tensors.
Tensor concat_channels(std::span<const Tensor> parts);

/// Elementwise mean of equally shaped tensors.
Tensor mean_of(std::span<const Tensor> parts);

void require_same_shape(const Tensor& a, const Tensor& b, const std::string& what);

}  // namespace pfedlvm
