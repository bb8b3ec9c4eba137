#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace icl::nd {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major float64 array. Values are immutable once constructed, so
/// copies share storage and a Tensor may be read from any number of threads.
/// A rank-0 shape `{}` denotes a scalar holding one value.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_->size(); }
  std::span<const double> data() const { return *data_; }

  double operator[](std::size_t flat_index) const { return (*data_)[flat_index]; }
  double at(std::size_t row, std::size_t col) const;
  double item() const;

  // Same storage, new shape with equal element count.
  Tensor reshaped(Shape shape) const;
  std::vector<double> to_vector() const { return *data_; }

  // Bitwise equality of shape and values.
  bool identical(const Tensor& other) const;

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
};

// Largest |a - b| over matching entries; shapes must agree.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace icl::nd
