#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace invprune {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

// Dense row-major tensor of doubles with an optional gradient buffer of the
// same extent. Invariant: values.size() == product(shape); grad, when
// present, matches values in size.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), values_(shape_numel(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != shape_numel(shape_))
      throw std::invalid_argument("Tensor: " + std::to_string(values_.size()) +
                                  " values for shape " + shape_str(shape_));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  double& at(std::size_t i) { return values_.at(i); }
  double at(std::size_t i) const { return values_.at(i); }

  // 2-d accessors, row-major
  double& at(std::size_t r, std::size_t c) {
    check2d(r, c);
    return values_[r * shape_[1] + c];
  }
  double at(std::size_t r, std::size_t c) const {
    check2d(r, c);
    return values_[r * shape_[1] + c];
  }

  std::size_t rows() const { return rank() == 2 ? shape_[0] : 0; }
  std::size_t cols() const { return rank() == 2 ? shape_[1] : 0; }

  bool has_grad() const { return grad_.has_value(); }
  std::vector<double>& grad() {
    if (!grad_) throw std::logic_error("Tensor: gradient buffer not allocated");
    return *grad_;
  }
  const std::vector<double>& grad() const {
    if (!grad_) throw std::logic_error("Tensor: gradient buffer not allocated");
    return *grad_;
  }
  void alloc_grad() {
    if (!grad_) grad_.emplace(values_.size(), 0.0);
  }
  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
  }
  void drop_grad() { grad_.reset(); }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

 private:
  void check2d(std::size_t r, std::size_t c) const {
    if (rank() != 2 || r >= shape_[0] || c >= shape_[1])
      throw std::out_of_range("Tensor: index (" + std::to_string(r) + "," +
                              std::to_string(c) + ") outside " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<double> values_;
  std::optional<std::vector<double>> grad_;
};

}  // namespace invprune
