#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "riskrank/common.hpp"

namespace riskrank {

// Dense row-major array of 64-bit floats. Rank 0 (scalar), 1 and 2 are the
// working set; higher ranks are representable but no op produces them.
// Tensors are immutable values once handed to the graph.
class Tensor {
 public:
  Tensor() : shape_{}, data_(1, 0.0) {}

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> values)
      : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != count(shape_)) {
      throw numeric_error("tensor: value count " + std::to_string(data_.size()) +
                          " does not match shape product " + std::to_string(count(shape_)));
    }
    if (checked_mode()) ensure_finite("construct");
  }

  static Tensor scalar(double v) {
    Tensor t;
    t.data_[0] = v;
    if (checked_mode()) t.ensure_finite("scalar");
    return t;
  }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor ones(std::vector<std::size_t> shape) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), 1.0);
    return t;
  }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    if (checked_mode()) t.ensure_finite("full");
    return t;
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  static Tensor row_vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
  }

  static Tensor column_vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n, 1}, std::move(values));
  }

  std::size_t rank() const { return shape_.size(); }
  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool is_scalar() const { return shape_.empty(); }

  std::size_t rows() const { return rank() >= 1 ? shape_[0] : 1; }
  std::size_t cols() const { return rank() >= 2 ? shape_[1] : (rank() == 1 ? 1 : 1); }

  double value() const { return data_[0]; }

  double& at(std::size_t i) { return data_[i]; }
  double at(std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  double& operator()(std::size_t r, std::size_t c) { return at(r, c); }
  double operator()(std::size_t r, std::size_t c) const { return at(r, c); }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  void ensure_finite(const std::string& where) const {
    if (!all_finite()) {
      throw numeric_error("non-finite value detected in " + where);
    }
  }

  std::string shape_string() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) os << 'x';
      os << shape_[i];
    }
    os << ']';
    return os.str();
  }

 private:
  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
      if (d == 0) throw numeric_error("tensor: zero-sized dimension");
      n *= d;
    }
    return n;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline bool bit_identical(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.at(i) != b.at(i)) return false;
  }
  return true;
}

}  // namespace riskrank
