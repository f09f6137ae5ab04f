#ifndef M3DVG_CORE_TENSOR_HPP_
#define M3DVG_CORE_TENSOR_HPP_

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "m3dvg/core/error.hpp"

namespace m3dvg {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<>());
}

// Dense row-major float64 array of rank 1 or 2. Every constructed tensor
// holds only finite values.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.empty() || shape_.size() > 2)
      throw ShapeError("tensor rank must be 1 or 2, got shape " +
                       shape_str(shape_));
    for (std::size_t d : shape_)
      if (d == 0) throw ShapeError("zero-sized dimension in " + shape_str(shape_));
    if (shape_numel(shape_) != data_.size())
      throw ShapeError("shape " + shape_str(shape_) + " needs " +
                       std::to_string(shape_numel(shape_)) + " values, got " +
                       std::to_string(data_.size()));
    check_finite("Tensor");
  }

  static Tensor zeros(Shape shape) { return filled(std::move(shape), 0.0); }

  static Tensor filled(Shape shape, double v) {
    std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }

  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }

  static Tensor vector(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }

  static Tensor row(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({1, n}, std::move(v));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::size_t r = rows.size();
    std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  static Tensor identity(std::size_t n) {
    Tensor t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-1 tensors behave as a single row.
  std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double item() const {
    if (data_.size() != 1)
      throw ShapeError("item() on non-scalar tensor " + shape_str(shape_));
    return data_[0];
  }

  std::span<const double> row_span(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }

  Tensor reshaped(Shape s) const { return Tensor(std::move(s), data_); }

  void check_finite(std::string_view where) const {
    for (double v : data_)
      if (!std::isfinite(v))
        throw NumericError(std::string(where) + ": non-finite value in tensor " +
                           shape_str(shape_));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace m3dvg

#endif  // M3DVG_CORE_TENSOR_HPP_
