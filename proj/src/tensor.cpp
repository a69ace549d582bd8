#include "spanet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "spanet/error.hpp"

namespace spanet {

namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

void require_positive(std::size_t c, std::size_t h, std::size_t w) {
  if (c == 0 || h == 0 || w == 0) {
    throw ShapeError("feature map dims must be >= 1, got " + std::to_string(c) +
                     "x" + std::to_string(h) + "x" + std::to_string(w));
  }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != element_count(shape_)) {
    throw DimensionMismatch("tensor data length " + std::to_string(data_.size()) +
                            " does not match shape " + shape_string(shape_));
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

FeatureMap::FeatureMap(std::size_t channels, std::size_t height, std::size_t width,
                       double fill)
    : channels_(channels), height_(height), width_(width) {
  require_positive(channels, height, width);
  data_.assign(channels * height * width, fill);
}

FeatureMap::FeatureMap(std::size_t channels, std::size_t height, std::size_t width,
                       std::vector<double> data)
    : channels_(channels), height_(height), width_(width), data_(std::move(data)) {
  require_positive(channels, height, width);
  if (data_.size() != channels * height * width) {
    throw DimensionMismatch("feature map data length " + std::to_string(data_.size()) +
                            " does not match " + shape_string());
  }
}

std::string FeatureMap::shape_string() const {
  return spanet::shape_string({channels_, height_, width_});
}

FeatureMap FeatureMap::slice_channels(std::size_t first, std::size_t count) const {
  if (first + count > channels_) {
    throw DimensionMismatch("channel slice out of range");
  }
  FeatureMap out(count, height_, width_);
  std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(first * plane_size()),
              count * plane_size(), out.data_.begin());
  return out;
}

void FeatureMap::assign_channels(std::size_t first, const FeatureMap& part) {
  if (part.height_ != height_ || part.width_ != width_ ||
      first + part.channels_ > channels_) {
    throw DimensionMismatch("cannot assign " + part.shape_string() + " into " +
                            shape_string());
  }
  std::copy(part.data_.begin(), part.data_.end(),
            data_.begin() + static_cast<std::ptrdiff_t>(first * plane_size()));
}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw DimensionMismatch("matrix data length mismatch");
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionMismatch("matrix product " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + " * " + std::to_string(b.rows()) +
                            "x" + std::to_string(b.cols()));
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto b_row = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

std::vector<double> operator*(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw DimensionMismatch("matrix-vector length mismatch");
  std::vector<double> y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) acc += r[j] * x[j];
    y[i] = acc;
  }
  return y;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionMismatch("matrix sum shape mismatch");
  Matrix out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return out;
}

Matrix operator-(const Matrix& a, const Matrix& b) { return a + (-1.0) * b; }

Matrix operator*(double s, const Matrix& a) {
  Matrix out = a;
  for (double& v : out.values()) v *= s;
  return out;
}

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionMismatch("max_abs_diff length mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace spanet
