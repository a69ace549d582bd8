#include "spanet/conv_support.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "spanet/error.hpp"

namespace spanet {

KernelSpec::KernelSpec(int m, std::vector<double> w) : size(m), weights(std::move(w)) {
  if (m < 1 || m % 2 == 0) throw ShapeError("kernel size must be odd and >= 1");
  if (weights.size() != static_cast<std::size_t>(m * m)) {
    throw DimensionMismatch("kernel of size " + std::to_string(m) + " needs " +
                            std::to_string(m * m) + " weights");
  }
}

double KernelSpec::sum() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }

KernelSpec KernelSpec::identity(int m) {
  std::vector<double> w(static_cast<std::size_t>(m * m), 0.0);
  w[static_cast<std::size_t>((m / 2) * m + m / 2)] = 1.0;
  return KernelSpec(m, std::move(w));
}

KernelSpec KernelSpec::constant(int m, double value) {
  return KernelSpec(m, std::vector<double>(static_cast<std::size_t>(m * m), value));
}

KernelSpec KernelSpec::random(int m, Rng& rng) {
  std::vector<double> w(static_cast<std::size_t>(m * m));
  for (double& v : w) v = rng.normal();
  return KernelSpec(m, std::move(w));
}

std::size_t conv_output_extent(std::size_t n, std::size_t kernel, std::size_t stride,
                               std::size_t padding) {
  if (stride == 0) throw ShapeError("stride must be >= 1");
  if (n + 2 * padding < kernel) throw ShapeError("kernel larger than padded input");
  return (n + 2 * padding - kernel) / stride + 1;
}

void SparseMatrix::append_row(std::span<const std::size_t> indices,
                              std::span<const double> values) {
  if (indices.size() != values.size()) throw DimensionMismatch("sparse row length mismatch");
  if (offsets_.size() > rows_) throw DimensionMismatch("sparse matrix already has all rows");
  indices_.insert(indices_.end(), indices.begin(), indices.end());
  values_.insert(values_.end(), values.begin(), values.end());
  offsets_.push_back(indices_.size());
}

std::vector<double> SparseMatrix::multiply(std::span<const double> x) const {
  if (x.size() != cols_) {
    throw DimensionMismatch("sparse multiply: vector length " + std::to_string(x.size()) +
                            ", expected " + std::to_string(cols_));
  }
  std::vector<double> y(rows_, 0.0);
  for (std::size_t r = 0; r + 1 < offsets_.size(); ++r) {
    double acc = 0.0;
    for (std::size_t k = offsets_[r]; k < offsets_[r + 1]; ++k) acc += values_[k] * x[indices_[k]];
    y[r] = acc;
  }
  return y;
}

Matrix SparseMatrix::to_dense() const {
  Matrix d(rows_, cols_);
  for (std::size_t r = 0; r + 1 < offsets_.size(); ++r)
    for (std::size_t k = offsets_[r]; k < offsets_[r + 1]; ++k) d(r, indices_[k]) += values_[k];
  return d;
}

std::size_t BasisMatrix::nonzeros() const {
  return static_cast<std::size_t>(
      std::count_if(column.begin(), column.end(), [](const auto& c) { return c.has_value(); }));
}

Matrix BasisMatrix::to_dense() const {
  Matrix d(rows, cols);
  for (std::size_t a = 0; a < rows; ++a)
    if (column[a]) d(a, *column[a]) = 1.0;
  return d;
}

BasisMatrix build_basis(std::size_t z, int m, std::size_t height, std::size_t width) {
  if (m < 1 || m % 2 == 0) throw ShapeError("kernel size must be odd and >= 1");
  if (z >= static_cast<std::size_t>(m * m)) throw DimensionMismatch("basis index out of range");
  const long p = (m - 1) / 2;
  const long r = static_cast<long>(z) / m;
  const long t = static_cast<long>(z) % m;
  const long h = static_cast<long>(height);
  const long w = static_cast<long>(width);
  BasisMatrix b{height * width, height * width, {}};
  b.column.resize(height * width);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      const long iy = y + r - p;
      const long ix = x + t - p;
      if (0 <= iy && iy < h && 0 <= ix && ix < w) {
        b.column[static_cast<std::size_t>(y * w + x)] = static_cast<std::size_t>(iy * w + ix);
      }
    }
  }
  return b;
}

ConvSupport assemble_support(const KernelSpec& kernel, std::size_t height, std::size_t width) {
  const std::size_t n = height * width;
  const std::size_t taps = kernel.weights.size();
  std::vector<BasisMatrix> bases;
  bases.reserve(taps);
  for (std::size_t z = 0; z < taps; ++z) bases.push_back(build_basis(z, kernel.size, height, width));

  // Distinct taps land on distinct input columns within a row, so every
  // stored entry is exactly one k^(z).
  SparseMatrix c(n, n);
  std::vector<std::pair<std::size_t, double>> row;
  std::vector<std::size_t> idx;
  std::vector<double> val;
  for (std::size_t a = 0; a < n; ++a) {
    row.clear();
    for (std::size_t z = 0; z < taps; ++z) {
      if (const auto& col = bases[z].column[a]) row.emplace_back(*col, kernel.weights[z]);
    }
    std::sort(row.begin(), row.end());
    idx.clear();
    val.clear();
    for (const auto& [col, v] : row) {
      idx.push_back(col);
      val.push_back(v);
    }
    c.append_row(idx, val);
  }
  return ConvSupport{std::move(c), std::move(bases), kernel, height, width};
}

std::vector<double> conv_via_support(const ConvSupport& support, std::span<const double> x) {
  return support.matrix.multiply(x);
}

std::vector<double> direct_conv(std::span<const double> plane, std::size_t height,
                                std::size_t width, const KernelSpec& kernel) {
  if (plane.size() != height * width) {
    throw DimensionMismatch("direct_conv plane length does not match H*W");
  }
  const long m = kernel.size;
  const long p = (m - 1) / 2;
  const long h = static_cast<long>(height);
  const long w = static_cast<long>(width);
  std::vector<double> out(plane.size(), 0.0);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      double acc = 0.0;
      for (long r = 0; r < m; ++r) {
        const long iy = y - p + r;
        if (iy < 0 || iy >= h) continue;
        for (long t = 0; t < m; ++t) {
          const long ix = x - p + t;
          if (ix < 0 || ix >= w) continue;
          acc += kernel.weights[static_cast<std::size_t>(r * m + t)] *
                 plane[static_cast<std::size_t>(iy * w + ix)];
        }
      }
      out[static_cast<std::size_t>(y * w + x)] = acc;
    }
  }
  return out;
}

DepthwiseConv make_depthwise(std::size_t channels, int m, bool with_bias, Rng& rng) {
  if (m < 1 || m % 2 == 0) throw ShapeError("depthwise kernel size must be odd and >= 1");
  const auto mm = static_cast<std::size_t>(m);
  DepthwiseConv conv{Tensor({channels, mm, mm}), std::nullopt};
  const double scale = 1.0 / static_cast<double>(m);  // fan-in m*m
  for (double& v : conv.weight.values()) v = scale * rng.normal();
  if (with_bias) conv.bias = Tensor({channels});
  return conv;
}

DepthwiseConv zeros_like(const DepthwiseConv& conv) {
  DepthwiseConv g{Tensor::zeros_like(conv.weight), std::nullopt};
  if (conv.bias) g.bias = Tensor::zeros_like(*conv.bias);
  return g;
}

FeatureMap depthwise_forward(const DepthwiseConv& conv, const FeatureMap& x) {
  if (conv.channels() != x.channels()) {
    throw DimensionMismatch("depthwise conv has " + std::to_string(conv.channels()) +
                            " channels, input is " + x.shape_string());
  }
  const long m = conv.kernel_size();
  const long p = (m - 1) / 2;
  const long h = static_cast<long>(x.height());
  const long w = static_cast<long>(x.width());
  FeatureMap y = FeatureMap::zeros_like(x);
  const auto kw = conv.weight.values();
  for (std::size_t c = 0; c < x.channels(); ++c) {
    const auto in = x.channel(c);
    auto out = y.channel(c);
    const double* k = kw.data() + c * static_cast<std::size_t>(m * m);
    const double b = conv.bias ? (*conv.bias)[c] : 0.0;
    for (long yy = 0; yy < h; ++yy) {
      for (long xx = 0; xx < w; ++xx) {
        double acc = b;
        for (long r = 0; r < m; ++r) {
          const long iy = yy - p + r;
          if (iy < 0 || iy >= h) continue;
          for (long t = 0; t < m; ++t) {
            const long ix = xx - p + t;
            if (ix < 0 || ix >= w) continue;
            acc += k[r * m + t] * in[static_cast<std::size_t>(iy * w + ix)];
          }
        }
        out[static_cast<std::size_t>(yy * w + xx)] = acc;
      }
    }
  }
  return y;
}

FeatureMap depthwise_backward(const DepthwiseConv& conv, const FeatureMap& x,
                              const FeatureMap& grad_out, DepthwiseConv& grad) {
  if (!x.same_shape(grad_out) || conv.channels() != x.channels()) {
    throw DimensionMismatch("depthwise_backward shape mismatch");
  }
  const long m = conv.kernel_size();
  const long p = (m - 1) / 2;
  const long h = static_cast<long>(x.height());
  const long w = static_cast<long>(x.width());
  FeatureMap dx = FeatureMap::zeros_like(x);
  const auto kw = conv.weight.values();
  auto gw = grad.weight.values();
  for (std::size_t c = 0; c < x.channels(); ++c) {
    const auto in = x.channel(c);
    const auto go = grad_out.channel(c);
    auto din = dx.channel(c);
    const double* k = kw.data() + c * static_cast<std::size_t>(m * m);
    double* gk = gw.data() + c * static_cast<std::size_t>(m * m);
    if (grad.bias) {
      double s = 0.0;
      for (double g : go) s += g;
      (*grad.bias)[c] += s;
    }
    for (long yy = 0; yy < h; ++yy) {
      for (long xx = 0; xx < w; ++xx) {
        const double g = go[static_cast<std::size_t>(yy * w + xx)];
        if (g == 0.0) continue;
        for (long r = 0; r < m; ++r) {
          const long iy = yy - p + r;
          if (iy < 0 || iy >= h) continue;
          for (long t = 0; t < m; ++t) {
            const long ix = xx - p + t;
            if (ix < 0 || ix >= w) continue;
            const auto idx = static_cast<std::size_t>(iy * w + ix);
            gk[r * m + t] += g * in[idx];
            din[idx] += g * k[r * m + t];
          }
        }
      }
    }
  }
  return dx;
}

}  // namespace spanet
