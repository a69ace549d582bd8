#include "spanet/dft.hpp"

#include <cmath>
#include <numbers>

#include "spanet/error.hpp"

namespace spanet {

namespace {

using cplx = std::complex<double>;

std::vector<cplx> twiddles(std::size_t n, double sign) {
  std::vector<cplx> t(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>(k) /
                         static_cast<double>(n);
    t[k] = {std::cos(angle), std::sin(angle)};
  }
  return t;
}

// In-place 1D DFT of `n` samples spaced by `stride`.
void dft_1d(cplx* base, std::size_t n, std::size_t stride, const std::vector<cplx>& tw,
            std::vector<cplx>& scratch) {
  scratch.assign(n, cplx{});
  for (std::size_t k = 0; k < n; ++k) {
    cplx acc{};
    std::size_t idx = 0;
    for (std::size_t j = 0; j < n; ++j) {
      acc += base[j * stride] * tw[idx];
      idx += k;
      if (idx >= n) idx -= n;
    }
    scratch[k] = acc;
  }
  for (std::size_t k = 0; k < n; ++k) base[k * stride] = scratch[k];
}

ComplexMap transform(ComplexMap x, double sign) {
  if (x.height == 0 || x.width == 0) throw ShapeError("dft2 needs H, W >= 1");
  const auto tw_w = twiddles(x.width, sign);
  const auto tw_h = twiddles(x.height, sign);
  std::vector<cplx> scratch;
  for (std::size_t y = 0; y < x.height; ++y) {
    dft_1d(x.data.data() + y * x.width, x.width, 1, tw_w, scratch);
  }
  for (std::size_t c = 0; c < x.width; ++c) {
    dft_1d(x.data.data() + c, x.height, x.width, tw_h, scratch);
  }
  return x;
}

}  // namespace

ComplexMap dft2(std::span<const double> plane, std::size_t height, std::size_t width) {
  if (plane.size() != height * width) {
    throw DimensionMismatch("dft2 plane length does not match H*W");
  }
  return transform(to_complex(plane, height, width), -1.0);
}

ComplexMap dft2(const ComplexMap& x) { return transform(x, -1.0); }

ComplexMap to_complex(std::span<const double> plane, std::size_t height, std::size_t width) {
  if (plane.size() != height * width) {
    throw DimensionMismatch("plane length does not match H*W");
  }
  ComplexMap x(height, width);
  for (std::size_t i = 0; i < plane.size(); ++i) x.data[i] = plane[i];
  return x;
}

ComplexMap idft2(const ComplexMap& x) {
  ComplexMap y = transform(x, +1.0);
  const double scale = 1.0 / static_cast<double>(x.height * x.width);
  for (auto& v : y.data) v *= scale;
  return y;
}

std::vector<double> real_part(const ComplexMap& x) {
  std::vector<double> r(x.data.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = x.data[i].real();
  return r;
}

double max_abs_imag(const ComplexMap& x) {
  double m = 0.0;
  for (const auto& v : x.data) m = std::max(m, std::abs(v.imag()));
  return m;
}

}  // namespace spanet
