#pragma once

#include <complex>
#include <span>
#include <vector>

namespace spanet {

/// One complex H x W plane, row-major.
struct ComplexMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::complex<double>> data;

  ComplexMap() = default;
  ComplexMap(std::size_t h, std::size_t w) : height(h), width(w), data(h * w) {}

  std::complex<double>& operator()(std::size_t y, std::size_t x) { return data[y * width + x]; }
  std::complex<double> operator()(std::size_t y, std::size_t x) const {
    return data[y * width + x];
  }
};

// Unnormalized forward 2D DFT; the inverse carries the 1/(H*W) factor.
// Separable row/column passes with exact twiddles (index reduced mod n).
ComplexMap dft2(std::span<const double> plane, std::size_t height, std::size_t width);
ComplexMap dft2(const ComplexMap& x);
ComplexMap to_complex(std::span<const double> plane, std::size_t height, std::size_t width);
ComplexMap idft2(const ComplexMap& x);

std::vector<double> real_part(const ComplexMap& x);
double max_abs_imag(const ComplexMap& x);

}  // namespace spanet
