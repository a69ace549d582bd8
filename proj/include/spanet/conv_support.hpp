#pragma once

#include <concepts>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "spanet/rng.hpp"
#include "spanet/tensor.hpp"

namespace spanet {

/// Odd m x m single-channel kernel with stride 1 and "same" padding
/// p = (m-1)/2. Weights are indexed z = r*m + t.
struct KernelSpec {
  int size = 1;
  std::vector<double> weights{1.0};

  KernelSpec() = default;
  KernelSpec(int m, std::vector<double> w);

  std::size_t padding() const { return static_cast<std::size_t>((size - 1) / 2); }
  double weight(int r, int t) const { return weights[static_cast<std::size_t>(r * size + t)]; }
  double sum() const;

  static KernelSpec identity(int m);
  static KernelSpec constant(int m, double value);
  static KernelSpec random(int m, Rng& rng);
};

/// Output extent of a strided convolution: floor((n + 2p - m)/s) + 1.
std::size_t conv_output_extent(std::size_t n, std::size_t kernel, std::size_t stride,
                               std::size_t padding);

/// Compressed sparse row matrix.
class SparseMatrix {
 public:
  SparseMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), offsets_{0} {}

  /// Rows must be appended in order; `indices` strictly increasing.
  void append_row(std::span<const std::size_t> indices, std::span<const double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t stored() const noexcept { return values_.size(); }

  std::span<const std::size_t> row_indices(std::size_t r) const {
    return {indices_.data() + offsets_[r], offsets_[r + 1] - offsets_[r]};
  }
  std::span<const double> row_values(std::size_t r) const {
    return {values_.data() + offsets_[r], offsets_[r + 1] - offsets_[r]};
  }

  std::vector<double> multiply(std::span<const double> x) const;
  Matrix to_dense() const;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> indices_;
  std::vector<double> values_;
};

/// Binary basis support B^(z): each output row has at most one input
/// column, stored as `column[a]` (nullopt when the tap falls in padding).
struct BasisMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::optional<std::size_t>> column;

  std::size_t nonzeros() const;
  Matrix to_dense() const;
};

BasisMatrix build_basis(std::size_t z, int m, std::size_t height, std::size_t width);

/// C = sum_z k^(z) B^(z), together with the bases that assembled it.
struct ConvSupport {
  SparseMatrix matrix;
  std::vector<BasisMatrix> bases;
  KernelSpec kernel;
  std::size_t height;
  std::size_t width;
};

ConvSupport assemble_support(const KernelSpec& kernel, std::size_t height, std::size_t width);

std::vector<double> conv_via_support(const ConvSupport& support, std::span<const double> x);

/// Sliding-window cross-correlation with zero padding, no bias.
std::vector<double> direct_conv(std::span<const double> plane, std::size_t height,
                                std::size_t width, const KernelSpec& kernel);

/// Per-channel m x m convolution (no cross-channel mixing). Weight shape
/// is [channels, m, m].
struct DepthwiseConv {
  Tensor weight;
  std::optional<Tensor> bias;

  std::size_t channels() const { return weight.dim(0); }
  int kernel_size() const { return static_cast<int>(weight.dim(1)); }
};

DepthwiseConv make_depthwise(std::size_t channels, int m, bool with_bias, Rng& rng);
DepthwiseConv zeros_like(const DepthwiseConv& conv);

FeatureMap depthwise_forward(const DepthwiseConv& conv, const FeatureMap& x);
FeatureMap depthwise_backward(const DepthwiseConv& conv, const FeatureMap& x,
                              const FeatureMap& grad_out, DepthwiseConv& grad);

template <class Self, class F>
  requires std::same_as<std::remove_const_t<Self>, DepthwiseConv>
void visit_parameters(Self& conv, const std::string& prefix, F&& fn) {
  fn(prefix + ".weight", conv.weight);
  if (conv.bias) fn(prefix + ".bias", *conv.bias);
}

}  // namespace spanet
