#pragma once

#include <concepts>
#include <optional>
#include <string>
#include <type_traits>

#include "spanet/ops.hpp"
#include "spanet/rng.hpp"
#include "spanet/tensor.hpp"

namespace spanet {

/// Channel-mixing linear map applied independently at every spatial
/// position (1x1 convolution). Weight shape is [out, in].
struct Linear {
  Tensor weight;
  std::optional<Tensor> bias;

  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }
};

/// Fan-in scaled normal init, N(0, 1/in).
Linear make_linear(std::size_t in, std::size_t out, bool with_bias, Rng& rng);
Linear zeros_like(const Linear& l);

FeatureMap linear_forward(const Linear& layer, const FeatureMap& x);
/// Accumulates weight/bias gradients into `grad` and returns dL/dx.
FeatureMap linear_backward(const Linear& layer, const FeatureMap& x,
                           const FeatureMap& grad_out, Linear& grad);

/// Gain (and optional bias) for either normalization flavour.
struct Norm {
  Tensor gain;
  std::optional<Tensor> bias;
  double eps = kNormEpsilon;
};

Norm make_norm(std::size_t channels, bool with_bias);
Norm zeros_like(const Norm& n);

FeatureMap channel_norm_forward(const Norm& n, const FeatureMap& x);
FeatureMap channel_norm_backward(const Norm& n, const FeatureMap& x,
                                 const FeatureMap& grad_out, Norm& grad);
FeatureMap spatial_norm_forward(const Norm& n, const FeatureMap& x);
FeatureMap spatial_norm_backward(const Norm& n, const FeatureMap& x,
                                 const FeatureMap& grad_out, Norm& grad);

template <class Self, class F>
  requires std::same_as<std::remove_const_t<Self>, Linear>
void visit_parameters(Self& layer, const std::string& prefix, F&& fn) {
  fn(prefix + ".weight", layer.weight);
  if (layer.bias) fn(prefix + ".bias", *layer.bias);
}

template <class Self, class F>
  requires std::same_as<std::remove_const_t<Self>, Norm>
void visit_parameters(Self& norm, const std::string& prefix, F&& fn) {
  fn(prefix + ".gain", norm.gain);
  if (norm.bias) fn(prefix + ".bias", *norm.bias);
}

}  // namespace spanet
