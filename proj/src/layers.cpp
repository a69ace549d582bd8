#include "spanet/layers.hpp"

#include <cmath>

#include "spanet/error.hpp"

namespace spanet {

Linear make_linear(std::size_t in, std::size_t out, bool with_bias, Rng& rng) {
  Linear l{Tensor({out, in}), std::nullopt};
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& w : l.weight.values()) w = scale * rng.normal();
  if (with_bias) l.bias = Tensor({out});
  return l;
}

Linear zeros_like(const Linear& l) {
  Linear g{Tensor::zeros_like(l.weight), std::nullopt};
  if (l.bias) g.bias = Tensor::zeros_like(*l.bias);
  return g;
}

FeatureMap linear_forward(const Linear& layer, const FeatureMap& x) {
  const std::size_t in = layer.in_features();
  const std::size_t out = layer.out_features();
  if (x.channels() != in) {
    throw DimensionMismatch("linear expects " + std::to_string(in) + " channels, got " +
                            x.shape_string());
  }
  const std::size_t hw = x.plane_size();
  FeatureMap y(out, x.height(), x.width());
  const auto w = layer.weight.values();
  const auto xs = x.values();
  auto ys = y.values();
  for (std::size_t o = 0; o < out; ++o) {
    double* yrow = ys.data() + o * hw;
    if (layer.bias) {
      const double b = (*layer.bias)[o];
      for (std::size_t p = 0; p < hw; ++p) yrow[p] = b;
    }
    for (std::size_t i = 0; i < in; ++i) {
      const double wo = w[o * in + i];
      if (wo == 0.0) continue;
      const double* xrow = xs.data() + i * hw;
      for (std::size_t p = 0; p < hw; ++p) yrow[p] += wo * xrow[p];
    }
  }
  return y;
}

FeatureMap linear_backward(const Linear& layer, const FeatureMap& x,
                           const FeatureMap& grad_out, Linear& grad) {
  const std::size_t in = layer.in_features();
  const std::size_t out = layer.out_features();
  if (x.channels() != in || grad_out.channels() != out ||
      x.plane_size() != grad_out.plane_size()) {
    throw DimensionMismatch("linear_backward shape mismatch");
  }
  const std::size_t hw = x.plane_size();
  const auto w = layer.weight.values();
  const auto xs = x.values();
  const auto gs = grad_out.values();
  auto gw = grad.weight.values();
  FeatureMap dx = FeatureMap::zeros_like(x);
  auto dxs = dx.values();
  for (std::size_t o = 0; o < out; ++o) {
    const double* grow = gs.data() + o * hw;
    if (grad.bias) {
      double s = 0.0;
      for (std::size_t p = 0; p < hw; ++p) s += grow[p];
      (*grad.bias)[o] += s;
    }
    for (std::size_t i = 0; i < in; ++i) {
      const double* xrow = xs.data() + i * hw;
      double acc = 0.0;
      for (std::size_t p = 0; p < hw; ++p) acc += grow[p] * xrow[p];
      gw[o * in + i] += acc;
      const double wo = w[o * in + i];
      double* dxrow = dxs.data() + i * hw;
      for (std::size_t p = 0; p < hw; ++p) dxrow[p] += wo * grow[p];
    }
  }
  return dx;
}

Norm make_norm(std::size_t channels, bool with_bias) {
  Norm n{Tensor({channels}, 1.0), std::nullopt, kNormEpsilon};
  if (with_bias) n.bias = Tensor({channels});
  return n;
}

Norm zeros_like(const Norm& n) {
  Norm g{Tensor::zeros_like(n.gain), std::nullopt, n.eps};
  if (n.bias) g.bias = Tensor::zeros_like(*n.bias);
  return g;
}

namespace {
std::span<const double> bias_of(const Norm& n) {
  return n.bias ? n.bias->values() : std::span<const double>{};
}
std::span<double> bias_of(Norm& n) {
  return n.bias ? n.bias->values() : std::span<double>{};
}
}  // namespace

FeatureMap channel_norm_forward(const Norm& n, const FeatureMap& x) {
  return channel_norm(x, n.gain.values(), n.eps, bias_of(n));
}

FeatureMap channel_norm_backward(const Norm& n, const FeatureMap& x,
                                 const FeatureMap& grad_out, Norm& grad) {
  return channel_norm_backward(x, n.gain.values(), n.eps, grad_out, grad.gain.values(),
                               bias_of(grad));
}

FeatureMap spatial_norm_forward(const Norm& n, const FeatureMap& x) {
  return spatial_norm(x, n.gain.values(), n.eps, bias_of(n));
}

FeatureMap spatial_norm_backward(const Norm& n, const FeatureMap& x,
                                 const FeatureMap& grad_out, Norm& grad) {
  return spatial_norm_backward(x, n.gain.values(), n.eps, grad_out, grad.gain.values(),
                               bias_of(grad));
}

}  // namespace spanet
