#include "spanet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "spanet/error.hpp"

namespace spanet {

namespace {

void require_same(const FeatureMap& a, const FeatureMap& b, const char* what) {
  if (!a.same_shape(b)) {
    throw DimensionMismatch(std::string(what) + ": " + a.shape_string() + " vs " +
                            b.shape_string());
  }
}

void require_length(std::span<const double> v, std::size_t n, const char* what) {
  if (v.size() != n) {
    throw DimensionMismatch(std::string(what) + " has length " + std::to_string(v.size()) +
                            ", expected " + std::to_string(n));
  }
}

}  // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
  return cdf + x * pdf;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

FeatureMap gelu(const FeatureMap& x) {
  FeatureMap y = FeatureMap::zeros_like(x);
  auto in = x.values();
  auto out = y.values();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = gelu(in[i]);
  return y;
}

std::vector<double> gelu(std::span<const double> x) {
  std::vector<double> y(x.size());
  std::transform(x.begin(), x.end(), y.begin(), [](double v) { return gelu(v); });
  return y;
}

FeatureMap gelu_backward(const FeatureMap& pre, const FeatureMap& grad_out) {
  require_same(pre, grad_out, "gelu_backward");
  FeatureMap g = FeatureMap::zeros_like(pre);
  auto p = pre.values();
  auto go = grad_out.values();
  auto out = g.values();
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = go[i] * gelu_derivative(p[i]);
  return g;
}

Matrix softmax_rows(const Matrix& s) {
  Matrix out(s.rows(), s.cols());
  for (std::size_t r = 0; r < s.rows(); ++r) {
    auto in = s.row(r);
    auto o = out.row(r);
    if (in.empty()) continue;
    const double mx = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] - mx);
      total += o[c];
    }
    for (double& v : o) v /= total;
  }
  return out;
}

FeatureMap spatial_norm(const FeatureMap& x, std::span<const double> gain, double eps,
                        std::span<const double> bias) {
  require_length(gain, x.channels(), "spatial_norm gain");
  if (!bias.empty()) require_length(bias, x.channels(), "spatial_norm bias");
  const auto v = x.values();
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double a : v) mean += a;
  mean /= n;
  double var = 0.0;
  for (double a : v) var += (a - mean) * (a - mean);
  var /= n;

  FeatureMap y = FeatureMap::zeros_like(x);
  const bool degenerate = var < eps;
  const double inv_std = degenerate ? 0.0 : 1.0 / std::sqrt(var + eps);
  for (std::size_t c = 0; c < x.channels(); ++c) {
    auto in = x.channel(c);
    auto out = y.channel(c);
    const double b = bias.empty() ? 0.0 : bias[c];
    for (std::size_t i = 0; i < in.size(); ++i) {
      out[i] = gain[c] * (in[i] - mean) * inv_std + b;
    }
  }
  return y;
}

FeatureMap spatial_norm_backward(const FeatureMap& x, std::span<const double> gain,
                                 double eps, const FeatureMap& grad_out,
                                 std::span<double> grad_gain, std::span<double> grad_bias) {
  require_same(x, grad_out, "spatial_norm_backward");
  require_length(gain, x.channels(), "spatial_norm gain");
  require_length(grad_gain, x.channels(), "spatial_norm grad_gain");
  const auto v = x.values();
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double a : v) mean += a;
  mean /= n;
  double var = 0.0;
  for (double a : v) var += (a - mean) * (a - mean);
  var /= n;

  if (!grad_bias.empty()) {
    require_length(grad_bias, x.channels(), "spatial_norm grad_bias");
    for (std::size_t c = 0; c < x.channels(); ++c) {
      for (double g : grad_out.channel(c)) grad_bias[c] += g;
    }
  }
  FeatureMap dx = FeatureMap::zeros_like(x);
  if (var < eps) return dx;

  const double inv_std = 1.0 / std::sqrt(var + eps);
  // dxhat = g * gain; dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
  double sum_dxhat = 0.0;
  double sum_dxhat_xhat = 0.0;
  for (std::size_t c = 0; c < x.channels(); ++c) {
    auto in = x.channel(c);
    auto go = grad_out.channel(c);
    for (std::size_t i = 0; i < in.size(); ++i) {
      const double xhat = (in[i] - mean) * inv_std;
      const double dxhat = go[i] * gain[c];
      grad_gain[c] += go[i] * xhat;
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
    }
  }
  const double m1 = sum_dxhat / n;
  const double m2 = sum_dxhat_xhat / n;
  for (std::size_t c = 0; c < x.channels(); ++c) {
    auto in = x.channel(c);
    auto go = grad_out.channel(c);
    auto out = dx.channel(c);
    for (std::size_t i = 0; i < in.size(); ++i) {
      const double xhat = (in[i] - mean) * inv_std;
      out[i] = inv_std * (go[i] * gain[c] - m1 - xhat * m2);
    }
  }
  return dx;
}

FeatureMap channel_norm(const FeatureMap& x, std::span<const double> gain, double eps,
                        std::span<const double> bias) {
  require_length(gain, x.channels(), "channel_norm gain");
  if (!bias.empty()) require_length(bias, x.channels(), "channel_norm bias");
  const std::size_t d = x.channels();
  const std::size_t hw = x.plane_size();
  const auto in = x.values();
  FeatureMap y = FeatureMap::zeros_like(x);
  auto out = y.values();
  for (std::size_t p = 0; p < hw; ++p) {
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += in[c * hw + p];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double t = in[c * hw + p] - mean;
      var += t * t;
    }
    var /= static_cast<double>(d);
    const double inv_std = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      out[c * hw + p] = gain[c] * (in[c * hw + p] - mean) * inv_std +
                        (bias.empty() ? 0.0 : bias[c]);
    }
  }
  return y;
}

FeatureMap channel_norm_backward(const FeatureMap& x, std::span<const double> gain,
                                 double eps, const FeatureMap& grad_out,
                                 std::span<double> grad_gain, std::span<double> grad_bias) {
  require_same(x, grad_out, "channel_norm_backward");
  require_length(gain, x.channels(), "channel_norm gain");
  require_length(grad_gain, x.channels(), "channel_norm grad_gain");
  if (!grad_bias.empty()) require_length(grad_bias, x.channels(), "channel_norm grad_bias");
  const std::size_t d = x.channels();
  const double dn = static_cast<double>(d);
  const std::size_t hw = x.plane_size();
  const auto in = x.values();
  const auto go = grad_out.values();
  FeatureMap dx = FeatureMap::zeros_like(x);
  auto out = dx.values();
  std::vector<double> xhat(d);
  for (std::size_t p = 0; p < hw; ++p) {
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += in[c * hw + p];
    mean /= dn;
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double t = in[c * hw + p] - mean;
      var += t * t;
    }
    var /= dn;
    const double inv_std = 1.0 / std::sqrt(var + eps);
    double m1 = 0.0;
    double m2 = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const std::size_t i = c * hw + p;
      xhat[c] = (in[i] - mean) * inv_std;
      const double dxhat = go[i] * gain[c];
      grad_gain[c] += go[i] * xhat[c];
      if (!grad_bias.empty()) grad_bias[c] += go[i];
      m1 += dxhat;
      m2 += dxhat * xhat[c];
    }
    m1 /= dn;
    m2 /= dn;
    for (std::size_t c = 0; c < d; ++c) {
      const std::size_t i = c * hw + p;
      out[i] = inv_std * (go[i] * gain[c] - m1 - xhat[c] * m2);
    }
  }
  return dx;
}

FeatureMap hadamard(const FeatureMap& a, const FeatureMap& b) {
  require_same(a, b, "hadamard");
  FeatureMap out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return out;
}

FeatureMap operator+(const FeatureMap& a, const FeatureMap& b) {
  FeatureMap out = a;
  out += b;
  return out;
}

FeatureMap& operator+=(FeatureMap& a, const FeatureMap& b) {
  require_same(a, b, "feature map sum");
  auto o = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return a;
}

FeatureMap operator*(double s, const FeatureMap& a) {
  FeatureMap out = a;
  for (double& v : out.values()) v *= s;
  return out;
}

}  // namespace spanet
