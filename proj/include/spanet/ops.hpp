#pragma once

#include <span>
#include <vector>

#include "spanet/tensor.hpp"

namespace spanet {

inline constexpr double kNormEpsilon = 1e-6;

// Elementwise nonlinearities. GELU uses the exact erf form.
double gelu(double x);
double gelu_derivative(double x);
double sigmoid(double x);

FeatureMap gelu(const FeatureMap& x);
std::vector<double> gelu(std::span<const double> x);
/// grad_out * gelu'(pre), elementwise.
FeatureMap gelu_backward(const FeatureMap& pre, const FeatureMap& grad_out);

/// Row-wise softmax with per-row max subtraction.
Matrix softmax_rows(const Matrix& s);

/// Normalization over all (channel, row, col) entries of one sample, i.e.
/// group normalization with a single group, followed by a per-channel gain
/// (and bias, when given). When the variance falls below `eps` the
/// normalized value is defined to be zero.
FeatureMap spatial_norm(const FeatureMap& x, std::span<const double> gain,
                        double eps = kNormEpsilon, std::span<const double> bias = {});

/// Backward of spatial_norm. Accumulates into grad_gain / grad_bias (the
/// latter may be empty) and returns the input gradient.
FeatureMap spatial_norm_backward(const FeatureMap& x, std::span<const double> gain,
                                 double eps, const FeatureMap& grad_out,
                                 std::span<double> grad_gain,
                                 std::span<double> grad_bias = {});

/// Layer normalization across channels, independently at every spatial
/// position.
FeatureMap channel_norm(const FeatureMap& x, std::span<const double> gain,
                        double eps = kNormEpsilon, std::span<const double> bias = {});

FeatureMap channel_norm_backward(const FeatureMap& x, std::span<const double> gain,
                                 double eps, const FeatureMap& grad_out,
                                 std::span<double> grad_gain,
                                 std::span<double> grad_bias = {});

FeatureMap hadamard(const FeatureMap& a, const FeatureMap& b);
FeatureMap operator+(const FeatureMap& a, const FeatureMap& b);
FeatureMap& operator+=(FeatureMap& a, const FeatureMap& b);
FeatureMap operator*(double s, const FeatureMap& a);

}  // namespace spanet
