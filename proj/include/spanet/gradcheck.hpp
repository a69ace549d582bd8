#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace spanet {

inline constexpr double kGradStep = 1e-5;
inline constexpr double kGradEpsilon = 1e-12;

using LossFn = std::function<double(std::span<const double>)>;

/// Central-difference gradient of `loss` at `point`: 2 * |point| evaluations.
/// Throws NonDeterministicLoss if two evaluations at `point` disagree.
std::vector<double> finite_diff(const LossFn& loss, std::span<const double> point,
                                double step = kGradStep);

/// ||analytic - numeric|| / max(||numeric||, eps).
double relative_error(std::span<const double> analytic, std::span<const double> numeric,
                      double eps = kGradEpsilon);

struct GradEntry {
  std::string name;
  double relative_error = 0.0;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  std::size_t coordinates = 0;
};

struct GradReport {
  double step = kGradStep;
  std::vector<GradEntry> entries;
  std::size_t checks = 0;  // loss evaluations spent on finite differences

  void add(std::string name, std::span<const double> analytic, std::span<const double> numeric);
  double max_relative_error() const;
  bool passes(double tolerance) const { return max_relative_error() <= tolerance; }
};

nlohmann::json to_json(const GradReport& report);

}  // namespace spanet
