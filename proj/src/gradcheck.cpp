#include "spanet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "spanet/error.hpp"
#include "spanet/tensor.hpp"

namespace spanet {

std::vector<double> finite_diff(const LossFn& loss, std::span<const double> point, double step) {
  std::vector<double> x(point.begin(), point.end());
  const double first = loss(x);
  const double second = loss(x);
  if (std::memcmp(&first, &second, sizeof(double)) != 0) {
    throw NonDeterministicLoss("loss returned " + std::to_string(first) + " then " +
                               std::to_string(second) + " at the same point");
  }
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double plus = loss(x);
    x[i] = saved - step;
    const double minus = loss(x);
    x[i] = saved;
    grad[i] = (plus - minus) / (2.0 * step);
  }
  return grad;
}

double relative_error(std::span<const double> analytic, std::span<const double> numeric,
                      double eps) {
  if (analytic.size() != numeric.size()) throw DimensionMismatch("gradient length mismatch");
  double diff = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double d = analytic[i] - numeric[i];
    diff += d * d;
  }
  return std::sqrt(diff) / std::max(l2_norm(numeric), eps);
}

void GradReport::add(std::string name, std::span<const double> analytic,
                     std::span<const double> numeric) {
  entries.push_back(GradEntry{std::move(name), relative_error(analytic, numeric),
                              l2_norm(analytic), l2_norm(numeric), numeric.size()});
  checks += 2 * numeric.size();
}

double GradReport::max_relative_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.relative_error);
  return m;
}

nlohmann::json to_json(const GradReport& report) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : report.entries) {
    entries.push_back({{"name", e.name},
                       {"relative_error", e.relative_error},
                       {"analytic_norm", e.analytic_norm},
                       {"numeric_norm", e.numeric_norm},
                       {"coordinates", e.coordinates}});
  }
  return {{"step", report.step},
          {"checks", report.checks},
          {"max_relative_error", report.max_relative_error()},
          {"entries", entries}};
}

}  // namespace spanet
