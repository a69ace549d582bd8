#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "spanet/backbone.hpp"
#include "spanet/gradcheck.hpp"
#include "spanet/spam.hpp"

namespace spanet {

// Randomized oracle suites. Each returns a JSON report with at least
// {"suite", "seed", "instances", "passed", "max_error", "tolerance"} and, on
// failure, "first_failure" holding the offending case.

inline constexpr double kConvTolerance = 1e-12;
inline constexpr double kAttentionTolerance = 1e-10;
inline constexpr double kSrfScaleTolerance = 1e-10;
inline constexpr double kSrfPassTolerance = 1e-6;
inline constexpr double kSrfMeanTolerance = 1e-10;
inline constexpr double kGradTolerance = 1e-4;
inline constexpr double kPassThroughLogit = 20.0;

nlohmann::json verify_conv(std::uint64_t seed, std::size_t instances = 100);
nlohmann::json verify_attention(std::uint64_t seed, std::size_t instances = 50);
nlohmann::json verify_srf(std::uint64_t seed, std::size_t instances_per_check = 20);
nlohmann::json verify_grad(std::uint64_t seed, std::size_t spam_instances = 10,
                           std::size_t model_coordinates = 5);

/// Suite names: conv, attention, srf, grad, all. Throws InvalidConfig for
/// anything else.
nlohmann::json run_suite(const std::string& name, std::uint64_t seed);
const std::vector<std::string>& suite_names();

/// SPAM with gradient-check friendly parameters: logits drawn from [-3, 3],
/// norm gains near 1.
SpamParams random_spam(std::size_t dim, std::size_t height, std::size_t width, SrfMode mode,
                       Rng& rng);

/// Central differences of sum(upstream * spam_forward(x)) against spam_backward,
/// one entry per parameter tensor plus "input".
GradReport check_spam_gradients(const FeatureMap& x, const SpamParams& p,
                                const FeatureMap& upstream);

/// Same pairing for a whole model with loss sum(weights * logits), restricted
/// to `coordinates` scalar parameters sampled by `rng` (one entry each).
GradReport check_model_gradients(const Model& model, const FeatureMap& image,
                                 const std::vector<double>& weights, std::size_t coordinates,
                                 Rng& rng);

/// The 64x64 four-stage [spam, spam, mix_attention, attention] model used
/// for backbone gradient checks.
ModelConfig toy_hybrid_config();

}  // namespace spanet
