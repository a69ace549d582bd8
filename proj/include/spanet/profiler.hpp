#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spanet/conv_support.hpp"
#include "spanet/graphs.hpp"
#include "spanet/tensor.hpp"

namespace spanet {

inline constexpr std::size_t kProfileBins = 32;
inline constexpr std::size_t kDefaultTrials = 240;
inline constexpr std::size_t kDefaultPatch = 16;
inline constexpr std::size_t kAttentionInputDim = 64;
inline constexpr std::size_t kAttentionProbeHeadDim = 32;

/// diag(U^T C U), paired with basis.eigenvalues.
std::vector<double> frequency_response(const Matrix& support, const SpectralBasis& basis);
std::vector<double> frequency_response(const SparseMatrix& support, const SpectralBasis& basis);

struct TrialProfile {
  std::vector<double> lambda;  // ascending
  std::vector<double> phi;     // signed
};

struct BinStat {
  double lo = 0.0;
  double hi = 0.0;
  double mean_abs_phi = 0.0;
  double std_abs_phi = 0.0;  // population std
  std::size_t count = 0;
};

struct FrequencyProfile {
  GraphKind graph = GraphKind::grid;
  std::string kernel;  // kernel size as text, or "attention"
  std::uint64_t seed = 0;
  std::vector<TrialProfile> trials;
  std::vector<BinStat> aggregate;
  // Basis checks for the graph used by every trial.
  double min_eigenvalue = 0.0;
  double max_eigenvalue = 0.0;
  BasisDiagnostics basis_diagnostics{0.0, 0.0};
};

/// Equal-width bins over [0, 2]; eigenvalues outside are clipped into the end bins.
std::vector<BinStat> aggregate_profile(const std::vector<TrialProfile>& trials,
                                       std::size_t bins = kProfileBins);

/// Mean over occupied bins lying inside [lo, hi] of their mean |phi|; 0 when
/// no such bin is occupied.
double band_mean(const std::vector<BinStat>& bins, double lo, double hi);

/// band_mean(high) / band_mean(low); 0 when the low band is empty.
double band_ratio(const FrequencyProfile& p, double high_lo, double high_hi, double low_lo,
                  double low_hi);

struct CampaignOptions {
  GraphKind graph = GraphKind::grid;
  /// Kernel size of the random convolution; nullopt selects attention.
  std::optional<int> kernel = 3;
  std::size_t trials = kDefaultTrials;
  std::size_t patch = kDefaultPatch;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  /// Use the identity kernel instead of random weights (convolution only).
  bool force_identity = false;
};

/// The basis comes from grid(kernel) for grid campaigns and from the complete
/// graph otherwise. Attention requires the complete graph.
/// Convolution trials draw kernel weights from N(0,1); attention trials draw
/// X ~ N(0,1) of 64 x N and W_q, W_k ~ N(0, 1/64) with head width 32.
/// Throws InvalidConfig for zero trials/patch or an even kernel.
FrequencyProfile simulate_campaign(const CampaignOptions& opts);

struct DecompositionCheck {
  double residual = 0.0;             // ||C x - U diag(phi) U^T x||_max
  double off_diagonal_mass = 0.0;    // ||U^T C U - diag(phi)||_F
};

DecompositionCheck spectral_decomposition_check(const Matrix& support,
                                                std::span<const double> x,
                                                const SpectralBasis& basis);
DecompositionCheck spectral_decomposition_check(const KernelSpec& kernel,
                                                std::span<const double> x,
                                                const SpectralBasis& basis, std::size_t height,
                                                std::size_t width);

struct RlaCurve {
  std::vector<double> radius_norm;  // ring radius / (n/2), from 0 to 1
  std::vector<double> rel_log_amp;  // ring-averaged log amplitude minus the DC ring
  std::size_t channel_count = 0;    // channels that contributed
  bool degenerate = false;          // no channel had energy off DC
};

/// Throws NonSquareInput when H != W.
RlaCurve relative_log_amplitude(const FeatureMap& x);

// CSV interchange. Floats use shortest round-trip decimal form. All
// writers throw IoError on failure; readers throw IoError on malformed input.
void write_profile_csv(const FrequencyProfile& p, const std::filesystem::path& path);
FrequencyProfile read_profile_csv(const std::filesystem::path& path);
void write_aggregate_csv(const std::vector<BinStat>& bins, const std::filesystem::path& path);
std::vector<BinStat> read_aggregate_csv(const std::filesystem::path& path);
void write_rla_csv(const RlaCurve& curve, const std::filesystem::path& path);
RlaCurve read_rla_csv(const std::filesystem::path& path);

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);
double parse_double(const std::string& s);

}  // namespace spanet
