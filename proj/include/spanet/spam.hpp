#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spanet/conv_support.hpp"
#include "spanet/layers.hpp"
#include "spanet/rng.hpp"
#include "spanet/tensor.hpp"

namespace spanet {

inline constexpr std::size_t kSpamHeads = 4;
inline constexpr std::array<int, kSpamHeads> kSpamKernelSizes{3, 5, 7, 9};

/// `depthwise`: one mask per channel of the head. `single`: one mask
/// broadcast over every channel of the head.
enum class SrfMode { depthwise, single };

std::string to_string(SrfMode mode);
SrfMode parse_srf_mode(const std::string& s);

/// Learnable spectral re-scaling mask. `logits` has shape [k, H, W] with
/// k = channels (depthwise) or 1 (single); the applied mask is sigmoid(logits).
struct SrfMask {
  Tensor logits;
  SrfMode mode = SrfMode::depthwise;

  std::size_t height() const { return logits.dim(1); }
  std::size_t width() const { return logits.dim(2); }
};

SrfMask make_srf_mask(std::size_t channels, std::size_t height, std::size_t width, SrfMode mode);

struct SrfDiagnostics {
  /// Largest |imaginary part| discarded by the real-part projection.
  double max_imag_residual = 0.0;
};

/// Per channel: dft2 -> multiply by the mask -> idft2 -> real part.
FeatureMap srf(const FeatureMap& x, const SrfMask& mask, SrfDiagnostics* diag = nullptr);

/// Same as srf() but with mask values given directly (shape [k, H, W],
/// k = 1 or x.channels()).
FeatureMap apply_spectral_mask(const FeatureMap& x, std::span<const double> psi,
                               std::size_t mask_channels, SrfDiagnostics* diag = nullptr);

/// Returns dL/dx and accumulates dL/dlogits into `grad`.
FeatureMap srf_backward(const FeatureMap& x, const SrfMask& mask, const FeatureMap& grad_out,
                        SrfMask& grad);

/// One head of the spectral-adaptive gate: depthwise conv -> SRF -> Exp
/// (channel-doubling linear).
struct SpamHead {
  DepthwiseConv conv;
  std::optional<SrfMask> mask;  // absent when SRF is ablated
  Linear expand;
};

struct SpamConfig {
  std::size_t dim = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  SrfMode srf_mode = SrfMode::depthwise;
  bool use_srf = true;
  bool biases = false;
};

struct SpamParams {
  Linear value;    // value projection, D -> D
  Linear context;  // input of the gate, D -> D
  std::vector<SpamHead> heads;
  Norm norm;       // over the 2D concatenated head outputs
  Linear proj;     // 2D -> D
  Linear out;      // D -> D

  std::size_t dim() const { return value.out_features(); }
  std::size_t head_dim() const { return dim() / heads.size(); }
};

/// Fan-in scaled normal weights, mask logits 0, norm gain 1. Throws
/// InvalidConfig unless dim is a positive multiple of 4.
SpamParams make_spam(const SpamConfig& config, Rng& rng);
SpamParams zeros_like(const SpamParams& p);

FeatureMap value_projection(const FeatureMap& x, const SpamParams& p);
FeatureMap sag_head(const FeatureMap& x_head, const SpamHead& head);
FeatureMap context_aggregation(const FeatureMap& x, const SpamParams& p);
FeatureMap spam_forward(const FeatureMap& x, const SpamParams& p);

/// Hand-derived backward. Accumulates into `grads` (same layout as `p`) and
/// returns dL/dx.
FeatureMap spam_backward(const FeatureMap& x, const SpamParams& p, const FeatureMap& grad_out,
                         SpamParams& grads);

template <class Self, class F>
  requires std::same_as<std::remove_const_t<Self>, SpamParams>
void visit_parameters(Self& p, const std::string& prefix, F&& fn) {
  visit_parameters(p.value, prefix + ".value", fn);
  visit_parameters(p.context, prefix + ".context", fn);
  for (std::size_t i = 0; i < p.heads.size(); ++i) {
    auto& h = p.heads[i];
    const std::string hp = prefix + ".heads." + std::to_string(i);
    visit_parameters(h.conv, hp + ".conv", fn);
    if (h.mask) fn(hp + ".srf_logits", h.mask->logits);
    visit_parameters(h.expand, hp + ".expand", fn);
  }
  visit_parameters(p.norm, prefix + ".norm", fn);
  visit_parameters(p.proj, prefix + ".proj", fn);
  visit_parameters(p.out, prefix + ".out", fn);
}

}  // namespace spanet
