#include "spanet/spam.hpp"

#include "spanet/dft.hpp"
#include "spanet/error.hpp"
#include "spanet/ops.hpp"

namespace spanet {

std::string to_string(SrfMode mode) {
  return mode == SrfMode::depthwise ? "depthwise" : "single";
}

SrfMode parse_srf_mode(const std::string& s) {
  if (s == "depthwise") return SrfMode::depthwise;
  if (s == "single") return SrfMode::single;
  throw InvalidConfig("unknown srf_mode '" + s + "' (expected depthwise or single)");
}

SrfMask make_srf_mask(std::size_t channels, std::size_t height, std::size_t width,
                      SrfMode mode) {
  const std::size_t k = mode == SrfMode::depthwise ? channels : 1;
  return SrfMask{Tensor({k, height, width}), mode};
}

namespace {

std::vector<double> sigmoid_all(std::span<const double> logits) {
  std::vector<double> psi(logits.size());
  for (std::size_t i = 0; i < psi.size(); ++i) psi[i] = sigmoid(logits[i]);
  return psi;
}

void check_mask(const FeatureMap& x, std::size_t mask_channels, std::size_t psi_size) {
  if (mask_channels != 1 && mask_channels != x.channels()) {
    throw DimensionMismatch("SRF mask has " + std::to_string(mask_channels) +
                            " channels, input " + x.shape_string());
  }
  if (psi_size != mask_channels * x.plane_size()) {
    throw DimensionMismatch("SRF mask spatial size does not match input " + x.shape_string());
  }
}

}  // namespace

FeatureMap apply_spectral_mask(const FeatureMap& x, std::span<const double> psi,
                               std::size_t mask_channels, SrfDiagnostics* diag) {
  check_mask(x, mask_channels, psi.size());
  const std::size_t hw = x.plane_size();
  FeatureMap y = FeatureMap::zeros_like(x);
  double residual = 0.0;
  for (std::size_t c = 0; c < x.channels(); ++c) {
    ComplexMap spec = dft2(x.channel(c), x.height(), x.width());
    const double* m = psi.data() + (mask_channels == 1 ? 0 : c * hw);
    for (std::size_t i = 0; i < hw; ++i) spec.data[i] *= m[i];
    const ComplexMap back = idft2(spec);
    residual = std::max(residual, max_abs_imag(back));
    auto out = y.channel(c);
    for (std::size_t i = 0; i < hw; ++i) out[i] = back.data[i].real();
  }
  if (diag) diag->max_imag_residual = residual;
  return y;
}

namespace {
void check_mask_extent(const FeatureMap& x, const SrfMask& mask) {
  if (mask.logits.dim(1) != x.height() || mask.logits.dim(2) != x.width())
    throw DimensionMismatch("SRF mask is " + std::to_string(mask.logits.dim(1)) + "x" +
                            std::to_string(mask.logits.dim(2)) + ", input " + x.shape_string());
}
}  // namespace

FeatureMap srf(const FeatureMap& x, const SrfMask& mask, SrfDiagnostics* diag) {
  check_mask_extent(x, mask);
  const auto psi = sigmoid_all(mask.logits.values());
  return apply_spectral_mask(x, psi, mask.logits.dim(0), diag);
}

FeatureMap srf_backward(const FeatureMap& x, const SrfMask& mask, const FeatureMap& grad_out,
                        SrfMask& grad) {
  if (!x.same_shape(grad_out)) throw DimensionMismatch("srf_backward shape mismatch");
  check_mask_extent(x, mask);
  const std::size_t mc = mask.logits.dim(0);
  const auto psi = sigmoid_all(mask.logits.values());
  check_mask(x, mc, psi.size());
  const std::size_t hw = x.plane_size();
  auto glog = grad.logits.values();
  FeatureMap dx = FeatureMap::zeros_like(x);
  for (std::size_t c = 0; c < x.channels(); ++c) {
    const std::size_t off = mc == 1 ? 0 : c * hw;
    const ComplexMap spec = dft2(x.channel(c), x.height(), x.width());
    const ComplexMap g_hat = idft2(to_complex(grad_out.channel(c), x.height(), x.width()));
    // g_hat is the real upstream gradient pulled back through the inverse
    // transform (the inverse DFT matrix is symmetric).
    ComplexMap masked(x.height(), x.width());
    for (std::size_t i = 0; i < hw; ++i) {
      const double d_psi = (spec.data[i] * g_hat.data[i]).real();
      const double p = psi[off + i];
      glog[off + i] += d_psi * p * (1.0 - p);
      masked.data[i] = p * g_hat.data[i];
    }
    const ComplexMap back = dft2(masked);
    auto out = dx.channel(c);
    for (std::size_t i = 0; i < hw; ++i) out[i] = back.data[i].real();
  }
  return dx;
}

SpamParams make_spam(const SpamConfig& config, Rng& rng) {
  const std::size_t d = config.dim;
  if (d == 0 || d % kSpamHeads != 0) {
    throw InvalidConfig("SPAM dim " + std::to_string(d) + " must be a positive multiple of " +
                        std::to_string(kSpamHeads));
  }
  const std::size_t dh = d / kSpamHeads;
  const bool b = config.biases;
  SpamParams p;
  p.value = make_linear(d, d, b, rng);
  p.context = make_linear(d, d, b, rng);
  for (std::size_t i = 0; i < kSpamHeads; ++i) {
    SpamHead head{make_depthwise(dh, kSpamKernelSizes[i], b, rng), std::nullopt,
                  make_linear(dh, 2 * dh, b, rng)};
    if (config.use_srf) {
      head.mask = make_srf_mask(dh, config.height, config.width, config.srf_mode);
    }
    p.heads.push_back(std::move(head));
  }
  p.norm = make_norm(2 * d, b);
  p.proj = make_linear(2 * d, d, b, rng);
  p.out = make_linear(d, d, b, rng);
  return p;
}

SpamParams zeros_like(const SpamParams& p) {
  SpamParams g;
  g.value = zeros_like(p.value);
  g.context = zeros_like(p.context);
  for (const auto& h : p.heads) {
    SpamHead gh{zeros_like(h.conv), std::nullopt, zeros_like(h.expand)};
    if (h.mask) gh.mask = SrfMask{Tensor::zeros_like(h.mask->logits), h.mask->mode};
    g.heads.push_back(std::move(gh));
  }
  g.norm = zeros_like(p.norm);
  g.proj = zeros_like(p.proj);
  g.out = zeros_like(p.out);
  return g;
}

FeatureMap value_projection(const FeatureMap& x, const SpamParams& p) {
  return gelu(linear_forward(p.value, x));
}

FeatureMap sag_head(const FeatureMap& x_head, const SpamHead& head) {
  FeatureMap z = depthwise_forward(head.conv, x_head);
  if (head.mask) z = srf(z, *head.mask);
  return linear_forward(head.expand, z);
}

namespace {

// Intermediates of the context path, recomputed by the backward pass.
struct ContextState {
  FeatureMap gate_in;              // Linear(X)
  std::vector<FeatureMap> conved;  // per head, after depthwise conv
  std::vector<FeatureMap> filtered;  // per head, after SRF
  FeatureMap concat;               // 2D channels
  FeatureMap normed;
  FeatureMap activated;
};

ContextState context_state(const FeatureMap& x, const SpamParams& p) {
  ContextState s;
  s.gate_in = linear_forward(p.context, x);
  const std::size_t dh = p.head_dim();
  s.concat = FeatureMap(2 * p.dim(), x.height(), x.width());
  for (std::size_t i = 0; i < p.heads.size(); ++i) {
    const auto& head = p.heads[i];
    FeatureMap conved = depthwise_forward(head.conv, s.gate_in.slice_channels(i * dh, dh));
    FeatureMap filtered = head.mask ? srf(conved, *head.mask) : conved;
    s.concat.assign_channels(2 * dh * i, linear_forward(head.expand, filtered));
    s.conved.push_back(std::move(conved));
    s.filtered.push_back(std::move(filtered));
  }
  s.normed = spatial_norm_forward(p.norm, s.concat);
  s.activated = gelu(s.normed);
  return s;
}

}  // namespace

FeatureMap context_aggregation(const FeatureMap& x, const SpamParams& p) {
  if (x.channels() != p.dim()) {
    throw DimensionMismatch("SPAM expects " + std::to_string(p.dim()) + " channels, got " +
                            x.shape_string());
  }
  return linear_forward(p.proj, context_state(x, p).activated);
}

FeatureMap spam_forward(const FeatureMap& x, const SpamParams& p) {
  const FeatureMap v = value_projection(x, p);
  const FeatureMap c = context_aggregation(x, p);
  return linear_forward(p.out, hadamard(v, c));
}

FeatureMap spam_backward(const FeatureMap& x, const SpamParams& p, const FeatureMap& grad_out,
                         SpamParams& grads) {
  if (x.channels() != p.dim() || !x.same_shape(grad_out)) {
    throw DimensionMismatch("spam_backward: input " + x.shape_string() + ", upstream " +
                            grad_out.shape_string());
  }
  const std::size_t dh = p.head_dim();
  const FeatureMap value_pre = linear_forward(p.value, x);
  const FeatureMap value = gelu(value_pre);
  const ContextState s = context_state(x, p);
  const FeatureMap context = linear_forward(p.proj, s.activated);
  const FeatureMap modulated = hadamard(value, context);

  const FeatureMap g_mod = linear_backward(p.out, modulated, grad_out, grads.out);
  const FeatureMap g_value = hadamard(g_mod, context);
  const FeatureMap g_context = hadamard(g_mod, value);

  // context path
  const FeatureMap g_act = linear_backward(p.proj, s.activated, g_context, grads.proj);
  const FeatureMap g_normed = gelu_backward(s.normed, g_act);
  const FeatureMap g_concat = spatial_norm_backward(p.norm, s.concat, g_normed, grads.norm);
  FeatureMap g_gate_in = FeatureMap::zeros_like(s.gate_in);
  for (std::size_t i = 0; i < p.heads.size(); ++i) {
    const auto& head = p.heads[i];
    auto& ghead = grads.heads[i];
    const FeatureMap g_exp = g_concat.slice_channels(2 * dh * i, 2 * dh);
    FeatureMap g_filtered = linear_backward(head.expand, s.filtered[i], g_exp, ghead.expand);
    FeatureMap g_conved = head.mask ? srf_backward(s.conved[i], *head.mask, g_filtered, *ghead.mask)
                                    : std::move(g_filtered);
    g_gate_in.assign_channels(
        i * dh, depthwise_backward(head.conv, s.gate_in.slice_channels(i * dh, dh), g_conved,
                                   ghead.conv));
  }
  FeatureMap dx = linear_backward(p.context, x, g_gate_in, grads.context);

  // value path
  dx += linear_backward(p.value, x, gelu_backward(value_pre, g_value), grads.value);
  return dx;
}

}  // namespace spanet
