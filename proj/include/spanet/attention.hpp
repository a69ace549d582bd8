#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "spanet/conv_support.hpp"
#include "spanet/layers.hpp"
#include "spanet/tensor.hpp"

namespace spanet {

// Single-head scaled dot-product attention over tokens. Token features are
// held as X in R^{D x HW}; projections W_q, W_k, W_v are D x d_h.

struct AttentionParams {
  Matrix query;
  Matrix key;
  Matrix value;

  std::size_t model_dim() const { return query.rows(); }
  std::size_t head_dim() const { return query.cols(); }
};

AttentionParams random_attention_params(std::size_t dim, std::size_t head_dim, Rng& rng,
                                        double scale);

/// X^T W, i.e. per-token projection: (D x HW, D x d) -> HW x d.
Matrix project_tokens(const Matrix& x, const Matrix& w);

/// E = softmax(Q K^T / sqrt(d_h)).
Matrix attention_matrix(const Matrix& q, const Matrix& k);

/// E (X^T W_v), computed directly.
Matrix attention_direct(const Matrix& x, const AttentionParams& params);

/// The attention support: C_{a,b} = exp(q_a.k_b/sqrt(d_h)) / sum_j exp(q_a.k_j/sqrt(d_h)),
/// evaluated entrywise in extended precision.
Matrix attention_support(const Matrix& q, const Matrix& k);

/// sum_i C^(i) X^T w_v^(i), where w_v^(i) keeps only column i of W_v.
Matrix attention_as_support(const Matrix& x, const AttentionParams& params);

/// E(V) + depthwise conv of V reshaped to d_h x H x W. `conv` must have d_h
/// channels. Returns HW x d_h.
Matrix mix_attention(const Matrix& x, const AttentionParams& params,
                     const DepthwiseConv& conv, std::size_t height, std::size_t width);

/// HW x C token matrix <-> C x H x W map.
FeatureMap tokens_to_map(const Matrix& tokens, std::size_t height, std::size_t width);
Matrix map_to_tokens(const FeatureMap& x);

// ---------------------------------------------------------------------------
// Multi-head attention token mixer used inside backbone blocks. With `mix`
// set it becomes MixAttention: the 7x7 depthwise convolution of V is added to
// the attention output before the output projection.

inline constexpr std::size_t kAttentionHeadWidth = 32;
inline constexpr int kMixAttentionKernel = 7;

/// max(1, dim / 32).
std::size_t attention_heads(std::size_t dim);

struct AttentionMixer {
  Linear query;
  Linear key;
  Linear value;
  Linear proj;
  std::optional<DepthwiseConv> mix;
  std::size_t heads = 1;
};

AttentionMixer make_attention_mixer(std::size_t dim, bool mix, bool biases, Rng& rng);
AttentionMixer zeros_like(const AttentionMixer& m);

FeatureMap attention_mixer_forward(const AttentionMixer& m, const FeatureMap& x);
FeatureMap attention_mixer_backward(const AttentionMixer& m, const FeatureMap& x,
                                    const FeatureMap& grad_out, AttentionMixer& grad);

template <class Self, class F>
  requires std::same_as<std::remove_const_t<Self>, AttentionMixer>
void visit_parameters(Self& m, const std::string& prefix, F&& fn) {
  visit_parameters(m.query, prefix + ".query", fn);
  visit_parameters(m.key, prefix + ".key", fn);
  visit_parameters(m.value, prefix + ".value", fn);
  if (m.mix) visit_parameters(*m.mix, prefix + ".mix_conv", fn);
  visit_parameters(m.proj, prefix + ".proj", fn);
}

}  // namespace spanet
