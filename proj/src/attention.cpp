#include "spanet/attention.hpp"

#include <cmath>

#include "spanet/error.hpp"
#include "spanet/ops.hpp"

namespace spanet {

AttentionParams random_attention_params(std::size_t dim, std::size_t head_dim, Rng& rng,
                                        double scale) {
  AttentionParams p{Matrix(dim, head_dim), Matrix(dim, head_dim), Matrix(dim, head_dim)};
  for (double& v : p.query.values()) v = scale * rng.normal();
  for (double& v : p.key.values()) v = scale * rng.normal();
  for (double& v : p.value.values()) v = scale * rng.normal();
  return p;
}

Matrix project_tokens(const Matrix& x, const Matrix& w) {
  if (x.rows() != w.rows()) {
    throw DimensionMismatch("token projection: X has " + std::to_string(x.rows()) +
                            " features, W has " + std::to_string(w.rows()) + " rows");
  }
  return x.transposed() * w;
}

Matrix attention_matrix(const Matrix& q, const Matrix& k) {
  if (q.cols() != k.cols()) throw DimensionMismatch("attention: Q and K head widths differ");
  if (q.rows() != k.rows()) throw DimensionMismatch("attention: Q and K token counts differ");
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Matrix s = q * k.transposed();
  for (double& v : s.values()) v *= scale;
  return softmax_rows(s);
}

Matrix attention_direct(const Matrix& x, const AttentionParams& params) {
  const Matrix q = project_tokens(x, params.query);
  const Matrix k = project_tokens(x, params.key);
  const Matrix v = project_tokens(x, params.value);
  return attention_matrix(q, k) * v;
}

Matrix attention_support(const Matrix& q, const Matrix& k) {
  if (q.cols() != k.cols() || q.rows() != k.rows()) {
    throw DimensionMismatch("attention support: Q/K shape mismatch");
  }
  const std::size_t n = q.rows();
  const std::size_t d = q.cols();
  const long double scale = 1.0L / std::sqrt(static_cast<long double>(d));
  Matrix c(n, n);
  std::vector<long double> logits(n);
  for (std::size_t a = 0; a < n; ++a) {
    long double mx = -INFINITY;
    for (std::size_t b = 0; b < n; ++b) {
      long double dot = 0.0L;
      for (std::size_t j = 0; j < d; ++j)
        dot += static_cast<long double>(q(a, j)) * static_cast<long double>(k(b, j));
      logits[b] = dot * scale;
      mx = std::max(mx, logits[b]);
    }
    long double denom = 0.0L;
    for (std::size_t b = 0; b < n; ++b) {
      logits[b] = std::exp(logits[b] - mx);
      denom += logits[b];
    }
    for (std::size_t b = 0; b < n; ++b) c(a, b) = static_cast<double>(logits[b] / denom);
  }
  return c;
}

Matrix attention_as_support(const Matrix& x, const AttentionParams& params) {
  const std::size_t tokens = x.cols();
  const std::size_t dh = params.head_dim();
  const Matrix support = attention_support(project_tokens(x, params.query),
                                           project_tokens(x, params.key));
  const Matrix xt = x.transposed();
  Matrix out(tokens, dh);
  for (std::size_t i = 0; i < dh; ++i) {
    Matrix w_i(params.value.rows(), dh);
    for (std::size_t r = 0; r < w_i.rows(); ++r) w_i(r, i) = params.value(r, i);
    out = out + support * (xt * w_i);
  }
  return out;
}

FeatureMap tokens_to_map(const Matrix& tokens, std::size_t height, std::size_t width) {
  if (tokens.rows() != height * width) throw DimensionMismatch("token count is not H*W");
  FeatureMap m(tokens.cols(), height, width);
  for (std::size_t c = 0; c < tokens.cols(); ++c) {
    auto plane = m.channel(c);
    for (std::size_t p = 0; p < tokens.rows(); ++p) plane[p] = tokens(p, c);
  }
  return m;
}

Matrix map_to_tokens(const FeatureMap& x) {
  Matrix t(x.plane_size(), x.channels());
  for (std::size_t c = 0; c < x.channels(); ++c) {
    auto plane = x.channel(c);
    for (std::size_t p = 0; p < plane.size(); ++p) t(p, c) = plane[p];
  }
  return t;
}

Matrix mix_attention(const Matrix& x, const AttentionParams& params, const DepthwiseConv& conv,
                     std::size_t height, std::size_t width) {
  if (x.cols() != height * width) throw DimensionMismatch("mix_attention: X is not D x HW");
  if (conv.channels() != params.head_dim()) {
    throw DimensionMismatch("mix_attention: conv channels must equal d_h");
  }
  const Matrix q = project_tokens(x, params.query);
  const Matrix k = project_tokens(x, params.key);
  const Matrix v = project_tokens(x, params.value);
  const Matrix attended = attention_matrix(q, k) * v;
  const FeatureMap conv_branch = depthwise_forward(conv, tokens_to_map(v, height, width));
  return attended + map_to_tokens(conv_branch);
}

// ---------------------------------------------------------------------------

std::size_t attention_heads(std::size_t dim) {
  return std::max<std::size_t>(1, dim / kAttentionHeadWidth);
}

AttentionMixer make_attention_mixer(std::size_t dim, bool mix, bool biases, Rng& rng) {
  const std::size_t heads = attention_heads(dim);
  if (dim % heads != 0) {
    throw InvalidConfig("attention dim " + std::to_string(dim) + " is not divisible by " +
                        std::to_string(heads) + " heads");
  }
  AttentionMixer m{make_linear(dim, dim, biases, rng), make_linear(dim, dim, biases, rng),
                   make_linear(dim, dim, biases, rng), make_linear(dim, dim, biases, rng),
                   std::nullopt, heads};
  if (mix) m.mix = make_depthwise(dim, kMixAttentionKernel, biases, rng);
  return m;
}

AttentionMixer zeros_like(const AttentionMixer& m) {
  AttentionMixer g{zeros_like(m.query), zeros_like(m.key), zeros_like(m.value),
                   zeros_like(m.proj), std::nullopt, m.heads};
  if (m.mix) g.mix = zeros_like(*m.mix);
  return g;
}

namespace {

struct HeadState {
  Matrix q, k, v, e;  // q/k/v: HW x head_dim, e: HW x HW
};

Matrix head_tokens(const FeatureMap& x, std::size_t first, std::size_t count) {
  Matrix t(x.plane_size(), count);
  for (std::size_t c = 0; c < count; ++c) {
    auto plane = x.channel(first + c);
    for (std::size_t p = 0; p < plane.size(); ++p) t(p, c) = plane[p];
  }
  return t;
}

void add_head_tokens(FeatureMap& x, std::size_t first, const Matrix& t) {
  for (std::size_t c = 0; c < t.cols(); ++c) {
    auto plane = x.channel(first + c);
    for (std::size_t p = 0; p < plane.size(); ++p) plane[p] += t(p, c);
  }
}

struct MixerState {
  FeatureMap q, k, v;
  std::vector<HeadState> heads;
  FeatureMap combined;  // input of the output projection
};

MixerState mixer_state(const AttentionMixer& m, const FeatureMap& x) {
  MixerState s{linear_forward(m.query, x), linear_forward(m.key, x), linear_forward(m.value, x),
               {}, {}};
  const std::size_t dim = s.q.channels();
  const std::size_t hd = dim / m.heads;
  s.combined = FeatureMap::zeros_like(s.v);
  for (std::size_t h = 0; h < m.heads; ++h) {
    HeadState hs{head_tokens(s.q, h * hd, hd), head_tokens(s.k, h * hd, hd),
                 head_tokens(s.v, h * hd, hd), {}};
    hs.e = attention_matrix(hs.q, hs.k);
    add_head_tokens(s.combined, h * hd, hs.e * hs.v);
    s.heads.push_back(std::move(hs));
  }
  if (m.mix) s.combined += depthwise_forward(*m.mix, s.v);
  return s;
}

}  // namespace

FeatureMap attention_mixer_forward(const AttentionMixer& m, const FeatureMap& x) {
  return linear_forward(m.proj, mixer_state(m, x).combined);
}

FeatureMap attention_mixer_backward(const AttentionMixer& m, const FeatureMap& x,
                                    const FeatureMap& grad_out, AttentionMixer& grad) {
  const MixerState s = mixer_state(m, x);
  const FeatureMap g_combined = linear_backward(m.proj, s.combined, grad_out, grad.proj);
  FeatureMap gq = FeatureMap::zeros_like(s.q);
  FeatureMap gk = FeatureMap::zeros_like(s.k);
  FeatureMap gv = FeatureMap::zeros_like(s.v);
  if (m.mix) gv += depthwise_backward(*m.mix, s.v, g_combined, *grad.mix);

  const std::size_t hd = s.q.channels() / m.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (std::size_t h = 0; h < m.heads; ++h) {
    const HeadState& hs = s.heads[h];
    const Matrix g_out = head_tokens(g_combined, h * hd, hd);
    add_head_tokens(gv, h * hd, hs.e.transposed() * g_out);
    const Matrix g_e = g_out * hs.v.transposed();
    Matrix g_s(g_e.rows(), g_e.cols());
    for (std::size_t a = 0; a < g_e.rows(); ++a) {
      double dot = 0.0;
      for (std::size_t b = 0; b < g_e.cols(); ++b) dot += g_e(a, b) * hs.e(a, b);
      for (std::size_t b = 0; b < g_e.cols(); ++b)
        g_s(a, b) = scale * hs.e(a, b) * (g_e(a, b) - dot);
    }
    add_head_tokens(gq, h * hd, g_s * hs.k);
    add_head_tokens(gk, h * hd, g_s.transposed() * hs.q);
  }
  FeatureMap dx = linear_backward(m.query, x, gq, grad.query);
  dx += linear_backward(m.key, x, gk, grad.key);
  dx += linear_backward(m.value, x, gv, grad.value);
  return dx;
}

}  // namespace spanet
