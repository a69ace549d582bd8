#include "spanet/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "spanet/error.hpp"

namespace spanet {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

bool contains(const std::vector<std::size_t>& v, std::size_t x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

bool uses_res_scale(const ModelConfig& c, std::size_t stage) {
  return (c.branch_scale == BranchScale::res_scale || c.branch_scale == BranchScale::both) &&
         contains(c.res_scale_stages, stage);
}

bool uses_layer_scale(const ModelConfig& c, std::size_t stage) {
  return (c.branch_scale == BranchScale::layer_scale || c.branch_scale == BranchScale::both) &&
         contains(c.res_scale_stages, stage);
}

// y[c, p] = s[c] * x[c, p]
FeatureMap scale_channels(const std::optional<Tensor>& s, const FeatureMap& x) {
  if (!s) return x;
  FeatureMap y = x;
  for (std::size_t c = 0; c < y.channels(); ++c) {
    for (double& v : y.channel(c)) v *= (*s)[c];
  }
  return y;
}

// Accumulates sum_p g[c,p] * x[c,p] into grad[c].
void accumulate_scale_grad(const FeatureMap& g, const FeatureMap& x, Tensor& grad) {
  for (std::size_t c = 0; c < g.channels(); ++c) {
    const auto gc = g.channel(c);
    const auto xc = x.channel(c);
    double acc = 0.0;
    for (std::size_t i = 0; i < gc.size(); ++i) acc += gc[i] * xc[i];
    grad[c] += acc;
  }
}

Tensor filled(std::size_t n, double v) { return Tensor({n}, v); }

FeatureMap mlp_forward(const Mlp& m, const FeatureMap& x) {
  return linear_forward(m.fc2, gelu(linear_forward(m.fc1, x)));
}

FeatureMap mlp_backward(const Mlp& m, const FeatureMap& x, const FeatureMap& g, Mlp& grad) {
  const FeatureMap pre = linear_forward(m.fc1, x);
  const FeatureMap act = gelu(pre);
  const FeatureMap g_act = linear_backward(m.fc2, act, g, grad.fc2);
  return linear_backward(m.fc1, x, gelu_backward(pre, g_act), grad.fc1);
}

FeatureMap mixer_forward(const Mixer& mixer, const FeatureMap& x) {
  return std::visit(
      overloaded{[&](const SpamParams& p) { return spam_forward(x, p); },
                 [&](const SepConv& p) { return sep_conv_mixer(x, p); },
                 [&](const AttentionMixer& p) { return attention_mixer_forward(p, x); }},
      mixer);
}

FeatureMap mixer_backward(const Mixer& mixer, const FeatureMap& x, const FeatureMap& g,
                          Mixer& grad) {
  return std::visit(
      overloaded{[&](const SpamParams& p) {
                   return spam_backward(x, p, g, std::get<SpamParams>(grad));
                 },
                 [&](const SepConv& p) {
                   return sep_conv_backward(x, p, g, std::get<SepConv>(grad));
                 },
                 [&](const AttentionMixer& p) {
                   return attention_mixer_backward(p, x, g, std::get<AttentionMixer>(grad));
                 }},
      mixer);
}

FeatureMap downsample_forward(const Downsample& d, const FeatureMap& x) {
  FeatureMap h = d.pre_norm ? channel_norm_forward(*d.pre_norm, x) : x;
  FeatureMap y = conv2d_forward(d.conv, h);
  return d.post_norm ? channel_norm_forward(*d.post_norm, y) : y;
}

FeatureMap downsample_backward(const Downsample& d, const FeatureMap& x, const FeatureMap& g,
                               Downsample& grad) {
  const FeatureMap h = d.pre_norm ? channel_norm_forward(*d.pre_norm, x) : x;
  FeatureMap g_y = g;
  if (d.post_norm) {
    const FeatureMap y = conv2d_forward(d.conv, h);
    g_y = channel_norm_backward(*d.post_norm, y, g, *grad.post_norm);
  }
  FeatureMap g_h = conv2d_backward(d.conv, h, g_y, grad.conv);
  return d.pre_norm ? channel_norm_backward(*d.pre_norm, x, g_h, *grad.pre_norm) : g_h;
}

std::vector<double> global_average(const FeatureMap& x) {
  std::vector<double> out(x.channels());
  for (std::size_t c = 0; c < x.channels(); ++c) {
    double s = 0.0;
    for (double v : x.channel(c)) s += v;
    out[c] = s / static_cast<double>(x.plane_size());
  }
  return out;
}

Conv2d make_conv2d(std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                   std::size_t padding, bool bias, Rng& rng) {
  Conv2d c;
  c.weight = Tensor({out, in, k, k});
  const double sd = 1.0 / std::sqrt(static_cast<double>(in * k * k));
  for (double& v : c.weight.values()) v = rng.normal(0.0, sd);
  if (bias) c.bias = Tensor({out});
  c.stride = stride;
  c.padding = padding;
  return c;
}

Conv2d zeros_like(const Conv2d& c) {
  Conv2d z = c;
  z.weight.fill(0.0);
  if (z.bias) z.bias->fill(0.0);
  return z;
}

std::optional<Norm> zeros_like(const std::optional<Norm>& n) {
  if (!n) return std::nullopt;
  return zeros_like(*n);
}

std::optional<Tensor> zeros_like(const std::optional<Tensor>& t) {
  if (!t) return std::nullopt;
  return Tensor::zeros_like(*t);
}

}  // namespace

std::string to_string(MixerKind kind) {
  switch (kind) {
    case MixerKind::spam: return "spam";
    case MixerKind::sep_conv: return "sep_conv";
    case MixerKind::attention: return "attention";
    case MixerKind::mix_attention: return "mix_attention";
  }
  return "?";
}

MixerKind parse_mixer(const std::string& s) {
  if (s == "spam") return MixerKind::spam;
  if (s == "sep_conv" || s == "sepconv") return MixerKind::sep_conv;
  if (s == "attention") return MixerKind::attention;
  if (s == "mix_attention" || s == "mixattention") return MixerKind::mix_attention;
  throw InvalidConfig("unknown mixer '" + s + "'");
}

std::string to_string(BranchScale s) {
  switch (s) {
    case BranchScale::none: return "none";
    case BranchScale::res_scale: return "res_scale";
    case BranchScale::layer_scale: return "layer_scale";
    case BranchScale::both: return "both";
  }
  return "?";
}

BranchScale parse_branch_scale(const std::string& s) {
  if (s == "none") return BranchScale::none;
  if (s == "res_scale") return BranchScale::res_scale;
  if (s == "layer_scale") return BranchScale::layer_scale;
  if (s == "both") return BranchScale::both;
  throw InvalidConfig("unknown branch_scale '" + s + "'");
}

std::array<std::size_t, kStages> ModelConfig::stage_extents() const {
  std::array<std::size_t, kStages> out{};
  std::size_t n = image_size;
  for (std::size_t s = 0; s < kStages; ++s) {
    n = conv_output_extent(n, kDownKernels[s], kDownStrides[s], kDownPaddings[s]);
    out[s] = n;
  }
  return out;
}

void validate(const ModelConfig& c) {
  for (std::size_t s = 0; s < kStages; ++s) {
    if (c.dims[s] == 0) throw InvalidConfig("dims[" + std::to_string(s) + "] must be positive");
    if (c.blocks[s] == 0) {
      throw InvalidConfig("blocks[" + std::to_string(s) + "] must be positive");
    }
    if (c.mixers[s] == MixerKind::spam && c.dims[s] % kSpamHeads != 0) {
      throw InvalidConfig("spam stage " + std::to_string(s) + " needs dims divisible by 4, got " +
                          std::to_string(c.dims[s]));
    }
    if ((c.mixers[s] == MixerKind::attention || c.mixers[s] == MixerKind::mix_attention) &&
        c.dims[s] % attention_heads(c.dims[s]) != 0) {
      throw InvalidConfig("attention stage " + std::to_string(s) +
                          " needs dims divisible by the head count");
    }
  }
  for (std::size_t s : c.res_scale_stages) {
    if (s >= kStages) {
      throw InvalidConfig("res_scale_stages entry " + std::to_string(s) + " is not a stage index");
    }
  }
  if (c.image_size == 0 || c.image_size % 32 != 0) {
    throw InvalidConfig("image_size must be a positive multiple of 32, got " +
                        std::to_string(c.image_size));
  }
  if (c.in_channels == 0) throw InvalidConfig("in_channels must be positive");
  if (c.num_classes == 0) throw InvalidConfig("num_classes must be positive");
  if (c.mlp_ratio == 0) throw InvalidConfig("mlp_ratio must be positive");
}

ModelConfig config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{
      "dims",     "blocks",      "mixers",      "res_scale_stages", "biases",
      "srf_mode", "seed",        "use_srf",     "branch_scale",     "image_size",
      "in_channels", "num_classes", "mlp_ratio", "zero_head"};
  if (!j.is_object()) throw InvalidConfig("model config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw InvalidConfig("unknown config key '" + key + "'");
  }
  ModelConfig c;
  try {
    auto read4 = [&](const char* key, auto& dst) {
      if (!j.contains(key)) return;
      const auto& a = j.at(key);
      if (!a.is_array() || a.size() != kStages) {
        throw InvalidConfig(std::string(key) + " must be an array of 4 entries");
      }
      for (std::size_t s = 0; s < kStages; ++s) {
        if constexpr (std::is_same_v<std::remove_reference_t<decltype(dst[0])>, MixerKind>) {
          dst[s] = parse_mixer(a[s].get<std::string>());
        } else {
          if (!a[s].is_number_unsigned()) {
            throw InvalidConfig(std::string(key) + " entries must be non-negative integers");
          }
          dst[s] = a[s].get<std::size_t>();
        }
      }
    };
    read4("dims", c.dims);
    read4("blocks", c.blocks);
    read4("mixers", c.mixers);
    if (j.contains("res_scale_stages")) {
      c.res_scale_stages = j.at("res_scale_stages").get<std::vector<std::size_t>>();
    }
    if (j.contains("biases")) c.biases = j.at("biases").get<bool>();
    if (j.contains("srf_mode")) c.srf_mode = parse_srf_mode(j.at("srf_mode").get<std::string>());
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("use_srf")) c.use_srf = j.at("use_srf").get<bool>();
    if (j.contains("branch_scale")) {
      c.branch_scale = parse_branch_scale(j.at("branch_scale").get<std::string>());
    }
    if (j.contains("image_size")) c.image_size = j.at("image_size").get<std::size_t>();
    if (j.contains("in_channels")) c.in_channels = j.at("in_channels").get<std::size_t>();
    if (j.contains("num_classes")) c.num_classes = j.at("num_classes").get<std::size_t>();
    if (j.contains("mlp_ratio")) c.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
    if (j.contains("zero_head")) c.zero_head = j.at("zero_head").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(std::string("bad model config: ") + e.what());
  }
  validate(c);
  return c;
}

nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["dims"] = c.dims;
  j["blocks"] = c.blocks;
  std::vector<std::string> mixers;
  for (auto m : c.mixers) mixers.push_back(to_string(m));
  j["mixers"] = mixers;
  j["res_scale_stages"] = c.res_scale_stages;
  j["biases"] = c.biases;
  j["srf_mode"] = to_string(c.srf_mode);
  j["use_srf"] = c.use_srf;
  j["branch_scale"] = to_string(c.branch_scale);
  j["seed"] = c.seed;
  j["image_size"] = c.image_size;
  j["in_channels"] = c.in_channels;
  j["num_classes"] = c.num_classes;
  j["mlp_ratio"] = c.mlp_ratio;
  j["zero_head"] = c.zero_head;
  return j;
}

ModelConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

FeatureMap conv2d_forward(const Conv2d& conv, const FeatureMap& x) {
  if (x.channels() != conv.in_channels()) {
    throw ShapeError("conv2d expects " + std::to_string(conv.in_channels()) +
                     " input channels, got " + x.shape_string());
  }
  const std::size_t k = conv.kernel_size();
  const std::size_t oh = conv_output_extent(x.height(), k, conv.stride, conv.padding);
  const std::size_t ow = conv_output_extent(x.width(), k, conv.stride, conv.padding);
  const std::size_t cin = conv.in_channels();
  FeatureMap y(conv.out_channels(), oh, ow);
  const auto w = conv.weight.values();
  const auto pad = static_cast<std::ptrdiff_t>(conv.padding);
  for (std::size_t o = 0; o < conv.out_channels(); ++o) {
    const double b = conv.bias ? (*conv.bias)[o] : 0.0;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double acc = b;
        for (std::size_t i = 0; i < cin; ++i) {
          const double* wk = w.data() + (o * cin + i) * k * k;
          for (std::size_t r = 0; r < k; ++r) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * conv.stride + r) - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(x.height())) continue;
            for (std::size_t t = 0; t < k; ++t) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * conv.stride + t) - pad;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(x.width())) continue;
              acc += wk[r * k + t] * x(i, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
            }
          }
        }
        y(o, oy, ox) = acc;
      }
    }
  }
  return y;
}

FeatureMap conv2d_backward(const Conv2d& conv, const FeatureMap& x, const FeatureMap& grad_out,
                           Conv2d& grad) {
  const std::size_t k = conv.kernel_size();
  const std::size_t cin = conv.in_channels();
  FeatureMap dx = FeatureMap::zeros_like(x);
  const auto w = conv.weight.values();
  auto gw = grad.weight.values();
  const auto pad = static_cast<std::ptrdiff_t>(conv.padding);
  for (std::size_t o = 0; o < conv.out_channels(); ++o) {
    for (std::size_t oy = 0; oy < grad_out.height(); ++oy) {
      for (std::size_t ox = 0; ox < grad_out.width(); ++ox) {
        const double g = grad_out(o, oy, ox);
        if (grad.bias) (*grad.bias)[o] += g;
        if (g == 0.0) continue;
        for (std::size_t i = 0; i < cin; ++i) {
          const std::size_t base = (o * cin + i) * k * k;
          for (std::size_t r = 0; r < k; ++r) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * conv.stride + r) - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(x.height())) continue;
            for (std::size_t t = 0; t < k; ++t) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * conv.stride + t) - pad;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(x.width())) continue;
              const auto yy = static_cast<std::size_t>(iy);
              const auto xx = static_cast<std::size_t>(ix);
              gw[base + r * k + t] += g * x(i, yy, xx);
              dx(i, yy, xx) += g * w[base + r * k + t];
            }
          }
        }
      }
    }
  }
  return dx;
}

SepConv make_sep_conv(std::size_t dim, bool biases, Rng& rng) {
  const std::size_t hidden = kSepConvExpansion * dim;
  SepConv s;
  s.expand = make_linear(dim, hidden, biases, rng);
  s.depthwise = make_depthwise(hidden, kSepConvKernel, biases, rng);
  s.project = make_linear(hidden, dim, biases, rng);
  return s;
}

SepConv zeros_like(const SepConv& s) {
  return {zeros_like(s.expand), zeros_like(s.depthwise), zeros_like(s.project)};
}

FeatureMap sep_conv_mixer(const FeatureMap& x, const SepConv& p) {
  const FeatureMap a = gelu(linear_forward(p.expand, x));
  return linear_forward(p.project, depthwise_forward(p.depthwise, a));
}

FeatureMap sep_conv_backward(const FeatureMap& x, const SepConv& p, const FeatureMap& grad_out,
                             SepConv& grad) {
  const FeatureMap pre = linear_forward(p.expand, x);
  const FeatureMap a = gelu(pre);
  const FeatureMap d = depthwise_forward(p.depthwise, a);
  const FeatureMap g_d = linear_backward(p.project, d, grad_out, grad.project);
  const FeatureMap g_a = depthwise_backward(p.depthwise, a, g_d, grad.depthwise);
  return linear_backward(p.expand, x, gelu_backward(pre, g_a), grad.expand);
}

Model build_model(const ModelConfig& config) {
  validate(config);
  Model m;
  m.config = config;
  Rng root(config.seed);
  const auto extents = config.stage_extents();
  std::size_t prev = config.in_channels;
  for (std::size_t s = 0; s < kStages; ++s) {
    Rng rng = root.split("stage").split(static_cast<std::uint64_t>(s));
    Rng down_rng = rng.split("down");
    const std::size_t dim = config.dims[s];
    Stage st;
    if (s > 0) st.downsample.pre_norm = make_norm(prev, config.biases);
    st.downsample.conv = make_conv2d(prev, dim, kDownKernels[s], kDownStrides[s],
                                     kDownPaddings[s], config.biases, down_rng);
    if (s == 0) st.downsample.post_norm = make_norm(dim, config.biases);
    for (std::size_t b = 0; b < config.blocks[s]; ++b) {
      Rng brng = rng.split("block").split(static_cast<std::uint64_t>(b));
      Rng mixer_rng = brng.split("mixer");
      Rng mlp_rng = brng.split("mlp");
      Block blk{make_norm(dim, config.biases), SepConv{}, make_norm(dim, config.biases),
                Mlp{}, std::nullopt, std::nullopt, std::nullopt, std::nullopt};
      switch (config.mixers[s]) {
        case MixerKind::spam: {
          SpamConfig sc{dim, extents[s], extents[s], config.srf_mode, config.use_srf,
                        config.biases};
          blk.mixer = make_spam(sc, mixer_rng);
          break;
        }
        case MixerKind::sep_conv:
          blk.mixer = make_sep_conv(dim, config.biases, mixer_rng);
          break;
        case MixerKind::attention:
          blk.mixer = make_attention_mixer(dim, false, config.biases, mixer_rng);
          break;
        case MixerKind::mix_attention:
          blk.mixer = make_attention_mixer(dim, true, config.biases, mixer_rng);
          break;
      }
      const std::size_t hidden = config.mlp_ratio * dim;
      blk.mlp.fc1 = make_linear(dim, hidden, config.biases, mlp_rng);
      blk.mlp.fc2 = make_linear(hidden, dim, config.biases, mlp_rng);
      if (uses_res_scale(config, s)) {
        blk.res_scale1 = filled(dim, 1.0);
        blk.res_scale2 = filled(dim, 1.0);
      }
      if (uses_layer_scale(config, s)) {
        blk.layer_scale1 = filled(dim, kLayerScaleInit);
        blk.layer_scale2 = filled(dim, kLayerScaleInit);
      }
      st.blocks.push_back(std::move(blk));
    }
    m.stages.push_back(std::move(st));
    prev = dim;
  }
  Rng head_rng = root.split("head");
  m.head_norm = make_norm(prev, config.biases);
  m.head = make_linear(prev, config.num_classes, config.biases, head_rng);
  if (config.zero_head) m.head.weight.fill(0.0);
  return m;
}

Model zeros_like(const Model& m) {
  Model z;
  z.config = m.config;
  for (const auto& st : m.stages) {
    Stage zs;
    zs.downsample.pre_norm = zeros_like(st.downsample.pre_norm);
    zs.downsample.conv = zeros_like(st.downsample.conv);
    zs.downsample.post_norm = zeros_like(st.downsample.post_norm);
    for (const auto& b : st.blocks) {
      Block zb{zeros_like(b.norm1),
               std::visit([](const auto& mx) -> Mixer { return zeros_like(mx); }, b.mixer),
               zeros_like(b.norm2),
               Mlp{zeros_like(b.mlp.fc1), zeros_like(b.mlp.fc2)},
               zeros_like(b.res_scale1),
               zeros_like(b.layer_scale1),
               zeros_like(b.res_scale2),
               zeros_like(b.layer_scale2)};
      zs.blocks.push_back(std::move(zb));
    }
    z.stages.push_back(std::move(zs));
  }
  z.head_norm = zeros_like(m.head_norm);
  z.head = zeros_like(m.head);
  return z;
}

FeatureMap block_forward(const Block& b, const FeatureMap& x) {
  const FeatureMap m = mixer_forward(b.mixer, channel_norm_forward(b.norm1, x));
  const FeatureMap x1 = scale_channels(b.res_scale1, x) + scale_channels(b.layer_scale1, m);
  const FeatureMap f = mlp_forward(b.mlp, channel_norm_forward(b.norm2, x1));
  return scale_channels(b.res_scale2, x1) + scale_channels(b.layer_scale2, f);
}

FeatureMap block_backward(const Block& b, const FeatureMap& x, const FeatureMap& grad_out,
                          Block& grad) {
  const FeatureMap h1 = channel_norm_forward(b.norm1, x);
  const FeatureMap m = mixer_forward(b.mixer, h1);
  const FeatureMap x1 = scale_channels(b.res_scale1, x) + scale_channels(b.layer_scale1, m);
  const FeatureMap h2 = channel_norm_forward(b.norm2, x1);

  if (b.res_scale2) accumulate_scale_grad(grad_out, x1, *grad.res_scale2);
  if (b.layer_scale2) {
    accumulate_scale_grad(grad_out, mlp_forward(b.mlp, h2), *grad.layer_scale2);
  }
  FeatureMap g_x1 = scale_channels(b.res_scale2, grad_out);
  const FeatureMap g_h2 = mlp_backward(b.mlp, h2, scale_channels(b.layer_scale2, grad_out),
                                       grad.mlp);
  g_x1 += channel_norm_backward(b.norm2, x1, g_h2, grad.norm2);

  if (b.res_scale1) accumulate_scale_grad(g_x1, x, *grad.res_scale1);
  if (b.layer_scale1) accumulate_scale_grad(g_x1, m, *grad.layer_scale1);
  FeatureMap g_x = scale_channels(b.res_scale1, g_x1);
  const FeatureMap g_h1 =
      mixer_backward(b.mixer, h1, scale_channels(b.layer_scale1, g_x1), grad.mixer);
  g_x += channel_norm_backward(b.norm1, x, g_h1, grad.norm1);
  return g_x;
}

namespace {

void check_image(const Model& model, const FeatureMap& image) {
  const auto& c = model.config;
  if (image.channels() != c.in_channels || image.height() != c.image_size ||
      image.width() != c.image_size) {
    throw ShapeError("model expects " + std::to_string(c.in_channels) + "x" +
                     std::to_string(c.image_size) + "x" + std::to_string(c.image_size) +
                     " input, got " + image.shape_string());
  }
  if (image.height() % 32 != 0) {
    throw ShapeError("input extent must be divisible by 32, got " + image.shape_string());
  }
}

FeatureMap head_input(const std::vector<double>& pooled) {
  return FeatureMap(pooled.size(), 1, 1, pooled);
}

}  // namespace

ForwardResult forward(const Model& model, const FeatureMap& image) {
  check_image(model, image);
  ForwardResult r;
  FeatureMap x = image;
  for (const auto& st : model.stages) {
    x = downsample_forward(st.downsample, x);
    for (const auto& b : st.blocks) x = block_forward(b, x);
    r.stages.push_back(x);
  }
  r.pooled = global_average(x);
  const FeatureMap logits =
      linear_forward(model.head, channel_norm_forward(model.head_norm, head_input(r.pooled)));
  r.logits = logits.storage();
  return r;
}

FeatureMap backward(const Model& model, const FeatureMap& image,
                    std::span<const double> grad_logits, Model& grads) {
  check_image(model, image);
  if (grad_logits.size() != model.config.num_classes) {
    throw ShapeError("expected " + std::to_string(model.config.num_classes) +
                     " logit gradients, got " + std::to_string(grad_logits.size()));
  }
  // Inputs of every downsample and block, recomputed from the image.
  std::vector<FeatureMap> down_inputs;
  std::vector<std::vector<FeatureMap>> block_inputs;
  FeatureMap x = image;
  for (const auto& st : model.stages) {
    down_inputs.push_back(x);
    x = downsample_forward(st.downsample, x);
    block_inputs.emplace_back();
    for (const auto& b : st.blocks) {
      block_inputs.back().push_back(x);
      x = block_forward(b, x);
    }
  }
  const FeatureMap pooled = head_input(global_average(x));
  const FeatureMap normed = channel_norm_forward(model.head_norm, pooled);
  const FeatureMap g_logits(grad_logits.size(), 1, 1,
                            std::vector<double>(grad_logits.begin(), grad_logits.end()));
  const FeatureMap g_normed = linear_backward(model.head, normed, g_logits, grads.head);
  const FeatureMap g_pooled =
      channel_norm_backward(model.head_norm, pooled, g_normed, grads.head_norm);

  FeatureMap g = FeatureMap::zeros_like(x);
  const double inv = 1.0 / static_cast<double>(x.plane_size());
  for (std::size_t c = 0; c < g.channels(); ++c) {
    for (double& v : g.channel(c)) v = g_pooled(c, 0, 0) * inv;
  }
  for (std::size_t s = model.stages.size(); s-- > 0;) {
    const auto& st = model.stages[s];
    for (std::size_t b = st.blocks.size(); b-- > 0;) {
      g = block_backward(st.blocks[b], block_inputs[s][b], g, grads.stages[s].blocks[b]);
    }
    g = downsample_backward(st.downsample, down_inputs[s], g, grads.stages[s].downsample);
  }
  return g;
}

std::size_t count_parameters(const Model& m) {
  std::size_t n = 0;
  visit_parameters(m, [&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

std::size_t count_parameters(const ModelConfig& config) {
  return count_parameters(build_model(config));
}

namespace {

std::string parameter_group(const std::string& name) {
  if (name.starts_with("head")) return "head";
  if (name.find(".down.") != std::string::npos) return "downsample";
  if (name.find("scale") != std::string::npos) return "scale";
  if (name.find(".mixer.") != std::string::npos) return "mixer";
  if (name.find(".mlp.") != std::string::npos) return "mlp";
  return "norm";
}

}  // namespace

ParameterReport parameter_report(const Model& m) {
  ParameterReport r;
  visit_parameters(m, [&](const std::string& name, const Tensor& t) {
    r.total += t.size();
    r.by_group[parameter_group(name)] += t.size();
    if (name.find(".mixer.") != std::string::npos) {
      const std::string stage = name.substr(0, name.find(".blocks."));
      const std::string key = stage.substr(stage.find('.') + 1);
      r.by_stage_mixer["stage" + key + "." + to_string(m.config.mixers[std::stoul(key)])] +=
          t.size();
    }
  });
  return r;
}

nlohmann::json to_json(const ParameterReport& r) {
  nlohmann::json j;
  j["total"] = r.total;
  j["by_group"] = r.by_group;
  j["by_stage_mixer"] = r.by_stage_mixer;
  return j;
}

NamedTensors model_tensors(const Model& m) {
  NamedTensors out;
  visit_parameters(m, [&](const std::string& name, const Tensor& t) { out.emplace_back(name, t); });
  return out;
}

void load_tensors(Model& m, const NamedTensors& tensors) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : tensors) by_name[name] = &t;
  std::size_t used = 0;
  visit_parameters(m, [&](const std::string& name, Tensor& t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("container lacks parameter " + name);
    if (it->second->shape() != t.shape()) {
      throw IoError("parameter " + name + " has shape " + shape_string(it->second->shape()) +
                    ", model expects " + shape_string(t.shape()));
    }
    t = *it->second;
    ++used;
  });
  if (used != tensors.size()) {
    throw IoError("container holds " + std::to_string(tensors.size() - used) +
                  " parameters the model does not use");
  }
}

}  // namespace spanet
