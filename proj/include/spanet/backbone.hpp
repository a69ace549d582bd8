#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "spanet/attention.hpp"
#include "spanet/container.hpp"
#include "spanet/conv_support.hpp"
#include "spanet/layers.hpp"
#include "spanet/spam.hpp"

namespace spanet {

inline constexpr std::size_t kStages = 4;

// Downsampling layers per stage (MetaFormer convention): a 7x7/4 stem with
// padding 2, then 3x3/2 convolutions with padding 1.
inline constexpr std::array<std::size_t, kStages> kDownKernels{7, 3, 3, 3};
inline constexpr std::array<std::size_t, kStages> kDownStrides{4, 2, 2, 2};
inline constexpr std::array<std::size_t, kStages> kDownPaddings{2, 1, 1, 1};

inline constexpr std::size_t kSepConvExpansion = 2;
inline constexpr int kSepConvKernel = 7;
inline constexpr double kLayerScaleInit = 1e-5;

enum class MixerKind { spam, sep_conv, attention, mix_attention };

/// How residual blocks scale their two paths: ResScale multiplies the
/// shortcut, LayerScale the branch output, `both` applies the two.
enum class BranchScale { none, res_scale, layer_scale, both };

std::string to_string(MixerKind kind);
MixerKind parse_mixer(const std::string& s);
std::string to_string(BranchScale s);
BranchScale parse_branch_scale(const std::string& s);

struct ModelConfig {
  std::array<std::size_t, kStages> dims{64, 128, 320, 512};
  std::array<std::size_t, kStages> blocks{3, 3, 9, 3};
  std::array<MixerKind, kStages> mixers{MixerKind::spam, MixerKind::spam, MixerKind::spam,
                                        MixerKind::spam};
  std::vector<std::size_t> res_scale_stages{2, 3};  // zero-based stage indices
  bool biases = false;
  SrfMode srf_mode = SrfMode::depthwise;
  bool use_srf = true;
  BranchScale branch_scale = BranchScale::res_scale;
  std::uint64_t seed = 0;
  std::size_t image_size = 224;
  std::size_t in_channels = 3;
  std::size_t num_classes = 1000;
  std::size_t mlp_ratio = 4;
  bool zero_head = false;

  /// Spatial extent of each stage's feature maps for `image_size` input.
  std::array<std::size_t, kStages> stage_extents() const;
};

/// Throws InvalidConfig naming the violated constraint.
void validate(const ModelConfig& config);

ModelConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelConfig& config);
ModelConfig load_config(const std::filesystem::path& path);

/// Full (cross-channel) strided convolution, weight [out, in, k, k].
struct Conv2d {
  Tensor weight;
  std::optional<Tensor> bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t kernel_size() const { return weight.dim(2); }
};

FeatureMap conv2d_forward(const Conv2d& conv, const FeatureMap& x);
FeatureMap conv2d_backward(const Conv2d& conv, const FeatureMap& x, const FeatureMap& grad_out,
                           Conv2d& grad);

struct Downsample {
  std::optional<Norm> pre_norm;
  Conv2d conv;
  std::optional<Norm> post_norm;
};

/// Pointwise expand -> GELU -> 7x7 depthwise -> pointwise project.
struct SepConv {
  Linear expand;
  DepthwiseConv depthwise;
  Linear project;
};

SepConv make_sep_conv(std::size_t dim, bool biases, Rng& rng);
SepConv zeros_like(const SepConv& s);
FeatureMap sep_conv_mixer(const FeatureMap& x, const SepConv& p);
FeatureMap sep_conv_backward(const FeatureMap& x, const SepConv& p, const FeatureMap& grad_out,
                             SepConv& grad);

struct Mlp {
  Linear fc1;
  Linear fc2;
};

using Mixer = std::variant<SpamParams, SepConv, AttentionMixer>;

struct Block {
  Norm norm1;
  Mixer mixer;
  Norm norm2;
  Mlp mlp;
  std::optional<Tensor> res_scale1;
  std::optional<Tensor> layer_scale1;
  std::optional<Tensor> res_scale2;
  std::optional<Tensor> layer_scale2;
};

struct Stage {
  Downsample downsample;
  std::vector<Block> blocks;
};

struct Model {
  ModelConfig config;
  std::vector<Stage> stages;
  Norm head_norm;
  Linear head;
};

/// Deterministic in config.seed. Throws InvalidConfig.
Model build_model(const ModelConfig& config);
Model zeros_like(const Model& m);

FeatureMap block_forward(const Block& b, const FeatureMap& x);
FeatureMap block_backward(const Block& b, const FeatureMap& x, const FeatureMap& grad_out,
                          Block& grad);

struct ForwardResult {
  std::vector<FeatureMap> stages;  // one map per stage
  std::vector<double> pooled;      // global average of the last stage
  std::vector<double> logits;
};

/// Throws ShapeError unless `image` is in_channels x image_size x image_size
/// with the size divisible by 32.
ForwardResult forward(const Model& model, const FeatureMap& image);

/// Backpropagates dL/dlogits; accumulates parameter gradients into `grads`
/// and returns dL/dimage.
FeatureMap backward(const Model& model, const FeatureMap& image,
                    std::span<const double> grad_logits, Model& grads);

template <class Self, class F>
  requires std::same_as<std::remove_const_t<Self>, Block>
void visit_parameters(Self& b, const std::string& prefix, F&& fn) {
  visit_parameters(b.norm1, prefix + ".norm1", fn);
  std::visit([&](auto& mixer) { visit_parameters(mixer, prefix + ".mixer", fn); }, b.mixer);
  if (b.res_scale1) fn(prefix + ".res_scale1", *b.res_scale1);
  if (b.layer_scale1) fn(prefix + ".layer_scale1", *b.layer_scale1);
  visit_parameters(b.norm2, prefix + ".norm2", fn);
  visit_parameters(b.mlp.fc1, prefix + ".mlp.fc1", fn);
  visit_parameters(b.mlp.fc2, prefix + ".mlp.fc2", fn);
  if (b.res_scale2) fn(prefix + ".res_scale2", *b.res_scale2);
  if (b.layer_scale2) fn(prefix + ".layer_scale2", *b.layer_scale2);
}

template <class Self, class F>
  requires std::same_as<std::remove_const_t<Self>, SepConv>
void visit_parameters(Self& p, const std::string& prefix, F&& fn) {
  visit_parameters(p.expand, prefix + ".expand", fn);
  visit_parameters(p.depthwise, prefix + ".depthwise", fn);
  visit_parameters(p.project, prefix + ".project", fn);
}

template <class Self, class F>
  requires std::same_as<std::remove_const_t<Self>, Model>
void visit_parameters(Self& m, F&& fn) {
  for (std::size_t s = 0; s < m.stages.size(); ++s) {
    auto& st = m.stages[s];
    const std::string sp = "stages." + std::to_string(s);
    if (st.downsample.pre_norm) visit_parameters(*st.downsample.pre_norm, sp + ".down.pre_norm", fn);
    fn(sp + ".down.conv.weight", st.downsample.conv.weight);
    if (st.downsample.conv.bias) fn(sp + ".down.conv.bias", *st.downsample.conv.bias);
    if (st.downsample.post_norm) visit_parameters(*st.downsample.post_norm, sp + ".down.post_norm", fn);
    for (std::size_t b = 0; b < st.blocks.size(); ++b) {
      visit_parameters(st.blocks[b], sp + ".blocks." + std::to_string(b), fn);
    }
  }
  visit_parameters(m.head_norm, "head_norm", fn);
  visit_parameters(m.head, "head", fn);
}

std::size_t count_parameters(const Model& m);
std::size_t count_parameters(const ModelConfig& config);

/// Parameter totals grouped by role (downsample, norm, mixer, mlp, scale,
/// head) plus the grand total.
struct ParameterReport {
  std::size_t total = 0;
  std::map<std::string, std::size_t> by_group;
  std::map<std::string, std::size_t> by_stage_mixer;  // "stage0.spam", "stage3.attention", ...
};

ParameterReport parameter_report(const Model& m);
nlohmann::json to_json(const ParameterReport& r);

NamedTensors model_tensors(const Model& m);
/// Replaces parameter values by name; shapes must match.
void load_tensors(Model& m, const NamedTensors& tensors);

}  // namespace spanet
