#include "spanet/verify.hpp"

#include <algorithm>
#include <cmath>

#include "spanet/attention.hpp"
#include "spanet/conv_support.hpp"
#include "spanet/error.hpp"
#include "spanet/rng.hpp"

namespace spanet {

namespace {

using nlohmann::json;

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {  // inclusive
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

FeatureMap random_map(std::size_t c, std::size_t h, std::size_t w, Rng& rng) {
  FeatureMap x(c, h, w);
  for (double& v : x.values()) v = rng.normal();
  return x;
}

json finish_report(json report, const std::vector<json>& cases, double tolerance) {
  double worst = 0.0;
  bool passed = true;
  for (const auto& c : cases) {
    worst = std::max(worst, c.at("error").get<double>());
    if (!c.at("ok").get<bool>() && passed) {
      passed = false;
      report["first_failure"] = c;
    }
  }
  report["instances"] = cases.size();
  report["tolerance"] = tolerance;
  report["max_error"] = worst;
  report["passed"] = passed;
  report["cases"] = cases;
  return report;
}

template <class F>
void for_each_tensor(SpamParams& p, F&& fn) {
  visit_parameters(p, "spam", [&](const std::string& name, Tensor& t) { fn(name, t); });
}

}  // namespace

json verify_conv(std::uint64_t seed, std::size_t instances) {
  static constexpr int sizes[] = {1, 3, 5, 7, 9};
  Rng root = Rng(seed).split("verify.conv");
  std::vector<json> cases;
  for (std::size_t i = 0; i < instances; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(i));
    const int m = sizes[rng.below(5)];
    const std::size_t h = pick(rng, 2, 16);
    const std::size_t w = pick(rng, 2, 16);
    const KernelSpec k = KernelSpec::random(m, rng);
    std::vector<double> x(h * w);
    for (double& v : x) v = rng.normal();
    const auto support = assemble_support(k, h, w);
    const double err = max_abs_diff(conv_via_support(support, x), direct_conv(x, h, w, k));
    cases.push_back({{"m", m}, {"height", h}, {"width", w}, {"error", err},
                     {"ok", err <= kConvTolerance}});
  }
  return finish_report({{"suite", "conv"}, {"seed", seed}}, cases, kConvTolerance);
}

json verify_attention(std::uint64_t seed, std::size_t instances) {
  Rng root = Rng(seed).split("verify.attention");
  std::vector<json> cases;
  for (std::size_t i = 0; i < instances; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(i));
    const std::size_t d = pick(rng, 1, 16);
    const std::size_t h = pick(rng, 1, 8);
    const std::size_t w = pick(rng, 1, 8);
    const std::size_t dh = pick(rng, 1, 8);
    Matrix x(d, h * w);
    for (double& v : x.values()) v = rng.normal();
    const AttentionParams p =
        random_attention_params(d, dh, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    const double err =
        max_abs_diff(attention_as_support(x, p).values(), attention_direct(x, p).values());
    cases.push_back({{"dim", d}, {"tokens", h * w}, {"head_dim", dh}, {"error", err},
                     {"ok", err <= kAttentionTolerance}});
  }
  return finish_report({{"suite", "attention"}, {"seed", seed}}, cases, kAttentionTolerance);
}

json verify_srf(std::uint64_t seed, std::size_t instances_per_check) {
  Rng root = Rng(seed).split("verify.srf");
  std::vector<json> cases;
  for (std::size_t i = 0; i < instances_per_check; ++i) {
    Rng rng = root.split("instance").split(static_cast<std::uint64_t>(i));
    const std::size_t c = pick(rng, 1, 8);
    const std::size_t h = pick(rng, 2, 16);
    const std::size_t w = pick(rng, 2, 16);
    const SrfMode mode = rng.below(2) == 0 ? SrfMode::depthwise : SrfMode::single;
    const FeatureMap x = random_map(c, h, w, rng);
    const json shape = {{"channels", c}, {"height", h}, {"width", w}, {"mode", to_string(mode)}};

    // uniform mask value c scales the input by c
    const double scale = rng.uniform(0.01, 0.99);
    SrfMask mask = make_srf_mask(c, h, w, mode);
    mask.logits.fill(std::log(scale / (1.0 - scale)));
    const double s = sigmoid(mask.logits[0]);
    double err = max_abs_diff(srf(x, mask).values(), (s * x).values());
    json uc = shape;
    uc.update({{"check", "uniform_scale"}, {"scale", s}, {"error", err},
               {"ok", err <= kSrfScaleTolerance}});
    cases.push_back(uc);

    // saturated logits pass the input through
    mask.logits.fill(kPassThroughLogit);
    err = max_abs_diff(srf(x, mask).values(), x.values());
    json pc = shape;
    pc.update({{"check", "pass_through"}, {"error", err}, {"ok", err <= kSrfPassTolerance}});
    cases.push_back(pc);

    // zeroing only the DC bin removes each channel's mean
    const std::size_t k = mode == SrfMode::depthwise ? c : 1;
    std::vector<double> psi(k * h * w, 1.0);
    for (std::size_t ch = 0; ch < k; ++ch) psi[ch * h * w] = 0.0;
    const FeatureMap y = apply_spectral_mask(x, psi, k);
    err = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      double mean = 0.0;
      for (double v : y.channel(ch)) mean += v;
      err = std::max(err, std::abs(mean / static_cast<double>(h * w)));
    }
    json dc = shape;
    dc.update({{"check", "dc_zeroing"}, {"error", err}, {"ok", err <= kSrfMeanTolerance}});
    cases.push_back(dc);
  }
  json report = finish_report({{"suite", "srf"}, {"seed", seed}}, cases, kSrfScaleTolerance);
  report.erase("tolerance");
  report["tolerances"] = {{"uniform_scale", kSrfScaleTolerance},
                          {"pass_through", kSrfPassTolerance},
                          {"dc_zeroing", kSrfMeanTolerance}};
  json worst = {{"uniform_scale", 0.0}, {"pass_through", 0.0}, {"dc_zeroing", 0.0}};
  for (const auto& c : cases) {
    const std::string check = c.at("check");
    worst[check] = std::max(worst[check].get<double>(), c.at("error").get<double>());
  }
  report["max_error_by_check"] = worst;
  return report;
}

SpamParams random_spam(std::size_t dim, std::size_t height, std::size_t width, SrfMode mode,
                       Rng& rng) {
  SpamParams p = make_spam({dim, height, width, mode, true, false}, rng);
  for (auto& h : p.heads) {
    if (h.mask) {
      for (double& v : h.mask->logits.values()) v = rng.uniform(-3.0, 3.0);
    }
  }
  for (double& g : p.norm.gain.values()) g = rng.uniform(0.5, 1.5);
  return p;
}

GradReport check_spam_gradients(const FeatureMap& x, const SpamParams& p,
                                const FeatureMap& upstream) {
  GradReport report;
  SpamParams grads = zeros_like(p);
  const FeatureMap dx = spam_backward(x, p, upstream, grads);

  auto loss_at = [&](const SpamParams& q, const FeatureMap& input) {
    const FeatureMap y = spam_forward(input, q);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y.values()[i] * upstream.values()[i];
    return s;
  };

  SpamParams work = p;
  std::vector<std::pair<std::string, Tensor*>> params;
  std::vector<Tensor*> grad_tensors;
  for_each_tensor(work, [&](const std::string& n, Tensor& t) { params.emplace_back(n, &t); });
  for_each_tensor(grads, [&](const std::string&, Tensor& t) { grad_tensors.push_back(&t); });

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor* target = params[i].second;
    const std::vector<double> original = target->storage();
    LossFn loss = [&](std::span<const double> values) {
      std::copy(values.begin(), values.end(), target->values().begin());
      return loss_at(work, x);
    };
    const auto numeric = finite_diff(loss, original);
    target->storage() = original;
    report.checks += 2 * original.size() + 2;
    report.add(params[i].first, grad_tensors[i]->values(), numeric);
  }

  LossFn input_loss = [&](std::span<const double> values) {
    FeatureMap xi(x.channels(), x.height(), x.width(),
                  std::vector<double>(values.begin(), values.end()));
    return loss_at(p, xi);
  };
  const auto numeric_dx = finite_diff(input_loss, x.values());
  report.checks += 2 * x.size() + 2;
  report.add("input", dx.values(), numeric_dx);
  return report;
}

GradReport check_model_gradients(const Model& model, const FeatureMap& image,
                                 const std::vector<double>& weights, std::size_t coordinates,
                                 Rng& rng) {
  GradReport report;
  Model grads = zeros_like(model);
  backward(model, image, weights, grads);

  Model work = model;
  std::vector<std::pair<std::string, Tensor*>> params;
  std::vector<const Tensor*> grad_tensors;
  visit_parameters(work, [&](const std::string& n, Tensor& t) { params.emplace_back(n, &t); });
  visit_parameters(std::as_const(grads),
                   [&](const std::string&, const Tensor& t) { grad_tensors.push_back(&t); });

  for (std::size_t c = 0; c < coordinates; ++c) {
    const auto ti = static_cast<std::size_t>(rng.below(params.size()));
    Tensor* target = params[ti].second;
    const auto idx = static_cast<std::size_t>(rng.below(target->size()));
    const double original = (*target)[idx];
    LossFn loss = [&](std::span<const double> v) {
      (*target)[idx] = v[0];
      const auto logits = forward(work, image).logits;
      double s = 0.0;
      for (std::size_t k = 0; k < logits.size(); ++k) s += weights[k] * logits[k];
      return s;
    };
    const std::vector<double> point{original};
    const auto numeric = finite_diff(loss, point);
    (*target)[idx] = original;
    report.checks += 4;
    const double analytic = (*grad_tensors[ti])[idx];
    report.add(params[ti].first + "[" + std::to_string(idx) + "]",
               std::span<const double>(&analytic, 1), numeric);
  }
  return report;
}

ModelConfig toy_hybrid_config() {
  ModelConfig c;
  c.dims = {8, 16, 32, 64};
  c.blocks = {1, 1, 1, 1};
  c.mixers = {MixerKind::spam, MixerKind::spam, MixerKind::mix_attention, MixerKind::attention};
  c.image_size = 64;
  c.num_classes = 10;
  return c;
}

json verify_grad(std::uint64_t seed, std::size_t spam_instances, std::size_t model_coordinates) {
  Rng root = Rng(seed).split("verify.grad");
  std::vector<json> cases;
  for (std::size_t i = 0; i < spam_instances; ++i) {
    Rng rng = root.split("spam").split(static_cast<std::uint64_t>(i));
    const SrfMode mode = i % 2 == 0 ? SrfMode::depthwise : SrfMode::single;
    const SpamParams p = random_spam(4, 4, 4, mode, rng);
    const FeatureMap x = random_map(4, 4, 4, rng);
    const FeatureMap up = random_map(4, 4, 4, rng);
    const GradReport r = check_spam_gradients(x, p, up);
    const double err = r.max_relative_error();
    cases.push_back({{"kind", "spam"}, {"mode", to_string(mode)}, {"error", err},
                     {"ok", r.passes(kGradTolerance)}, {"report", to_json(r)}});
  }
  {
    Rng rng = root.split("model");
    ModelConfig cfg = toy_hybrid_config();
    cfg.seed = seed;
    const Model model = build_model(cfg);
    const FeatureMap image = random_map(cfg.in_channels, cfg.image_size, cfg.image_size, rng);
    std::vector<double> weights(cfg.num_classes);
    for (double& v : weights) v = rng.normal();
    Rng pick_rng = rng.split("coordinates");
    const GradReport r = check_model_gradients(model, image, weights, model_coordinates, pick_rng);
    cases.push_back({{"kind", "toy_hybrid"}, {"error", r.max_relative_error()},
                     {"ok", r.passes(kGradTolerance)}, {"report", to_json(r)}});
  }
  json report = finish_report({{"suite", "grad"}, {"seed", seed}}, cases, kGradTolerance);
  report["step"] = kGradStep;
  return report;
}

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"conv", "attention", "srf", "grad", "all"};
  return names;
}

json run_suite(const std::string& name, std::uint64_t seed) {
  if (name == "conv") return verify_conv(seed);
  if (name == "attention") return verify_attention(seed);
  if (name == "srf") return verify_srf(seed);
  if (name == "grad") return verify_grad(seed);
  if (name == "all") {
    json report{{"suite", "all"}, {"seed", seed}};
    bool passed = true;
    std::size_t instances = 0;
    for (const char* s : {"conv", "attention", "srf", "grad"}) {
      json sub = run_suite(s, seed);
      passed = passed && sub.at("passed").get<bool>();
      instances += sub.at("instances").get<std::size_t>();
      if (!sub.at("passed").get<bool>() && !report.contains("first_failure")) {
        report["first_failure"] = {{"suite", s}, {"case", sub.at("first_failure")}};
      }
      report["suites"][s] = std::move(sub);
    }
    report["instances"] = instances;
    report["passed"] = passed;
    return report;
  }
  throw InvalidConfig("unknown suite '" + name + "' (expected conv, attention, srf, grad or all)");
}

}  // namespace spanet
