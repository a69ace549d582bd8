// spanet command-line tool. Exit codes: 0 ok, 1 assertion failure,
// 2 usage or configuration error, 3 input/output error.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "spanet/backbone.hpp"
#include "spanet/container.hpp"
#include "spanet/error.hpp"
#include "spanet/manifest.hpp"
#include "spanet/profiler.hpp"
#include "spanet/rng.hpp"
#include "spanet/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace spanet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

struct Common {
  std::string out_dir;
  std::size_t threads = 1;
};

struct ProfileArgs {
  std::string graph = "grid";
  std::string kernel = "3";
  std::size_t trials = kDefaultTrials;
  std::size_t patch = kDefaultPatch;
  std::uint64_t seed = 0;
  bool identity = false;
};

struct VerifyArgs {
  std::string suite = "all";
  std::uint64_t seed = 0;
};

struct ModelArgs {
  std::string config;
  std::string action = "count-params";
  std::string image;
  std::string params;
  std::optional<std::uint64_t> seed;
  std::size_t coordinates = 5;
};

struct RlaArgs {
  std::string input;
  std::string tensor;
};

fs::path prepare_dir(const Common& c) {
  fs::path dir = c.out_dir.empty() ? fs::path(".") : fs::path(c.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

ordered_json common_flags(const Common& c) {
  return {{"out", c.out_dir}, {"threads", c.threads}};
}

void report_outputs(const fs::path& dir, const ordered_json& manifest) {
  for (const auto& o : manifest.at("outputs")) {
    std::cout << (dir / o.at("path").get<std::string>()).string() << "  "
              << o.at("sha256").get<std::string>() << '\n';
  }
}

int run_profile(const Common& common, const ProfileArgs& a) {
  CampaignOptions opts;
  opts.graph = a.graph == "grid" ? GraphKind::grid : GraphKind::complete;
  if (a.kernel == "attention") {
    opts.kernel = std::nullopt;
  } else {
    try {
      std::size_t used = 0;
      opts.kernel = std::stoi(a.kernel, &used);
      if (used != a.kernel.size()) throw std::invalid_argument(a.kernel);
    } catch (const std::logic_error&) {
      throw InvalidConfig("--kernel must be an odd integer or 'attention', got '" + a.kernel + "'");
    }
  }
  opts.trials = a.trials;
  opts.patch = a.patch;
  opts.seed = a.seed;
  opts.threads = common.threads;
  opts.force_identity = a.identity;
  if (a.identity && !opts.kernel) throw InvalidConfig("--identity needs a convolution kernel");

  const FrequencyProfile p = simulate_campaign(opts);
  const fs::path dir = prepare_dir(common);
  std::string stem = "profile-" + a.graph + "-k" + p.kernel + "-t" + std::to_string(a.trials) +
                     "-p" + std::to_string(a.patch) + "-seed" + std::to_string(a.seed);
  if (a.identity) stem += "-identity";

  write_profile_csv(p, dir / (stem + ".csv"));
  write_aggregate_csv(p.aggregate, dir / (stem + ".aggregate.csv"));
  ordered_json summary;
  summary["graph"] = a.graph;
  summary["kernel"] = p.kernel;
  summary["seed"] = a.seed;
  summary["trials"] = a.trials;
  summary["patch"] = a.patch;
  summary["phi_recorded"] = "signed per trial; aggregates use |phi|";
  summary["weights"] = opts.kernel ? (a.identity ? "identity kernel" : "kernel taps N(0,1)")
                                   : "X N(0,1) 64xN, W_q/W_k N(0,1/64), head width 32";
  summary["eigenvalue_min"] = p.min_eigenvalue;
  summary["eigenvalue_max"] = p.max_eigenvalue;
  summary["orthogonality_residual"] = p.basis_diagnostics.orthogonality;
  summary["reconstruction_residual"] = p.basis_diagnostics.reconstruction;
  summary["band_ratio_1.5_2_over_0_0.25"] = band_ratio(p, 1.5, 2.0, 0.0, 0.25);
  summary["band_ratio_1_2_over_0_0.25"] = band_ratio(p, 1.0, 2.0, 0.0, 0.25);
  write_json(summary, dir / (stem + ".summary.json"));

  RunManifest m;
  m.command = "profile";
  m.flags = common_flags(common);
  m.flags.update(ordered_json{{"graph", a.graph},
                              {"kernel", a.kernel},
                              {"trials", a.trials},
                              {"patch", a.patch},
                              {"seed", a.seed},
                              {"identity", a.identity}});
  m.seed = a.seed;
  m.outputs = {stem + ".csv", stem + ".aggregate.csv", stem + ".summary.json"};
  report_outputs(dir, write_manifest(m, dir, stem + ".manifest.json"));
  return kExitOk;
}

int run_verify(const Common& common, const VerifyArgs& a) {
  nlohmann::json report = run_suite(a.suite, a.seed);
  const fs::path dir = prepare_dir(common);
  const std::string stem = "verify-" + a.suite + "-seed" + std::to_string(a.seed);
  write_json(report, dir / (stem + ".json"));
  RunManifest m;
  m.command = "verify";
  m.flags = common_flags(common);
  m.flags.update(ordered_json{{"suite", a.suite}, {"seed", a.seed}});
  m.seed = a.seed;
  m.outputs = {stem + ".json"};
  report_outputs(dir, write_manifest(m, dir, stem + ".manifest.json"));
  const bool passed = report.at("passed").get<bool>();
  std::cout << "suite " << a.suite << ": " << report.at("instances").get<std::size_t>()
            << " instances, " << (passed ? "passed" : "FAILED") << '\n';
  if (!passed) {
    std::cerr << "first failure: " << report.at("first_failure").dump() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

FeatureMap load_map(const fs::path& path, const std::string& name) {
  const NamedTensors tensors = read_container(path);
  if (tensors.empty()) throw IoError(path.string() + " holds no tensors");
  const Tensor* t = nullptr;
  if (name.empty()) {
    t = &tensors.front().second;
  } else {
    for (const auto& [n, v] : tensors) {
      if (n == name) t = &v;
    }
    if (!t) throw IoError(path.string() + " has no tensor named '" + name + "'");
  }
  if (t->rank() != 3) {
    throw IoError(path.string() + ": feature map must have rank 3, got " + shape_string(t->shape()));
  }
  return FeatureMap(t->dim(0), t->dim(1), t->dim(2), t->storage());
}

Tensor map_tensor(const FeatureMap& x) {
  return Tensor({x.channels(), x.height(), x.width()}, x.storage());
}

int run_model(const Common& common, const ModelArgs& a) {
  ModelConfig cfg = load_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  Model model = build_model(cfg);
  if (!a.params.empty()) load_tensors(model, read_container(a.params));

  const fs::path dir = prepare_dir(common);
  const std::string stem = "model-" + fs::path(a.config).stem().string() + "-" + a.action;
  RunManifest m;
  m.command = "model";
  m.flags = common_flags(common);
  m.flags.update(ordered_json{{"config", a.config},
                              {"action", a.action},
                              {"image", a.image},
                              {"params", a.params},
                              {"coordinates", a.coordinates}});
  if (a.seed) m.flags["seed"] = *a.seed;
  m.seed = cfg.seed;
  int code = kExitOk;

  const auto accounting = "all learnable tensors, classifier head (norm + linear to " +
                          std::to_string(cfg.num_classes) + " classes) included, biases " +
                          (cfg.biases ? "on" : "off");
  if (a.action == "build" || a.action == "count-params") {
    const ParameterReport r = parameter_report(model);
    ordered_json j;
    j["config"] = to_json(cfg);
    j["total_parameters"] = r.total;
    j["accounting"] = accounting;
    j["by_group"] = r.by_group;
    j["by_stage_mixer"] = r.by_stage_mixer;
    j["stage_extents"] = cfg.stage_extents();
    if (a.action == "build") {
      write_container(dir / (stem + ".params.bin"), model_tensors(model));
      m.outputs.push_back(stem + ".params.bin");
    }
    write_json(j, dir / (stem + ".json"));
    m.outputs.push_back(stem + ".json");
    std::cout << "parameters: " << r.total << '\n';
  } else if (a.action == "forward") {
    const FeatureMap image =
        a.image.empty() ? FeatureMap(cfg.in_channels, cfg.image_size, cfg.image_size)
                        : load_map(a.image, "");
    const ForwardResult r = forward(model, image);
    ordered_json j;
    j["input"] = a.image.empty() ? "zeros" : a.image;
    j["stages"] = ordered_json::array();
    NamedTensors features;
    for (std::size_t s = 0; s < r.stages.size(); ++s) {
      const auto& x = r.stages[s];
      j["stages"].push_back({x.channels(), x.height(), x.width()});
      features.emplace_back("stage" + std::to_string(s), map_tensor(x));
    }
    j["pooled"] = r.pooled;
    j["logits"] = r.logits;
    features.emplace_back("pooled", Tensor({r.pooled.size()}, r.pooled));
    write_container(dir / (stem + ".features.bin"), features);
    write_json(j, dir / (stem + ".json"));
    m.outputs = {stem + ".json", stem + ".features.bin"};
    std::cout << "pooled max |v|: " << max_abs(r.pooled) << '\n';
  } else {
    Rng rng = Rng(cfg.seed).split("cli.gradcheck");
    FeatureMap image(cfg.in_channels, cfg.image_size, cfg.image_size);
    if (a.image.empty()) {
      for (double& v : image.values()) v = rng.normal();
    } else {
      image = load_map(a.image, "");
    }
    std::vector<double> weights(cfg.num_classes);
    for (double& v : weights) v = rng.normal();
    Rng pick = rng.split("coordinates");
    const GradReport r = check_model_gradients(model, image, weights, a.coordinates, pick);
    nlohmann::json j = to_json(r);
    j["tolerance"] = kGradTolerance;
    j["passed"] = r.passes(kGradTolerance);
    write_json(j, dir / (stem + ".json"));
    m.outputs = {stem + ".json"};
    std::cout << "max relative error: " << r.max_relative_error() << '\n';
    if (!r.passes(kGradTolerance)) {
      std::cerr << "gradient check exceeded " << kGradTolerance << '\n';
      code = kExitFailure;
    }
  }
  report_outputs(dir, write_manifest(m, dir, stem + ".manifest.json"));
  return code;
}

int run_rla(const Common& common, const RlaArgs& a) {
  const FeatureMap x = load_map(a.input, a.tensor);
  const RlaCurve curve = relative_log_amplitude(x);
  const fs::path dir = prepare_dir(common);
  std::string stem = "rla-" + fs::path(a.input).stem().string();
  if (!a.tensor.empty()) stem += "-" + a.tensor;
  write_rla_csv(curve, dir / (stem + ".csv"));
  ordered_json summary{{"input", a.input},
                       {"tensor", a.tensor},
                       {"shape", {x.channels(), x.height(), x.width()}},
                       {"channel_count", curve.channel_count},
                       {"degenerate", curve.degenerate}};
  write_json(summary, dir / (stem + ".summary.json"));
  RunManifest m;
  m.command = "rla";
  m.flags = common_flags(common);
  m.flags.update(ordered_json{{"input", a.input}, {"tensor", a.tensor}});
  m.outputs = {stem + ".csv", stem + ".summary.json"};
  report_outputs(dir, write_manifest(m, dir, stem + ".manifest.json"));
  if (curve.degenerate) std::cout << "degenerate input: no energy away from DC\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-spectral profiling of token mixers and SPAM reference models"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", version());

  Common common;
  if (const char* env = std::getenv("SPANET_OUTPUT_DIR")) common.out_dir = env;
  app.add_option("--out", common.out_dir,
                 "Output directory (default: $SPANET_OUTPUT_DIR, else the working directory)");
  app.add_option("--threads", common.threads, "Worker threads")
      ->check(CLI::Range(std::size_t{1}, std::size_t{1024}));

  ProfileArgs pa;
  auto* profile = app.add_subcommand("profile", "Frequency-response campaign");
  profile->add_option("--graph", pa.graph, "grid or complete")
      ->check(CLI::IsMember({"grid", "complete"}));
  profile->add_option("--kernel", pa.kernel, "Odd kernel size, or 'attention'");
  profile->add_option("--trials", pa.trials)->check(CLI::Range(std::size_t{1}, std::size_t{1} << 20));
  profile->add_option("--patch", pa.patch, "Patch grid side")
      ->check(CLI::Range(std::size_t{2}, std::size_t{64}));
  profile->add_option("--seed", pa.seed);
  profile->add_flag("--identity", pa.identity, "Use the identity kernel in every trial");

  VerifyArgs va;
  auto* verify = app.add_subcommand("verify", "Run randomized oracle suites");
  verify->add_option("--suite", va.suite)->check(CLI::IsMember(suite_names()));
  verify->add_option("--seed", va.seed);

  ModelArgs ma;
  auto* model = app.add_subcommand("model", "Build, run or check a backbone");
  model->add_option("--config", ma.config, "Model config JSON")->required();
  model->add_option("--action", ma.action)
      ->check(CLI::IsMember({"build", "forward", "gradcheck", "count-params"}));
  model->add_option("--image", ma.image, "Container holding a 3 x S x S image");
  model->add_option("--params", ma.params, "Container with parameters to load");
  model->add_option("--seed", ma.seed, "Overrides the config seed");
  model->add_option("--coordinates", ma.coordinates, "Parameters sampled by gradcheck")
      ->check(CLI::Range(std::size_t{1}, std::size_t{1000}));

  RlaArgs ra;
  auto* rla = app.add_subcommand("rla", "Relative log amplitude of a feature map");
  rla->add_option("--input", ra.input, "Container holding a C x N x N tensor")->required();
  rla->add_option("--tensor", ra.tensor, "Tensor name (default: first)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (profile->parsed()) return run_profile(common, pa);
    if (verify->parsed()) return run_verify(common, va);
    if (model->parsed()) return run_model(common, ma);
    return run_rla(common, ra);
  } catch (const InvalidConfig& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const NonSquareInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}
