#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "spanet/conv_support.hpp"
#include "spanet/error.hpp"
#include "spanet/profiler.hpp"
#include "spanet/rng.hpp"

using namespace spanet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "spanet_test_profiler";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

FeatureMap noise(std::size_t c, std::size_t n, Rng& rng) {
  FeatureMap x(c, n, n);
  for (double& v : x.values()) v = rng.normal();
  return x;
}

// normalized 5x5 Gaussian (sigma 1), zero padded, per channel
FeatureMap low_pass(const FeatureMap& x) {
  std::vector<double> w(25);
  double total = 0.0;
  for (int r = 0; r < 5; ++r)
    for (int t = 0; t < 5; ++t) total += w[r * 5 + t] = std::exp(-((r - 2) * (r - 2) + (t - 2) * (t - 2)) / 2.0);
  for (double& v : w) v /= total;
  const KernelSpec k(5, w);
  FeatureMap y = FeatureMap::zeros_like(x);
  for (std::size_t c = 0; c < x.channels(); ++c) {
    const auto out = direct_conv(x.channel(c), x.height(), x.width(), k);
    std::copy(out.begin(), out.end(), y.channel(c).begin());
  }
  return y;
}

}  // namespace

TEST_CASE("frequency response closed forms") {
  const auto g = PatchGraph::grid(4, 4, 3);
  const Matrix l = normalized_laplacian(g);
  const auto b = eigendecompose(l);
  SUBCASE("identity support") {
    for (double v : frequency_response(Matrix::identity(16), b)) CHECK(std::abs(v - 1.0) <= 1e-12);
  }
  SUBCASE("the Laplacian itself") {
    const auto phi = frequency_response(l, b);
    for (std::size_t k = 0; k < 16; ++k) CHECK(std::abs(phi[k] - b.eigenvalues[k]) <= 1e-9);
  }
  SUBCASE("3x3 average on a 4x4 grid against a long double oracle") {
    // support built directly from the stencil, independent of conv_support
    Matrix c(16, 16);
    for (int a = 0; a < 16; ++a)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int y = a / 4 + dy, x = a % 4 + dx;
          if (y >= 0 && y < 4 && x >= 0 && x < 4) c(a, y * 4 + x) = 1.0 / 9.0;
        }
    const auto phi = frequency_response(assemble_support(KernelSpec::constant(3, 1.0 / 9.0), 4, 4).matrix, b);
    const auto phi_dense = frequency_response(c, b);
    for (std::size_t k = 0; k < 16; ++k) {
      long double s = 0.0L;
      for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t j = 0; j < 16; ++j)
          s += (long double)b.vectors(i, k) * c(i, j) * b.vectors(j, k);
      CHECK(std::abs(phi[k] - (double)s) <= 1e-13);
      CHECK(std::abs(phi_dense[k] - (double)s) <= 1e-13);
    }
  }
  SUBCASE("size mismatch") {
    CHECK_THROWS_AS(frequency_response(Matrix::identity(9), b), DimensionMismatch);
  }
}

TEST_CASE("frequency response is linear in the support") {
  Rng rng(3);
  const auto b = laplacian_basis(PatchGraph::grid(5, 5, 3));
  const Matrix c1 = assemble_support(KernelSpec::random(3, rng), 5, 5).matrix.to_dense();
  const Matrix c2 = assemble_support(KernelSpec::random(5, rng), 5, 5).matrix.to_dense();
  const double a = 0.8, s = -2.1;
  const auto p1 = frequency_response(c1, b), p2 = frequency_response(c2, b);
  const auto mixed = frequency_response(a * c1 + s * c2, b);
  for (std::size_t k = 0; k < 25; ++k) CHECK(std::abs(mixed[k] - (a * p1[k] + s * p2[k])) <= 1e-10);
}

TEST_CASE("row-stochastic support on the complete graph keeps lambda 0") {
  Rng rng(4);
  const auto b = laplacian_basis(PatchGraph::complete(3, 3));
  Matrix c(9, 9);
  for (std::size_t r = 0; r < 9; ++r) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 9; ++j) sum += c(r, j) = rng.uniform();
    for (std::size_t j = 0; j < 9; ++j) c(r, j) /= sum;
  }
  CHECK(std::abs(frequency_response(c, b)[0] - 1.0) <= 1e-9);
}

TEST_CASE("campaigns") {
  SUBCASE("forced identity gives a flat response") {
    CampaignOptions o;
    o.trials = 1;
    o.force_identity = true;
    const auto p = simulate_campaign(o);
    REQUIRE(p.trials.size() == 1);
    CHECK(p.trials[0].phi.size() == 256);
    for (double v : p.trials[0].phi) CHECK(std::abs(v - 1.0) <= 1e-12);
  }
  SUBCASE("bit-identical reruns, serial or threaded") {
    CampaignOptions o;
    o.trials = 6;
    o.patch = 6;
    o.kernel = 5;
    o.seed = 99;
    const auto a = simulate_campaign(o);
    const auto b = simulate_campaign(o);
    o.threads = 3;
    const auto c = simulate_campaign(o);
    for (std::size_t t = 0; t < 6; ++t) {
      CHECK(a.trials[t].phi == b.trials[t].phi);
      CHECK(a.trials[t].phi == c.trials[t].phi);
    }
    CHECK(a.trials[0].phi != a.trials[1].phi);
  }
  SUBCASE("attention campaign on the complete graph") {
    CampaignOptions o;
    o.graph = GraphKind::complete;
    o.kernel = std::nullopt;
    o.trials = 4;
    o.patch = 4;
    const auto p = simulate_campaign(o);
    CHECK(p.kernel == "attention");
    for (const auto& t : p.trials) {
      CHECK(std::abs(t.phi[0] - 1.0) <= 1e-9);
      for (double l : t.lambda) {
        CHECK(l >= -1e-9);
        CHECK(l <= 2.0 + 1e-9);
      }
    }
  }
  SUBCASE("aggregate bins partition [0,2]") {
    CampaignOptions o;
    o.trials = 3;
    o.patch = 5;
    const auto p = simulate_campaign(o);
    REQUIRE(p.aggregate.size() == 32);
    std::size_t total = 0;
    CHECK(p.aggregate.front().lo == 0.0);
    CHECK(p.aggregate.back().hi == 2.0);
    for (std::size_t i = 0; i < 32; ++i) {
      total += p.aggregate[i].count;
      if (i > 0) CHECK(p.aggregate[i].lo == p.aggregate[i - 1].hi);
    }
    CHECK(total == 3 * 25);
  }
  SUBCASE("invalid options") {
    CampaignOptions o;
    o.trials = 0;
    CHECK_THROWS_AS(simulate_campaign(o), InvalidConfig);
    o.trials = 1;
    o.kernel = 4;
    CHECK_THROWS_AS(simulate_campaign(o), InvalidConfig);
    o.kernel = std::nullopt;
    CHECK_THROWS_AS(simulate_campaign(o), InvalidConfig);
  }
}

TEST_CASE("band means") {
  std::vector<BinStat> bins{{0.0, 0.5, 2.0, 0.0, 3}, {0.5, 1.0, 4.0, 0.0, 1}, {1.0, 1.5, 0.0, 0.0, 0}};
  CHECK(band_mean(bins, 0.0, 1.0) == 3.0);
  CHECK(band_mean(bins, 1.0, 2.0) == 0.0);
}

TEST_CASE("spectral decomposition check") {
  Rng rng(6);
  const std::size_t n = 5;
  const auto g = PatchGraph::grid(n, n, 3);
  const Matrix l = normalized_laplacian(g);
  const auto b = eigendecompose(l);
  std::vector<double> x(n * n);
  for (double& v : x) v = rng.normal();
  SUBCASE("identity kernel") {
    const auto r = spectral_decomposition_check(KernelSpec::identity(3), x, b, n, n);
    CHECK(r.residual <= 1e-12);
    CHECK(r.off_diagonal_mass <= 1e-12);
  }
  SUBCASE("polynomial of the Laplacian") {
    const Matrix c = 0.7 * Matrix::identity(n * n) + (-1.3) * l;
    const auto r = spectral_decomposition_check(c, x, b);
    CHECK(r.residual <= 1e-8);
  }
  SUBCASE("generic kernel is reported") {
    const auto r = spectral_decomposition_check(KernelSpec::random(3, rng), x, b, n, n);
    CHECK(std::isfinite(r.residual));
    CHECK(r.off_diagonal_mass > 0.0);
  }
}

TEST_CASE("relative log amplitude") {
  Rng rng(12);
  SUBCASE("white noise is near flat") {
    const auto c = relative_log_amplitude(noise(64, 32, rng));
    REQUIRE(c.rel_log_amp.size() == 17);
    CHECK(c.rel_log_amp[0] == 0.0);
    CHECK(c.radius_norm.back() == 1.0);
    double mean = 0.0;
    for (std::size_t r = 1; r < 17; ++r) mean += c.rel_log_amp[r];
    mean /= 16.0;
    for (std::size_t r = 1; r < 17; ++r) CHECK(std::abs(c.rel_log_amp[r] - mean) <= 0.2);
    CHECK(c.channel_count == 64);
    CHECK_FALSE(c.degenerate);
  }
  SUBCASE("constant input is degenerate") {
    const auto c = relative_log_amplitude(FeatureMap(3, 8, 8, 1.25));
    CHECK(c.degenerate);
    CHECK(c.channel_count == 0);
    for (double v : c.rel_log_amp) CHECK(v == 0.0);
  }
  SUBCASE("low-pass noise has a lower tail") {
    const FeatureMap x = noise(64, 32, rng);
    const auto white = relative_log_amplitude(x);
    const auto smooth = relative_log_amplitude(low_pass(x));
    for (std::size_t r = 0; r < white.radius_norm.size(); ++r) {
      if (white.radius_norm[r] >= 0.5) CHECK(smooth.rel_log_amp[r] < white.rel_log_amp[r]);
    }
  }
  SUBCASE("non-square input") {
    CHECK_THROWS_AS(relative_log_amplitude(FeatureMap(1, 4, 6)), NonSquareInput);
  }
}

TEST_CASE("csv round trips") {
  SUBCASE("empty profile is header only") {
    FrequencyProfile p;
    p.kernel = "3";
    write_profile_csv(p, scratch("empty.csv"));
    CHECK(slurp(scratch("empty.csv")) == "lambda,phi,trial,graph,kernel,seed\n");
    CHECK(read_profile_csv(scratch("empty.csv")).trials.empty());
  }
  SUBCASE("one trial gives N rows; rewrite is byte identical") {
    CampaignOptions o;
    o.trials = 2;
    o.patch = 4;
    o.seed = 5;
    const auto p = simulate_campaign(o);
    write_profile_csv(p, scratch("a.csv"));
    const auto text = slurp(scratch("a.csv"));
    CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 2 * 16);
    const auto back = read_profile_csv(scratch("a.csv"));
    CHECK(back.trials.size() == 2);
    CHECK(back.trials[1].phi == p.trials[1].phi);
    CHECK(back.trials[1].lambda == p.trials[1].lambda);
    CHECK(back.seed == 5);
    write_profile_csv(back, scratch("b.csv"));
    CHECK(slurp(scratch("b.csv")) == text);

    write_aggregate_csv(p.aggregate, scratch("agg.csv"));
    write_aggregate_csv(read_aggregate_csv(scratch("agg.csv")), scratch("agg2.csv"));
    CHECK(slurp(scratch("agg.csv")) == slurp(scratch("agg2.csv")));
  }
  SUBCASE("rla curve") {
    Rng rng(1);
    const auto c = relative_log_amplitude(noise(2, 8, rng));
    write_rla_csv(c, scratch("rla.csv"));
    const auto back = read_rla_csv(scratch("rla.csv"));
    CHECK(back.rel_log_amp == c.rel_log_amp);
    CHECK(back.channel_count == 2);
  }
  SUBCASE("shortest round-trip formatting") {
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0}) {
      CHECK(parse_double(format_double(v)) == v);
    }
  }
  SUBCASE("malformed files") {
    std::ofstream(scratch("bad.csv")) << "lambda,phi\n1,2\n";
    CHECK_THROWS_AS(read_profile_csv(scratch("bad.csv")), IoError);
    std::ofstream(scratch("bad2.csv")) << "lambda,phi,trial,graph,kernel,seed\nx,1,0,grid,3,0\n";
    CHECK_THROWS_AS(read_profile_csv(scratch("bad2.csv")), IoError);
    CHECK_THROWS_AS(read_profile_csv(scratch("missing.csv")), IoError);
  }
}
