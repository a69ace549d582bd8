#include <doctest.h>

#include <cmath>
#include <complex>
#include <numeric>
#include <thread>

#include "spanet/dft.hpp"
#include "spanet/error.hpp"
#include "spanet/ops.hpp"
#include "spanet/rng.hpp"
#include "spanet/tensor.hpp"

using namespace spanet;

namespace {
FeatureMap noise(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  FeatureMap x(c, h, w);
  for (double& v : x.values()) v = rng.normal();
  return x;
}
}  // namespace

TEST_CASE("feature map rejects empty dimensions") {
  CHECK_THROWS_AS(FeatureMap(0, 2, 2), ShapeError);
  CHECK_THROWS_AS(FeatureMap(1, 0, 2), ShapeError);
  CHECK_THROWS_AS(FeatureMap(2, 2, 2, std::vector<double>(7)), DimensionMismatch);
  FeatureMap x(2, 3, 4);
  CHECK(x.size() == 24);
}

TEST_CASE("gelu") {
  CHECK(gelu(0.0) == 0.0);
  CHECK(gelu(10.0) == doctest::Approx(10.0).epsilon(1e-7));
  CHECK(std::abs(gelu(10.0) - 10.0) <= 1e-6);
  // 1 * Phi(1) and -1 * Phi(-1), 40-digit reference values
  CHECK(std::abs(gelu(1.0) - 0.84134474606854294859) <= 1e-15);
  CHECK(std::abs(gelu(-1.0) + 0.15865525393145705141) <= 1e-15);
  CHECK(std::abs(gelu(-40.0)) <= 1e-300);
}

TEST_CASE("gelu derivative matches central differences") {
  for (double x : {-3.0, -0.7, 0.0, 0.4, 2.5}) {
    const double h = 1e-6;
    const double fd = (gelu(x + h) - gelu(x - h)) / (2 * h);
    CHECK(std::abs(gelu_derivative(x) - fd) <= 1e-8);
  }
}

TEST_CASE("sigmoid is monotone and stable") {
  CHECK(std::abs(sigmoid(2.0) - 0.88079707797788244406) <= 1e-15);
  double prev = 0.0;
  for (double x = -50; x <= 50; x += 0.5) {
    const double s = sigmoid(x);
    CHECK(s >= prev);
    CHECK(std::isfinite(s));
    prev = s;
  }
  CHECK(sigmoid(-800.0) == 0.0);
  CHECK(sigmoid(800.0) == 1.0);
}

TEST_CASE("softmax rows") {
  SUBCASE("uniform input") {
    const Matrix p = softmax_rows(Matrix(1, 4, 0.0));
    for (double v : p.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  }
  SUBCASE("shift invariance") {
    const Matrix a = softmax_rows(Matrix(1, 2, std::vector<double>{0.0, 1.75}));
    const Matrix b = softmax_rows(Matrix(1, 2, std::vector<double>{1000.0, 1001.75}));
    CHECK(max_abs_diff(a.values(), b.values()) <= 1e-15);
  }
  SUBCASE("extended precision reference") {
    const Matrix p = softmax_rows(Matrix(1, 3, std::vector<double>{1, 2, 3}));
    CHECK(std::abs(p(0, 0) - 0.090030573170380457998) <= 1e-15);
    CHECK(std::abs(p(0, 1) - 0.24472847105479765247) <= 1e-15);
    CHECK(std::abs(p(0, 2) - 0.66524095577482188953) <= 1e-15);
  }
  SUBCASE("rows sum to one") {
    Rng rng(3);
    Matrix s(7, 11);
    for (double& v : s.values()) v = 30 * rng.normal();
    const Matrix p = softmax_rows(s);
    for (std::size_t r = 0; r < 7; ++r) {
      double sum = 0.0;
      for (double v : p.row(r)) {
        CHECK(v >= 0.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("spatial norm") {
  const std::vector<double> one2{1.0, 1.0};
  SUBCASE("constant map gives zeros") {
    const FeatureMap y = spatial_norm(FeatureMap(2, 3, 3, 4.2), one2);
    CHECK(max_abs(y.values()) == 0.0);
  }
  SUBCASE("hand computed 2x1x2 map") {
    // mean 4, variance (9 + 1 + 1 + 9) / 4 = 5
    const FeatureMap x(2, 1, 2, std::vector<double>{1, 3, 5, 7});
    const FeatureMap y = spatial_norm(x, one2);
    const double expect[] = {-1.3416406523358152925, -0.44721355077860509749,
                             0.44721355077860509749, 1.3416406523358152925};
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(y.values()[i] - expect[i]) <= 1e-15);
  }
  SUBCASE("unit moments on random input") {
    const FeatureMap x = noise(3, 8, 8, 11);
    const FeatureMap y = spatial_norm(x, std::vector<double>(3, 1.0));
    const double n = static_cast<double>(y.size());
    const double mean = std::accumulate(y.values().begin(), y.values().end(), 0.0) / n;
    double var = 0.0;
    for (double v : y.values()) var += (v - mean) * (v - mean);
    CHECK(std::abs(mean) <= 1e-12);
    CHECK(std::abs(var / n - 1.0) <= 1e-5);
  }
}

TEST_CASE("norm backward matches central differences") {
  const FeatureMap x = noise(3, 2, 3, 5);
  const FeatureMap up = noise(3, 2, 3, 6);
  const std::vector<double> gain{0.7, 1.3, -0.4};
  const std::vector<double> bias{0.1, 0.0, -0.2};
  for (bool spatial : {true, false}) {
    auto f = [&](const FeatureMap& in, const std::vector<double>& g) {
      const FeatureMap y = spatial ? spatial_norm(in, g, kNormEpsilon, bias)
                                   : channel_norm(in, g, kNormEpsilon, bias);
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += y.values()[i] * up.values()[i];
      return s;
    };
    std::vector<double> gg(3, 0.0), gb(3, 0.0);
    const FeatureMap dx = spatial
        ? spatial_norm_backward(x, gain, kNormEpsilon, up, gg, gb)
        : channel_norm_backward(x, gain, kNormEpsilon, up, gg, gb);
    const double h = 1e-6;
    for (std::size_t i = 0; i < x.size(); ++i) {
      FeatureMap xp = x, xm = x;
      xp.values()[i] += h;
      xm.values()[i] -= h;
      CHECK(std::abs(dx.values()[i] - (f(xp, gain) - f(xm, gain)) / (2 * h)) <= 1e-6);
    }
    for (std::size_t c = 0; c < 3; ++c) {
      auto gp = gain, gm = gain;
      gp[c] += h;
      gm[c] -= h;
      CHECK(std::abs(gg[c] - (f(x, gp) - f(x, gm)) / (2 * h)) <= 1e-6);
    }
  }
}

TEST_CASE("dft2") {
  SUBCASE("constant map has a single DC bin") {
    const std::vector<double> plane(12, 1.5);
    const ComplexMap s = dft2(plane, 3, 4);
    CHECK(std::abs(s.data[0] - std::complex<double>(1.5 * 12, 0)) <= 1e-12);
    for (std::size_t i = 1; i < s.data.size(); ++i) CHECK(std::abs(s.data[i]) <= 1e-12);
  }
  SUBCASE("round trip 16x16") {
    const FeatureMap x = noise(1, 16, 16, 2);
    const ComplexMap back = idft2(dft2(x.channel(0), 16, 16));
    CHECK(max_abs_diff(real_part(back), x.channel(0)) <= 1e-10);
    CHECK(max_abs_imag(back) <= 1e-10);
  }
  SUBCASE("matches direct double summation and Parseval") {
    const std::size_t h = 5, w = 6;
    const FeatureMap x = noise(1, h, w, 9);
    const ComplexMap s = dft2(x.channel(0), h, w);
    const double pi = std::acos(-1.0L);
    double energy = 0.0, spectral = 0.0;
    for (std::size_t u = 0; u < h; ++u) {
      for (std::size_t v = 0; v < w; ++v) {
        std::complex<long double> acc = 0;
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t xx = 0; xx < w; ++xx) {
            const long double ang = -2.0L * pi *
                (static_cast<long double>(u * y) / h + static_cast<long double>(v * xx) / w);
            acc += static_cast<long double>(x(0, y, xx)) *
                   std::complex<long double>(std::cos(ang), std::sin(ang));
          }
        }
        CHECK(std::abs(std::complex<double>(acc) - s(u, v)) <= 1e-12);
        spectral += std::norm(s(u, v));
      }
    }
    for (double v : x.values()) energy += v * v;
    CHECK(std::abs(energy - spectral / (h * w)) <= 1e-9 * energy);
  }
  SUBCASE("real input gives Hermitian spectra") {
    const std::size_t h = 7, w = 4;
    const FeatureMap x = noise(1, h, w, 4);
    const ComplexMap s = dft2(x.channel(0), h, w);
    for (std::size_t u = 0; u < h; ++u) {
      for (std::size_t v = 0; v < w; ++v) {
        CHECK(std::abs(s(u, v) - std::conj(s((h - u) % h, (w - v) % w))) <= 1e-10);
      }
    }
  }
}

TEST_CASE("rng is deterministic and splittable") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  const Rng root(42);
  Rng s1 = root.split("alpha"), s2 = root.split("alpha"), s3 = root.split("beta");
  const auto v1 = s1.next_u64();
  CHECK(v1 == s2.next_u64());
  CHECK(v1 != s3.next_u64());
  CHECK(root.split(std::uint64_t{0}).next_u64() != root.split(std::uint64_t{1}).next_u64());

  // identical draws whichever thread produces them
  std::vector<double> serial(8), threaded(8);
  for (std::size_t i = 0; i < 8; ++i) serial[i] = root.split(i).normal();
  {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < 8; ++i) {
      pool.emplace_back([&, i] { threaded[i] = root.split(i).normal(); });
    }
  }
  CHECK(serial == threaded);
}

TEST_CASE("rng normal moments") {
  Rng rng(7);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    sum += v;
    sq += v * v;
  }
  CHECK(std::abs(sum / n) <= 0.01);
  CHECK(std::abs(sq / n - 1.0) <= 0.02);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(rng.below(5) < 5);
  }
}
