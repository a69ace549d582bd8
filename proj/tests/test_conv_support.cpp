#include <doctest.h>

#include <cmath>

#include "spanet/conv_support.hpp"
#include "spanet/error.hpp"
#include "spanet/rng.hpp"

using namespace spanet;

namespace {
std::vector<double> noise(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}
}  // namespace

TEST_CASE("kernel spec validation") {
  CHECK_THROWS_AS(KernelSpec(2, std::vector<double>(4)), ShapeError);
  CHECK_THROWS_AS(KernelSpec(3, std::vector<double>(8)), DimensionMismatch);
  CHECK(KernelSpec::identity(5).padding() == 2);
}

TEST_CASE("output extent") {
  CHECK(conv_output_extent(16, 3, 1, 1) == 16);
  CHECK(conv_output_extent(224, 7, 4, 2) == 56);
  CHECK(conv_output_extent(56, 3, 2, 1) == 28);
  CHECK(conv_output_extent(7, 9, 1, 4) == 7);
}

TEST_CASE("basis matrices") {
  SUBCASE("1x1 kernel basis is the identity") {
    const auto b = build_basis(0, 1, 3, 4);
    CHECK(max_abs_diff(b.to_dense().values(), Matrix::identity(12).values()) == 0.0);
  }
  SUBCASE("centre tap of a 3x3 kernel is the identity") {
    const auto b = build_basis(4, 3, 5, 3);
    CHECK(max_abs_diff(b.to_dense().values(), Matrix::identity(15).values()) == 0.0);
  }
  SUBCASE("corner tap on 2x2 input") {
    // only the bottom-right output (a=3) reaches a valid input (b=0)
    const auto b = build_basis(0, 3, 2, 2);
    CHECK(b.nonzeros() == 1);
    CHECK(b.column[3] == std::optional<std::size_t>(0));
  }
  SUBCASE("at most one entry per row, bounds rule") {
    const int m = 5;
    const std::size_t h = 4, w = 6;
    const long p = 2;
    for (std::size_t z = 0; z < m * m; ++z) {
      const auto b = build_basis(z, m, h, w);
      const long r = long(z) / m, t = long(z) % m;
      for (std::size_t a = 0; a < h * w; ++a) {
        const long y = long(a / w), x = long(a % w);
        const long iy = y + r - p, ix = x + t - p;
        const bool inside = iy >= 0 && iy < long(h) && ix >= 0 && ix < long(w);
        REQUIRE(b.column[a].has_value() == inside);
        if (inside) CHECK(*b.column[a] == std::size_t(iy * long(w) + ix));
      }
    }
  }
}

TEST_CASE("assembled supports") {
  SUBCASE("identity kernel") {
    const auto s = assemble_support(KernelSpec::identity(3), 4, 5);
    CHECK(max_abs_diff(s.matrix.to_dense().values(), Matrix::identity(20).values()) == 0.0);
  }
  SUBCASE("1x1 kernel scales") {
    const auto s = assemble_support(KernelSpec(1, {2.5}), 3, 3);
    CHECK(max_abs_diff(s.matrix.to_dense().values(), (2.5 * Matrix::identity(9)).values()) == 0.0);
  }
  SUBCASE("all-ones 3x3 on 2x2 covers everything") {
    const auto s = assemble_support(KernelSpec::constant(3, 1.0), 2, 2);
    CHECK(max_abs_diff(s.matrix.to_dense().values(), Matrix(4, 4, 1.0).values()) == 0.0);
  }
  SUBCASE("weighted sum of bases") {
    Rng rng(8);
    const auto k = KernelSpec::random(5, rng);
    const auto s = assemble_support(k, 6, 7);
    Matrix sum(42, 42);
    for (std::size_t z = 0; z < 25; ++z) sum = sum + k.weights[z] * s.bases[z].to_dense();
    CHECK(max_abs_diff(sum.values(), s.matrix.to_dense().values()) <= 1e-15);
    CHECK(s.matrix.stored() <= 42 * 25);
  }
}

TEST_CASE("direct convolution closed forms") {
  const std::size_t h = 6, w = 5;
  const std::vector<double> flat(h * w, 2.0);
  SUBCASE("constant input, interior pixel gives c times the kernel sum") {
    Rng rng(2);
    const auto k = KernelSpec::random(3, rng);
    const auto y = direct_conv(flat, h, w, k);
    CHECK(std::abs(y[2 * w + 2] - 2.0 * k.sum()) <= 1e-12);
  }
  SUBCASE("all-ones 3x3 sees four pixels at a corner") {
    const auto y = direct_conv(flat, h, w, KernelSpec::constant(3, 1.0));
    CHECK(y[0] == 8.0);
    CHECK(y[h * w - 1] == 8.0);
    CHECK(y[1] == 12.0);
  }
  SUBCASE("delta input stamps the flipped kernel") {
    std::vector<double> delta(h * w, 0.0);
    delta[2 * w + 2] = 1.0;
    const KernelSpec k(3, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    const auto y = direct_conv(delta, h, w, k);
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx)
        CHECK(y[(2 + dy) * w + (2 + dx)] == k.weight(1 - dy, 1 - dx));
    // clipped at the border
    std::vector<double> corner(h * w, 0.0);
    corner[0] = 1.0;
    const auto yc = direct_conv(corner, h, w, k);
    CHECK(yc[0] == 5.0);
    CHECK(yc[1] == 4.0);
    CHECK(yc[w] == 2.0);
    CHECK(yc[w + 1] == 1.0);
  }
}

TEST_CASE("support and sliding window agree") {
  Rng rng(21);
  for (int m : {1, 3, 5, 7, 9}) {
    for (std::size_t h = 2; h <= 16; h += 3) {
      for (std::size_t w = 2; w <= 16; w += 5) {
        const auto k = KernelSpec::random(m, rng);
        const auto x = noise(h * w, rng);
        const auto s = assemble_support(k, h, w);
        CHECK(max_abs_diff(conv_via_support(s, x), direct_conv(x, h, w, k)) <= 1e-12);
      }
    }
  }
  const auto s = assemble_support(KernelSpec::identity(3), 3, 3);
  CHECK_THROWS_AS(conv_via_support(s, std::vector<double>(8)), DimensionMismatch);
}

TEST_CASE("convolution is linear") {
  Rng rng(4);
  const auto k = KernelSpec::random(5, rng);
  const auto s = assemble_support(k, 7, 9);
  const auto x = noise(63, rng), y = noise(63, rng);
  const double a = 1.7, b = -0.3;
  std::vector<double> mix(63);
  for (std::size_t i = 0; i < 63; ++i) mix[i] = a * x[i] + b * y[i];
  const auto cx = conv_via_support(s, x), cy = conv_via_support(s, y);
  std::vector<double> expect(63);
  for (std::size_t i = 0; i < 63; ++i) expect[i] = a * cx[i] + b * cy[i];
  CHECK(max_abs_diff(conv_via_support(s, mix), expect) <= 1e-12);
}

TEST_CASE("row sums equal the in-bounds tap sums") {
  Rng rng(6);
  const int m = 5;
  const std::size_t h = 7, w = 6;
  const auto k = KernelSpec::random(m, rng);
  const auto s = assemble_support(k, h, w);
  for (std::size_t a = 0; a < h * w; ++a) {
    double expect = 0.0;
    for (int r = 0; r < m; ++r)
      for (int t = 0; t < m; ++t) {
        const long iy = long(a / w) + r - 2, ix = long(a % w) + t - 2;
        if (iy >= 0 && iy < long(h) && ix >= 0 && ix < long(w)) expect += k.weight(r, t);
      }
    double row = 0.0;
    for (double v : s.matrix.row_values(a)) row += v;
    CHECK(std::abs(row - expect) <= 1e-12);
  }
}

TEST_CASE("depthwise convolution equals per-channel support products") {
  Rng rng(10);
  auto conv = make_depthwise(3, 5, false, rng);
  FeatureMap x(3, 6, 6);
  for (double& v : x.values()) v = rng.normal();
  const FeatureMap y = depthwise_forward(conv, x);
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> w(conv.weight.values().begin() + c * 25,
                          conv.weight.values().begin() + (c + 1) * 25);
    const auto s = assemble_support(KernelSpec(5, w), 6, 6);
    CHECK(max_abs_diff(conv_via_support(s, x.channel(c)), y.channel(c)) <= 1e-12);
  }
}

TEST_CASE("depthwise backward matches central differences") {
  Rng rng(12);
  auto conv = make_depthwise(2, 3, true, rng);
  FeatureMap x(2, 4, 5), up(2, 4, 5);
  for (double& v : x.values()) v = rng.normal();
  for (double& v : up.values()) v = rng.normal();
  auto loss = [&](const DepthwiseConv& c, const FeatureMap& in) {
    const FeatureMap y = depthwise_forward(c, in);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y.values()[i] * up.values()[i];
    return s;
  };
  DepthwiseConv grad = zeros_like(conv);
  const FeatureMap dx = depthwise_backward(conv, x, up, grad);
  const double h = 1e-6;
  for (std::size_t i = 0; i < conv.weight.size(); ++i) {
    DepthwiseConv p = conv, m = conv;
    p.weight[i] += h;
    m.weight[i] -= h;
    CHECK(std::abs(grad.weight[i] - (loss(p, x) - loss(m, x)) / (2 * h)) <= 1e-7);
  }
  for (std::size_t c = 0; c < 2; ++c) {
    DepthwiseConv p = conv, m = conv;
    (*p.bias)[c] += h;
    (*m.bias)[c] -= h;
    CHECK(std::abs((*grad.bias)[c] - (loss(p, x) - loss(m, x)) / (2 * h)) <= 1e-7);
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    FeatureMap p = x, m = x;
    p.values()[i] += h;
    m.values()[i] -= h;
    CHECK(std::abs(dx.values()[i] - (loss(conv, p) - loss(conv, m)) / (2 * h)) <= 1e-7);
  }
}
