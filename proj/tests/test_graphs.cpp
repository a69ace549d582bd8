#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "spanet/error.hpp"
#include "spanet/graphs.hpp"
#include "spanet/rng.hpp"

using namespace spanet;

namespace {

double max_abs_entry(const Matrix& m) { return max_abs(m.values()); }

Matrix reconstruct(const SpectralBasis& b) {
  const std::size_t n = b.size();
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += b.vectors(i, k) * b.eigenvalues[k] * b.vectors(j, k);
      out(i, j) = s;
    }
  }
  return out;
}

void check_basis_invariants(const Matrix& l, const SpectralBasis& b) {
  const auto d = diagnose(l, b);
  CHECK(d.orthogonality <= 1e-8);
  CHECK(d.reconstruction <= 1e-8);
  CHECK(std::is_sorted(b.eigenvalues.begin(), b.eigenvalues.end()));
  for (std::size_t k = 0; k < b.size(); ++k) {
    const auto col = b.column(k);
    const auto it = std::max_element(col.begin(), col.end(),
                                     [](double a, double c) { return std::abs(a) < std::abs(c); });
    CHECK(*it > 0.0);
  }
}

}  // namespace

TEST_CASE("two-node path") {
  const Matrix l = normalized_laplacian(Matrix(2, 2, std::vector<double>{0, 1, 1, 0}));
  CHECK(max_abs_diff(l.values(), std::vector<double>{1, -1, -1, 1}) <= 1e-15);
  const auto b = eigendecompose(l);
  CHECK(std::abs(b.eigenvalues[0]) <= 1e-12);
  CHECK(std::abs(b.eigenvalues[1] - 2.0) <= 1e-12);
}

TEST_CASE("complete graph spectrum") {
  for (std::size_t side : {2u, 3u, 4u}) {
    const auto g = PatchGraph::complete(side, side);
    const std::size_t n = g.node_count();
    const auto b = laplacian_basis(g);
    CHECK(std::abs(b.eigenvalues[0]) <= 1e-10);
    for (std::size_t k = 1; k < n; ++k) {
      CHECK(std::abs(b.eigenvalues[k] - double(n) / double(n - 1)) <= 1e-10);
    }
    check_basis_invariants(normalized_laplacian(g), b);
  }
}

TEST_CASE("3x3 grid spectrum against an independent eigensolver") {
  const auto g = PatchGraph::grid(3, 3, 3);
  const Matrix l = normalized_laplacian(g);
  Eigen::MatrixXd e(9, 9);
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 9; ++j) e(i, j) = l(i, j);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(e);
  const auto b = eigendecompose(l);
  for (int k = 0; k < 9; ++k) CHECK(std::abs(b.eigenvalues[k] - solver.eigenvalues()(k)) <= 1e-12);
  check_basis_invariants(l, b);
}

TEST_CASE("eigendecompose simple matrices") {
  SUBCASE("identity") {
    const auto b = eigendecompose(Matrix::identity(5));
    for (double v : b.eigenvalues) CHECK(std::abs(v - 1.0) <= 1e-15);
    CHECK(max_abs_diff(reconstruct(b).values(), Matrix::identity(5).values()) <= 1e-12);
  }
  SUBCASE("diagonal") {
    Matrix d(3, 3);
    d(0, 0) = 3;
    d(1, 1) = 1;
    d(2, 2) = 2;
    const auto b = eigendecompose(d);
    CHECK(b.eigenvalues == std::vector<double>{1, 2, 3});
    CHECK(b.vectors(1, 0) == 1.0);
    CHECK(b.vectors(2, 1) == 1.0);
    CHECK(b.vectors(0, 2) == 1.0);
  }
  SUBCASE("asymmetric input rejected") {
    Matrix a(2, 2);
    a(0, 1) = 1.0;
    CHECK_THROWS_AS(eigendecompose(a), DimensionMismatch);
  }
  SUBCASE("exhausted budget reports residual") {
    Rng rng(1);
    Matrix a(12, 12);
    for (std::size_t i = 0; i < 12; ++i)
      for (std::size_t j = 0; j <= i; ++j) a(i, j) = a(j, i) = rng.normal();
    try {
      eigendecompose(a, {1e-12, 1});
      FAIL("expected NoConvergence");
    } catch (const NoConvergence& e) {
      CHECK(e.residual() > 0.0);
    }
  }
}

TEST_CASE("16x16 grid basis") {
  const auto g = PatchGraph::grid(16, 16, 3);
  const Matrix l = normalized_laplacian(g);
  const auto b = eigendecompose(l);
  check_basis_invariants(l, b);
  CHECK(max_abs_diff(reconstruct(b).values(), l.values()) <= 1e-8);
  CHECK(b.eigenvalues.front() >= -1e-9);
  CHECK(b.eigenvalues.back() <= 2.0 + 1e-9);
}

TEST_CASE("isolated nodes are rejected") {
  Matrix a(3, 3);
  a(0, 1) = a(1, 0) = 1.0;
  CHECK_THROWS_AS(normalized_laplacian(a), IsolatedNode);
  CHECK_THROWS_AS(normalized_laplacian(PatchGraph::grid(4, 4, 1)), IsolatedNode);
}

TEST_CASE("grid adjacency matches brute force neighbourhoods") {
  for (int m : {3, 5, 7}) {
    for (std::size_t h : {2u, 3u, 5u}) {
      for (std::size_t w : {2u, 4u}) {
        const auto g = PatchGraph::grid(h, w, m);
        const Matrix& a = g.adjacency();
        const long r = (m - 1) / 2;
        std::size_t expected = 0;
        for (std::size_t i = 0; i < h * w; ++i) {
          CHECK(a(i, i) == 0.0);
          for (std::size_t j = 0; j < h * w; ++j) {
            const long dy = std::labs(long(i / w) - long(j / w));
            const long dx = std::labs(long(i % w) - long(j % w));
            const bool adj = i != j && std::max(dy, dx) <= r;
            CHECK(a(i, j) == (adj ? 1.0 : 0.0));
            CHECK(a(i, j) == a(j, i));
            expected += adj;
          }
        }
        CHECK(g.edge_entries() == expected);
      }
    }
  }
}

TEST_CASE("one zero eigenvalue per connected graph") {
  for (int m : {3, 5}) {
    const auto b = laplacian_basis(PatchGraph::grid(5, 5, m));
    const auto zeros = std::count_if(b.eigenvalues.begin(), b.eigenvalues.end(),
                                     [](double v) { return std::abs(v) <= 1e-9; });
    CHECK(zeros == 1);
  }
}

TEST_CASE("square grid spectrum invariant under rotation") {
  const std::size_t n = 5;
  const auto g = PatchGraph::grid(n, n, 3);
  Matrix rotated(n * n, n * n);
  auto rot = [&](std::size_t i) { return (i % n) * n + (n - 1 - i / n); };
  for (std::size_t i = 0; i < n * n; ++i)
    for (std::size_t j = 0; j < n * n; ++j) rotated(rot(i), rot(j)) = g.adjacency()(i, j);
  const auto a = eigendecompose(normalized_laplacian(g.adjacency())).eigenvalues;
  const auto b = eigendecompose(normalized_laplacian(rotated)).eigenvalues;
  CHECK(max_abs_diff(a, b) <= 1e-9);
}

TEST_CASE("graph Fourier transform") {
  const auto g = PatchGraph::grid(4, 4, 3);
  const auto b = laplacian_basis(g);
  Rng rng(5);
  std::vector<double> h(16);
  for (double& v : h) v = rng.normal();
  SUBCASE("round trip and energy") {
    const auto c = gft(b, h);
    CHECK(max_abs_diff(igft(b, c), h) <= 1e-10);
    CHECK(std::abs(l2_norm(c) - l2_norm(h)) <= 1e-10);
  }
  SUBCASE("eigenvector maps to a unit coefficient") {
    const auto c = gft(b, b.column(6));
    for (std::size_t k = 0; k < 16; ++k) CHECK(std::abs(c[k] - (k == 6 ? 1.0 : 0.0)) <= 1e-10);
  }
  SUBCASE("degree-weighted constant lives at lambda 0") {
    const auto deg = g.degrees();
    std::vector<double> s(16);
    for (std::size_t i = 0; i < 16; ++i) s[i] = std::sqrt(deg[i]);
    const auto c = gft(b, s);
    for (std::size_t k = 1; k < 16; ++k) CHECK(std::abs(c[k]) <= 1e-10);
    // regular graph: plain constants
    const auto kb = laplacian_basis(PatchGraph::complete(3, 3));
    const auto kc = gft(kb, std::vector<double>(9, 2.0));
    for (std::size_t k = 1; k < 9; ++k) CHECK(std::abs(kc[k]) <= 1e-10);
  }
  SUBCASE("length mismatch") {
    CHECK_THROWS_AS(gft(b, std::vector<double>(3)), DimensionMismatch);
    CHECK_THROWS_AS(igft(b, std::vector<double>(17)), DimensionMismatch);
  }
}
