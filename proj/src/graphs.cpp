#include "spanet/graphs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>

#include "spanet/error.hpp"

namespace spanet {

std::string to_string(GraphKind kind) {
  return kind == GraphKind::grid ? "grid" : "complete";
}

PatchGraph PatchGraph::grid(std::size_t height, std::size_t width, int kernel_size) {
  if (height == 0 || width == 0) throw ShapeError("grid graph needs H, W >= 1");
  if (kernel_size < 1) throw ShapeError("grid graph kernel size must be >= 1");
  const std::size_t n = height * width;
  const long reach = (kernel_size - 1) / 2;
  Matrix a(n, n);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t i = y * width + x;
      const long y0 = std::max(0L, static_cast<long>(y) - reach);
      const long y1 = std::min(static_cast<long>(height) - 1, static_cast<long>(y) + reach);
      const long x0 = std::max(0L, static_cast<long>(x) - reach);
      const long x1 = std::min(static_cast<long>(width) - 1, static_cast<long>(x) + reach);
      for (long yy = y0; yy <= y1; ++yy) {
        for (long xx = x0; xx <= x1; ++xx) {
          const std::size_t j = static_cast<std::size_t>(yy) * width + static_cast<std::size_t>(xx);
          if (j != i) a(i, j) = 1.0;
        }
      }
    }
  }
  return PatchGraph(GraphKind::grid, kernel_size, height, width, std::move(a));
}

PatchGraph PatchGraph::complete(std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw ShapeError("complete graph needs H, W >= 1");
  const std::size_t n = height * width;
  Matrix a(n, n, 1.0);
  for (std::size_t i = 0; i < n; ++i) a(i, i) = 0.0;
  return PatchGraph(GraphKind::complete, 0, height, width, std::move(a));
}

std::vector<double> PatchGraph::degrees() const {
  std::vector<double> d(node_count());
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto r = adjacency_.row(i);
    d[i] = std::accumulate(r.begin(), r.end(), 0.0);
  }
  return d;
}

std::size_t PatchGraph::edge_entries() const {
  return static_cast<std::size_t>(
      std::count_if(adjacency_.values().begin(), adjacency_.values().end(),
                    [](double v) { return v != 0.0; }));
}

Matrix normalized_laplacian(const Matrix& adjacency) {
  const std::size_t n = adjacency.rows();
  if (adjacency.cols() != n) throw DimensionMismatch("adjacency must be square");
  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = adjacency.row(i);
    const double deg = std::accumulate(r.begin(), r.end(), 0.0);
    if (deg <= 0.0) throw IsolatedNode("node " + std::to_string(i) + " has degree 0");
    inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
  }
  Matrix l(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double off = adjacency(i, j) * inv_sqrt_deg[i] * inv_sqrt_deg[j];
      l(i, j) = (i == j ? 1.0 : 0.0) - off;
    }
  }
  return l;
}

Matrix normalized_laplacian(const PatchGraph& g) { return normalized_laplacian(g.adjacency()); }

std::vector<double> SpectralBasis::column(std::size_t n) const {
  std::vector<double> c(vectors.rows());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = vectors(i, n);
  return c;
}

namespace {

double off_diagonal_norm(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (i != j) s += a(i, j) * a(i, j);
  return std::sqrt(s);
}

}  // namespace

SpectralBasis eigendecompose(const Matrix& symmetric, const JacobiOptions& opts) {
  const std::size_t n = symmetric.rows();
  if (symmetric.cols() != n) throw DimensionMismatch("eigendecompose needs a square matrix");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(symmetric(i, j) - symmetric(j, i)) > 1e-12)
        throw DimensionMismatch("eigendecompose needs a symmetric matrix");

  Matrix a = symmetric;
  Matrix v = Matrix::identity(n);
  const double frob = l2_norm(symmetric.values());
  const double threshold = opts.tolerance * std::max(1.0, frob);

  double off = off_diagonal_norm(a);
  int sweep = 0;
  while (off > threshold) {
    if (sweep == opts.max_sweeps) {
      throw NoConvergence("Jacobi did not converge within " + std::to_string(opts.max_sweeps) +
                              " sweeps (off-diagonal norm " + std::to_string(off) + ")",
                          off);
    }
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          if (k == p || k == q) continue;
          const double akp = a(k, p);
          const double akq = a(k, q);
          const double new_kp = c * akp - s * akq;
          const double new_kq = s * akp + c * akq;
          a(k, p) = new_kp;
          a(p, k) = new_kp;
          a(k, q) = new_kq;
          a(q, k) = new_kq;
        }
        a(p, p) = app - t * apq;
        a(q, q) = aqq + t * apq;
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
    ++sweep;
    off = off_diagonal_norm(a);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) < a(j, j); });

  SpectralBasis basis{std::vector<double>(n), Matrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t src = order[k];
    basis.eigenvalues[k] = a(src, src);
    std::size_t arg = 0;
    for (std::size_t i = 1; i < n; ++i)
      if (std::abs(v(i, src)) > std::abs(v(arg, src))) arg = i;
    const double sign = v(arg, src) < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < n; ++i) basis.vectors(i, k) = sign * v(i, src);
  }
  return basis;
}

SpectralBasis laplacian_basis(const PatchGraph& g, const JacobiOptions& opts) {
  return eigendecompose(normalized_laplacian(g), opts);
}

std::vector<double> gft(const SpectralBasis& basis, std::span<const double> signal) {
  const std::size_t n = basis.size();
  if (signal.size() != n) throw DimensionMismatch("gft signal length mismatch");
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double hi = signal[i];
    auto row = basis.vectors.row(i);
    for (std::size_t k = 0; k < n; ++k) out[k] += row[k] * hi;
  }
  return out;
}

std::vector<double> igft(const SpectralBasis& basis, std::span<const double> coeffs) {
  if (coeffs.size() != basis.size()) throw DimensionMismatch("igft coefficient length mismatch");
  return basis.vectors * coeffs;
}

BasisDiagnostics diagnose(const Matrix& symmetric, const SpectralBasis& basis) {
  const std::size_t n = basis.size();
  const Matrix& u = basis.vectors;
  const Matrix ut = u.transposed();
  const Matrix gram = ut * u;
  double ortho = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      ortho = std::max(ortho, std::abs(gram(i, j) - (i == j ? 1.0 : 0.0)));
  Matrix scaled = u;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) scaled(i, k) *= basis.eigenvalues[k];
  const Matrix recon = scaled * ut;
  return {ortho, max_abs_diff(recon.values(), symmetric.values())};
}

}  // namespace spanet
