#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "spanet/tensor.hpp"

namespace spanet {

enum class GraphKind { grid, complete };

std::string to_string(GraphKind kind);

/// Patch graph over an H x W token grid. Grid graphs connect tokens whose
/// Chebyshev distance is at most (m-1)/2 (no wraparound, no self-loops);
/// complete graphs connect every pair of distinct tokens.
class PatchGraph {
 public:
  static PatchGraph grid(std::size_t height, std::size_t width, int kernel_size);
  static PatchGraph complete(std::size_t height, std::size_t width);

  GraphKind kind() const noexcept { return kind_; }
  int kernel_size() const noexcept { return kernel_size_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t node_count() const noexcept { return height_ * width_; }
  const Matrix& adjacency() const noexcept { return adjacency_; }
  std::vector<double> degrees() const;
  std::size_t edge_entries() const;

 private:
  PatchGraph(GraphKind kind, int kernel_size, std::size_t h, std::size_t w, Matrix a)
      : kind_(kind), kernel_size_(kernel_size), height_(h), width_(w),
        adjacency_(std::move(a)) {}

  GraphKind kind_;
  int kernel_size_;
  std::size_t height_;
  std::size_t width_;
  Matrix adjacency_;
};

/// L = I - D^{-1/2} A D^{-1/2}. Throws IsolatedNode if a node has degree 0.
Matrix normalized_laplacian(const PatchGraph& g);
Matrix normalized_laplacian(const Matrix& adjacency);

/// Eigenpairs of a symmetric matrix: eigenvalues ascending, eigenvectors as
/// the columns of `vectors`. Each column is signed so that its largest
/// magnitude entry is positive.
struct SpectralBasis {
  std::vector<double> eigenvalues;
  Matrix vectors;

  std::size_t size() const noexcept { return eigenvalues.size(); }
  std::vector<double> column(std::size_t n) const;
};

struct JacobiOptions {
  /// Stop once the off-diagonal Frobenius norm drops below
  /// tolerance * max(1, ||A||_F).
  double tolerance = 1e-12;
  int max_sweeps = 100;
};

/// Cyclic Jacobi eigensolver. Throws NoConvergence when the sweep budget is
/// exhausted.
SpectralBasis eigendecompose(const Matrix& symmetric, const JacobiOptions& opts = {});

/// Basis of a graph's normalized Laplacian.
SpectralBasis laplacian_basis(const PatchGraph& g, const JacobiOptions& opts = {});

// Graph Fourier transform: U^T h and its inverse U h_hat.
std::vector<double> gft(const SpectralBasis& basis, std::span<const double> signal);
std::vector<double> igft(const SpectralBasis& basis, std::span<const double> coeffs);

struct BasisDiagnostics {
  double orthogonality;   // ||U^T U - I||_max
  double reconstruction;  // ||L - U diag(lambda) U^T||_max
};
BasisDiagnostics diagnose(const Matrix& symmetric, const SpectralBasis& basis);

}  // namespace spanet
