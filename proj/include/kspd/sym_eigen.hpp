#pragma once

#include <cstddef>
#include <vector>

#include "kspd/matrix.hpp"

namespace kspd {

/// Eigendecomposition S = U diag(λ) Uᵀ of a real symmetric matrix.
///
/// Eigenvalues are sorted non-increasing (ties keep the order in which the
/// solver produced them), and each eigenvector column is sign-normalized so
/// that its largest-magnitude entry is non-negative (ties: lowest row).
struct SymEigen {
  std::size_t dim = 0;
  Matrix u;
  std::vector<double> lambdas;

  /// U diag(values) Uᵀ, symmetrized.
  Matrix reconstruct(const std::vector<double>& values) const;
  Matrix reconstruct() const { return reconstruct(lambdas); }
};

struct JacobiOptions {
  double rel_tol = 1e-12;  // stop when off(A) <= rel_tol * ||S||_F
  int max_sweeps = 64;
};

/// Cyclic Jacobi eigensolver with a fixed row-major sweep order. Output is a
/// deterministic function of the input bits.
///
/// Throws DimensionError for non-square input, InputError when the input is
/// not symmetric to 1e-9 relative or contains non-finite entries, and
/// ConvergenceError (with the final off-diagonal residual) after max_sweeps.
SymEigen sym_eigen(const Matrix& s, const JacobiOptions& opts = {});

}  // namespace kspd
