#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "kspd/matrix.hpp"
#include "kspd/sym_eigen.hpp"

namespace kspd {

/// A scalar C¹ function lifted to symmetric matrices through their spectrum.
struct ScalarFunction {
  std::string name;
  std::function<double(double)> f;
  std::function<double(double)> fprime;
  /// Eigenvalues must be strictly greater than this.
  double domain_min = -std::numeric_limits<double>::infinity();
  /// exp_fn is forward-only.
  bool differentiable = true;
};

ScalarFunction log_fn();
ScalarFunction power_fn(double p);
ScalarFunction exp_fn();

/// Matrix of first divided differences of f over a spectrum.
struct LoewnerMatrix {
  Matrix g;
};

inline constexpr double kDefaultTieTol = 1e-8;

/// g_ij = (f(λ_i) − f(λ_j)) / (λ_i − λ_j), or f′((λ_i + λ_j)/2) when
/// |λ_i − λ_j| <= tie_tol · max(1, |λ_i|, |λ_j|).
LoewnerMatrix loewner(const std::vector<double>& lambdas, const ScalarFunction& fn,
                      double tie_tol = kDefaultTieTol);

struct RegPolicy {
  double rel_eps = 1e-6;
};

/// k + ε·I with ε = rel_eps · trace(k) / d.
Matrix regularize_spd(const Matrix& k, const RegPolicy& policy);

/// Adjoint of regularize_spd: dJ/dk = dJ/dk_reg + (rel_eps/d) · trace(dJ/dk_reg) · I.
Matrix regularize_spd_backward(const Matrix& dj_dreg, const RegPolicy& policy);

struct SpdFunResult {
  Matrix h;
  SymEigen eig;
};

/// h = U f(D) Uᵀ for the eigendecomposition of regularize_spd(k).
SpdFunResult spdfun_forward(const Matrix& k, const ScalarFunction& fn, const RegPolicy& reg);

/// Directional derivative Df_A(B) = U (G ∘ (UᵀBU)) Uᵀ at the matrix whose
/// eigendecomposition is eig.
Matrix dk_apply(const SymEigen& eig, const Matrix& b, const ScalarFunction& fn,
                double tie_tol = kDefaultTieTol);

/// dJ/dK = U (G ∘ (Uᵀ Z U)) Uᵀ with Z = sym(dJ/dH).
Matrix spdfun_backward(const SymEigen& eig, const Matrix& dj_dh, const ScalarFunction& fn,
                       double tie_tol = kDefaultTieTol);

/// Matrix-log backward in the form
///   U { (G̃ᵀ ∘ (2 Uᵀ Z_sym U log D)) + (D⁻¹ (UᵀZU))_diag } Uᵀ,  symmetrized,
/// with g̃_ij = 1/(λ_i − λ_j) off the diagonal and 0 on it. A tied pair uses
/// Ẑ_ij / λ_mid, the limit of its symmetrized off-diagonal terms.
/// Mathematically identical to spdfun_backward with log; kept as an
/// independent route for cross-checking.
Matrix prop1_backward(const SymEigen& eig, const Matrix& dj_dh, double tie_tol = kDefaultTieTol);

}  // namespace kspd
