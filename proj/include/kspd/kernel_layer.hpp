#pragma once

#include <string>
#include <variant>

#include "kspd/matrix.hpp"

namespace kspd {

/// K_ij = exp(-theta * ||f_i - f_j||^2) over the rows f_i of X.
struct GaussianKernel {
  double theta = 0.1;
};

/// K = X̃X̃ᵀ, with X̃ = X or its row-mean-centered version.
struct LinearKernel {
  bool centered = false;
};

using KernelKind = std::variant<GaussianKernel, LinearKernel>;

/// Parses "gaussian:<theta>", "gaussian" (theta 0.1), "linear" or
/// "linear:centered".
KernelKind parse_kernel_kind(const std::string& text);
std::string to_string(const KernelKind& kind);

/// Forward intermediates kept for the backward pass.
///
/// x holds the descriptor matrix as seen by the kernel (for a centered linear
/// kernel this is the centered X̃). e is only populated for the Gaussian kernel.
struct KernelTape {
  Matrix x;
  KernelKind kind;
  Matrix a;
  Matrix e;
  Matrix k;
};

struct KernelGradients {
  Matrix dx;
  double dtheta = 0.0;
};

/// Builds the d×d kernel matrix over the rows of a d×n descriptor matrix.
/// The Gaussian path evaluates E = diag(A)1ᵀ + 1diag(A)ᵀ − 2A with A = XXᵀ,
/// clamps E at zero, and takes K = exp[−θE] entrywise.
KernelTape kernel_forward(const Matrix& x, const KernelKind& kind);

/// Reverse pass. dj_dk is symmetrized on entry.
///
/// Gaussian:
///   dJ/dE = (−θK) ∘ Z
///   dJ/dA = I ∘ ((dJ/dE + dJ/dEᵀ) 1) − 2 dJ/dE
///   dJ/dX = (dJ/dA + dJ/dAᵀ) X
///   dJ/dθ = trace(Zᵀ (−K ∘ E))
/// Linear: dJ/dX̃ = (Z + Zᵀ) X̃, followed by the centering adjoint when
/// centered; dJ/dθ = 0.
KernelGradients kernel_backward(const KernelTape& tape, const Matrix& dj_dk);

}  // namespace kspd
