#include "kspd/spdfun.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "kspd/errors.hpp"

namespace kspd {

namespace {

bool tied(double a, double b, double tie_tol) {
  return std::abs(a - b) <= tie_tol * std::max({1.0, std::abs(a), std::abs(b)});
}

void require_eig_shape(const SymEigen& eig, const Matrix& m, const char* what) {
  if (m.rows() != eig.dim || m.cols() != eig.dim) {
    throw DimensionError("spdfun", std::string(what) + ": expected " + std::to_string(eig.dim) +
                                       "x" + std::to_string(eig.dim) + " matrix");
  }
}

void require_backward(const ScalarFunction& fn) {
  if (!fn.differentiable) {
    throw UsageError("spdfun", "function '" + fn.name + "' is forward-only");
  }
}

// U (G ∘ (Uᵀ B U)) Uᵀ, symmetrized.
Matrix conjugate_hadamard(const SymEigen& eig, const Matrix& g, const Matrix& b) {
  const Matrix inner_b = matmul_tn(eig.u, matmul(b, eig.u));
  return symmetrize(matmul_nt(matmul(eig.u, hadamard(g, inner_b)), eig.u));
}

}  // namespace

ScalarFunction log_fn() {
  return {"log", [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; }, 0.0, true};
}

ScalarFunction power_fn(double p) {
  std::ostringstream name;
  name << "pow" << p;
  return {name.str(), [p](double x) { return std::pow(x, p); },
          [p](double x) { return p * std::pow(x, p - 1.0); }, 0.0, true};
}

ScalarFunction exp_fn() {
  return {"exp", [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); },
          -std::numeric_limits<double>::infinity(), false};
}

LoewnerMatrix loewner(const std::vector<double>& lambdas, const ScalarFunction& fn,
                      double tie_tol) {
  const std::size_t d = lambdas.size();
  if (d == 0) throw DimensionError("spdfun", "loewner: empty spectrum");
  std::vector<double> fl(d);
  for (std::size_t i = 0; i < d; ++i) {
    if (!(lambdas[i] > fn.domain_min)) {
      std::ostringstream msg;
      msg << "loewner: eigenvalue " << lambdas[i] << " outside the domain of " << fn.name;
      throw DomainError("spdfun", msg.str());
    }
    fl[i] = fn.f(lambdas[i]);
  }

  LoewnerMatrix out{Matrix(d, d)};
  for (std::size_t i = 0; i < d; ++i) {
    out.g(i, i) = fn.fprime(lambdas[i]);
    for (std::size_t j = i + 1; j < d; ++j) {
      const double li = lambdas[i];
      const double lj = lambdas[j];
      const double gij = tied(li, lj, tie_tol) ? fn.fprime(0.5 * (li + lj))
                                               : (fl[i] - fl[j]) / (li - lj);
      out.g(i, j) = gij;
      out.g(j, i) = gij;
    }
  }
  return out;
}

Matrix regularize_spd(const Matrix& k, const RegPolicy& policy) {
  require_square(k, "regularize_spd");
  const double eps = policy.rel_eps * trace(k) / static_cast<double>(k.rows());
  Matrix out = k;
  for (std::size_t i = 0; i < k.rows(); ++i) out(i, i) += eps;
  return out;
}

Matrix regularize_spd_backward(const Matrix& dj_dreg, const RegPolicy& policy) {
  require_square(dj_dreg, "regularize_spd_backward");
  const double s = policy.rel_eps * trace(dj_dreg) / static_cast<double>(dj_dreg.rows());
  Matrix out = dj_dreg;
  for (std::size_t i = 0; i < out.rows(); ++i) out(i, i) += s;
  return out;
}

SpdFunResult spdfun_forward(const Matrix& k, const ScalarFunction& fn, const RegPolicy& reg) {
  require_square(k, "spdfun_forward");
  SpdFunResult out{Matrix(), sym_eigen(regularize_spd(k, reg))};
  const double min_lambda = out.eig.lambdas.back();
  if (!(min_lambda > fn.domain_min)) {
    std::ostringstream msg;
    msg << "spdfun_forward: minimum eigenvalue " << min_lambda << " is outside the domain of "
        << fn.name << " (must exceed " << fn.domain_min << ")";
    throw DomainError("spdfun", msg.str());
  }
  std::vector<double> values(out.eig.dim);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = fn.f(out.eig.lambdas[i]);
  out.h = out.eig.reconstruct(values);
  if (!out.h.all_finite()) {
    throw DomainError("spdfun", "spdfun_forward: " + fn.name + " produced non-finite values");
  }
  return out;
}

Matrix dk_apply(const SymEigen& eig, const Matrix& b, const ScalarFunction& fn, double tie_tol) {
  require_backward(fn);
  require_eig_shape(eig, b, "dk_apply");
  return conjugate_hadamard(eig, loewner(eig.lambdas, fn, tie_tol).g, b);
}

Matrix spdfun_backward(const SymEigen& eig, const Matrix& dj_dh, const ScalarFunction& fn,
                       double tie_tol) {
  require_backward(fn);
  require_eig_shape(eig, dj_dh, "spdfun_backward");
  return conjugate_hadamard(eig, loewner(eig.lambdas, fn, tie_tol).g, symmetrize(dj_dh));
}

Matrix prop1_backward(const SymEigen& eig, const Matrix& dj_dh, double tie_tol) {
  require_eig_shape(eig, dj_dh, "prop1_backward");
  const std::size_t d = eig.dim;
  const auto& lam = eig.lambdas;
  for (double l : lam) {
    if (!(l > 0.0)) throw DomainError("spdfun", "prop1_backward: non-positive eigenvalue");
  }

  const Matrix z = symmetrize(dj_dh);
  const Matrix zhat = matmul_tn(eig.u, matmul(z, eig.u));

  // 2 Ẑ log(D): column j scaled by 2 log λ_j.
  Matrix scaled = zhat;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) scaled(i, j) *= 2.0 * std::log(lam[j]);

  Matrix inner_m(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      if (i == j) {
        inner_m(i, i) = zhat(i, i) / lam[i];  // (D⁻¹ Ẑ)_diag
      } else if (tied(lam[i], lam[j], tie_tol)) {
        // Continuous limit of the symmetrized pair.
        inner_m(i, j) = zhat(i, j) / (0.5 * (lam[i] + lam[j]));
      } else {
        inner_m(i, j) = scaled(i, j) / (lam[j] - lam[i]);  // g̃_ji
      }
    }
  }
  return symmetrize(matmul_nt(matmul(eig.u, inner_m), eig.u));
}

}  // namespace kspd
