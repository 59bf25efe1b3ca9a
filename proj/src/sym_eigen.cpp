#include "kspd/sym_eigen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "kspd/errors.hpp"

namespace kspd {

namespace {

double off_diagonal_norm(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (i != j) s += a(i, j) * a(i, j);
  return std::sqrt(s);
}

// One Jacobi rotation annihilating a(p,q); accumulates into v.
void rotate(Matrix& a, Matrix& v, std::size_t p, std::size_t q) {
  const double apq = a(p, q);
  if (apq == 0.0) return;
  const std::size_t n = a.rows();

  const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
  double t;
  if (std::isinf(theta * theta)) {
    t = 0.5 / theta;
  } else {
    t = 1.0 / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
    if (theta < 0.0) t = -t;
  }
  const double c = 1.0 / std::sqrt(t * t + 1.0);
  const double s = t * c;

  a(p, p) -= t * apq;
  a(q, q) += t * apq;
  a(p, q) = 0.0;
  a(q, p) = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (r == p || r == q) continue;
    const double arp = a(r, p);
    const double arq = a(r, q);
    const double new_rp = c * arp - s * arq;
    const double new_rq = s * arp + c * arq;
    a(r, p) = new_rp;
    a(p, r) = new_rp;
    a(r, q) = new_rq;
    a(q, r) = new_rq;
  }
  for (std::size_t r = 0; r < n; ++r) {
    const double vrp = v(r, p);
    const double vrq = v(r, q);
    v(r, p) = c * vrp - s * vrq;
    v(r, q) = s * vrp + c * vrq;
  }
}

}  // namespace

Matrix SymEigen::reconstruct(const std::vector<double>& values) const {
  if (values.size() != dim) {
    throw DimensionError("linalg", "reconstruct: expected " + std::to_string(dim) + " values");
  }
  // U diag(values) Uᵀ
  Matrix scaled = u;
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < dim; ++j) scaled(i, j) *= values[j];
  return symmetrize(matmul_nt(scaled, u));
}

SymEigen sym_eigen(const Matrix& s, const JacobiOptions& opts) {
  require_square(s, "sym_eigen");
  if (!s.all_finite()) throw InputError("linalg", "sym_eigen: non-finite input");
  const double norm = frobenius_norm(s);
  if (asymmetry(s) > 1e-9 * (1.0 + norm)) {
    throw InputError("linalg", "sym_eigen: input is not symmetric");
  }

  const std::size_t n = s.rows();
  Matrix a = symmetrize(s);
  Matrix v = Matrix::identity(n);
  const double target = opts.rel_tol * norm;

  auto sweep_all = [&] {
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) rotate(a, v, p, q);
  };

  for (int sweep = 0;; ++sweep) {
    const double off = off_diagonal_norm(a);
    if (off <= target) break;
    if (sweep == opts.max_sweeps) {
      std::ostringstream msg;
      msg << "sym_eigen: no convergence after " << opts.max_sweeps
          << " sweeps, off-diagonal residual " << off << " (target " << target << ")";
      throw ConvergenceError("linalg", msg.str());
    }
    sweep_all();
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

  SymEigen out;
  out.dim = n;
  out.u = Matrix(n, n);
  out.lambdas.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t src = order[k];
    out.lambdas[k] = a(src, src);

    std::size_t pivot = 0;
    for (std::size_t r = 1; r < n; ++r)
      if (std::abs(v(r, src)) > std::abs(v(pivot, src))) pivot = r;
    const double sign = v(pivot, src) < 0.0 ? -1.0 : 1.0;
    for (std::size_t r = 0; r < n; ++r) out.u(r, k) = sign * v(r, src);
  }
  return out;
}

}  // namespace kspd
