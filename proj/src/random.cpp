#include "kspd/random.hpp"

#include <algorithm>
#include <cmath>

#include "kspd/errors.hpp"

namespace kspd {

double normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

Matrix random_normal(std::size_t rows, std::size_t cols, Rng& rng, double scale) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = scale * normal(rng);
  return m;
}

Matrix random_uniform(std::size_t rows, std::size_t cols, Rng& rng, double lo, double hi) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = uniform(rng, lo, hi);
  return m;
}

Matrix random_symmetric(std::size_t n, Rng& rng) { return symmetrize(random_normal(n, n, rng)); }

Matrix random_orthogonal(std::size_t n, Rng& rng) {
  Matrix q = random_normal(n, n, rng);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < j; ++k) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += q(i, k) * q(i, j);
      for (std::size_t i = 0; i < n; ++i) q(i, j) -= dot * q(i, k);
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) norm += q(i, j) * q(i, j);
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw InputError("random", "degenerate Gaussian draw in random_orthogonal");
    for (std::size_t i = 0; i < n; ++i) q(i, j) /= norm;
  }
  return q;
}

Matrix random_spd_with_spectrum(const std::vector<double>& spectrum, Rng& rng) {
  const Matrix q = random_orthogonal(spectrum.size(), rng);
  Matrix scaled = q;
  for (std::size_t i = 0; i < q.rows(); ++i)
    for (std::size_t j = 0; j < q.cols(); ++j) scaled(i, j) *= spectrum[j];
  return symmetrize(matmul_nt(scaled, q));
}

std::vector<double> random_gapped_spectrum(std::size_t n, Rng& rng, double lo, double hi,
                                           double min_gap) {
  const double slack = (hi - lo) - static_cast<double>(n - 1) * min_gap;
  if (slack <= 0.0) throw ParameterError("random", "spectrum range too small for the gap");
  // Sorted uniform draws in [0, slack], then spread by the mandatory gaps.
  std::vector<double> u(n);
  for (double& v : u) v = uniform(rng, 0.0, slack);
  std::sort(u.begin(), u.end());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[n - 1 - i] = lo + u[i] + static_cast<double>(i) * min_gap;
  return out;
}

}  // namespace kspd
