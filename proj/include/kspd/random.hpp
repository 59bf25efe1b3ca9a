#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "kspd/matrix.hpp"

namespace kspd {

using Rng = std::mt19937_64;

double normal(Rng& rng);
double uniform(Rng& rng, double lo, double hi);

/// Fisher-Yates permutation of 0..n-1 using raw engine output only, so the
/// result does not depend on the standard library's distributions.
std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng);

Matrix random_normal(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0);
Matrix random_uniform(std::size_t rows, std::size_t cols, Rng& rng, double lo, double hi);
Matrix random_symmetric(std::size_t n, Rng& rng);

/// Haar-distributed orthogonal matrix (modified Gram-Schmidt on a Gaussian
/// matrix with the column-sign correction).
Matrix random_orthogonal(std::size_t n, Rng& rng);

/// Q diag(spectrum) Qᵀ with Q random orthogonal.
Matrix random_spd_with_spectrum(const std::vector<double>& spectrum, Rng& rng);

/// Descending spectrum in [lo, hi] whose consecutive gaps are at least
/// min_gap. Requires (n-1)·min_gap < hi-lo.
std::vector<double> random_gapped_spectrum(std::size_t n, Rng& rng, double lo, double hi,
                                           double min_gap);

}  // namespace kspd
