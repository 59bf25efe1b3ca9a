#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace kspd {

/// Dense row-major matrix of doubles.
///
/// A default-constructed Matrix is empty (0x0) and only serves as a
/// placeholder; every other constructor requires positive dimensions.
/// Entries supplied at construction must be finite.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix ones(std::size_t rows, std::size_t cols);
  static Matrix diagonal(std::span<const double> diag);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool is_square() const noexcept { return rows_ == cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  std::vector<double> diag() const;
  bool all_finite() const noexcept;

  Matrix& operator+=(const Matrix& o);
  Matrix& operator-=(const Matrix& o);
  Matrix& operator*=(double s) noexcept;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);

Matrix matmul(const Matrix& a, const Matrix& b);
/// aᵀ·b without forming the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a·bᵀ without forming the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

/// Entrywise (Hadamard) product.
Matrix hadamard(const Matrix& a, const Matrix& b);

/// (a + aᵀ)/2. The result is exactly symmetric.
Matrix symmetrize(const Matrix& a);

double trace(const Matrix& a);
double frobenius_norm(const Matrix& a);
/// Frobenius inner product ⟨a, b⟩ = trace(aᵀb).
double inner(const Matrix& a, const Matrix& b);
double max_abs(const Matrix& a);

/// ‖a − aᵀ‖_F.
double asymmetry(const Matrix& a);

void require_same_shape(const Matrix& a, const Matrix& b, const char* what);
void require_square(const Matrix& a, const char* what);

}  // namespace kspd
