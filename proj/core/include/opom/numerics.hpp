#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace opom {

using Vector = std::vector<double>;

/// Row-major dense matrix in double precision.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  /// Builds a matrix whose columns are the given vectors (all of equal length).
  static Matrix from_columns(std::span<const Vector> columns);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  const std::vector<double>& data() const { return data_; }
  Vector column(std::size_t c) const;
  Matrix transposed() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator*(const Matrix& a, const Matrix& b);
Vector operator*(const Matrix& a, std::span<const double> x);
/// aᵀ·x without forming the transpose.
Vector transpose_times(const Matrix& a, std::span<const double> x);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
Vector subtract(std::span<const double> a, std::span<const double> b);
double frobenius_norm(const Matrix& m);

struct SvdFactors {
  Matrix u;               ///< orthonormal columns, one per retained singular value
  Vector singular_values; ///< non-increasing, all > rank_tolerance * s_max
  Matrix v;               ///< right singular vectors matching u's columns
  double rank_tolerance = 1e-8;

  std::size_t rank() const { return singular_values.size(); }
};

inline constexpr double kDefaultRankTolerance = 1e-8;

/// One-sided Jacobi SVD for small, tall-or-square matrices (cols <= 64).
/// Singular values at or below rank_tolerance * s_max are dropped with their vectors.
SvdFactors thin_svd(const Matrix& m, double rank_tolerance = kDefaultRankTolerance);

/// Minimum-norm least-squares solution of a·x ≈ b.
Vector least_squares(const Matrix& a, std::span<const double> b);

/// Euclidean projection of v onto the probability simplex {x >= 0, sum x = 1}.
Vector project_to_simplex(std::span<const double> v);

struct SimplexLsqOptions {
  double tolerance = 1e-10;
  int max_iterations = 10000;
};

/// argmin ‖f·a − q‖ subject to a >= 0, 1ᵀa = 1.
Vector simplex_constrained_lsq(const Matrix& f, std::span<const double> q,
                               const SimplexLsqOptions& options = {});

}  // namespace opom
