#include "opom/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "opom/error.hpp"

namespace opom {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require(data_.size() == rows_ * cols_, "matrix data length does not match rows x cols");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_columns(std::span<const Vector> columns) {
  if (columns.empty()) return {};
  const std::size_t rows = columns.front().size();
  Matrix m(rows, columns.size());
  for (std::size_t c = 0; c < columns.size(); ++c) {
    require(columns[c].size() == rows, "columns have different lengths");
    for (std::size_t r = 0; r < rows; ++r) m(r, c) = columns[c][r];
  }
  return m;
}

Vector Matrix::column(std::size_t c) const {
  Vector out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Matrix operator*(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), "matrix product dimension mismatch");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

Vector operator*(const Matrix& a, std::span<const double> x) {
  require(a.cols() == x.size(), "matrix-vector dimension mismatch");
  Vector out(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) acc += a(i, j) * x[j];
    out[i] = acc;
  }
  return out;
}

Vector transpose_times(const Matrix& a, std::span<const double> x) {
  require(a.rows() == x.size(), "transpose-vector dimension mismatch");
  Vector out(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out[j] += a(i, j) * x[i];
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "dot product dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

Vector subtract(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "vector difference dimension mismatch");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

double frobenius_norm(const Matrix& m) { return norm2(m.data()); }

SvdFactors thin_svd(const Matrix& m, double rank_tolerance) {
  require(m.cols() <= 64, "thin_svd supports at most 64 columns");
  for (double v : m.data()) require(std::isfinite(v), "thin_svd input has non-finite entries");

  const std::size_t rows = m.rows();
  const std::size_t cols = m.cols();
  Matrix a = m;
  Matrix v = Matrix::identity(cols);

  constexpr double kEps = 1e-15;
  for (int sweep = 0; sweep < 100; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < cols; ++p) {
      for (std::size_t q = p + 1; q < cols; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
          alpha += a(i, p) * a(i, p);
          beta += a(i, q) * a(i, q);
          gamma += a(i, p) * a(i, q);
        }
        if (gamma == 0.0 || std::abs(gamma) <= kEps * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < rows; ++i) {
          const double ap = a(i, p), aq = a(i, q);
          a(i, p) = c * ap - s * aq;
          a(i, q) = s * ap + c * aq;
        }
        for (std::size_t i = 0; i < cols; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }

  Vector norms(cols);
  for (std::size_t j = 0; j < cols; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < rows; ++i) acc += a(i, j) * a(i, j);
    norms[j] = std::sqrt(acc);
  }
  std::vector<std::size_t> order(cols);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  const double s_max = cols == 0 ? 0.0 : norms[order.front()];
  std::vector<std::size_t> kept;
  for (std::size_t j : order)
    if (s_max > 0.0 && norms[j] > rank_tolerance * s_max) kept.push_back(j);

  SvdFactors out;
  out.rank_tolerance = rank_tolerance;
  out.u = Matrix(rows, kept.size());
  out.v = Matrix(cols, kept.size());
  out.singular_values.resize(kept.size());
  for (std::size_t k = 0; k < kept.size(); ++k) {
    const std::size_t j = kept[k];
    out.singular_values[k] = norms[j];
    for (std::size_t i = 0; i < rows; ++i) out.u(i, k) = a(i, j) / norms[j];
    for (std::size_t i = 0; i < cols; ++i) out.v(i, k) = v(i, j);
  }
  return out;
}

Vector least_squares(const Matrix& a, std::span<const double> b) {
  require(a.rows() == b.size(), "least_squares: a.rows must equal b.dim");
  if (a.cols() == 0) return {};
  const SvdFactors svd = thin_svd(a);
  Vector coeffs = transpose_times(svd.u, b);
  for (std::size_t k = 0; k < coeffs.size(); ++k) coeffs[k] /= svd.singular_values[k];
  return svd.v * coeffs;
}

Vector project_to_simplex(std::span<const double> v) {
  require(!v.empty(), "cannot project an empty vector onto the simplex");
  Vector sorted(v.begin(), v.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0;
  double theta = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    cumulative += sorted[i];
    const double candidate = (cumulative - 1.0) / static_cast<double>(i + 1);
    if (sorted[i] - candidate > 0.0) theta = candidate;
  }
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(v[i] - theta, 0.0);
  return out;
}

namespace {

// Gaussian elimination with partial pivoting; returns false when the system is singular.
bool solve_dense(std::vector<double> m, std::vector<double> rhs, std::size_t n, Vector& x) {
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(m[r * n + col]) > std::abs(m[pivot * n + col])) pivot = r;
    if (std::abs(m[pivot * n + col]) < 1e-14) return false;
    if (pivot != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(m[col * n + c], m[pivot * n + c]);
      std::swap(rhs[col], rhs[pivot]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double factor = m[r * n + col] / m[col * n + col];
      if (factor == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) m[r * n + c] -= factor * m[col * n + c];
      rhs[r] -= factor * rhs[col];
    }
  }
  x.assign(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double acc = rhs[i];
    for (std::size_t c = i + 1; c < n; ++c) acc -= m[i * n + c] * x[c];
    x[i] = acc / m[i * n + i];
  }
  return true;
}

double half_squared_objective(const Matrix& gram, std::span<const double> c, double qq,
                              std::span<const double> a) {
  const Vector ga = gram * a;
  return 0.5 * dot(a, ga) - dot(c, a) + 0.5 * qq;
}

// Solves the equality-constrained problem on the support of `a` and keeps the result
// only when it satisfies the full KKT conditions of the simplex problem.
bool polish_on_support(const Matrix& gram, std::span<const double> c, Vector& a) {
  const std::size_t n = a.size();
  std::vector<std::size_t> support;
  for (std::size_t i = 0; i < n; ++i)
    if (a[i] > 0.0) support.push_back(i);
  const std::size_t s = support.size();
  if (s == 0) return false;

  const std::size_t dim = s + 1;
  std::vector<double> kkt(dim * dim, 0.0);
  std::vector<double> rhs(dim, 0.0);
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t j = 0; j < s; ++j) kkt[i * dim + j] = gram(support[i], support[j]);
    kkt[i * dim + s] = 1.0;
    kkt[s * dim + i] = 1.0;
    rhs[i] = c[support[i]];
  }
  rhs[s] = 1.0;
  Vector sol;
  if (!solve_dense(std::move(kkt), std::move(rhs), dim, sol)) return false;

  Vector candidate(n, 0.0);
  for (std::size_t i = 0; i < s; ++i) {
    if (sol[i] < 0.0) return false;
    candidate[support[i]] = sol[i];
  }
  const double multiplier = -sol[s];
  const Vector grad = subtract(gram * candidate, c);
  const double scale = 1.0 + std::abs(multiplier);
  for (std::size_t i = 0; i < n; ++i)
    if (candidate[i] == 0.0 && grad[i] < multiplier - 1e-12 * scale) return false;
  a = std::move(candidate);
  return true;
}

}  // namespace

Vector simplex_constrained_lsq(const Matrix& f, std::span<const double> q,
                               const SimplexLsqOptions& options) {
  require(!f.empty() && f.cols() >= 1, "simplex_constrained_lsq: empty matrix");
  require(f.rows() == q.size(), "simplex_constrained_lsq: f.rows must equal q.dim");
  const std::size_t n = f.cols();
  if (n == 1) return Vector{1.0};

  const Matrix gram = f.transposed() * f;
  const Vector c = transpose_times(f, q);
  const double qq = dot(q, q);

  // Gershgorin bound on the largest Gram eigenvalue. A power iteration seeded with the
  // uniform vector misses eigenvectors orthogonal to it, e.g. (1, −1) for anti-correlated pairs.
  double lipschitz = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) row += std::abs(gram(i, j));
    lipschitz = std::max(lipschitz, row);
  }
  Vector a(n, 1.0 / static_cast<double>(n));
  if (!(lipschitz > 0.0)) return a;

  const double step = 1.0 / lipschitz;
  for (int it = 0; it < options.max_iterations; ++it) {
    const Vector grad = subtract(gram * a, c);
    Vector trial(n);
    for (std::size_t i = 0; i < n; ++i) trial[i] = a[i] - step * grad[i];
    Vector next = project_to_simplex(trial);
    double change = 0.0;
    for (std::size_t i = 0; i < n; ++i) change = std::max(change, std::abs(next[i] - a[i]));
    a = std::move(next);
    if (change < options.tolerance) break;
  }

  Vector polished = a;
  if (polish_on_support(gram, c, polished) &&
      half_squared_objective(gram, c, qq, polished) <= half_squared_objective(gram, c, qq, a))
    a = std::move(polished);
  return a;
}

}  // namespace opom
