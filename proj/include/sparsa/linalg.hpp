/**
 * @brief Dense symmetric linear algebra and seeded Gaussian sampling.
 *
 * Storage is Eigen's dense column-major matrices. Every symmetric matrix that
 * enters the library goes through SymMatrix, which guarantees exact symmetry.
 */
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"

namespace sparsa {

using Index = Eigen::Index;
using Vec = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
/// Ordered, strictly increasing feature indices (0-based).
using IndexSet = std::vector<Index>;

/// Symmetric p x p matrix; entries (i,j) and (j,i) are bitwise equal.
class SymMatrix {
public:
  SymMatrix() = default;

  /// Mirrors the lower triangle of `m` onto the upper one.
  static SymMatrix from_lower(Matrix m) {
    if (m.rows() != m.cols()) {
      throw InvalidInput("SymMatrix: matrix is not square");
    }
    for (Index j = 0; j < m.cols(); ++j) {
      for (Index i = j + 1; i < m.rows(); ++i) {
        m(j, i) = m(i, j);
      }
    }
    return SymMatrix(std::move(m));
  }

  /// Accepts `m` only if it is symmetric to within `tol` relative to max|m|.
  static SymMatrix from(const Matrix& m, double tol = 1e-12) {
    if (m.rows() != m.cols()) {
      throw InvalidInput("SymMatrix: matrix is not square");
    }
    const double scale = m.size() ? m.cwiseAbs().maxCoeff() : 0.0;
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > tol * (1.0 + scale)) {
      throw InvalidInput("SymMatrix: matrix is not symmetric");
    }
    return from_lower(m);
  }

  /// Builds entries from f(i, j), evaluated for i >= j only.
  template <class F>
  static SymMatrix generate(Index p, F&& f) {
    Matrix m(p, p);
    for (Index j = 0; j < p; ++j) {
      for (Index i = j; i < p; ++i) {
        m(i, j) = f(i, j);
      }
    }
    return from_lower(std::move(m));
  }

  static SymMatrix identity(Index p) { return SymMatrix(Matrix::Identity(p, p)); }

  Index dim() const { return m_.rows(); }
  double operator()(Index i, Index j) const { return m_(i, j); }
  const Matrix& matrix() const { return m_; }

  /// Principal submatrix on `idx`.
  SymMatrix restrict(const IndexSet& idx) const {
    Matrix r(static_cast<Index>(idx.size()), static_cast<Index>(idx.size()));
    for (std::size_t b = 0; b < idx.size(); ++b) {
      for (std::size_t a = 0; a < idx.size(); ++a) {
        r(static_cast<Index>(a), static_cast<Index>(b)) = m_(idx[a], idx[b]);
      }
    }
    return SymMatrix(std::move(r));
  }

  SymMatrix diagonal_part() const {
    return SymMatrix(Matrix(m_.diagonal().asDiagonal()));
  }

private:
  explicit SymMatrix(Matrix m) : m_(std::move(m)) {}
  Matrix m_;
};

inline Vec restrict(const Vec& v, const IndexSet& idx) {
  Vec r(static_cast<Index>(idx.size()));
  for (std::size_t a = 0; a < idx.size(); ++a) {
    r(static_cast<Index>(a)) = v(idx[a]);
  }
  return r;
}

inline IndexSet all_indices(Index p) {
  IndexSet idx(static_cast<std::size_t>(p));
  for (Index j = 0; j < p; ++j) {
    idx[static_cast<std::size_t>(j)] = j;
  }
  return idx;
}

/// Relative pivot tolerance: a pivot counts as positive if it exceeds
/// kPivotTolerance * max diagonal entry.
inline constexpr double kPivotTolerance = 1e-12;

/// Lower-triangular Cholesky factor with solve support.
class Cholesky {
public:
  explicit Cholesky(const SymMatrix& m) : llt_(m.matrix()) {
    const Index p = m.dim();
    if (p == 0) {
      throw InvalidInput("cholesky: empty matrix");
    }
    const double maxdiag = m.matrix().diagonal().maxCoeff();
    if (llt_.info() != Eigen::Success || !(maxdiag > 0.0)) {
      throw NotPositiveDefinite("cholesky: matrix is not positive definite");
    }
    const Matrix& l = llt_.matrixLLT();
    for (Index i = 0; i < p; ++i) {
      const double pivot = l(i, i) * l(i, i);
      if (!(pivot > kPivotTolerance * maxdiag)) {
        throw NotPositiveDefinite("cholesky: pivot " + std::to_string(i) +
                                  " below tolerance");
      }
    }
  }

  Matrix lower() const { return llt_.matrixL(); }
  Vec solve(const Vec& b) const { return llt_.solve(b); }
  Matrix solve(const Matrix& b) const { return llt_.solve(b); }

private:
  Eigen::LLT<Matrix> llt_;
};

/// Returns L with m = L L'. Throws NotPositiveDefinite.
inline Matrix cholesky(const SymMatrix& m) { return Cholesky(m).lower(); }

enum class Ridge { Disallow, Allow };

/// Diagonal jitter used by the ridge fallback: 1e-8 * trace(m) / p.
inline double ridge_epsilon(const SymMatrix& m) {
  const double tr = m.matrix().trace();
  const double eps = 1e-8 * tr / static_cast<double>(m.dim());
  return eps > 0.0 ? eps : 1e-8;
}

inline SymMatrix with_ridge(const SymMatrix& m) {
  Matrix r = m.matrix();
  r.diagonal().array() += ridge_epsilon(m);
  return SymMatrix::from_lower(std::move(r));
}

/// Factor m, or m + eps*I when ridge is allowed and m is singular.
inline Cholesky factor(const SymMatrix& m, Ridge ridge = Ridge::Disallow) {
  try {
    return Cholesky(m);
  } catch (const NotPositiveDefinite&) {
    if (ridge == Ridge::Disallow) {
      throw;
    }
  }
  return Cholesky(with_ridge(m));
}

inline Vec spd_solve(const SymMatrix& m, const Vec& b, Ridge ridge = Ridge::Disallow) {
  if (b.size() != m.dim()) {
    throw InvalidInput("spd_solve: dimension mismatch");
  }
  return factor(m, ridge).solve(b);
}

/// v' m^{-1} v.
inline double quad_form(const SymMatrix& m, const Vec& v, Ridge ridge = Ridge::Disallow) {
  if (v.size() != m.dim()) {
    throw InvalidInput("quad_form: dimension mismatch");
  }
  if (v.isZero(0.0)) {
    return 0.0;
  }
  const double q = v.dot(factor(m, ridge).solve(v));
  return std::max(q, 0.0);
}

/// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// 64-bit seed; equal seeds give bit-identical sample streams.
struct RngSeed {
  std::uint64_t value = 0;
  friend bool operator==(RngSeed, RngSeed) = default;
};

/// SplitMix64 step; used to expand seeds and to derive child streams.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Child seed for stream `k` of `base`. Distinct k give unrelated streams.
inline RngSeed derive_seed(RngSeed base, std::uint64_t k) {
  std::uint64_t s = base.value ^ (0xD1B54A32D192ED03ULL * (k + 1));
  return RngSeed{splitmix64(s)};
}

/**
 * xoshiro256** generator (Blackman & Vigna), state filled by SplitMix64 from
 * the seed. Uniforms take the top 53 bits. Normals use the basic Box-Muller
 * transform; both variates of a pair are used, cosine branch first.
 */
class Rng {
public:
  explicit Rng(RngSeed seed) {
    std::uint64_t s = seed.value;
    for (auto& w : state_) {
      w = splitmix64(s);
    }
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Lemire's multiply-shift with rejection; exact for any n > 0.
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        x = next_u64();
        m = static_cast<__uint128_t>(x) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform(); // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t state_[4]{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// n x p matrix whose rows are draws from N(mean, L L').
inline Matrix sample_mvn(const Vec& mean, const Matrix& chol_lower, Index n, Rng& rng) {
  const Index p = mean.size();
  Matrix z(p, n);
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < p; ++i) {
      z(i, j) = rng.normal();
    }
  }
  Matrix x = (chol_lower.triangularView<Eigen::Lower>() * z).transpose();
  x.rowwise() += mean.transpose();
  return x;
}

inline Matrix sample_mvn(const Vec& mean, const SymMatrix& cov, Index n, RngSeed seed) {
  if (mean.size() != cov.dim()) {
    throw InvalidInput("sample_mvn: dimension mismatch");
  }
  Rng rng(seed);
  return sample_mvn(mean, cholesky(cov), n, rng);
}

} // namespace sparsa
