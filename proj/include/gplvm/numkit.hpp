#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "gplvm/errors.hpp"

namespace gplvm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace numkit {

namespace detail {

// SplitMix64 output function.
inline std::uint64_t sm_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;
constexpr double kTwoPi = 6.283185307179586476925287;

}  // namespace detail

/// Counter-based seeded random stream.
///
/// A stream is identified by a 64-bit key hashed from the root seed and the
/// (label, index) derivation path; its value sequence is a SplitMix64 walk
/// from that key. Children are derived from the key alone, so consuming a
/// parent never perturbs a child and streams with distinct paths can be
/// consumed in any interleaving. A stream is single-consumer: share work by
/// deriving disjoint children, not by handing one stream to several owners.
class RngStream {
 public:
  explicit RngStream(std::uint64_t root_seed)
      : key_(detail::sm_mix(root_seed ^ 0x6A09E667F3BCC908ull)), state_(key_) {}

  /// Child stream for the path element (label, index). Depends only on this
  /// stream's identity, never on how much of it has been consumed.
  RngStream derive(std::string_view label, std::uint64_t index) const {
    std::uint64_t k = detail::sm_mix(key_ ^ detail::fnv1a(label));
    k = detail::sm_mix(k ^ (index * detail::kGamma + 0x3C6EF372FE94F82Bull));
    return RngStream(k, k);
  }

  std::uint64_t next_u64() {
    state_ += detail::kGamma;
    return detail::sm_mix(state_);
  }

  /// Uniform draw on the open interval (0, 1).
  double next_uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1p-53;
  }

  /// Standard normal via Box-Muller; consumes exactly two uniforms per draw.
  double next_normal() {
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(detail::kTwoPi * u2);
  }

  Vector next_normal_vector(Eigen::Index n) {
    Vector z(n);
    for (Eigen::Index i = 0; i < n; ++i) z(i) = next_normal();
    return z;
  }

 private:
  RngStream(std::uint64_t key, std::uint64_t state) : key_(key), state_(state) {}

  std::uint64_t key_;    // identity: hash of root seed and derivation path
  std::uint64_t state_;  // consumption position
};

inline RngStream derive_stream(const RngStream& parent, std::string_view label,
                               std::uint64_t index) {
  return parent.derive(label, index);
}

/// Lower-triangular Cholesky factor of a (possibly jittered) SPD matrix.
struct CholFactor {
  Matrix lower;
  double jitter_used = 0.0;

  Eigen::Index dim() const { return lower.rows(); }
};

namespace detail {

// Plain lower Cholesky of a + jitter*I. Fails on a non-positive or
// non-finite pivot.
inline bool try_cholesky(const Matrix& a, double jitter, Matrix& lower) {
  const Eigen::Index n = a.rows();
  lower.setZero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = a(j, j) + jitter - lower.row(j).head(j).squaredNorm();
    if (!std::isfinite(d) || !(d > 0.0)) return false;
    const double ljj = std::sqrt(d);
    lower(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double s = a(i, j) - lower.row(i).head(j).dot(lower.row(j).head(j));
      lower(i, j) = s / ljj;
    }
  }
  return true;
}

}  // namespace detail

/// Cholesky factorization with trace-scaled jitter escalation.
///
/// Tries jitter levels 0, 1e-10*t, 1e-8*t, 1e-6*t, 1e-4*t where
/// t = trace(a)/dim(a), and returns the factor for the first level whose
/// pivots all stay positive. The escalation keeps behavior invariant under
/// rescaling of the input.
inline CholFactor cholesky_pd(const Matrix& a) {
  if (a.rows() != a.cols()) {
    throw DimensionMismatch("cholesky_pd: matrix must be square");
  }
  const Eigen::Index n = a.rows();
  if (n == 0) throw DimensionMismatch("cholesky_pd: empty matrix");
  const double scale = a.cwiseAbs().maxCoeff();
  const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12 * std::max(scale, 1e-300)) {
    throw DimensionMismatch("cholesky_pd: matrix is not symmetric");
  }

  const double t = std::max(a.trace() / static_cast<double>(n), 0.0);
  const std::array<double, 5> levels = {0.0, 1e-10 * t, 1e-8 * t, 1e-6 * t,
                                        1e-4 * t};
  CholFactor f;
  for (double jitter : levels) {
    if (detail::try_cholesky(a, jitter, f.lower)) {
      f.jitter_used = jitter;
      return f;
    }
  }
  throw FactorizationFailure(
      "cholesky_pd: matrix not positive definite at any jitter level");
}

/// Solves (L L^T) x = b for the factored matrix.
inline Vector chol_solve(const CholFactor& f, const Vector& b) {
  if (b.size() != f.dim()) throw DimensionMismatch("chol_solve: size mismatch");
  Vector y = f.lower.triangularView<Eigen::Lower>().solve(b);
  return f.lower.transpose().triangularView<Eigen::Upper>().solve(y);
}

inline Matrix chol_solve(const CholFactor& f, const Matrix& b) {
  if (b.rows() != f.dim()) throw DimensionMismatch("chol_solve: size mismatch");
  Matrix y = f.lower.triangularView<Eigen::Lower>().solve(b);
  return f.lower.transpose().triangularView<Eigen::Upper>().solve(y);
}

/// Dense inverse of the factored matrix, symmetrized against roundoff.
inline Matrix chol_inverse(const CholFactor& f) {
  const Matrix eye = Matrix::Identity(f.dim(), f.dim());
  const Matrix inv = chol_solve(f, eye);
  return 0.5 * (inv + inv.transpose());
}

/// Draw from N(mean, L L^T) as mean + L z with z standard normal.
inline Vector sample_gaussian(const Vector& mean, const CholFactor& factor,
                              RngStream& rng) {
  if (mean.size() != factor.dim()) {
    throw DimensionMismatch("sample_gaussian: mean/factor size mismatch");
  }
  const Vector z = rng.next_normal_vector(mean.size());
  return mean + factor.lower * z;
}

constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

inline double log_normal_pdf(double y, double mean, double variance) {
  const double r = y - mean;
  return -0.5 * (kLogTwoPi + std::log(variance) + r * r / variance);
}

/// log N(x | 0, I).
inline double log_std_normal(const Vector& x) {
  return -0.5 * (x.squaredNorm() +
                 static_cast<double>(x.size()) * kLogTwoPi);
}

}  // namespace numkit
}  // namespace gplvm
