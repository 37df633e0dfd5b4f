#pragma once

#include <cmath>
#include <utility>

#include "gplvm/errors.hpp"
#include "gplvm/numkit.hpp"

namespace gplvm::rff {

/// Spectral frequencies of a random-feature approximation to the RBF kernel.
///
/// Holds J/2 frequency rows drawn from N(0, lengthscale^-2 I); the induced
/// feature map interleaves cosine and sine components so that
/// phi(x)^T phi(x') approximates exp(-|x - x'|^2 / (2 lengthscale^2)).
/// Immutable after construction; one basis is shared by every output
/// dimension and every posterior sample within a trial.
class RffBasis {
 public:
  RffBasis(Matrix frequencies, double lengthscale)
      : frequencies_(std::move(frequencies)), lengthscale_(lengthscale) {
    if (frequencies_.rows() < 1 || frequencies_.cols() < 1) {
      throw InvalidConfig("RffBasis: need at least one frequency row");
    }
    if (!(lengthscale_ > 0.0)) {
      throw InvalidConfig("RffBasis: lengthscale must be positive");
    }
  }

  int feature_count() const { return 2 * static_cast<int>(frequencies_.rows()); }
  int latent_dim() const { return static_cast<int>(frequencies_.cols()); }
  double lengthscale() const { return lengthscale_; }
  const Matrix& frequencies() const { return frequencies_; }

 private:
  Matrix frequencies_;  // (J/2) x d_x
  double lengthscale_;
};

/// Draws a basis of `feature_count` features (must be even and >= 2) for
/// latent dimension d_x. Frequencies are standard normals scaled by
/// 1/lengthscale, the spectral density of the RBF kernel.
inline RffBasis sample_basis(int d_x, int feature_count, double lengthscale,
                             numkit::RngStream& rng) {
  if (d_x < 1) throw InvalidConfig("sample_basis: d_x must be positive");
  if (feature_count < 2 || feature_count % 2 != 0) {
    throw InvalidConfig("sample_basis: feature count must be even and >= 2");
  }
  if (!(lengthscale > 0.0)) {
    throw InvalidConfig("sample_basis: lengthscale must be positive");
  }
  Matrix freq(feature_count / 2, d_x);
  for (Eigen::Index i = 0; i < freq.rows(); ++i) {
    for (Eigen::Index j = 0; j < freq.cols(); ++j) {
      freq(i, j) = rng.next_normal() / lengthscale;
    }
  }
  return RffBasis(std::move(freq), lengthscale);
}

/// Feature map sqrt(2/J) [cos(w_1^T x), sin(w_1^T x), ..., sin(w_{J/2}^T x)].
/// The interleaved layout is part of the serialization contract. The result
/// has unit squared norm by the cos^2 + sin^2 identity.
inline Vector features(const RffBasis& basis, const Vector& x) {
  if (x.size() != basis.latent_dim()) {
    throw DimensionMismatch("features: latent dimension mismatch");
  }
  const Vector t = basis.frequencies() * x;
  const int j = basis.feature_count();
  const double s = std::sqrt(2.0 / static_cast<double>(j));
  Vector phi(j);
  for (Eigen::Index k = 0; k < t.size(); ++k) {
    phi(2 * k) = s * std::cos(t(k));
    phi(2 * k + 1) = s * std::sin(t(k));
  }
  return phi;
}

/// Jacobian of the feature map, shape J x d_x. The cosine row for frequency
/// w is -sqrt(2/J) sin(w^T x) w^T and the sine row is sqrt(2/J) cos(w^T x) w^T.
inline Matrix features_jacobian(const RffBasis& basis, const Vector& x) {
  if (x.size() != basis.latent_dim()) {
    throw DimensionMismatch("features_jacobian: latent dimension mismatch");
  }
  const Matrix& w = basis.frequencies();
  const Vector t = w * x;
  const int j = basis.feature_count();
  const double s = std::sqrt(2.0 / static_cast<double>(j));
  Matrix jac(j, basis.latent_dim());
  for (Eigen::Index k = 0; k < t.size(); ++k) {
    jac.row(2 * k) = -s * std::sin(t(k)) * w.row(k);
    jac.row(2 * k + 1) = s * std::cos(t(k)) * w.row(k);
  }
  return jac;
}

/// Monte Carlo kernel estimate phi(x)^T phi(x'); always in [-1, 1].
inline double kernel_estimate(const RffBasis& basis, const Vector& x,
                              const Vector& x_prime) {
  return features(basis, x).dot(features(basis, x_prime));
}

/// Row-wise feature matrix for a batch of latent points, shape N x J.
inline Matrix feature_matrix(const RffBasis& basis, const Matrix& latents) {
  Matrix phi(latents.rows(), basis.feature_count());
  for (Eigen::Index i = 0; i < latents.rows(); ++i) {
    phi.row(i) = features(basis, latents.row(i).transpose()).transpose();
  }
  return phi;
}

}  // namespace gplvm::rff
