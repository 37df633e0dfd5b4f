#pragma once

#include <cmath>
#include <optional>

#include "gplvm/errors.hpp"
#include "gplvm/numkit.hpp"

namespace gplvm::blr {

/// Gaussian posterior over regression weights in feature space.
struct ThetaPosterior {
  Vector mean;
  Matrix covariance;
};

/// Inverse-Gamma posterior over one output dimension's noise variance.
struct NoisePosterior {
  double a_n = 2.0;  // shape, > 1
  double b_n = 1.0;  // rate, > 0

  double mean_variance() const { return b_n / (a_n - 1.0); }
};

struct FitResult {
  ThetaPosterior theta;
  NoisePosterior noise;
};

struct FitOptions {
  double alpha = 1.0;  // weight-prior precision
  double noise_a0 = 2.0;
  double noise_b0 = 1.0;
  int max_iters = 20;
  double tol = 1e-6;
  // When set, the noise variance is held at this value and the fixed-point
  // iteration reduces to a single closed-form weight update.
  std::optional<double> pinned_noise;
};

/// Conjugate Bayesian linear regression with an isotropic N(0, alpha^-1 I)
/// weight prior and Inverse-Gamma(a0, b0) noise prior.
///
/// The joint fit alternates two closed-form updates until the noise estimate
/// settles: given sigma^2, covariance = (Phi^T Phi / sigma^2 + alpha I)^-1 and
/// mean = covariance Phi^T y / sigma^2; given the weight posterior,
/// b_n = b0 + (residual sum)/2 + (sum_n phi_n^T covariance phi_n)/2 and
/// a_n = a0 + N/2. The expected-residual trace term keeps the noise estimate
/// from collapsing when the feature count approaches N.
inline FitResult fit(const Matrix& phi, const Vector& y,
                     const FitOptions& opt = {}) {
  if (!(opt.alpha > 0.0) || !(opt.noise_a0 > 1.0) || !(opt.noise_b0 > 0.0)) {
    throw InvalidConfig("blr::fit: require alpha > 0, a0 > 1, b0 > 0");
  }
  if (phi.rows() != y.size()) {
    throw DimensionMismatch("blr::fit: feature/target row mismatch");
  }
  if (!y.allFinite()) throw NonFinite("blr::fit: targets contain NaN/Inf");

  const Eigen::Index n = phi.rows();
  const Eigen::Index j = phi.cols();

  if (n == 0) {
    // Prior recovery: no data leaves the posterior at the prior, exactly.
    return FitResult{
        ThetaPosterior{Vector::Zero(j), Matrix::Identity(j, j) / opt.alpha},
        NoisePosterior{opt.noise_a0, opt.noise_b0}};
  }

  const Matrix gram = phi.transpose() * phi;
  const Vector phity = phi.transpose() * y;
  const double a_n = opt.noise_a0 + 0.5 * static_cast<double>(n);

  double sigma2 =
      opt.pinned_noise.value_or(opt.noise_b0 / (opt.noise_a0 - 1.0));
  if (!(sigma2 > 0.0)) throw InvalidConfig("blr::fit: noise must be positive");

  ThetaPosterior theta;
  double b_n = opt.noise_b0;
  const int iters = opt.pinned_noise ? 1 : opt.max_iters;
  for (int it = 0; it < iters; ++it) {
    const Matrix precision =
        gram / sigma2 + opt.alpha * Matrix::Identity(j, j);
    const auto factor = numkit::cholesky_pd(precision);
    theta.covariance = numkit::chol_inverse(factor);
    theta.mean = numkit::chol_solve(factor, phity) / sigma2;

    if (opt.pinned_noise) {
      b_n = sigma2 * (a_n - 1.0);
      break;
    }
    const double rss = (y - phi * theta.mean).squaredNorm();
    const double expected_trace =
        ((phi * theta.covariance).cwiseProduct(phi)).sum();
    b_n = opt.noise_b0 + 0.5 * rss + 0.5 * expected_trace;
    const double next = b_n / (a_n - 1.0);
    const bool converged = std::abs(next - sigma2) / next < opt.tol;
    sigma2 = next;
    if (converged) {
      // One more weight update so the reported posterior matches sigma2.
      const Matrix p2 = gram / sigma2 + opt.alpha * Matrix::Identity(j, j);
      const auto f2 = numkit::cholesky_pd(p2);
      theta.covariance = numkit::chol_inverse(f2);
      theta.mean = numkit::chol_solve(f2, phity) / sigma2;
      break;
    }
  }
  return FitResult{std::move(theta), NoisePosterior{a_n, b_n}};
}

struct Prediction {
  double mean = 0.0;
  double variance = 0.0;
};

/// Predictive moments at one feature vector: mean phi^T m and variance
/// phi^T Sigma phi + E[sigma^2].
inline Prediction posterior_predictive(const ThetaPosterior& theta,
                                       const NoisePosterior& noise,
                                       const Vector& phi) {
  if (phi.size() != theta.mean.size()) {
    throw DimensionMismatch("posterior_predictive: feature size mismatch");
  }
  Prediction p;
  p.mean = phi.dot(theta.mean);
  p.variance = phi.dot(theta.covariance * phi) + noise.mean_variance();
  return p;
}

}  // namespace gplvm::blr
