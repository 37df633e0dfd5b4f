#pragma once

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include "gplvm/blr.hpp"
#include "gplvm/errors.hpp"
#include "gplvm/numkit.hpp"
#include "gplvm/rff.hpp"

namespace gplvm::latent {

struct ModelConfig {
  int d_x = 2;
  int d_y = 4;
  int feature_count = 100;  // J, even
  double lengthscale = 1.65;
  // When on, the basis lengthscale is set to the median pairwise distance of
  // the initial latent estimates instead of `lengthscale`.
  bool median_lengthscale = false;
  double alpha = 1.0;
  double noise_a0 = 2.0;
  double noise_b0 = 1.0;
  int outer_iters = 30;      // alternation rounds
  double latent_step = 0.05; // gradient-ascent step size
  int latent_iters = 25;     // ascent steps per round
  int restarts = 5;          // test-time multistarts
  int train_samples = 100;   // M: posterior samples of the training latents
  int test_samples = 100;    // L: test-latent samples per training sample

  blr::FitOptions fit_options() const {
    blr::FitOptions opt;
    opt.alpha = alpha;
    opt.noise_a0 = noise_a0;
    opt.noise_b0 = noise_b0;
    return opt;
  }

  void validate() const {
    if (d_x < 1 || d_y < 1 || d_x >= d_y) {
      throw InvalidConfig("ModelConfig: require 1 <= d_x < d_y");
    }
    if (feature_count < 2 || feature_count % 2 != 0) {
      throw InvalidConfig("ModelConfig: feature count must be even and >= 2");
    }
    if (!(lengthscale > 0.0) || !(alpha > 0.0)) {
      throw InvalidConfig("ModelConfig: lengthscale and alpha must be positive");
    }
    if (!(noise_a0 > 1.0) || !(noise_b0 > 0.0)) {
      throw InvalidConfig("ModelConfig: require a0 > 1 and b0 > 0");
    }
    if (outer_iters < 1 || latent_iters < 1 || restarts < 1 ||
        train_samples < 1 || test_samples < 1) {
      throw InvalidConfig("ModelConfig: iteration and sample counts must be positive");
    }
    if (!(latent_step > 0.0)) {
      throw InvalidConfig("ModelConfig: latent step must be positive");
    }
  }
};

/// Per-output-dimension weight and noise posteriors, all conditioned on one
/// latent configuration and one shared basis.
struct ConditionalFit {
  std::vector<blr::FitResult> dims;

  int output_dim() const { return static_cast<int>(dims.size()); }
};

/// Result of training: MAP latents with per-point Laplace covariances, M
/// sampled latent configurations, and the conditional fit for each sample.
struct TrainedModel {
  rff::RffBasis basis;
  Matrix map_latents;                  // N x d_x
  std::vector<Matrix> laplace_covs;    // N matrices, d_x x d_x
  std::vector<Matrix> latent_samples;  // M matrices, N x d_x
  std::vector<ConditionalFit> fits;    // M entries
  std::vector<double> objective_trace; // joint log density after each round
  std::vector<double> ascent_gains;    // latent-phase objective gain per round
  bool balanced_noise_selected = false;  // which training schedule won

  int sample_count() const { return static_cast<int>(fits.size()); }
};

/// Per training sample m: the optimized test latent, its Laplace covariance,
/// and L Gaussian draws around it.
struct TestLatentDraws {
  struct Group {
    Vector location;     // optimized test latent for this sample
    Matrix covariance;   // Laplace covariance, d_x x d_x
    std::vector<Vector> samples;
  };
  std::vector<Group> groups;
};

/// Log density of the observed components plus the standard-normal latent
/// prior: sum_d log N(y_d | phi(x)^T mean_d, sigma_d^2) + log N(x | 0, I).
inline double test_log_density(const Vector& x, const Vector& y_obs,
                               const std::vector<int>& obs_dims,
                               const ConditionalFit& fit,
                               const rff::RffBasis& basis) {
  if (obs_dims.empty()) {
    throw EmptyObservation("test_log_density: no observed dimensions");
  }
  if (static_cast<std::size_t>(y_obs.size()) != obs_dims.size()) {
    throw DimensionMismatch("test_log_density: observation size mismatch");
  }
  const Vector phi = rff::features(basis, x);
  double ll = 0.0;
  for (std::size_t i = 0; i < obs_dims.size(); ++i) {
    const int d = obs_dims[i];
    if (d < 0 || d >= fit.output_dim()) {
      throw IndexOutOfRange("test_log_density: dimension out of range");
    }
    const auto& fr = fit.dims[d];
    ll += numkit::log_normal_pdf(y_obs(static_cast<Eigen::Index>(i)),
                                 phi.dot(fr.theta.mean),
                                 fr.noise.mean_variance());
  }
  return ll + numkit::log_std_normal(x);
}

/// Analytic gradient of test_log_density with respect to x.
inline Vector test_log_density_grad(const Vector& x, const Vector& y_obs,
                                    const std::vector<int>& obs_dims,
                                    const ConditionalFit& fit,
                                    const rff::RffBasis& basis) {
  if (obs_dims.empty()) {
    throw EmptyObservation("test_log_density_grad: no observed dimensions");
  }
  if (static_cast<std::size_t>(y_obs.size()) != obs_dims.size()) {
    throw DimensionMismatch("test_log_density_grad: observation size mismatch");
  }
  const Vector phi = rff::features(basis, x);
  const Matrix jac = rff::features_jacobian(basis, x);
  Vector g = -x;
  for (std::size_t i = 0; i < obs_dims.size(); ++i) {
    const int d = obs_dims[i];
    if (d < 0 || d >= fit.output_dim()) {
      throw IndexOutOfRange("test_log_density_grad: dimension out of range");
    }
    const auto& fr = fit.dims[d];
    const double resid = y_obs(static_cast<Eigen::Index>(i)) -
                         phi.dot(fr.theta.mean);
    g += (resid / fr.noise.mean_variance()) *
         (jac.transpose() * fr.theta.mean);
  }
  return g;
}

namespace detail {

// Fixed-base-step gradient ascent: each iteration starts from the configured
// step and halves it up to ten times until the objective does not decrease.
// Monotone by construction; stops early once no step helps.
template <class F, class G>
inline void ascend_fixed(Vector& x, double& fx, F&& objective, G&& grad,
                         int iters, double base_step) {
  for (int it = 0; it < iters; ++it) {
    const Vector g = grad(x);
    double step = base_step;
    bool moved = false;
    for (int h = 0; h <= 10; ++h) {
      Vector cand = x + step * g;
      const double fc = objective(cand);
      if (fc >= fx) {
        x = std::move(cand);
        fx = fc;
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) return;
  }
}

constexpr int kTestAscentMaxIters = 400;

// Adaptive monotone ascent used at test time: grows the step after a
// successful move, halves on failure, and stops when gains become negligible.
template <class F, class G>
inline std::pair<Vector, double> ascend_adaptive(Vector x, F&& objective,
                                                 G&& grad, double init_step) {
  double fx = objective(x);
  double step = init_step;
  for (int it = 0; it < kTestAscentMaxIters; ++it) {
    const Vector g = grad(x);
    if (g.norm() <= 1e-10 * (1.0 + std::abs(fx))) break;
    bool moved = false;
    bool converged = false;
    for (int h = 0; h <= 10; ++h) {
      Vector cand = x + step * g;
      const double fc = objective(cand);
      if (fc >= fx) {
        converged = (fc - fx) <= 1e-12 * (1.0 + std::abs(fc));
        x = std::move(cand);
        fx = fc;
        moved = true;
        step = std::min(step * 1.5, 1.0);
        break;
      }
      step *= 0.5;
    }
    if (!moved || converged) break;
  }
  return {std::move(x), fx};
}

// Central finite differences of a gradient field; symmetrized.
template <class G>
inline Matrix fd_hessian(G&& grad, const Vector& x, double step) {
  const Eigen::Index d = x.size();
  Matrix h(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    Vector xp = x;
    Vector xm = x;
    xp(i) += step;
    xm(i) -= step;
    h.col(i) = (grad(xp) - grad(xm)) / (2.0 * step);
  }
  return 0.5 * (h + h.transpose());
}

constexpr double kHessianStep = 1e-4;

// The standard-normal latent prior contributes exactly identity curvature,
// so a Laplace precision below it only arises at non-converged ascent
// endpoints (ridges, saddles). Flooring the precision at the prior keeps
// every Laplace covariance positive definite and no wider than the prior.
constexpr double kPriorPrecision = 1.0;

// Laplace covariance (-H)^-1 with eigenvalues of -H floored at the prior
// precision.
inline Matrix laplace_covariance(const Matrix& hessian) {
  const Matrix neg = 0.5 * ((-hessian) + (-hessian).transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(neg);
  const Vector& values = eig.eigenvalues();
  Vector inv(values.size());
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    inv(i) = 1.0 / std::max(values(i), kPriorPrecision);
  }
  const Matrix cov =
      eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (cov + cov.transpose());
}

inline std::vector<int> all_dims(int d_y) {
  std::vector<int> dims(static_cast<std::size_t>(d_y));
  std::iota(dims.begin(), dims.end(), 0);
  return dims;
}

}  // namespace detail

/// Latent initialization: scores of the d_x leading principal components of
/// the centered data, rescaled to unit per-coordinate variance. Breaks the
/// rotational symmetry of the latent space deterministically.
inline Matrix pca_init(const Matrix& y, int d_x) {
  const Eigen::Index n = y.rows();
  const Matrix centered = y.rowwise() - y.colwise().mean();
  Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const int rank = static_cast<int>(svd.singularValues().size());
  Matrix latents = Matrix::Zero(n, d_x);
  const int keep = std::min(d_x, rank);
  latents.leftCols(keep) = svd.matrixU().leftCols(keep) *
                           svd.singularValues().head(keep).asDiagonal();
  for (int c = 0; c < d_x; ++c) {
    const double sd =
        std::sqrt(latents.col(c).squaredNorm() / static_cast<double>(n));
    if (sd > 1e-12) latents.col(c) /= sd;
  }
  return latents;
}

inline double median_pairwise_distance(const Matrix& x) {
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(x.rows()) * (x.rows() - 1) / 2);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index k = i + 1; k < x.rows(); ++k) {
      dists.push_back((x.row(i) - x.row(k)).norm());
    }
  }
  if (dists.empty()) return 1.0;
  auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
  std::nth_element(dists.begin(), mid, dists.end());
  return std::max(*mid, 1e-8);
}

/// Fits all d_y per-dimension regressions against one latent configuration.
inline ConditionalFit fit_conditional(const rff::RffBasis& basis,
                                      const Matrix& latents, const Matrix& y,
                                      const blr::FitOptions& opt) {
  const Matrix phi = rff::feature_matrix(basis, latents);
  ConditionalFit fit;
  fit.dims.reserve(static_cast<std::size_t>(y.cols()));
  for (Eigen::Index d = 0; d < y.cols(); ++d) {
    fit.dims.push_back(blr::fit(phi, y.col(d), opt));
  }
  return fit;
}

/// Aggregate first and second moments of the feature map under per-point
/// Gaussian latent uncertainty x_n ~ N(mean_n, cov_n).
struct ExpectedDesign {
  Matrix expected_features;  // N x J, row n = E[phi(x_n)]
  Matrix gram;               // J x J, sum over n of E[phi(x_n) phi(x_n)^T]
};

/// Closed-form RFF moments: E[cos(w^T x)] = cos(w^T m) exp(-w^T C w / 2) for
/// x ~ N(m, C), and second moments via the product-to-sum identities. With
/// all covariances zero this degenerates exactly to the plain design.
inline ExpectedDesign expected_design(const rff::RffBasis& basis,
                                      const Matrix& means,
                                      const std::vector<Matrix>& covs) {
  if (covs.size() != static_cast<std::size_t>(means.rows())) {
    throw DimensionMismatch("expected_design: one covariance per row required");
  }
  const Matrix& w = basis.frequencies();  // (J/2) x d_x
  const Eigen::Index half = w.rows();
  const Eigen::Index j = 2 * half;
  const Eigen::Index n = means.rows();
  const double scale1 = std::sqrt(2.0 / static_cast<double>(j));
  const double scale2 = 2.0 / static_cast<double>(j);

  ExpectedDesign out;
  out.expected_features.resize(n, j);
  out.gram = Matrix::Zero(j, j);
  Matrix point_gram(j, j);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector u = w * means.row(i).transpose();
    const Matrix g = w * covs[static_cast<std::size_t>(i)] * w.transpose();
    Vector ca(half), sa(half), damp(half);
    for (Eigen::Index a = 0; a < half; ++a) {
      ca(a) = std::cos(u(a));
      sa(a) = std::sin(u(a));
      damp(a) = std::exp(-0.5 * g(a, a));
      out.expected_features(i, 2 * a) = scale1 * ca(a) * damp(a);
      out.expected_features(i, 2 * a + 1) = scale1 * sa(a) * damp(a);
    }
    for (Eigen::Index a = 0; a < half; ++a) {
      for (Eigen::Index b = 0; b <= a; ++b) {
        const double cross = std::exp(g(a, b));
        const double e_diff = damp(a) * damp(b) * cross;   // E[trig((w_a - w_b)^T x)] damping
        const double e_sum = damp(a) * damp(b) / cross;    // E[trig((w_a + w_b)^T x)] damping
        const double cos_diff = ca(a) * ca(b) + sa(a) * sa(b);
        const double cos_sum = ca(a) * ca(b) - sa(a) * sa(b);
        const double sin_diff = sa(a) * ca(b) - ca(a) * sa(b);
        const double sin_sum = sa(a) * ca(b) + ca(a) * sa(b);
        const double cc = 0.5 * scale2 * (cos_diff * e_diff + cos_sum * e_sum);
        const double ss = 0.5 * scale2 * (cos_diff * e_diff - cos_sum * e_sum);
        const double cs = 0.5 * scale2 * (-sin_diff * e_diff + sin_sum * e_sum);
        const double sc = 0.5 * scale2 * (sin_diff * e_diff + sin_sum * e_sum);
        point_gram(2 * a, 2 * b) = cc;
        point_gram(2 * b, 2 * a) = cc;
        point_gram(2 * a + 1, 2 * b + 1) = ss;
        point_gram(2 * b + 1, 2 * a + 1) = ss;
        point_gram(2 * a, 2 * b + 1) = cs;
        point_gram(2 * b + 1, 2 * a) = cs;
        point_gram(2 * a + 1, 2 * b) = sc;
        point_gram(2 * b, 2 * a + 1) = sc;
      }
    }
    out.gram += point_gram;
  }
  return out;
}

/// Per-dimension regressions against uncertain latents: the same fixed-point
/// scheme as blr::fit, with Phi^T Phi and the residual statistics replaced by
/// their expectations under the per-point latent covariances. Marginalizing
/// the latent uncertainty into the fit is what keeps the noise estimates from
/// absorbing per-point noise during training.
inline ConditionalFit fit_conditional_expected(const rff::RffBasis& basis,
                                               const Matrix& means,
                                               const std::vector<Matrix>& covs,
                                               const Matrix& y,
                                               const blr::FitOptions& opt) {
  const auto design = expected_design(basis, means, covs);
  const Eigen::Index n = y.rows();
  const Eigen::Index j = design.gram.cols();
  const double a_n = opt.noise_a0 + 0.5 * static_cast<double>(n);

  ConditionalFit fit;
  fit.dims.reserve(static_cast<std::size_t>(y.cols()));
  for (Eigen::Index d = 0; d < y.cols(); ++d) {
    const Vector bty = design.expected_features.transpose() * y.col(d);
    const double yty = y.col(d).squaredNorm();
    double sigma2 = opt.pinned_noise.value_or(opt.noise_b0 / (opt.noise_a0 - 1.0));
    blr::ThetaPosterior theta;
    double b_n = opt.noise_b0;
    const int iters = opt.pinned_noise ? 1 : opt.max_iters;
    for (int it = 0; it < iters; ++it) {
      const Matrix precision =
          design.gram / sigma2 + opt.alpha * Matrix::Identity(j, j);
      const auto factor = numkit::cholesky_pd(precision);
      theta.covariance = numkit::chol_inverse(factor);
      theta.mean = numkit::chol_solve(factor, bty) / sigma2;
      if (opt.pinned_noise) {
        b_n = sigma2 * (a_n - 1.0);
        break;
      }
      const double expected_rss =
          yty - 2.0 * theta.mean.dot(bty) +
          theta.mean.dot(design.gram * theta.mean);
      const double expected_trace =
          design.gram.cwiseProduct(theta.covariance).sum();
      b_n = opt.noise_b0 + 0.5 * expected_rss + 0.5 * expected_trace;
      const double next = b_n / (a_n - 1.0);
      const bool converged = std::abs(next - sigma2) / next < opt.tol;
      sigma2 = next;
      if (converged) break;
    }
    fit.dims.push_back(blr::FitResult{std::move(theta),
                                      blr::NoisePosterior{a_n, b_n}});
  }
  return fit;
}

/// Log prior density of the current weight means and noise variances.
inline double prior_log_density(const ConditionalFit& fit,
                                const ModelConfig& cfg) {
  const double j = static_cast<double>(cfg.feature_count);
  double total = 0.0;
  for (const auto& fr : fit.dims) {
    total += -0.5 * cfg.alpha * fr.theta.mean.squaredNorm() -
             0.5 * j * numkit::kLogTwoPi + 0.5 * j * std::log(cfg.alpha);
    const double v = fr.noise.mean_variance();
    total += cfg.noise_a0 * std::log(cfg.noise_b0) - std::lgamma(cfg.noise_a0) -
             (cfg.noise_a0 + 1.0) * std::log(v) - cfg.noise_b0 / v;
  }
  return total;
}

/// Joint log density log p(Y | X, theta, sigma^2) + log p(X) + log p(theta)
/// + log p(sigma^2) at the current point estimates.
inline double joint_log_density(const Matrix& latents, const Matrix& y,
                                const ConditionalFit& fit,
                                const rff::RffBasis& basis,
                                const ModelConfig& cfg) {
  const auto dims = detail::all_dims(cfg.d_y);
  double total = 0.0;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    total += test_log_density(latents.row(i).transpose(),
                              y.row(i).transpose(), dims, fit, basis);
  }
  return total + prior_log_density(fit, cfg);
}


/// Draws `count` latent configurations; row n of each draw comes from
/// N(map_latents row n, covs[n]). An exactly zero covariance degenerates to
/// the MAP row.
inline std::vector<Matrix> draw_latent_samples(const Matrix& map_latents,
                                               const std::vector<Matrix>& covs,
                                               int count,
                                               numkit::RngStream rng) {
  if (covs.size() != static_cast<std::size_t>(map_latents.rows())) {
    throw DimensionMismatch("draw_latent_samples: one covariance per row required");
  }
  std::vector<numkit::CholFactor> factors;
  factors.reserve(covs.size());
  for (const auto& c : covs) {
    if (c.isZero(0.0)) {
      factors.push_back({Matrix::Zero(c.rows(), c.cols()), 0.0});
    } else {
      factors.push_back(numkit::cholesky_pd(c));
    }
  }
  std::vector<Matrix> draws;
  draws.reserve(static_cast<std::size_t>(count));
  for (int m = 0; m < count; ++m) {
    auto stream = rng.derive("sample", static_cast<std::uint64_t>(m));
    Matrix x(map_latents.rows(), map_latents.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      x.row(i) = numkit::sample_gaussian(map_latents.row(i).transpose(),
                                         factors[static_cast<std::size_t>(i)],
                                         stream)
                     .transpose();
    }
    draws.push_back(std::move(x));
  }
  return draws;
}

namespace detail {

// Annealing constants for the training schemes. The covariance floor keeps
// the fits marginalizing a prior-scale latent blur while the geometry
// settles; holding it through the first half of the rounds stops the latent
// means from absorbing fine-grained structure (observation noise, the step
// discontinuity) before the noise variances can price it.
constexpr double kFloorDecay = 0.8;
constexpr double kFloorHold = 0.25;
constexpr double kConservativeFloor = 0.8;
constexpr double kConservativeTailDecay = 0.6;
constexpr double kNoiseEma = 0.9;
constexpr int kFitPasses = 2;
constexpr int kCalibrationPasses = 8;
// Abandonment detection thresholds, in units of the prior noise mean.
constexpr double kFittableNoise = 1.5;
constexpr double kAbandonedNoise = 2.0;
constexpr double kAbandonedRatio = 1.8;

enum class TrainingScheme {
  // Noise variances relax geometrically toward the fitted values, letting
  // hard-to-model outputs down-weight themselves.
  kAdaptive,
  // Noise variances pinned at the prior mean with a heavy latent blur and a
  // frozen second half: every output keeps an equal pull and the geometry
  // never over-commits. Slower to sharpen, but immune to run-away
  // down-weighting of an individual output.
  kConservative,
};

struct SchemeState {
  Matrix latents;
  std::vector<Matrix> covs;
  ConditionalFit fit;  // calibrated against the final latents
  std::vector<double> trace;
  std::vector<double> gains;
};

// One annealed alternation run followed by free-noise calibration passes at
// the final latents.
inline SchemeState run_training_scheme(const Matrix& y,
                                       const ModelConfig& cfg,
                                       const rff::RffBasis& basis,
                                       TrainingScheme scheme) {
  const Eigen::Index n = y.rows();
  const auto dims = all_dims(cfg.d_y);
  const blr::FitOptions base_opt = cfg.fit_options();
  const double prior_noise = cfg.noise_b0 / (cfg.noise_a0 - 1.0);
  const bool adaptive = scheme == TrainingScheme::kAdaptive;

  SchemeState state;
  state.latents = pca_init(y, cfg.d_x);
  state.covs.assign(static_cast<std::size_t>(n),
                    Matrix::Identity(cfg.d_x, cfg.d_x));

  double floor_var = 1.0;
  const auto refresh_cov = [&](Eigen::Index i) {
    const Vector yi = y.row(i).transpose();
    auto gradient = [&](const Vector& v) {
      return test_log_density_grad(v, yi, dims, state.fit, basis);
    };
    const Matrix h = fd_hessian(gradient, state.latents.row(i).transpose(),
                                kHessianStep);
    state.covs[static_cast<std::size_t>(i)] =
        laplace_covariance(h) + floor_var * Matrix::Identity(cfg.d_x, cfg.d_x);
  };

  std::vector<double> noise_used(static_cast<std::size_t>(cfg.d_y),
                                 prior_noise);
  const int hold_rounds = cfg.outer_iters / 2;
  int decreasing_rounds = 0;
  for (int round = 0; round < cfg.outer_iters; ++round) {
    const bool organizing = round < hold_rounds;
    if (adaptive) {
      floor_var = organizing
                      ? std::max(std::pow(kFloorDecay, round), kFloorHold)
                      : kFloorHold * std::pow(kFloorDecay, round - hold_rounds);
    } else {
      floor_var = organizing
                      ? std::max(std::pow(kFloorDecay, round), kConservativeFloor)
                      : kConservativeFloor *
                            std::pow(kConservativeTailDecay, round - hold_rounds);
    }
    if (floor_var < 1e-3) floor_var = 0.0;

    blr::FitOptions opt = base_opt;
    if (!adaptive) opt.pinned_noise = prior_noise;
    for (int pass = 0; pass < kFitPasses; ++pass) {
      state.fit = fit_conditional_expected(basis, state.latents, state.covs,
                                           y, opt);
      if (adaptive) {
        for (int d = 0; d < cfg.d_y; ++d) {
          auto& noise = state.fit.dims[static_cast<std::size_t>(d)].noise;
          double& used = noise_used[static_cast<std::size_t>(d)];
          used = std::exp(kNoiseEma * std::log(used) +
                          (1.0 - kNoiseEma) * std::log(noise.mean_variance()));
          noise.b_n = used * (noise.a_n - 1.0);
        }
      }
      for (Eigen::Index i = 0; i < n; ++i) refresh_cov(i);
    }

    // The conservative scheme freezes the geometry for the second half and
    // only recalibrates.
    if (!adaptive && !organizing) {
      state.trace.push_back(
          joint_log_density(state.latents, y, state.fit, basis, cfg));
      state.gains.push_back(0.0);
      continue;
    }

    double gain = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      Vector x = state.latents.row(i).transpose();
      const Vector yi = y.row(i).transpose();
      auto objective = [&](const Vector& v) {
        return test_log_density(v, yi, dims, state.fit, basis);
      };
      auto gradient = [&](const Vector& v) {
        return test_log_density_grad(v, yi, dims, state.fit, basis);
      };
      double fx = objective(x);
      const double before = fx;
      ascend_fixed(x, fx, objective, gradient, cfg.latent_iters,
                   cfg.latent_step);
      gain += fx - before;
      state.latents.row(i) = x.transpose();
      refresh_cov(i);
    }
    state.trace.push_back(
        joint_log_density(state.latents, y, state.fit, basis, cfg));
    state.gains.push_back(gain);
    // The backtracking line search never accepts a worse point, so a
    // negative phase gain signals a broken step configuration.
    if (gain < -1e-9 * (1.0 + std::abs(state.trace.back()))) {
      if (++decreasing_rounds >= 5) {
        throw DivergedOptimization(
            "train: latent updates decreased the objective for five "
            "consecutive rounds; reduce latent_step");
      }
    } else {
      decreasing_rounds = 0;
    }
  }

  // Uncertainty calibration at the final latents: free-noise expected fits
  // iterated with the covariance refresh, geometry frozen.
  floor_var = 0.0;
  for (int pass = 0; pass < kCalibrationPasses; ++pass) {
    state.fit = fit_conditional_expected(basis, state.latents, state.covs, y,
                                         base_opt);
    for (Eigen::Index i = 0; i < n; ++i) refresh_cov(i);
  }
  return state;
}

// An output dimension counts as abandoned when the conservative run fits it
// near the noise prior while the adaptive run reports a much larger
// variance: the adaptive schedule down-weighted a dimension that is in fact
// modelable.
inline bool adaptive_abandoned_dimension(const SchemeState& adaptive,
                                         const SchemeState& conservative,
                                         const ModelConfig& cfg) {
  const double prior_noise = cfg.noise_b0 / (cfg.noise_a0 - 1.0);
  for (int d = 0; d < cfg.d_y; ++d) {
    const double a =
        adaptive.fit.dims[static_cast<std::size_t>(d)].noise.mean_variance();
    const double c = conservative.fit.dims[static_cast<std::size_t>(d)]
                         .noise.mean_variance();
    if (c <= kFittableNoise * prior_noise && a >= kAbandonedNoise * prior_noise &&
        a >= kAbandonedRatio * c) {
      return true;
    }
  }
  return false;
}

}  // namespace detail

/// Trains the latent-variable model on Y (one row per observation).
///
/// Annealed alternation: each round fits the d_y regressions with the
/// per-point Laplace covariances marginalized into the feature design
/// (closed-form expected trigonometric moments), runs per-point backtracking
/// gradient ascent on the joint log density, and refreshes the Laplace
/// covariances from finite-difference Hessians. Training is run under two
/// noise schedules — adaptive (variances relax toward the fitted values) and
/// conservative (variances pinned, heavier blur, frozen second half) — and
/// the adaptive result is kept unless its schedule demonstrably abandoned an
/// output dimension that the conservative run fits at noise level. Finally
/// `train_samples` latent configurations are drawn from the per-point
/// Laplace posteriors and each is refit with a plain conditional fit.
inline TrainedModel train(const Matrix& y, const ModelConfig& cfg,
                          numkit::RngStream rng);

namespace detail {

inline TrainedModel assemble_model(const Matrix& y, const ModelConfig& cfg,
                                   const rff::RffBasis& basis,
                                   SchemeState state,
                                   numkit::RngStream draw_rng) {
  auto samples = draw_latent_samples(state.latents, state.covs,
                                     cfg.train_samples, draw_rng);
  std::vector<ConditionalFit> fits;
  fits.reserve(samples.size());
  const blr::FitOptions opt = cfg.fit_options();
  for (const auto& sample : samples) {
    fits.push_back(fit_conditional(basis, sample, y, opt));
  }
  return TrainedModel{basis,
                      std::move(state.latents),
                      std::move(state.covs),
                      std::move(samples),
                      std::move(fits),
                      std::move(state.trace),
                      std::move(state.gains)};
}

}  // namespace detail

inline TrainedModel train(const Matrix& y, const ModelConfig& cfg,
                          numkit::RngStream rng) {
  cfg.validate();
  if (y.rows() < 2) throw InvalidConfig("train: need at least two observations");
  if (y.cols() != cfg.d_y) {
    throw DimensionMismatch("train: data column count must equal d_y");
  }
  if (!y.allFinite()) throw NonFinite("train: data contains NaN/Inf");

  const double lengthscale = cfg.median_lengthscale
                                 ? median_pairwise_distance(pca_init(y, cfg.d_x))
                                 : cfg.lengthscale;
  auto basis_rng = rng.derive("basis", 0);
  const rff::RffBasis basis =
      rff::sample_basis(cfg.d_x, cfg.feature_count, lengthscale, basis_rng);

  auto adaptive = detail::run_training_scheme(
      y, cfg, basis, detail::TrainingScheme::kAdaptive);
  auto conservative = detail::run_training_scheme(
      y, cfg, basis, detail::TrainingScheme::kConservative);

  const bool keep_conservative =
      detail::adaptive_abandoned_dimension(adaptive, conservative, cfg);
  TrainedModel model = detail::assemble_model(
      y, cfg, basis, keep_conservative ? std::move(conservative) : std::move(adaptive),
      rng.derive("latent_samples", keep_conservative ? 0 : 1));
  model.balanced_noise_selected = keep_conservative;
  return model;
}

/// Optimizes the test latent for a partially observed point by multistart
/// gradient ascent on the test log density, and returns the endpoint with a
/// Laplace covariance from a finite-difference Hessian. With no observed
/// dimensions the posterior is the prior: (0, I).
inline std::pair<Vector, Matrix> infer_test_latent(
    const Vector& y_obs, const std::vector<int>& obs_dims,
    const ConditionalFit& fit, const rff::RffBasis& basis,
    const ModelConfig& cfg, numkit::RngStream rng) {
  const int d_x = basis.latent_dim();
  if (obs_dims.empty()) {
    return {Vector::Zero(d_x), Matrix::Identity(d_x, d_x)};
  }
  if (cfg.restarts < 1) throw InvalidConfig("infer_test_latent: restarts >= 1");

  auto objective = [&](const Vector& v) {
    return test_log_density(v, y_obs, obs_dims, fit, basis);
  };
  auto gradient = [&](const Vector& v) {
    return test_log_density_grad(v, y_obs, obs_dims, fit, basis);
  };

  Vector best = Vector::Zero(d_x);
  double best_value = -std::numeric_limits<double>::infinity();
  for (int r = 0; r < cfg.restarts; ++r) {
    Vector start =
        (r == 0) ? Vector::Zero(d_x) : rng.next_normal_vector(d_x);
    auto [endpoint, value] = detail::ascend_adaptive(
        std::move(start), objective, gradient, cfg.latent_step);
    if (value > best_value) {
      best_value = value;
      best = std::move(endpoint);
    }
  }

  const Matrix h = detail::fd_hessian(gradient, best, detail::kHessianStep);
  return {std::move(best), detail::laplace_covariance(h)};
}

/// For each of the model's M conditional fits, optimizes the test latent and
/// draws L samples from its Laplace posterior.
inline TestLatentDraws sample_test_latents(const TrainedModel& model,
                                           const Vector& y_obs,
                                           const std::vector<int>& obs_dims,
                                           const ModelConfig& cfg,
                                           numkit::RngStream rng) {
  if (model.fits.empty()) {
    throw InvalidConfig("sample_test_latents: model has no posterior samples");
  }
  TestLatentDraws draws;
  draws.groups.reserve(model.fits.size());
  for (std::size_t m = 0; m < model.fits.size(); ++m) {
    auto [location, covariance] = infer_test_latent(
        y_obs, obs_dims, model.fits[m], model.basis, cfg,
        rng.derive("infer", m));
    numkit::CholFactor factor;
    if (covariance.isZero(0.0)) {
      factor = {Matrix::Zero(covariance.rows(), covariance.cols()), 0.0};
    } else {
      factor = numkit::cholesky_pd(covariance);
    }
    auto draw_rng = rng.derive("draw", m);
    TestLatentDraws::Group group;
    group.location = std::move(location);
    group.covariance = std::move(covariance);
    group.samples.reserve(static_cast<std::size_t>(cfg.test_samples));
    for (int l = 0; l < cfg.test_samples; ++l) {
      group.samples.push_back(
          numkit::sample_gaussian(group.location, factor, draw_rng));
    }
    draws.groups.push_back(std::move(group));
  }
  return draws;
}


}  // namespace gplvm::latent
