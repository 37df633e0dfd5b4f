#pragma once

#include <cmath>
#include <vector>

#include "gplvm/errors.hpp"
#include "gplvm/latent.hpp"
#include "gplvm/numkit.hpp"
#include "gplvm/rff.hpp"

namespace gplvm::uq {

/// Monte Carlo epistemic-variance estimate and its two constituents.
struct EpistemicEstimate {
  double total = 0.0;
  double param_term = 0.0;   // weight-posterior quadratic form
  double latent_term = 0.0;  // spread of the posterior-mean prediction
};

/// Variance decomposition for one missing output dimension.
struct DimensionUncertainty {
  int dim = 0;  // output index, 0-based
  double predictive_mean = 0.0;
  double epistemic_param = 0.0;
  double epistemic_latent = 0.0;
  double epistemic_total = 0.0;
  double aleatoric = 0.0;
  double total = 0.0;  // epistemic_total + aleatoric, exact by construction
};

struct UncertaintyReport {
  std::vector<DimensionUncertainty> entries;
};

namespace detail {

inline void check_output_dim(const latent::TrainedModel& model, int d) {
  if (model.fits.empty()) {
    throw InsufficientSamples("uq: model has no posterior samples");
  }
  if (d < 0 || d >= model.fits.front().output_dim()) {
    throw IndexOutOfRange("uq: output dimension out of range");
  }
}

// Feature matrix per group, one row per test-latent sample.
inline std::vector<Matrix> group_features(const latent::TrainedModel& model,
                                          const latent::TestLatentDraws& draws) {
  if (draws.groups.size() != model.fits.size()) {
    throw DimensionMismatch(
        "uq: draws must have one group per posterior sample");
  }
  std::vector<Matrix> feats;
  feats.reserve(draws.groups.size());
  for (const auto& group : draws.groups) {
    Matrix phi(static_cast<Eigen::Index>(group.samples.size()),
               model.basis.feature_count());
    for (std::size_t l = 0; l < group.samples.size(); ++l) {
      phi.row(static_cast<Eigen::Index>(l)) =
          rff::features(model.basis, group.samples[l]).transpose();
    }
    feats.push_back(std::move(phi));
  }
  return feats;
}

struct DimMoments {
  double predictive_mean = 0.0;
  EpistemicEstimate epistemic;
};

// Shared core of the estimators. With samples x^(m,l) and per-sample
// posteriors over theta_d:
//   param_term  = mean over (m,l) of phi^T Cov[theta_d | X^(m)] phi
//   latent_term = population variance over (m,l) of phi^T E[theta_d | X^(m)]
// The latent term pools all M*L values so it carries both the within-m and
// the between-m spread of the posterior-mean prediction.
inline DimMoments dim_moments(const latent::TrainedModel& model,
                              const std::vector<Matrix>& feats, int d) {
  check_output_dim(model, d);
  Eigen::Index count = 0;
  for (const auto& phi : feats) count += phi.rows();
  if (count < 2) {
    throw InsufficientSamples("uq: need at least two test-latent samples");
  }

  std::vector<double> g_values;
  g_values.reserve(static_cast<std::size_t>(count));
  double param_sum = 0.0;
  for (std::size_t m = 0; m < feats.size(); ++m) {
    const auto& fr = model.fits[m].dims[static_cast<std::size_t>(d)];
    const Vector g = feats[m] * fr.theta.mean;
    g_values.insert(g_values.end(), g.data(), g.data() + g.size());
    param_sum += ((feats[m] * fr.theta.covariance).cwiseProduct(feats[m])).sum();
  }

  const double n = static_cast<double>(count);
  double mean = 0.0;
  for (double g : g_values) mean += g;
  mean /= n;
  double variance = 0.0;
  for (double g : g_values) variance += (g - mean) * (g - mean);
  variance /= n;

  DimMoments out;
  out.predictive_mean = mean;
  out.epistemic.param_term = param_sum / n;
  out.epistemic.latent_term = variance;
  out.epistemic.total = out.epistemic.param_term + out.epistemic.latent_term;
  return out;
}

}  // namespace detail

/// Epistemic variance of the prediction for output dimension d, decomposed
/// into the weight-uncertainty term and the latent-spread term.
inline EpistemicEstimate epistemic(const latent::TrainedModel& model,
                                   const latent::TestLatentDraws& draws,
                                   int d) {
  detail::check_output_dim(model, d);
  return detail::dim_moments(model, detail::group_features(model, draws), d)
      .epistemic;
}

/// Aleatoric variance of the prediction for output dimension d: the average
/// over posterior samples of the fitted noise variance. The inner average
/// over test-latent samples is degenerate under homoscedastic noise and
/// collapses to the per-sample value.
inline double aleatoric(const latent::TrainedModel& model, int d) {
  detail::check_output_dim(model, d);
  double sum = 0.0;
  for (const auto& fit : model.fits) {
    sum += fit.dims[static_cast<std::size_t>(d)].noise.mean_variance();
  }
  return sum / static_cast<double>(model.fits.size());
}

/// Full per-dimension uncertainty report for the missing output dimensions.
/// Every entry satisfies total = epistemic_param + epistemic_latent +
/// aleatoric exactly, with all variance components nonnegative.
inline UncertaintyReport report(const latent::TrainedModel& model,
                                const latent::TestLatentDraws& draws,
                                const std::vector<int>& missing_dims) {
  if (missing_dims.empty()) {
    throw InvalidConfig("uq::report: missing_dims must be nonempty");
  }
  const auto feats = detail::group_features(model, draws);
  UncertaintyReport rep;
  rep.entries.reserve(missing_dims.size());
  for (int d : missing_dims) {
    const auto moments = detail::dim_moments(model, feats, d);
    DimensionUncertainty entry;
    entry.dim = d;
    entry.predictive_mean = moments.predictive_mean;
    entry.epistemic_param = moments.epistemic.param_term;
    entry.epistemic_latent = moments.epistemic.latent_term;
    entry.epistemic_total = moments.epistemic.total;
    entry.aleatoric = aleatoric(model, d);
    entry.total = entry.epistemic_total + entry.aleatoric;
    rep.entries.push_back(entry);
  }
  return rep;
}

}  // namespace gplvm::uq
