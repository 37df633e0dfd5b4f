#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "gplvm/errors.hpp"
#include "gplvm/numkit.hpp"

namespace gplvm::synthgen {

/// Synthetic four-output dataset: 2-d latents pushed through a linear, a
/// squared, a periodic, and a step map, each with additive Gaussian noise.
struct SyntheticDataset {
  Matrix latents_true;   // N x 2
  Matrix weights;        // 4 x 2, row d holds w_d
  Matrix observations;   // N x 4
  double noise_variance = 1.0;  // sigma_eps^2
  double latent_std = 1.0;      // sigma_x

  Eigen::Index size() const { return observations.rows(); }
};

struct Split {
  SyntheticDataset train;
  SyntheticDataset test;
};

/// The four noise-free output maps applied to one latent point. The step
/// output maps the boundary w^T x = 0 to -1.
inline Vector noiseless_outputs(const Matrix& weights, const Vector& x) {
  if (weights.rows() != 4 || weights.cols() != x.size()) {
    throw DimensionMismatch("noiseless_outputs: weights must be 4 x d_x");
  }
  Vector out(4);
  out(0) = weights.row(0).dot(x);
  const double u2 = weights.row(1).dot(x);
  out(1) = u2 * u2;
  out(2) = std::sin(weights.row(2).dot(x));
  out(3) = weights.row(3).dot(x) > 0.0 ? 1.0 : -1.0;
  return out;
}

/// Draws latents x_n ~ N(0, sigma_x^2 I), dataset-level weights
/// w_d ~ N(0, sigma_w^2 I), and observations through the four output maps
/// with N(0, sigma_eps^2) noise. sigma_eps = 0 yields noise-free data.
inline SyntheticDataset generate(int n, double sigma_x, double sigma_w,
                                 double sigma_eps, numkit::RngStream rng) {
  if (n < 1) throw InvalidConfig("generate: need at least one observation");
  if (!(sigma_x > 0.0) || !(sigma_w > 0.0) || !(sigma_eps >= 0.0)) {
    throw InvalidConfig("generate: scales must be positive (noise may be zero)");
  }

  SyntheticDataset data;
  data.noise_variance = sigma_eps * sigma_eps;
  data.latent_std = sigma_x;

  data.weights.resize(4, 2);
  for (int d = 0; d < 4; ++d) {
    auto wr = rng.derive("weights", static_cast<std::uint64_t>(d));
    data.weights(d, 0) = sigma_w * wr.next_normal();
    data.weights(d, 1) = sigma_w * wr.next_normal();
  }

  data.latents_true.resize(n, 2);
  data.observations.resize(n, 4);
  for (int i = 0; i < n; ++i) {
    auto lr = rng.derive("latent", static_cast<std::uint64_t>(i));
    data.latents_true(i, 0) = sigma_x * lr.next_normal();
    data.latents_true(i, 1) = sigma_x * lr.next_normal();
    const Vector mean =
        noiseless_outputs(data.weights, data.latents_true.row(i).transpose());
    auto nr = rng.derive("noise", static_cast<std::uint64_t>(i));
    for (int d = 0; d < 4; ++d) {
      data.observations(i, d) = mean(d) + sigma_eps * nr.next_normal();
    }
  }
  return data;
}

/// Order-preserving partition into the first n_train rows and the rest.
inline Split split(const SyntheticDataset& data, int n_train) {
  const Eigen::Index n = data.size();
  if (n_train < 1 || n_train >= n) {
    throw InvalidConfig("split: require 1 <= n_train < N");
  }
  Split out;
  out.train = data;
  out.test = data;
  out.train.latents_true = data.latents_true.topRows(n_train);
  out.train.observations = data.observations.topRows(n_train);
  out.test.latents_true = data.latents_true.bottomRows(n - n_train);
  out.test.observations = data.observations.bottomRows(n - n_train);
  return out;
}

inline void write_csv(const SyntheticDataset& data, std::ostream& os,
                      bool with_truth) {
  os << (with_truth ? "row,x1_true,x2_true,y1,y2,y3,y4" : "row,y1,y2,y3,y4")
     << '\n';
  char buf[64];
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    os << i;
    if (with_truth) {
      for (int c = 0; c < 2; ++c) {
        std::snprintf(buf, sizeof(buf), ",%.9g", data.latents_true(i, c));
        os << buf;
      }
    }
    for (int d = 0; d < 4; ++d) {
      std::snprintf(buf, sizeof(buf), ",%.9g", data.observations(i, d));
      os << buf;
    }
    os << '\n';
  }
}

inline void write_csv(const SyntheticDataset& data, const std::string& path,
                      bool with_truth) {
  std::ofstream os(path);
  if (!os) throw IoError("write_csv: cannot open " + path);
  write_csv(data, os, with_truth);
  if (!os) throw IoError("write_csv: failed writing " + path);
}

}  // namespace gplvm::synthgen
