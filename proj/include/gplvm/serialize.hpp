#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "gplvm/blr.hpp"
#include "gplvm/errors.hpp"
#include "gplvm/latent.hpp"
#include "gplvm/numkit.hpp"
#include "gplvm/rff.hpp"

// JSON snapshots of the basis and the trained model, for train-once /
// evaluate-many workflows. Matrices are stored row-major as nested arrays;
// values round-trip bit-exactly through the shortest-representation printer.

namespace gplvm::serialize {

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty() || !j.front().is_array()) {
    throw IoError("serialize: expected a two-dimensional array");
  }
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j.front().size());
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (static_cast<Eigen::Index>(row.size()) != cols) {
      throw IoError("serialize: ragged matrix rows");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
  }
  return m;
}

inline nlohmann::json vector_to_json(const Vector& v) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline Vector vector_from_json(const nlohmann::json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

}  // namespace detail

inline nlohmann::json basis_to_json(const rff::RffBasis& basis) {
  return {{"j", basis.feature_count()},
          {"lengthscale", basis.lengthscale()},
          {"frequencies", detail::matrix_to_json(basis.frequencies())}};
}

inline rff::RffBasis basis_from_json(const nlohmann::json& j) {
  const Matrix freq = detail::matrix_from_json(j.at("frequencies"));
  const auto feature_count = j.at("j").get<int>();
  if (feature_count != 2 * freq.rows()) {
    throw IoError("serialize: feature count does not match frequency rows");
  }
  return rff::RffBasis(freq, j.at("lengthscale").get<double>());
}

inline nlohmann::json model_to_json(const latent::TrainedModel& model) {
  nlohmann::json j;
  j["basis"] = basis_to_json(model.basis);
  j["map_latents"] = detail::matrix_to_json(model.map_latents);
  j["laplace_covs"] = nlohmann::json::array();
  for (const auto& c : model.laplace_covs) {
    j["laplace_covs"].push_back(detail::matrix_to_json(c));
  }
  j["latent_samples"] = nlohmann::json::array();
  for (const auto& s : model.latent_samples) {
    j["latent_samples"].push_back(detail::matrix_to_json(s));
  }
  j["fits"] = nlohmann::json::array();
  for (const auto& fit : model.fits) {
    nlohmann::json dims = nlohmann::json::array();
    for (const auto& fr : fit.dims) {
      dims.push_back({{"theta_mean", detail::vector_to_json(fr.theta.mean)},
                      {"theta_cov", detail::matrix_to_json(fr.theta.covariance)},
                      {"noise_a", fr.noise.a_n},
                      {"noise_b", fr.noise.b_n}});
    }
    j["fits"].push_back(std::move(dims));
  }
  return j;
}

inline latent::TrainedModel model_from_json(const nlohmann::json& j) {
  latent::TrainedModel model{basis_from_json(j.at("basis")),
                             detail::matrix_from_json(j.at("map_latents")),
                             {},
                             {},
                             {},
                             {}};
  for (const auto& c : j.at("laplace_covs")) {
    model.laplace_covs.push_back(detail::matrix_from_json(c));
  }
  for (const auto& s : j.at("latent_samples")) {
    model.latent_samples.push_back(detail::matrix_from_json(s));
  }
  for (const auto& fit : j.at("fits")) {
    latent::ConditionalFit cf;
    for (const auto& fr : fit) {
      blr::FitResult result;
      result.theta.mean = detail::vector_from_json(fr.at("theta_mean"));
      result.theta.covariance = detail::matrix_from_json(fr.at("theta_cov"));
      result.noise.a_n = fr.at("noise_a").get<double>();
      result.noise.b_n = fr.at("noise_b").get<double>();
      cf.dims.push_back(std::move(result));
    }
    model.fits.push_back(std::move(cf));
  }
  if (model.laplace_covs.size() !=
      static_cast<std::size_t>(model.map_latents.rows())) {
    throw IoError("serialize: laplace_covs count does not match latents");
  }
  if (model.latent_samples.size() != model.fits.size()) {
    throw IoError("serialize: latent_samples/fits count mismatch");
  }
  return model;
}

inline void save_model(const latent::TrainedModel& model,
                       const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("save_model: cannot open " + path);
  os << model_to_json(model).dump();
  if (!os) throw IoError("save_model: failed writing " + path);
}

inline latent::TrainedModel load_model(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("load_model: cannot open " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("load_model: parse error: ") + e.what());
  }
  return model_from_json(j);
}

inline void save_basis(const rff::RffBasis& basis, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("save_basis: cannot open " + path);
  os << basis_to_json(basis).dump();
  if (!os) throw IoError("save_basis: failed writing " + path);
}

inline rff::RffBasis load_basis(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("load_basis: cannot open " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("load_basis: parse error: ") + e.what());
  }
  return basis_from_json(j);
}

}  // namespace gplvm::serialize
