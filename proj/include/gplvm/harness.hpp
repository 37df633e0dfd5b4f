#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "gplvm/errors.hpp"
#include "gplvm/latent.hpp"
#include "gplvm/numkit.hpp"
#include "gplvm/synthgen.hpp"
#include "gplvm/uq.hpp"

namespace gplvm::harness {

enum class UncType { kAleatoric, kEpistemic };

inline const char* to_string(UncType t) {
  return t == UncType::kAleatoric ? "aleatoric" : "epistemic";
}

constexpr int kOutputDims = 4;

/// Full experiment configuration. Field defaults reproduce the reference
/// protocol (N = 1000 with an 800/200 split, 50 trials, M = L = 100, and the
/// standard J sweep); desk-scale runs override them through the config file.
struct ExperimentConfig {
  int n = 1000;
  int n_train = 800;
  int trials = 50;
  std::vector<int> j_values = {10, 25, 50, 100, 200, 500};
  int m = 100;  // posterior samples of the training latents
  int l = 100;  // test-latent samples per posterior sample
  int d_x = 2;
  double lengthscale = 1.65;
  double alpha = 1.0;
  double noise_a0 = 2.0;
  double noise_b0 = 1.0;
  int outer_iters = 30;
  double latent_step = 0.05;
  int latent_iters = 25;
  int restarts = 5;
  double sigma_x = 1.0;
  double sigma_w = 1.0;
  double sigma_eps = 1.0;
  std::uint64_t seed = 0;

  latent::ModelConfig model_config(int j) const {
    latent::ModelConfig mc;
    mc.d_x = d_x;
    mc.d_y = kOutputDims;
    mc.feature_count = j;
    mc.lengthscale = lengthscale;
    mc.alpha = alpha;
    mc.noise_a0 = noise_a0;
    mc.noise_b0 = noise_b0;
    mc.outer_iters = outer_iters;
    mc.latent_step = latent_step;
    mc.latent_iters = latent_iters;
    mc.restarts = restarts;
    mc.train_samples = m;
    mc.test_samples = l;
    return mc;
  }

  void validate() const {
    if (trials < 1) throw InvalidConfig("config: trials must be >= 1");
    if (n_train < 1 || n_train >= n) {
      throw InvalidConfig("config: require 1 <= n_train < n");
    }
    if (j_values.empty()) throw InvalidConfig("config: j_values is empty");
    for (int j : j_values) {
      if (j < 2 || j % 2 != 0) {
        throw InvalidConfig("config: every j value must be even and >= 2");
      }
    }
    if (!(sigma_x > 0.0) || !(sigma_w > 0.0) || !(sigma_eps >= 0.0)) {
      throw InvalidConfig("config: generator scales out of range");
    }
    model_config(j_values.front()).validate();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

inline double parse_double(const std::string& s, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InvalidConfig("config: bad numeric value for " + key + ": " + s);
  }
}

inline long long parse_int(const std::string& s, const std::string& key) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InvalidConfig("config: bad integer value for " + key + ": " + s);
  }
}

}  // namespace detail

/// Parses the flat `key = value` config format. Blank lines and lines
/// starting with '#' are skipped; unknown keys are an error.
inline ExperimentConfig parse_config(std::istream& is) {
  ExperimentConfig cfg;
  std::string line;
  while (std::getline(is, line)) {
    const std::string stripped = detail::trim(line);
    if (stripped.empty() || stripped.front() == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw InvalidConfig("config: expected `key = value`, got: " + stripped);
    }
    const std::string key = detail::trim(stripped.substr(0, eq));
    const std::string value = detail::trim(stripped.substr(eq + 1));
    if (key == "n") {
      cfg.n = static_cast<int>(detail::parse_int(value, key));
    } else if (key == "n_train") {
      cfg.n_train = static_cast<int>(detail::parse_int(value, key));
    } else if (key == "trials") {
      cfg.trials = static_cast<int>(detail::parse_int(value, key));
    } else if (key == "j_values") {
      cfg.j_values.clear();
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) {
        cfg.j_values.push_back(
            static_cast<int>(detail::parse_int(detail::trim(item), key)));
      }
      if (cfg.j_values.empty()) {
        throw InvalidConfig("config: j_values must list at least one value");
      }
    } else if (key == "m") {
      cfg.m = static_cast<int>(detail::parse_int(value, key));
    } else if (key == "l") {
      cfg.l = static_cast<int>(detail::parse_int(value, key));
    } else if (key == "d_x") {
      cfg.d_x = static_cast<int>(detail::parse_int(value, key));
    } else if (key == "lengthscale") {
      cfg.lengthscale = detail::parse_double(value, key);
    } else if (key == "alpha") {
      cfg.alpha = detail::parse_double(value, key);
    } else if (key == "noise_a0") {
      cfg.noise_a0 = detail::parse_double(value, key);
    } else if (key == "noise_b0") {
      cfg.noise_b0 = detail::parse_double(value, key);
    } else if (key == "outer_iters") {
      cfg.outer_iters = static_cast<int>(detail::parse_int(value, key));
    } else if (key == "latent_step") {
      cfg.latent_step = detail::parse_double(value, key);
    } else if (key == "latent_iters") {
      cfg.latent_iters = static_cast<int>(detail::parse_int(value, key));
    } else if (key == "restarts") {
      cfg.restarts = static_cast<int>(detail::parse_int(value, key));
    } else if (key == "sigma_x") {
      cfg.sigma_x = detail::parse_double(value, key);
    } else if (key == "sigma_w") {
      cfg.sigma_w = detail::parse_double(value, key);
    } else if (key == "sigma_eps") {
      cfg.sigma_eps = detail::parse_double(value, key);
    } else if (key == "seed") {
      cfg.seed = static_cast<std::uint64_t>(detail::parse_int(value, key));
    } else {
      throw InvalidConfig("config: unknown key: " + key);
    }
  }
  return cfg;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("config: cannot open " + path);
  return parse_config(is);
}

/// Per-(trial, J) averages of the test-set uncertainty estimates, one slot
/// per output dimension.
struct TrialResult {
  int trial = 0;
  int j = 0;
  std::array<double, kOutputDims> avg_aleatoric{};
  std::array<double, kOutputDims> avg_epistemic{};
};

using ReportObserver = std::function<void(const uq::UncertaintyReport&)>;

namespace detail {

inline void run_single_trial(const ExperimentConfig& cfg, int trial,
                             numkit::RngStream trial_rng,
                             TrialResult* out_slots,
                             const ReportObserver& observer) {
  const auto data = synthgen::generate(cfg.n, cfg.sigma_x, cfg.sigma_w,
                                       cfg.sigma_eps, trial_rng.derive("data", 0));
  const auto parts = synthgen::split(data, cfg.n_train);
  const Matrix& test_y = parts.test.observations;
  const Eigen::Index n_test = test_y.rows();

  for (std::size_t ji = 0; ji < cfg.j_values.size(); ++ji) {
    const int j = cfg.j_values[ji];
    const auto mc = cfg.model_config(j);
    const auto model = latent::train(
        parts.train.observations, mc,
        trial_rng.derive("train", static_cast<std::uint64_t>(j)));

    TrialResult result;
    result.trial = trial;
    result.j = j;
    auto test_rng = trial_rng.derive("test", static_cast<std::uint64_t>(j));
    for (Eigen::Index row = 0; row < n_test; ++row) {
      auto row_rng = test_rng.derive("row", static_cast<std::uint64_t>(row));
      for (int d = 0; d < kOutputDims; ++d) {
        std::vector<int> obs_dims;
        Vector y_obs(kOutputDims - 1);
        Eigen::Index at = 0;
        for (int o = 0; o < kOutputDims; ++o) {
          if (o == d) continue;
          obs_dims.push_back(o);
          y_obs(at++) = test_y(row, o);
        }
        const auto draws = latent::sample_test_latents(
            model, y_obs, obs_dims, mc,
            row_rng.derive("dim", static_cast<std::uint64_t>(d)));
        const auto rep = uq::report(model, draws, {d});
        if (observer) observer(rep);
        result.avg_aleatoric[static_cast<std::size_t>(d)] +=
            rep.entries.front().aleatoric;
        result.avg_epistemic[static_cast<std::size_t>(d)] +=
            rep.entries.front().epistemic_total;
      }
    }
    for (int d = 0; d < kOutputDims; ++d) {
      result.avg_aleatoric[static_cast<std::size_t>(d)] /=
          static_cast<double>(n_test);
      result.avg_epistemic[static_cast<std::size_t>(d)] /=
          static_cast<double>(n_test);
    }
    out_slots[ji] = result;
  }
}

}  // namespace detail

/// Runs the leave-one-output-out protocol: per trial, generate and split a
/// dataset, then for every J train a model and predict each output dimension
/// of every test row from the other three, averaging the uncertainty
/// estimates. Results are identical for any worker count because every
/// trial's randomness derives from its own ("trial", t) stream. A failing
/// trial aborts the whole run with its index in the error.
inline std::vector<TrialResult> run_experiment(
    const ExperimentConfig& cfg, int workers = 1,
    const ReportObserver& observer = {}) {
  cfg.validate();
  const std::size_t per_trial = cfg.j_values.size();
  std::vector<TrialResult> results(per_trial *
                                   static_cast<std::size_t>(cfg.trials));
  const numkit::RngStream root(cfg.seed);

  std::atomic<int> next_trial{0};
  std::atomic<bool> failed{false};
  std::vector<std::string> failures(static_cast<std::size_t>(cfg.trials));
  std::vector<char> has_failure(static_cast<std::size_t>(cfg.trials), 0);

  auto worker = [&]() {
    while (!failed.load()) {
      const int t = next_trial.fetch_add(1);
      if (t >= cfg.trials) break;
      try {
        detail::run_single_trial(
            cfg, t, root.derive("trial", static_cast<std::uint64_t>(t)),
            results.data() + static_cast<std::size_t>(t) * per_trial, observer);
      } catch (const std::exception& e) {
        failures[static_cast<std::size_t>(t)] = e.what();
        has_failure[static_cast<std::size_t>(t)] = 1;
        failed.store(true);
      }
    }
  };

  const int thread_count = std::max(1, std::min(workers, cfg.trials));
  if (thread_count == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(thread_count));
    for (int w = 0; w < thread_count; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  for (int t = 0; t < cfg.trials; ++t) {
    if (has_failure[static_cast<std::size_t>(t)]) {
      throw Error("trial " + std::to_string(t) +
                  " failed: " + failures[static_cast<std::size_t>(t)]);
    }
  }
  return results;
}

// --- results serialization ---

inline void write_results_csv(const std::vector<TrialResult>& results,
                              std::ostream& os) {
  os << "trial,j,dim,type,value\n";
  char buf[64];
  for (const auto& r : results) {
    for (int d = 0; d < kOutputDims; ++d) {
      for (UncType type : {UncType::kAleatoric, UncType::kEpistemic}) {
        const double v = type == UncType::kAleatoric
                             ? r.avg_aleatoric[static_cast<std::size_t>(d)]
                             : r.avg_epistemic[static_cast<std::size_t>(d)];
        std::snprintf(buf, sizeof(buf), "%.9g", v);
        os << r.trial << ',' << r.j << ',' << (d + 1) << ','
           << to_string(type) << ',' << buf << '\n';
      }
    }
  }
}

inline void write_results_csv(const std::vector<TrialResult>& results,
                              const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("write_results_csv: cannot open " + path);
  write_results_csv(results, os);
  if (!os) throw IoError("write_results_csv: failed writing " + path);
}

inline std::vector<TrialResult> read_results_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || detail::trim(line) != "trial,j,dim,type,value") {
    throw IoError("read_results_csv: missing `trial,j,dim,type,value` header");
  }
  std::map<std::pair<int, int>, TrialResult> rows;
  while (std::getline(is, line)) {
    const std::string stripped = detail::trim(line);
    if (stripped.empty()) continue;
    std::stringstream ss(stripped);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 5) {
      throw IoError("read_results_csv: malformed row: " + stripped);
    }
    const int trial = static_cast<int>(detail::parse_int(fields[0], "trial"));
    const int j = static_cast<int>(detail::parse_int(fields[1], "j"));
    const int dim = static_cast<int>(detail::parse_int(fields[2], "dim"));
    if (dim < 1 || dim > kOutputDims) {
      throw IoError("read_results_csv: dim out of range: " + stripped);
    }
    const double value = detail::parse_double(fields[4], "value");
    auto& r = rows[{trial, j}];
    r.trial = trial;
    r.j = j;
    if (fields[3] == "aleatoric") {
      r.avg_aleatoric[static_cast<std::size_t>(dim - 1)] = value;
    } else if (fields[3] == "epistemic") {
      r.avg_epistemic[static_cast<std::size_t>(dim - 1)] = value;
    } else {
      throw IoError("read_results_csv: unknown type: " + fields[3]);
    }
  }
  std::vector<TrialResult> out;
  out.reserve(rows.size());
  for (auto& [key, r] : rows) out.push_back(r);
  return out;
}

inline std::vector<TrialResult> read_results_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("read_results_csv: cannot open " + path);
  return read_results_csv(is);
}

inline void write_results_json(const std::vector<TrialResult>& results,
                               std::ostream& os) {
  char buf[64];
  os << "[\n";
  bool first = true;
  for (const auto& r : results) {
    for (int d = 0; d < kOutputDims; ++d) {
      for (UncType type : {UncType::kAleatoric, UncType::kEpistemic}) {
        const double v = type == UncType::kAleatoric
                             ? r.avg_aleatoric[static_cast<std::size_t>(d)]
                             : r.avg_epistemic[static_cast<std::size_t>(d)];
        std::snprintf(buf, sizeof(buf), "%.9g", v);
        os << (first ? "" : ",\n") << "  {\"trial\": " << r.trial
           << ", \"j\": " << r.j << ", \"dim\": " << (d + 1) << ", \"type\": \""
           << to_string(type) << "\", \"value\": " << buf << '}';
        first = false;
      }
    }
  }
  os << "\n]\n";
}

// --- boxplot summaries ---

/// Five-number summary plus Tukey outliers for one (J, dim, type) group.
/// Whisker endpoints (min/max) exclude the outliers.
struct BoxplotSummary {
  int j = 0;
  int dim = 0;  // 0-based
  UncType type = UncType::kAleatoric;
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  std::vector<double> outliers;
};

namespace detail {

// Linear-interpolation quantile at index q*(n-1) of sorted values.
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline BoxplotSummary summarize_group(int j, int dim, UncType type,
                                      std::vector<double> values) {
  std::sort(values.begin(), values.end());
  BoxplotSummary s;
  s.j = j;
  s.dim = dim;
  s.type = type;
  s.q1 = quantile_sorted(values, 0.25);
  s.median = quantile_sorted(values, 0.5);
  s.q3 = quantile_sorted(values, 0.75);
  const double iqr = s.q3 - s.q1;
  const double lo_fence = s.q1 - 1.5 * iqr;
  const double hi_fence = s.q3 + 1.5 * iqr;
  s.min = s.q1;
  s.max = s.q3;
  for (double v : values) {
    if (v < lo_fence || v > hi_fence) {
      s.outliers.push_back(v);
    } else {
      s.min = std::min(s.min, v);
      s.max = std::max(s.max, v);
    }
  }
  return s;
}

}  // namespace detail

/// Groups trial results by (J, dim, type) and computes boxplot statistics,
/// ordered by (J, dim, type).
inline std::vector<BoxplotSummary> summarize(
    const std::vector<TrialResult>& results) {
  if (results.empty()) throw EmptyInput("summarize: no results");
  std::map<std::tuple<int, int, int>, std::vector<double>> groups;
  for (const auto& r : results) {
    for (int d = 0; d < kOutputDims; ++d) {
      groups[{r.j, d, 0}].push_back(r.avg_aleatoric[static_cast<std::size_t>(d)]);
      groups[{r.j, d, 1}].push_back(r.avg_epistemic[static_cast<std::size_t>(d)]);
    }
  }
  std::vector<BoxplotSummary> out;
  out.reserve(groups.size());
  for (auto& [key, values] : groups) {
    const auto [j, dim, type_idx] = key;
    out.push_back(detail::summarize_group(
        j, dim, type_idx == 0 ? UncType::kAleatoric : UncType::kEpistemic,
        std::move(values)));
  }
  return out;
}

inline void write_summary_csv(const std::vector<BoxplotSummary>& summaries,
                              std::ostream& os) {
  os << "j,dim,type,min,q1,median,q3,max,n_outliers\n";
  char buf[64];
  for (const auto& s : summaries) {
    os << s.j << ',' << (s.dim + 1) << ',' << to_string(s.type);
    for (double v : {s.min, s.q1, s.median, s.q3, s.max}) {
      std::snprintf(buf, sizeof(buf), ",%.9g", v);
      os << buf;
    }
    os << ',' << s.outliers.size() << '\n';
  }
}

inline void write_summary_csv(const std::vector<BoxplotSummary>& summaries,
                              const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("write_summary_csv: cannot open " + path);
  write_summary_csv(summaries, os);
  if (!os) throw IoError("write_summary_csv: failed writing " + path);
}

/// Reads a summary CSV back. Outlier values are not stored in the file, so
/// each summary carries n_outliers placeholder entries.
inline std::vector<BoxplotSummary> read_summary_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) ||
      detail::trim(line) != "j,dim,type,min,q1,median,q3,max,n_outliers") {
    throw IoError("read_summary_csv: bad header");
  }
  std::vector<BoxplotSummary> out;
  while (std::getline(is, line)) {
    const std::string stripped = detail::trim(line);
    if (stripped.empty()) continue;
    std::stringstream ss(stripped);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 9) {
      throw IoError("read_summary_csv: malformed row: " + stripped);
    }
    BoxplotSummary s;
    s.j = static_cast<int>(detail::parse_int(fields[0], "j"));
    s.dim = static_cast<int>(detail::parse_int(fields[1], "dim")) - 1;
    if (fields[2] == "aleatoric") {
      s.type = UncType::kAleatoric;
    } else if (fields[2] == "epistemic") {
      s.type = UncType::kEpistemic;
    } else {
      throw IoError("read_summary_csv: unknown type: " + fields[2]);
    }
    s.min = detail::parse_double(fields[3], "min");
    s.q1 = detail::parse_double(fields[4], "q1");
    s.median = detail::parse_double(fields[5], "median");
    s.q3 = detail::parse_double(fields[6], "q3");
    s.max = detail::parse_double(fields[7], "max");
    const auto n_out = detail::parse_int(fields[8], "n_outliers");
    s.outliers.assign(static_cast<std::size_t>(n_out), s.max);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<BoxplotSummary> read_summary_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("read_summary_csv: cannot open " + path);
  return read_summary_csv(is);
}

// --- SVG boxplots ---

namespace detail {

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline std::string fmt_tick(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

// One SVG per uncertainty type: a panel per output dimension, a box per J.
inline std::string render_svg(const std::vector<BoxplotSummary>& summaries,
                              UncType type) {
  std::vector<int> dims;
  std::vector<int> j_values;
  for (const auto& s : summaries) {
    if (s.type != type) continue;
    if (std::find(dims.begin(), dims.end(), s.dim) == dims.end()) {
      dims.push_back(s.dim);
    }
    if (std::find(j_values.begin(), j_values.end(), s.j) == j_values.end()) {
      j_values.push_back(s.j);
    }
  }
  std::sort(dims.begin(), dims.end());
  std::sort(j_values.begin(), j_values.end());

  const double slot_w = 46.0;
  const double box_w = 22.0;
  const double panel_w = 46.0 + slot_w * static_cast<double>(j_values.size());
  const double panel_gap = 26.0;
  const double plot_h = 180.0;
  const double top = 34.0;
  const double bottom = 46.0;
  const double left = 16.0;
  const double width = left +
                       static_cast<double>(dims.size()) * (panel_w + panel_gap);
  const double height = top + plot_h + bottom;

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width)
     << "\" height=\"" << fmt(height) << "\" viewBox=\"0 0 " << fmt(width)
     << ' ' << fmt(height) << "\">\n";
  os << "<style>line,rect{stroke:#1f3552;fill:none;stroke-width:1.2}"
        "rect.box{fill:#cfe0f2}circle.outlier{stroke:#1f3552;fill:none}"
        "text{font-family:sans-serif;font-size:10px;fill:#111}"
        ".title{font-size:12px}</style>\n";
  os << "<text class=\"title\" x=\"" << fmt(left) << "\" y=\"16\">"
     << to_string(type) << " variance by output dimension and J</text>\n";

  for (std::size_t pi = 0; pi < dims.size(); ++pi) {
    const int dim = dims[pi];
    const double x0 = left + static_cast<double>(pi) * (panel_w + panel_gap);

    double lo = 0.0;
    double hi = 1.0;
    bool seen = false;
    for (const auto& s : summaries) {
      if (s.type != type || s.dim != dim) continue;
      double s_lo = s.min;
      double s_hi = s.max;
      for (double v : s.outliers) {
        s_lo = std::min(s_lo, v);
        s_hi = std::max(s_hi, v);
      }
      lo = seen ? std::min(lo, s_lo) : s_lo;
      hi = seen ? std::max(hi, s_hi) : s_hi;
      seen = true;
    }
    if (!seen) continue;
    double pad = (hi - lo) * 0.08;
    if (pad <= 0.0) pad = std::max(std::abs(hi) * 0.1, 1e-9);
    lo -= pad;
    hi += pad;
    const auto y_of = [&](double v) {
      return top + plot_h * (1.0 - (v - lo) / (hi - lo));
    };

    // panel frame and title
    os << "<text x=\"" << fmt(x0 + 40.0) << "\" y=\"" << fmt(top - 6.0)
       << "\">y" << (dim + 1) << "</text>\n";
    os << "<line x1=\"" << fmt(x0 + 40.0) << "\" y1=\"" << fmt(top)
       << "\" x2=\"" << fmt(x0 + 40.0) << "\" y2=\"" << fmt(top + plot_h)
       << "\"/>\n";
    os << "<line x1=\"" << fmt(x0 + 40.0) << "\" y1=\"" << fmt(top + plot_h)
       << "\" x2=\"" << fmt(x0 + panel_w) << "\" y2=\"" << fmt(top + plot_h)
       << "\"/>\n";
    for (int tick = 0; tick <= 4; ++tick) {
      const double v = lo + (hi - lo) * static_cast<double>(tick) / 4.0;
      const double y = y_of(v);
      os << "<line x1=\"" << fmt(x0 + 36.0) << "\" y1=\"" << fmt(y)
         << "\" x2=\"" << fmt(x0 + 40.0) << "\" y2=\"" << fmt(y) << "\"/>\n";
      os << "<text x=\"" << fmt(x0) << "\" y=\"" << fmt(y + 3.0) << "\">"
         << fmt_tick(v) << "</text>\n";
    }

    for (std::size_t jj = 0; jj < j_values.size(); ++jj) {
      const BoxplotSummary* s = nullptr;
      for (const auto& cand : summaries) {
        if (cand.type == type && cand.dim == dim && cand.j == j_values[jj]) {
          s = &cand;
          break;
        }
      }
      if (s == nullptr) continue;
      const double cx =
          x0 + 40.0 + slot_w * (static_cast<double>(jj) + 0.5);
      const double bx = cx - box_w / 2.0;
      // whiskers with caps
      os << "<line x1=\"" << fmt(cx) << "\" y1=\"" << fmt(y_of(s->max))
         << "\" x2=\"" << fmt(cx) << "\" y2=\"" << fmt(y_of(s->q3)) << "\"/>\n";
      os << "<line x1=\"" << fmt(cx) << "\" y1=\"" << fmt(y_of(s->q1))
         << "\" x2=\"" << fmt(cx) << "\" y2=\"" << fmt(y_of(s->min)) << "\"/>\n";
      os << "<line x1=\"" << fmt(cx - 6.0) << "\" y1=\"" << fmt(y_of(s->max))
         << "\" x2=\"" << fmt(cx + 6.0) << "\" y2=\"" << fmt(y_of(s->max))
         << "\"/>\n";
      os << "<line x1=\"" << fmt(cx - 6.0) << "\" y1=\"" << fmt(y_of(s->min))
         << "\" x2=\"" << fmt(cx + 6.0) << "\" y2=\"" << fmt(y_of(s->min))
         << "\"/>\n";
      // box and median
      os << "<rect class=\"box\" x=\"" << fmt(bx) << "\" y=\""
         << fmt(y_of(s->q3)) << "\" width=\"" << fmt(box_w) << "\" height=\""
         << fmt(y_of(s->q1) - y_of(s->q3)) << "\"/>\n";
      os << "<line x1=\"" << fmt(bx) << "\" y1=\"" << fmt(y_of(s->median))
         << "\" x2=\"" << fmt(bx + box_w) << "\" y2=\"" << fmt(y_of(s->median))
         << "\"/>\n";
      for (double v : s->outliers) {
        os << "<circle class=\"outlier\" cx=\"" << fmt(cx) << "\" cy=\""
           << fmt(y_of(v)) << "\" r=\"2.2\"/>\n";
      }
      os << "<text x=\"" << fmt(cx - 8.0) << "\" y=\""
         << fmt(top + plot_h + 14.0) << "\">" << j_values[jj] << "</text>\n";
    }
    os << "<text x=\"" << fmt(x0 + 40.0) << "\" y=\""
       << fmt(top + plot_h + 32.0) << "\">J</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace detail

/// Writes one SVG per uncertainty type present in the summaries into
/// `out_dir` (aleatoric.svg, epistemic.svg) and returns the written paths.
inline std::vector<std::filesystem::path> render_boxplots(
    const std::vector<BoxplotSummary>& summaries,
    const std::filesystem::path& out_dir) {
  if (summaries.empty()) throw EmptyInput("render_boxplots: no summaries");
  std::vector<std::filesystem::path> written;
  for (UncType type : {UncType::kAleatoric, UncType::kEpistemic}) {
    const bool any =
        std::any_of(summaries.begin(), summaries.end(),
                    [&](const BoxplotSummary& s) { return s.type == type; });
    if (!any) continue;
    const auto path = out_dir / (std::string(to_string(type)) + ".svg");
    std::ofstream os(path);
    if (!os) throw IoError("render_boxplots: cannot open " + path.string());
    os << detail::render_svg(summaries, type);
    if (!os) throw IoError("render_boxplots: failed writing " + path.string());
    written.push_back(path);
  }
  return written;
}

}  // namespace gplvm::harness
