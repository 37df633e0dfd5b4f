// Command-line harness: dataset generation, the full leave-one-output-out
// experiment, boxplot summaries, and static SVG plots.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "gplvm/gplvm.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOpts {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  std::string format = "csv";
  int workers = 1;
};

gplvm::harness::ExperimentConfig load_config(const CommonOpts& opts) {
  gplvm::harness::ExperimentConfig cfg;
  if (!opts.config_path.empty()) {
    cfg = gplvm::harness::parse_config_file(opts.config_path);
  }
  if (opts.seed) cfg.seed = *opts.seed;
  return cfg;
}

fs::path ensure_out_dir(const CommonOpts& opts) {
  fs::path dir(opts.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw gplvm::IoError("cannot create output directory " + dir.string());
  }
  return dir;
}

void add_common(CLI::App* sub, CommonOpts& opts, bool with_format,
                bool with_workers) {
  sub->add_option("--config", opts.config_path, "Config file (key = value)");
  sub->add_option("--seed", opts.seed, "Root seed (overrides config)");
  sub->add_option("--out", opts.out_dir, "Output directory");
  if (with_format) {
    sub->add_option("--format", opts.format, "Output format")
        ->check(CLI::IsMember({"csv", "json"}));
  }
  if (with_workers) {
    sub->add_option("--workers", opts.workers, "Parallel trial workers")
        ->check(CLI::PositiveNumber);
  }
}

int cmd_generate(const CommonOpts& opts, bool with_truth) {
  const auto cfg = load_config(opts);
  const auto dir = ensure_out_dir(opts);
  const auto data = gplvm::synthgen::generate(
      cfg.n, cfg.sigma_x, cfg.sigma_w, cfg.sigma_eps,
      gplvm::numkit::RngStream(cfg.seed).derive("trial", 0).derive("data", 0));
  const auto path = dir / "dataset.csv";
  gplvm::synthgen::write_csv(data, path.string(), with_truth);
  std::cout << path.string() << '\n';
  return 0;
}

int cmd_run(const CommonOpts& opts) {
  const auto cfg = load_config(opts);
  const auto dir = ensure_out_dir(opts);
  const auto results = gplvm::harness::run_experiment(cfg, opts.workers);
  if (opts.format == "json") {
    const auto path = dir / "results.json";
    std::ofstream os(path);
    if (!os) throw gplvm::IoError("cannot open " + path.string());
    gplvm::harness::write_results_json(results, os);
    std::cout << path.string() << '\n';
  } else {
    const auto path = dir / "results.csv";
    gplvm::harness::write_results_csv(results, path.string());
    std::cout << path.string() << '\n';
  }
  return 0;
}

int cmd_summarize(const std::string& input, const CommonOpts& opts) {
  const auto dir = ensure_out_dir(opts);
  const auto results = gplvm::harness::read_results_csv(input);
  const auto summaries = gplvm::harness::summarize(results);
  const auto path = dir / "summary.csv";
  gplvm::harness::write_summary_csv(summaries, path.string());
  std::cout << path.string() << '\n';
  return 0;
}

int cmd_plot(const std::string& input, const CommonOpts& opts) {
  const auto dir = ensure_out_dir(opts);
  const auto summaries = gplvm::harness::read_summary_csv(input);
  for (const auto& path : gplvm::harness::render_boxplots(summaries, dir)) {
    std::cout << path.string() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Latent-variable uncertainty quantification over random-feature "
      "Gaussian processes"};
  app.require_subcommand(1);

  CommonOpts gen_opts;
  bool with_truth = false;
  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset CSV");
  add_common(gen, gen_opts, false, false);
  gen->add_flag("--with-truth", with_truth,
                "Include the true latent columns in the CSV");

  CommonOpts run_opts;
  auto* run = app.add_subcommand(
      "run", "Run the leave-one-output-out experiment and write results");
  add_common(run, run_opts, true, true);

  CommonOpts sum_opts;
  std::string sum_input;
  auto* sum = app.add_subcommand("summarize",
                                 "Boxplot statistics from a results CSV");
  sum->add_option("results", sum_input, "Results CSV path")
      ->required()
      ->check(CLI::ExistingFile);
  add_common(sum, sum_opts, false, false);

  CommonOpts plot_opts;
  std::string plot_input;
  auto* plot = app.add_subcommand("plot", "Render SVG boxplots from a summary CSV");
  plot->add_option("summary", plot_input, "Summary CSV path")
      ->required()
      ->check(CLI::ExistingFile);
  add_common(plot, plot_opts, false, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate(gen_opts, with_truth);
    if (run->parsed()) return cmd_run(run_opts);
    if (sum->parsed()) return cmd_summarize(sum_input, sum_opts);
    if (plot->parsed()) return cmd_plot(plot_input, plot_opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
