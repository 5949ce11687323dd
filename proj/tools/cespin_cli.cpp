#include <cstdio>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "cespin/runner.hpp"

using namespace cespin;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format;
  unsigned workers = 0;
  bool quiet = false;
};

ExperimentConfig resolve_config(const Overrides& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig::from_json(nlohmann::json::object(), {})
                                          : ExperimentConfig::load(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (o.format == "csv") cfg.format = OutputFormat::Csv;
  if (o.format == "json") cfg.format = OutputFormat::Json;
  return cfg;
}

int run(Experiment e, const Overrides& o) {
  const ExperimentConfig cfg = resolve_config(o);
  RunOptions opts;
  opts.workers = o.workers;
  std::string last_stage;
  if (!o.quiet)
    opts.progress = [&last_stage](const std::string& stage, std::size_t done, std::size_t total) {
      if (stage != last_stage) {
        if (!last_stage.empty()) std::fputc('\n', stderr);
        last_stage = stage;
      }
      std::fprintf(stderr, "\r%s: %zu/%zu", stage.c_str(), done, total);
    };
  const RunResult r = run_experiment(e, cfg, opts);
  if (!last_stage.empty()) std::fputc('\n', stderr);
  std::cout << r.summary.dump(2) << "\n";
  std::cerr << "wrote " << r.files.size() + 1 << " files to " << r.directory.string() << "\n";
  if (r.nonconvergent) {
    std::cerr << "warning: cluster expansion did not converge at some grid points (see manifest.json)\n";
    return kExitNonconvergent;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cluster correlation expansion simulator for a defect electron spin in a nuclear spin bath"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  Overrides o;
  std::optional<Experiment> chosen;
  for (auto e : {Experiment::Fid, Experiment::HahnEcho, Experiment::CpmgScan, Experiment::Spectrum,
                 Experiment::Occupancy, Experiment::EstimateT2n}) {
    auto* sub = app.add_subcommand(experiment_name(e), "Run the " + experiment_name(e) + " experiment");
    sub->add_option("--config", o.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Override the lattice seed");
    sub->add_option("--out", o.out, "Override the output directory");
    sub->add_option("--workers", o.workers, "Worker threads (0 = hardware concurrency)");
    sub->add_option("--format", o.format, "Output format")->check(CLI::IsMember({"csv", "json"}));
    sub->add_flag("--quiet,-q", o.quiet, "Suppress progress output");
    sub->callback([&chosen, e] { chosen = e; });
  }

  std::string run_a, run_b;
  double threshold = 0.9;
  bool want_diff = false;
  auto* diff = app.add_subcommand("diff", "Difference of two coherence curves (A - B)");
  diff->add_option("run_a", run_a, "Run directory or curve CSV")->required();
  diff->add_option("run_b", run_b, "Run directory or curve CSV")->required();
  diff->add_option("--threshold", threshold, "Dip threshold applied to 1 + Re(A - B)");
  diff->callback([&want_diff] { want_diff = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (want_diff) {
      const auto d = diff_runs(run_a, run_b, threshold);
      std::printf("# sequence %s\ntau_us,time_us,re,im,abs\n", d.difference.meta.sequence.c_str());
      for (std::size_t k = 0; k < d.difference.size(); ++k) {
        const auto v = d.difference.values[k];
        std::printf("%.17g,%.17g,%.17g,%.17g,%.17g\n", d.difference.tau[k], d.difference.time[k], v.real(), v.imag(),
                    std::abs(v));
      }
      std::fprintf(stderr, "%zu dips below %g\n", d.dips.size(), threshold);
      return kExitOk;
    }
    return run(*chosen, o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}
