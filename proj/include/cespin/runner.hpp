#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cespin/analysis.hpp"
#include "cespin/cce.hpp"

namespace cespin {

inline constexpr const char* kToolVersion = "0.1.0";

enum class Experiment { Fid, HahnEcho, CpmgScan, Spectrum, Occupancy, EstimateT2n };
enum class OutputFormat { Csv, Json };

std::string experiment_name(Experiment e);
Experiment parse_experiment(const std::string& name);

/// Uniform grid [start, stop] with `count` points, or explicit values when given.
struct TauGrid {
  double start = 0.0;
  double stop = 25.0;
  std::size_t count = 1251;
  std::vector<double> values;

  std::vector<double> resolve() const;
};

/// Clears `element` spins within `clear_radius` and, when `force_distance`
/// is set, activates the site nearest that distance.
struct ProximalOverride {
  std::string element = "Si";
  double clear_radius = 6.0;
  std::optional<double> force_distance = 3.6;
};

struct ExperimentConfig {
  std::filesystem::path crystal;  // empty: shipped YSO definition
  Vec3 box_nm{13.0, 5.0, 6.0};
  std::size_t defect_site = 0;
  std::uint64_t seed = 1;
  double truncation_radius = 65.0;
  std::vector<std::string> bath_species;  // empty keeps every species

  double field_tesla = 0.097;
  Vec3 field_direction = Vec3::UnitZ();
  GTensor g = GTensor::cerium_yso();
  std::optional<double> electron_splitting_khz;  // calibration override, reported only

  SequenceKind sequence = SequenceKind::Hahn;
  int n_pulses = 1;
  TauGrid tau;

  int cce_order = 2;
  ClusterCutoff cutoff;
  bool interacting = true;

  double relaxation_khz = 64.0;
  double dephasing_khz = 64.0;
  std::optional<ProximalOverride> proximal;
  std::vector<double> ensemble_weights{0.5, 0.5};

  double fidelity = 0.10;
  double background = 0.0;
  std::optional<double> t1_envelope_us;

  std::vector<int> scan_pulses{1, 2, 5};
  TauGrid scan_tau{0.2, 1.0, 161, {}};
  double dip_threshold = 0.9;
  double dip_window_lo = 0.2;
  double dip_window_hi = 1.0;

  Window window = Window::Rectangular;
  int zero_pad = 4;
  double peak_prominence = 0.05;  // fraction of the largest magnitude

  double occupancy_radius = 6.0;
  double nearest_shell_radius = 4.5;
  int occupancy_samples = 2000;

  std::vector<std::string> t2n_species{"Y", "Si"};
  int t2n_seeds = 20;

  double fit_exponent = 3.0;
  bool free_exponent = false;

  std::filesystem::path output_dir = "runs/default";
  OutputFormat format = OutputFormat::Csv;
  bool plots = true;

  /// Parses and validates; errors name the offending field, e.g. "field.direction".
  static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  std::filesystem::path crystal_path() const;
  /// FNV-1a 64 of the canonical config (output location excluded) and the crystal text.
  std::string hash() const;
};

struct RunOptions {
  unsigned workers = 0;
  std::function<void(const std::string& stage, std::size_t done, std::size_t total)> progress;
};

struct RunResult {
  std::filesystem::path directory;
  std::vector<std::string> files;
  std::string config_hash;
  bool nonconvergent = false;
  nlohmann::json summary;
};

/// Runs one experiment and writes data, summary, plots and finally manifest.json.
RunResult run_experiment(Experiment experiment, const ExperimentConfig& config, const RunOptions& options = {});

/// Curve difference a - b with a dip report of 1 + (a - b) over the full grid.
struct RunDifference {
  CoherenceCurve difference;
  DipReport dips;
};

/// Compares two emitted curve files or run directories (their `curve.csv`).
RunDifference diff_runs(const std::filesystem::path& run_a, const std::filesystem::path& run_b,
                        double threshold = 0.9);

void write_curve_csv(const std::filesystem::path& path, const CoherenceCurve& curve);
CoherenceCurve read_curve_csv(const std::filesystem::path& path);

std::string fnv1a64_hex(std::string_view bytes);
std::string file_checksum(const std::filesystem::path& path);

struct PlotSeries {
  std::string label;
  std::vector<double> x, y;
};

/// Standalone SVG line plot.
void write_svg_plot(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                    const std::string& y_label, const std::vector<PlotSeries>& series);

/// Exit status of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitNonconvergent = 3 };

}  // namespace cespin
