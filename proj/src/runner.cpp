#include "cespin/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <fcntl.h>
#include <unistd.h>

namespace cespin {

using nlohmann::json;
namespace fs = std::filesystem;

std::string experiment_name(Experiment e) {
  switch (e) {
    case Experiment::Fid: return "fid";
    case Experiment::HahnEcho: return "hahn_echo";
    case Experiment::CpmgScan: return "cpmg_scan";
    case Experiment::Spectrum: return "spectrum";
    case Experiment::Occupancy: return "occupancy";
    case Experiment::EstimateT2n: return "estimate_t2n";
  }
  return "";
}

Experiment parse_experiment(const std::string& name) {
  for (auto e : {Experiment::Fid, Experiment::HahnEcho, Experiment::CpmgScan, Experiment::Spectrum,
                 Experiment::Occupancy, Experiment::EstimateT2n})
    if (experiment_name(e) == name) return e;
  throw ConfigError("unknown experiment '" + name + "'");
}

std::vector<double> TauGrid::resolve() const {
  if (!values.empty()) return values;
  if (count < 2) throw ValidationError("tau grid needs at least 2 points");
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = start + (stop - start) * static_cast<double>(i) / static_cast<double>(count - 1);
  out.back() = stop;
  return out;
}

// ---------------------------------------------------------------------------
// configuration

namespace {

std::string sequence_kind_name(SequenceKind k) {
  switch (k) {
    case SequenceKind::Fid: return "fid";
    case SequenceKind::Hahn: return "hahn";
    case SequenceKind::Cpmg: return "cpmg";
  }
  return "";
}

/// Reads one JSON object, remembering which keys were consumed.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("", "must be an object");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    std::string where = path_;
    if (!key.empty()) where += (where.empty() ? "" : ".") + key;
    throw ConfigError((where.empty() ? std::string("config") : where) + ": " + what);
  }

  std::string path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    used_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void number(const std::string& key, double& out, bool positive = false, bool non_negative = false) {
    if (const json* v = find(key)) {
      if (!v->is_number()) fail(key, "must be a number");
      out = v->get<double>();
      if (!std::isfinite(out)) fail(key, "must be finite");
      if (positive && !(out > 0.0)) fail(key, "must be positive");
      if (non_negative && out < 0.0) fail(key, "must be non-negative");
    }
  }

  void optional_number(const std::string& key, std::optional<double>& out, bool positive = false) {
    if (const json* v = find(key)) {
      if (v->is_null()) {
        out.reset();
        return;
      }
      double x = 0.0;
      number(key, x, positive);
      out = x;
    }
  }

  template <typename Int>
  void integer(const std::string& key, Int& out, long long lo, long long hi) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) fail(key, "must be an integer");
      const long long x = v->is_number_unsigned() ? static_cast<long long>(v->get<unsigned long long>()) : v->get<long long>();
      if (x < lo || x > hi) fail(key, "must be between " + std::to_string(lo) + " and " + std::to_string(hi));
      out = static_cast<Int>(x);
    }
  }

  void unsigned64(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0))
        fail(key, "must be a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }

  void boolean(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) fail(key, "must be true or false");
      out = v->get<bool>();
    }
  }

  void string(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(key, "must be a string");
      out = v->get<std::string>();
    }
  }

  void vec3(const std::string& key, Vec3& out) {
    if (const json* v = find(key)) {
      if (!v->is_array() || v->size() != 3) fail(key, "must be an array of 3 numbers");
      for (int i = 0; i < 3; ++i) {
        if (!(*v)[i].is_number()) fail(key, "must be an array of 3 numbers");
        out[i] = (*v)[i].get<double>();
      }
    }
  }

  void mat3(const std::string& key, Mat3& out) {
    if (const json* v = find(key)) {
      if (!v->is_array() || v->size() != 3) fail(key, "must be a 3x3 array");
      for (int r = 0; r < 3; ++r) {
        const json& row = (*v)[r];
        if (!row.is_array() || row.size() != 3) fail(key, "must be a 3x3 array");
        for (int c = 0; c < 3; ++c) {
          if (!row[c].is_number()) fail(key, "must be a 3x3 array of numbers");
          out(r, c) = row[c].get<double>();
        }
      }
    }
  }

  template <typename T>
  void list(const std::string& key, std::vector<T>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) fail(key, "must be an array");
      std::vector<T> tmp;
      for (const auto& e : *v) {
        if constexpr (std::is_same_v<T, std::string>) {
          if (!e.is_string()) fail(key, "must contain strings");
        } else if constexpr (std::is_integral_v<T>) {
          if (!e.is_number_integer()) fail(key, "must contain integers");
        } else {
          if (!e.is_number()) fail(key, "must contain numbers");
        }
        tmp.push_back(e.get<T>());
      }
      out = std::move(tmp);
    }
  }

  /// Nested object; `present` reports whether the key exists.
  std::optional<Fields> object(const std::string& key) {
    const json* v = find(key);
    if (!v || v->is_null()) return std::nullopt;
    return Fields(*v, path(key));
  }

  bool is_null(const std::string& key) const {
    const auto it = j_.find(key);
    return it != j_.end() && it->is_null();
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.contains(it.key())) fail(it.key(), "unknown field");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void read_tau_grid(Fields& f, TauGrid& g) {
  f.number("start", g.start, false, true);
  f.number("stop", g.stop, true);
  f.integer("count", g.count, 2, 10'000'000);
  f.list("values", g.values);
  f.finish();
  if (g.values.empty() && !(g.stop > g.start)) f.fail("stop", "must exceed start");
  try {
    check_tau_grid(g.resolve());
  } catch (const ValidationError& e) {
    f.fail("values", e.what());
  }
}

json tau_json(const TauGrid& g) {
  if (!g.values.empty()) return {{"values", g.values}};
  return {{"start", g.start}, {"stop", g.stop}, {"count", g.count}};
}

json vec_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

bool species_matches(const std::string& label, const std::string& filter) {
  if (label == filter) return true;
  const auto first = label.find_first_not_of("0123456789");
  return first != std::string::npos && label.substr(first) == filter;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base_dir) {
  ExperimentConfig c;
  Fields root(j, "");
  std::string crystal;
  root.string("crystal", crystal);
  if (!crystal.empty()) {
    fs::path p(crystal);
    c.crystal = ((p.is_relative() && !base_dir.empty()) ? base_dir / p : p).lexically_normal();
  }
  root.unsigned64("seed", c.seed);

  if (auto f = root.object("lattice")) {
    f->vec3("box_nm", c.box_nm);
    if ((c.box_nm.array() <= 0.0).any()) f->fail("box_nm", "every extent must be positive");
    f->integer("defect_site", c.defect_site, 0, 1'000'000);
    f->number("truncation_radius", c.truncation_radius, true);
    f->list("bath_species", c.bath_species);
    f->finish();
  }
  if (auto f = root.object("field")) {
    f->number("tesla", c.field_tesla, false, true);
    f->vec3("direction", c.field_direction);
    if (std::abs(c.field_direction.norm() - 1.0) > 1e-9) f->fail("direction", "must be a unit vector");
    c.field_direction.normalize();
    f->finish();
  }
  root.mat3("g_tensor", c.g.matrix);
  if (!c.g.matrix.allFinite()) root.fail("g_tensor", "entries must be finite");
  root.optional_number("electron_splitting_khz", c.electron_splitting_khz, true);

  if (auto f = root.object("sequence")) {
    std::string kind = sequence_kind_name(c.sequence);
    f->string("kind", kind);
    if (kind == "fid") c.sequence = SequenceKind::Fid;
    else if (kind == "hahn") c.sequence = SequenceKind::Hahn;
    else if (kind == "cpmg") c.sequence = SequenceKind::Cpmg;
    else f->fail("kind", "must be fid, hahn or cpmg");
    if (c.sequence == SequenceKind::Fid) c.n_pulses = 0;
    if (c.sequence == SequenceKind::Hahn) c.n_pulses = 1;
    f->integer("n_pulses", c.n_pulses, 0, 10'000);
    try {
      make_sequence(c.sequence, c.n_pulses, 0.0);
    } catch (const ValidationError& e) {
      f->fail("n_pulses", e.what());
    }
    if (auto t = f->object("tau")) read_tau_grid(*t, c.tau);
    f->finish();
  }
  if (auto f = root.object("cce")) {
    f->integer("order", c.cce_order, 1, kMaxClusterOrder);
    f->number("distance", c.cutoff.distance, false, true);
    f->optional_number("coupling_hz", c.cutoff.coupling_hz, true);
    f->boolean("interacting", c.interacting);
    f->finish();
  }
  if (auto f = root.object("lindblad")) {
    f->number("relaxation_khz", c.relaxation_khz, false, true);
    f->number("dephasing_khz", c.dephasing_khz, false, true);
    f->finish();
  }
  if (root.is_null("proximal")) {
    c.proximal.reset();
  } else if (auto f = root.object("proximal")) {
    ProximalOverride p;
    f->string("element", p.element);
    f->number("clear_radius", p.clear_radius, false, true);
    f->optional_number("force_distance", p.force_distance, true);
    if (p.force_distance && *p.force_distance > p.clear_radius)
      f->fail("force_distance", "must not exceed clear_radius");
    f->finish();
    c.proximal = p;
  }
  if (auto f = root.object("ensemble")) {
    f->list("weights", c.ensemble_weights);
    double sum = 0.0;
    for (double w : c.ensemble_weights) {
      if (w < 0.0) f->fail("weights", "must be non-negative");
      sum += w;
    }
    if (c.ensemble_weights.size() != 2 || std::abs(sum - 1.0) > 1e-9)
      f->fail("weights", "must hold two weights summing to 1");
    f->finish();
  }
  if (auto f = root.object("readout")) {
    f->number("fidelity", c.fidelity, false, true);
    if (c.fidelity > 1.0) f->fail("fidelity", "must lie in [0, 1]");
    f->number("background", c.background, false, true);
    f->finish();
  }
  root.optional_number("t1_envelope_us", c.t1_envelope_us, true);
  if (auto f = root.object("cpmg_scan")) {
    f->list("n_pulses", c.scan_pulses);
    if (c.scan_pulses.empty()) f->fail("n_pulses", "must not be empty");
    for (int n : c.scan_pulses)
      if (n < 1) f->fail("n_pulses", "entries must be >= 1");
    if (auto t = f->object("tau")) read_tau_grid(*t, c.scan_tau);
    f->number("dip_threshold", c.dip_threshold);
    std::vector<double> window{c.dip_window_lo, c.dip_window_hi};
    f->list("window", window);
    if (window.size() != 2 || !(window[1] > window[0])) f->fail("window", "must be [lo, hi] with hi > lo");
    c.dip_window_lo = window[0];
    c.dip_window_hi = window[1];
    f->finish();
  }
  if (auto f = root.object("spectrum")) {
    std::string w = window_name(c.window);
    f->string("window", w);
    try {
      c.window = parse_window(w);
    } catch (const ValidationError& e) {
      f->fail("window", e.what());
    }
    f->integer("zero_pad", c.zero_pad, 1, 64);
    f->number("peak_prominence", c.peak_prominence, false, true);
    f->finish();
  }
  if (auto f = root.object("occupancy")) {
    f->number("radius", c.occupancy_radius, true);
    f->number("nearest_shell_radius", c.nearest_shell_radius, true);
    f->integer("samples", c.occupancy_samples, 1, 1'000'000);
    f->finish();
  }
  if (auto f = root.object("estimate_t2n")) {
    f->list("species", c.t2n_species);
    f->integer("seeds", c.t2n_seeds, 1, 100'000);
    f->finish();
  }
  if (auto f = root.object("fit")) {
    f->number("exponent", c.fit_exponent, true);
    f->boolean("free_exponent", c.free_exponent);
    f->finish();
  }
  if (auto f = root.object("output")) {
    std::string dir = c.output_dir.string();
    f->string("directory", dir);
    fs::path p(dir);
    c.output_dir = ((p.is_relative() && !base_dir.empty()) ? base_dir / p : p).lexically_normal();
    std::string format = "csv";
    f->string("format", format);
    if (format == "csv") c.format = OutputFormat::Csv;
    else if (format == "json") c.format = OutputFormat::Json;
    else f->fail("format", "must be csv or json");
    f->boolean("plots", c.plots);
    f->finish();
  }
  root.finish();
  if (!fs::exists(c.crystal_path())) root.fail("crystal", "file not found: " + c.crystal_path().string());
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + std::string(e.what()));
  }
  return from_json(j, path.parent_path());
}

json ExperimentConfig::to_json() const {
  json j;
  j["crystal"] = crystal.string();
  j["seed"] = seed;
  j["lattice"] = {{"box_nm", vec_json(box_nm)},
                  {"defect_site", defect_site},
                  {"truncation_radius", truncation_radius},
                  {"bath_species", bath_species}};
  j["field"] = {{"tesla", field_tesla}, {"direction", vec_json(field_direction)}};
  json g = json::array();
  for (int r = 0; r < 3; ++r) g.push_back(json::array({this->g.matrix(r, 0), this->g.matrix(r, 1), this->g.matrix(r, 2)}));
  j["g_tensor"] = g;
  j["electron_splitting_khz"] = optional_json(electron_splitting_khz);
  j["sequence"] = {{"kind", sequence_kind_name(sequence)}, {"n_pulses", n_pulses}, {"tau", tau_json(tau)}};
  j["cce"] = {{"order", cce_order},
              {"distance", cutoff.distance},
              {"coupling_hz", optional_json(cutoff.coupling_hz)},
              {"interacting", interacting}};
  j["lindblad"] = {{"relaxation_khz", relaxation_khz}, {"dephasing_khz", dephasing_khz}};
  if (proximal)
    j["proximal"] = {{"element", proximal->element},
                     {"clear_radius", proximal->clear_radius},
                     {"force_distance", optional_json(proximal->force_distance)}};
  else
    j["proximal"] = nullptr;
  j["ensemble"] = {{"weights", ensemble_weights}};
  j["readout"] = {{"fidelity", fidelity}, {"background", background}};
  j["t1_envelope_us"] = optional_json(t1_envelope_us);
  j["cpmg_scan"] = {{"n_pulses", scan_pulses},
                    {"tau", tau_json(scan_tau)},
                    {"dip_threshold", dip_threshold},
                    {"window", json::array({dip_window_lo, dip_window_hi})}};
  j["spectrum"] = {{"window", window_name(window)}, {"zero_pad", zero_pad}, {"peak_prominence", peak_prominence}};
  j["occupancy"] = {{"radius", occupancy_radius}, {"nearest_shell_radius", nearest_shell_radius}, {"samples", occupancy_samples}};
  j["estimate_t2n"] = {{"species", t2n_species}, {"seeds", t2n_seeds}};
  j["fit"] = {{"exponent", fit_exponent}, {"free_exponent", free_exponent}};
  j["output"] = {{"directory", output_dir.string()},
                 {"format", format == OutputFormat::Csv ? "csv" : "json"},
                 {"plots", plots}};
  return j;
}

fs::path ExperimentConfig::crystal_path() const {
  return crystal.empty() ? fs::path(CESPIN_DATA_DIR) / "yso.crystal" : crystal;
}

std::string fnv1a64_hex(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

std::string file_checksum(const fs::path& path) { return fnv1a64_hex(read_file(path)); }

std::string ExperimentConfig::hash() const {
  json j = to_json();
  j.erase("output");
  j.erase("crystal");
  return fnv1a64_hex(j.dump() + "\n" + read_file(crystal_path()));
}

// ---------------------------------------------------------------------------
// file output

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Column {
  std::string name;
  std::vector<double> values;
};

class RunWriter {
 public:
  RunWriter(fs::path dir, OutputFormat format, std::string hash, std::uint64_t seed)
      : dir_(std::move(dir)), format_(format), hash_(std::move(hash)), seed_(seed) {}

  const fs::path& dir() const { return dir_; }
  const std::vector<std::string>& files() const { return files_; }

  void table(const std::string& stem, const std::vector<std::pair<std::string, std::string>>& meta,
             const std::vector<Column>& columns) {
    if (format_ == OutputFormat::Csv) {
      std::ostringstream out;
      for (const auto& [k, v] : meta) out << "# " << k << " " << v << "\n";
      out << "# config_hash " << hash_ << "\n# seed " << seed_ << "\n";
      for (std::size_t c = 0; c < columns.size(); ++c) out << (c ? "," : "") << columns[c].name;
      out << "\n";
      const std::size_t rows = columns.empty() ? 0 : columns[0].values.size();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < columns.size(); ++c) out << (c ? "," : "") << fmt(columns[c].values[r]);
        out << "\n";
      }
      text(stem + ".csv", out.str());
    } else {
      json j;
      for (const auto& [k, v] : meta) j[k] = v;
      j["config_hash"] = hash_;
      j["seed"] = seed_;
      for (const auto& c : columns) j[c.name] = c.values;
      text(stem + ".json", j.dump(1) + "\n");
    }
  }

  void curve(const std::string& stem, const CoherenceCurve& c) {
    if (format_ == OutputFormat::Csv) {
      write_curve_csv(dir_ / (stem + ".csv"), c);
      files_.push_back(stem + ".csv");
      return;
    }
    const auto re = c.real();
    std::vector<double> im, ab = c.magnitude();
    for (const auto& v : c.values) im.push_back(v.imag());
    std::vector<double> flags(c.nonconvergent.begin(), c.nonconvergent.end());
    table(stem, {{"sequence", c.meta.sequence}},
          {{"tau_us", c.tau}, {"time_us", c.time}, {"re", re}, {"im", im}, {"abs", ab}, {"nonconvergent", flags}});
  }

  void text(const std::string& name, const std::string& body) {
    std::ofstream out(dir_ / name, std::ios::binary);
    out << body;
    if (!out) throw Error("cannot write " + (dir_ / name).string());
    files_.push_back(name);
  }

  void plot(const std::string& name, const std::string& title, const std::string& xl, const std::string& yl,
            const std::vector<PlotSeries>& series) {
    write_svg_plot(dir_ / name, title, xl, yl, series);
    files_.push_back(name);
  }

 private:
  fs::path dir_;
  OutputFormat format_;
  std::string hash_;
  std::uint64_t seed_;
  std::vector<std::string> files_;
};

/// Exclusive marker file held for the duration of a run.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) throw ConfigError("output.directory: " + dir.string() + " is locked by another run");
  }
  ~DirectoryLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

/// Removes the outputs of an earlier run; anything else in the directory is an error.
void prepare_directory(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.json";
  std::set<std::string> known{"manifest.json", ".lock"};
  if (fs::exists(manifest)) {
    try {
      const json m = json::parse(read_file(manifest));
      for (const auto& f : m.at("files")) known.insert(f.at("name").get<std::string>());
    } catch (const json::exception&) {
      throw ConfigError("output.directory: unreadable manifest in " + dir.string());
    }
  }
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name == ".lock") continue;
    if (!known.contains(name))
      throw ConfigError("output.directory: " + dir.string() + " holds files not produced by a previous run (" + name + ")");
  }
  for (const auto& name : known)
    if (name != ".lock") fs::remove(dir / name);
}

std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

std::vector<double> nice_ticks(double lo, double hi, int target) {
  const double span = hi - lo;
  if (!(span > 0)) return {lo};
  const double raw = span / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  std::vector<double> ticks;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * span; t += step) ticks.push_back(std::abs(t) < 1e-12 * step ? 0.0 : t);
  return ticks;
}

}  // namespace

void write_svg_plot(const fs::path& path, const std::string& title, const std::string& x_label,
                    const std::string& y_label, const std::vector<PlotSeries>& series) {
  constexpr double W = 720, H = 440, L = 70, R = 20, T = 40, B = 55;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
    for (double v : s.y)
      if (std::isfinite(v)) y0 = std::min(y0, v), y1 = std::max(y1, v);
  }
  if (!(x1 > x0)) x0 -= 0.5, x1 += 0.5;
  if (!(y1 > y0)) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << " " << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << svg_escape(title) << "</text>\n";
  o << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  char buf[64];
  for (double t : nice_ticks(x0, x1, 6)) {
    std::snprintf(buf, sizeof buf, "%g", t);
    o << "<line x1=\"" << px(t) << "\" y1=\"" << H - B << "\" x2=\"" << px(t) << "\" y2=\"" << H - B + 5
      << "\" stroke=\"black\"/><text x=\"" << px(t) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << buf
      << "</text>\n";
  }
  for (double t : nice_ticks(y0, y1, 5)) {
    std::snprintf(buf, sizeof buf, "%g", t);
    o << "<line x1=\"" << L - 5 << "\" y1=\"" << py(t) << "\" x2=\"" << L << "\" y2=\"" << py(t)
      << "\" stroke=\"black\"/><text x=\"" << L - 8 << "\" y=\"" << py(t) + 4 << "\" text-anchor=\"end\">" << buf
      << "</text>\n";
  }
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << svg_escape(x_label)
    << "</text>\n";
  o << "<text transform=\"translate(16," << (T + H - B) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << svg_escape(y_label) << "</text>\n";
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& sr = series[s];
    const char* color = colors[s % 6];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.2\" points=\"";
    for (std::size_t k = 0; k < sr.x.size() && k < sr.y.size(); ++k)
      if (std::isfinite(sr.y[k])) {
        std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(sr.x[k]), py(sr.y[k]));
        o << buf;
      }
    o << "\"/>\n";
    const double ly = T + 16 + 16 * static_cast<double>(s);
    o << "<line x1=\"" << W - R - 150 << "\" y1=\"" << ly << "\" x2=\"" << W - R - 130 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/><text x=\"" << W - R - 124 << "\" y=\"" << ly + 4
      << "\">" << svg_escape(sr.label) << "</text>\n";
  }
  o << "</svg>\n";
  std::ofstream out(path, std::ios::binary);
  out << o.str();
  if (!out) throw Error("cannot write " + path.string());
}

void write_curve_csv(const fs::path& path, const CoherenceCurve& c) {
  std::ostringstream out;
  out << "# sequence " << c.meta.sequence << "\n";
  out << "# config_hash " << c.meta.config_hash << "\n";
  out << "# seed " << c.meta.seed << "\n";
  out << "# nonconvergent";
  for (std::size_t i : c.nonconvergent) out << " " << i;
  out << "\n";
  out << "tau_us,time_us,re,im,abs\n";
  for (std::size_t k = 0; k < c.size(); ++k)
    out << fmt(c.tau[k]) << "," << fmt(c.time[k]) << "," << fmt(c.values[k].real()) << "," << fmt(c.values[k].imag())
        << "," << fmt(std::abs(c.values[k])) << "\n";
  std::ofstream f(path, std::ios::binary);
  f << out.str();
  if (!f) throw Error("cannot write " + path.string());
}

CoherenceCurve read_curve_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  CoherenceCurve c;
  std::string line;
  int lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream s(line.substr(1));
      std::string key;
      s >> key;
      if (key == "sequence") s >> c.meta.sequence;
      else if (key == "config_hash") s >> c.meta.config_hash;
      else if (key == "seed") s >> c.meta.seed;
      else if (key == "nonconvergent")
        for (std::size_t i; s >> i;) c.nonconvergent.push_back(i);
      continue;
    }
    if (!header) {
      if (line != "tau_us,time_us,re,im,abs") throw ParseError("unexpected curve header", lineno);
      header = true;
      continue;
    }
    double v[5];
    std::istringstream s(line);
    for (int i = 0; i < 5; ++i) {
      std::string cell;
      if (!std::getline(s, cell, ',')) throw ParseError("expected 5 columns", lineno);
      try {
        std::size_t used = 0;
        v[i] = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ParseError("bad number '" + cell + "'", lineno);
      }
    }
    c.tau.push_back(v[0]);
    c.time.push_back(v[1]);
    c.values.emplace_back(v[2], v[3]);
  }
  if (!header) throw ParseError("missing curve header", lineno);
  return c;
}

// ---------------------------------------------------------------------------
// experiments

namespace {

struct Environment {
  CrystalDefinition crystal;
  MagneticField field;
  BathLattice lattice;
  std::optional<std::size_t> forced;  // index of the forced proximal spin
};

BathLattice filter_species(const BathLattice& lat, const std::vector<std::string>& keep) {
  if (keep.empty()) return lat;
  std::vector<BathSpin> spins;
  for (const auto& s : lat.spins())
    for (const auto& k : keep)
      if (species_matches(s.species.label, k)) {
        spins.push_back(s);
        break;
      }
  return BathLattice::from_spins(std::move(spins));
}

std::optional<std::size_t> find_forced(const BathLattice& lat, const ProximalOverride& p) {
  if (!p.force_distance) return std::nullopt;
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < lat.spins().size(); ++i) {
    const auto& s = lat.spins()[i];
    if (!species_matches(s.species.label, p.element) || s.position.norm() > p.clear_radius) continue;
    if (!best || std::abs(s.position.norm() - *p.force_distance) <
                     std::abs(lat.spins()[*best].position.norm() - *p.force_distance))
      best = i;
  }
  return best;
}

/// The bath around the defect; `with_forced` selects whether the proximal spin is placed.
Environment make_environment(const ExperimentConfig& cfg, bool with_forced) {
  Environment env;
  env.crystal = load_crystal_definition(cfg.crystal_path());
  env.field = MagneticField(cfg.field_tesla, cfg.field_direction);
  BathLattice lat = build_supercell(env.crystal, cfg.box_nm, cfg.defect_site, cfg.seed);
  if (cfg.proximal) {
    lat = lat.without_spins_within(cfg.proximal->element, cfg.proximal->clear_radius);
    if (with_forced && cfg.proximal->force_distance)
      lat = lat.with_forced_spin(cfg.proximal->element, *cfg.proximal->force_distance);
  }
  lat = filter_species(lat.truncated(cfg.truncation_radius), cfg.bath_species);
  if (with_forced && cfg.proximal) env.forced = find_forced(lat, *cfg.proximal);
  env.lattice = std::move(lat);
  return env;
}

CceOptions cce_options(const ExperimentConfig& cfg, const RunOptions& opts, const std::string& stage,
                       std::optional<std::size_t> noisy_spin) {
  CceOptions o;
  o.workers = opts.workers;
  if (opts.progress) o.progress = [&opts, stage](std::size_t d, std::size_t t) { opts.progress(stage, d, t); };
  if (noisy_spin && (cfg.relaxation_khz > 0.0 || cfg.dephasing_khz > 0.0))
    o.noise = LindbladParams{cfg.relaxation_khz, cfg.dephasing_khz, *noisy_spin};
  return o;
}

void apply_t1(const ExperimentConfig& cfg, CoherenceCurve& c) {
  if (!cfg.t1_envelope_us) return;
  for (std::size_t k = 0; k < c.size(); ++k) c.values[k] *= std::exp(-c.time[k] / *cfg.t1_envelope_us);
}

void stamp(CoherenceCurve& c, const ExperimentConfig& cfg, const std::string& hash) {
  c.meta.seed = cfg.seed;
  c.meta.config_hash = hash;
}

CoherenceCurve simulate(const ExperimentConfig& cfg, const Environment& env, const PulseSequence& seq,
                        const std::vector<double>& taus, const RunOptions& opts, const std::string& stage) {
  const auto model = make_bath_model(env.lattice.spins(), cfg.g, env.field, cfg.interacting);
  const auto set = enumerate_clusters(env.lattice, cfg.cce_order, cfg.cutoff);
  auto curve = compute_cce(model, set, seq, taus, cce_options(cfg, opts, stage, env.forced));
  apply_t1(cfg, curve);
  return curve;
}

json fit_json(const FitResult& f) {
  json p = json::object();
  for (const auto& [name, v] : f.parameters)
    p[name] = {{"value", std::isfinite(v.value) ? json(v.value) : json("inf")},
               {"error", std::isfinite(v.error) ? json(v.error) : json(nullptr)}};
  return {{"model", f.model}, {"parameters", p}, {"residual_norm", f.residual_norm},
          {"converged", f.converged}, {"iterations", f.iterations}};
}

json dips_json(const DipReport& d) {
  return {{"count", d.size()}, {"centers_us", d.centers}, {"values", d.values}, {"depths", d.depths}, {"widths_us", d.widths}};
}

json environment_json(const ExperimentConfig& cfg, const Environment& env) {
  json j;
  j["bath_spins"] = env.lattice.size();
  std::map<std::string, std::size_t> counts;
  for (const auto& s : env.lattice.spins()) ++counts[s.species.label];
  j["species_counts"] = counts;
  j["electron_splitting_khz"] = electron_splitting(cfg.g, env.field);
  j["effective_g"] = effective_g_along(cfg.g, env.field.direction());
  j["electron_splitting_override_khz"] = optional_json(cfg.electron_splitting_khz);
  json larmor = json::object();
  for (const auto& [label, sp] : env.crystal.species)
    if (sp.abundance > 0.0) larmor[sp.label] = nuclear_larmor(sp, env.field);
  j["larmor_khz"] = larmor;
  if (env.forced) {
    const auto& s = env.lattice.spins()[*env.forced];
    j["forced_spin"] = {{"species", s.species.label}, {"position", vec_json(s.position)}, {"distance", s.position.norm()}};
  }
  return j;
}

std::vector<double> column(const std::vector<Complex>& v, double (*f)(const Complex&)) {
  std::vector<double> out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), f);
  return out;
}

double re_of(const Complex& c) { return c.real(); }
double abs_of(const Complex& c) { return std::abs(c); }

void emit_curve(RunWriter& w, const ExperimentConfig& cfg, const std::string& stem, const CoherenceCurve& c,
                const std::string& title, bool& nonconvergent) {
  w.curve(stem, c);
  nonconvergent |= !c.nonconvergent.empty();
  if (cfg.plots)
    w.plot(stem + ".svg", title, "tau (us)", "coherence",
           {{"Re L", c.tau, column(c.values, re_of)}, {"|L|", c.tau, column(c.values, abs_of)}});
}

void emit_readout(RunWriter& w, const ExperimentConfig& cfg, const std::string& stem, const CoherenceCurve& c) {
  const auto r = balanced_readout(c, cfg.fidelity, cfg.background);
  w.table(stem, {{"sequence", c.meta.sequence}},
          {{"tau_us", c.tau}, {"time_us", c.time}, {"signal_3pi2", r.signal_3pi2}, {"signal_pi2", r.signal_pi2},
           {"contrast", r.contrast()}});
}

/// Collapses of |L| sit at tau = (k + 1/2) T. T is seeded from the first
/// collapse, minima far from a half-integer multiple are dropped, and T is
/// refined by least squares over the rest.
json revival_json(const CoherenceCurve& c) {
  const auto mag = c.magnitude();
  const auto d = find_dips(c.tau, mag, c.tau.front(), c.tau.back(), 1.0, 0.05);
  json j = {{"collapse_centers_us", d.centers}};
  if (d.size() < 2) return j;
  const double seed = 2.0 * d.centers.front();
  double num = 0.0, den = 0.0;
  std::vector<double> used;
  for (double x : d.centers) {
    const double k = std::round(x / seed - 0.5);
    if (std::abs(x / seed - 0.5 - k) > 0.2) continue;
    num += x * (k + 0.5);
    den += (k + 0.5) * (k + 0.5);
    used.push_back(x);
  }
  j["revival_collapses_us"] = used;
  if (used.size() >= 2) j["revival_period_us"] = num / den;
  return j;
}

json run_fid(const ExperimentConfig& cfg, const RunOptions& opts, RunWriter& w, const std::string& hash, bool& nc) {
  const auto env = make_environment(cfg, true);
  const auto taus = cfg.tau.resolve();
  auto curve = simulate(cfg, env, make_sequence(SequenceKind::Fid, 0, 0.0), taus, opts, "FID");
  stamp(curve, cfg, hash);
  emit_curve(w, cfg, "curve", curve, "Free induction decay", nc);
  emit_readout(w, cfg, "readout", curve);
  json s = {{"environment", environment_json(cfg, env)}};
  const auto fit = fit_gaussian_fid(curve.time, curve.real());
  s["gaussian_fit"] = fit_json(fit);
  if (fit.converged) s["linewidth_khz"] = gaussian_linewidth(fit["t2star"]);
  return s;
}

CoherenceCurve echo_curve(const ExperimentConfig& cfg, const Environment& env, const RunOptions& opts,
                          const std::string& hash) {
  const auto kind = cfg.sequence == SequenceKind::Fid ? SequenceKind::Hahn : cfg.sequence;
  const int n = kind == SequenceKind::Hahn ? 1 : cfg.n_pulses;
  const auto seq = make_sequence(kind, n, 0.0);
  auto curve = simulate(cfg, env, seq, cfg.tau.resolve(), opts, seq.descriptor());
  stamp(curve, cfg, hash);
  return curve;
}

json run_hahn(const ExperimentConfig& cfg, const RunOptions& opts, RunWriter& w, const std::string& hash, bool& nc) {
  const auto env = make_environment(cfg, true);
  const auto curve = echo_curve(cfg, env, opts, hash);
  emit_curve(w, cfg, "curve", curve, "Spin echo", nc);
  emit_readout(w, cfg, "readout", curve);
  json s = {{"environment", environment_json(cfg, env)}, {"revivals", revival_json(curve)}};
  const auto mag = curve.magnitude();
  s["stretched_exp_fit"] = fit_json(fit_stretched_exp(curve.tau, mag, cfg.fit_exponent, cfg.free_exponent));
  return s;
}

json spectrum_json(const Spectrum& spec, const std::vector<Peak>& peaks, const json& larmor) {
  json p = json::array();
  for (const auto& pk : peaks)
    p.push_back({{"frequency_khz", pk.frequency}, {"magnitude", pk.magnitude}, {"prominence", pk.prominence}});
  json j = {{"window", window_name(spec.window)}, {"zero_pad", spec.zero_pad}, {"resolution_khz", spec.resolution()}, {"peaks", p}};
  if (!peaks.empty()) j["dominant_khz"] = peaks.front().frequency;
  json centroids = json::object();
  for (auto it = larmor.begin(); it != larmor.end(); ++it) {
    const double f = it.value().get<double>();
    try {
      centroids[it.key()] = band_centroid(spec, 0.6 * f, 1.4 * f);
    } catch (const ValidationError&) {
    }
  }
  j["band_centroid_khz"] = centroids;
  return j;
}

json run_spectrum(const ExperimentConfig& cfg, const RunOptions& opts, RunWriter& w, const std::string& hash, bool& nc) {
  const auto env = make_environment(cfg, true);
  const auto curve = echo_curve(cfg, env, opts, hash);
  emit_curve(w, cfg, "curve", curve, "Spin echo", nc);
  const auto spec = fft_spectrum(curve, cfg.window, cfg.zero_pad);
  const double top = spec.magnitude.empty() ? 0.0 : *std::max_element(spec.magnitude.begin(), spec.magnitude.end());
  auto peaks = find_peaks(spec, cfg.peak_prominence * top);
  w.table("spectrum", {{"window", window_name(spec.window)}}, {{"frequency_khz", spec.frequency}, {"magnitude", spec.magnitude}});
  if (cfg.plots) w.plot("spectrum.svg", "Echo spectrum", "frequency (kHz)", "|FFT|", {{"|FFT|", spec.frequency, spec.magnitude}});
  const json envj = environment_json(cfg, env);
  return {{"environment", envj}, {"revivals", revival_json(curve)}, {"spectrum", spectrum_json(spec, peaks, envj["larmor_khz"])}};
}

json run_cpmg_scan(const ExperimentConfig& cfg, const RunOptions& opts, RunWriter& w, const std::string& hash, bool& nc) {
  if (!cfg.proximal || !cfg.proximal->force_distance)
    throw ConfigError("proximal: cpmg_scan needs a proximal override with force_distance");
  const auto with = make_environment(cfg, true);
  const auto without = make_environment(cfg, false);
  if (!with.forced) throw ConfigError("proximal.force_distance: no site available for the forced spin");
  const std::size_t s = *with.forced;
  const auto taus = cfg.scan_tau.resolve();
  const auto m_with = make_bath_model(with.lattice.spins(), cfg.g, with.field, cfg.interacting);
  const auto m_without = make_bath_model(without.lattice.spins(), cfg.g, without.field, cfg.interacting);
  const auto set_with = enumerate_clusters(with.lattice, cfg.cce_order, cfg.cutoff);
  const auto set_without = enumerate_clusters(without.lattice, cfg.cce_order, cfg.cutoff);

  json scans = json::array();
  for (int n : cfg.scan_pulses) {
    const auto seq = make_sequence(SequenceKind::Cpmg, n, 0.0);
    const std::string tag = "cpmg" + std::to_string(n);
    CoherenceCurve no_si = compute_cce(m_without, set_without, seq, taus, cce_options(cfg, opts, seq.descriptor() + " without proximal spin", {}));

    CceOptions focus = cce_options(cfg, opts, seq.descriptor() + " proximal spin", s);
    focus.focus_spin = s;
    const auto factor = compute_cce(m_with, set_with, seq, taus, focus);
    focus.noise.reset();
    const auto coherent_factor = compute_cce(m_with, set_with, seq, taus, focus);

    CoherenceCurve ion_a = no_si, ion_a_coherent = no_si;
    std::set<std::size_t> flagged(no_si.nonconvergent.begin(), no_si.nonconvergent.end());
    flagged.insert(factor.nonconvergent.begin(), factor.nonconvergent.end());
    for (std::size_t k = 0; k < taus.size(); ++k) {
      ion_a.values[k] *= factor.values[k];
      ion_a_coherent.values[k] *= coherent_factor.values[k];
    }
    ion_a.nonconvergent.assign(flagged.begin(), flagged.end());
    flagged.insert(coherent_factor.nonconvergent.begin(), coherent_factor.nonconvergent.end());
    ion_a_coherent.nonconvergent.assign(flagged.begin(), flagged.end());
    for (auto* c : {&no_si, &ion_a, &ion_a_coherent}) {
      apply_t1(cfg, *c);
      stamp(*c, cfg, hash);
    }
    const CoherenceCurve pair[] = {ion_a, no_si};
    CoherenceCurve ion_b = ensemble_average(pair, cfg.ensemble_weights);
    CoherenceCurve silicon = ion_a;
    for (std::size_t k = 0; k < taus.size(); ++k) silicon.values[k] = 1.0 + (ion_a.values[k] - no_si.values[k]);
    CoherenceCurve silicon_coherent = ion_a_coherent;
    for (std::size_t k = 0; k < taus.size(); ++k)
      silicon_coherent.values[k] = 1.0 + (ion_a_coherent.values[k] - no_si.values[k]);

    const auto dips = find_dips(silicon, cfg.dip_window_lo, cfg.dip_window_hi, cfg.dip_threshold);
    const auto dips_coherent = find_dips(silicon_coherent, cfg.dip_window_lo, cfg.dip_window_hi, cfg.dip_threshold);
    const auto dips_b = find_dips(ion_b, cfg.dip_window_lo, cfg.dip_window_hi, 1.0, 0.01);

    w.curve(tag + "_ion_a", ion_a);
    w.curve(tag + "_ion_a_coherent", ion_a_coherent);
    w.curve(tag + "_no_proximal", no_si);
    w.curve(tag + "_ion_b", ion_b);
    w.curve(tag + "_difference", silicon);
    emit_readout(w, cfg, tag + "_ion_a_readout", ion_a);
    for (const auto* c : {&ion_a, &ion_a_coherent, &no_si, &ion_b}) nc |= !c->nonconvergent.empty();
    if (cfg.plots)
      w.plot(tag + ".svg", seq.descriptor() + " scan", "tau (us)", "Re L",
             {{"ion A", taus, ion_a.real()},
              {"ion A coherent", taus, ion_a_coherent.real()},
              {"no proximal spin", taus, no_si.real()},
              {"ion B", taus, ion_b.real()},
              {"1 + A - reference", taus, silicon.real()}});

    json entry = {{"n_pulses", n}, {"dips", dips_json(dips)}, {"dips_coherent", dips_json(dips_coherent)},
                  {"ion_b_dips", dips_json(dips_b)}};
    json freqs = json::array();
    for (double c : dips.centers) freqs.push_back(filter_center_frequency(seq.with_tau(c)));
    entry["dip_filter_frequency_khz"] = freqs;
    scans.push_back(entry);
  }
  return {{"environment", environment_json(cfg, with)}, {"scans", scans}};
}

json run_occupancy(const ExperimentConfig& cfg, const RunOptions&, RunWriter& w, const std::string&, bool&) {
  const auto def = load_crystal_definition(cfg.crystal_path());
  const std::string element = cfg.proximal ? cfg.proximal->element : "Si";
  const auto sp = def.species.find(element);
  if (sp == def.species.end()) throw ConfigError("proximal.element: '" + element + "' is not in the crystal definition");
  const double p = sp->second.abundance;
  const double reach = std::max(cfg.occupancy_radius, cfg.nearest_shell_radius);
  const Vec3 box = Vec3::Constant(2.0 * (reach + 2.0) / 10.0 + 0.5);
  const auto geometry = build_supercell(def, box, cfg.defect_site, cfg.seed);
  const auto sites = lattice_sites_within(geometry, cfg.occupancy_radius, element);
  const auto shell = lattice_sites_within(geometry, cfg.nearest_shell_radius, element);
  const int n = static_cast<int>(sites.size());
  const auto dist = occupancy_distribution(n, p);

  std::vector<double> histogram(n + 1, 0.0);
  for (int s = 0; s < cfg.occupancy_samples; ++s) {
    const auto lat = build_supercell(def, box, cfg.defect_site, cfg.seed + static_cast<std::uint64_t>(s));
    histogram[sites_within(lat, cfg.occupancy_radius, element).size()] += 1.0 / cfg.occupancy_samples;
  }
  std::vector<double> counts(n + 1);
  for (int k = 0; k <= n; ++k) counts[k] = k;
  w.table("occupancy", {{"element", element}}, {{"count", counts}, {"binomial", dist}, {"monte_carlo", histogram}});
  if (cfg.plots) w.plot("occupancy.svg", "Occupancy within radius", "number of spins", "probability",
                        {{"binomial", counts, dist}, {"Monte Carlo", counts, histogram}});
  std::vector<double> distances;
  for (const auto& s : sites) distances.push_back(s.position.norm());
  const double p_shell = 1.0 - occupancy_distribution(static_cast<int>(shell.size()), p)[0];
  return {{"element", element}, {"abundance", p}, {"radius", cfg.occupancy_radius}, {"sites", n},
          {"site_distances", distances}, {"p_none", dist[0]}, {"p_any", 1.0 - dist[0]},
          {"nearest_shell_sites", shell.size()}, {"p_nearest_shell", p_shell},
          {"monte_carlo_p_none", histogram[0]}};
}

json run_t2n(const ExperimentConfig& cfg, const RunOptions&, RunWriter& w, const std::string&, bool&) {
  const auto def = load_crystal_definition(cfg.crystal_path());
  const Vec3 box = cfg.box_nm.cwiseMin(Vec3::Constant(4.0));
  std::vector<double> species_col, seed_col, t2_col;
  json s = json::object();
  for (std::size_t k = 0; k < cfg.t2n_species.size(); ++k) {
    const auto& name = cfg.t2n_species[k];
    std::vector<double> values;
    for (int i = 0; i < cfg.t2n_seeds; ++i) {
      const auto seed = cfg.seed + static_cast<std::uint64_t>(i);
      const auto lat = build_supercell(def, box, cfg.defect_site, seed);
      double t2 = kInfiniteTime;
      try {
        t2 = nuclear_t2_estimate(lat, name, cfg.field_direction);
      } catch (const ValidationError&) {
      }
      values.push_back(t2);
      species_col.push_back(static_cast<double>(k));
      seed_col.push_back(static_cast<double>(seed));
      t2_col.push_back(t2);
    }
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    s[name] = {{"median_us", sorted[sorted.size() / 2]}, {"min_us", sorted.front()}, {"max_us", sorted.back()}};
  }
  w.table("t2n", {{"species", [&] {
                     std::string joined;
                     for (std::size_t k = 0; k < cfg.t2n_species.size(); ++k)
                       joined += (k ? " " : "") + std::to_string(k) + "=" + cfg.t2n_species[k];
                     return joined;
                   }()}},
          {{"species_index", species_col}, {"seed", seed_col}, {"t2star_us", t2_col}});
  return {{"estimates", s}};
}

}  // namespace

RunResult run_experiment(Experiment experiment, const ExperimentConfig& cfg, const RunOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  const std::string hash = cfg.hash();
  fs::create_directories(cfg.output_dir);
  DirectoryLock lock(cfg.output_dir);
  prepare_directory(cfg.output_dir);

  RunWriter writer(cfg.output_dir, cfg.format, hash, cfg.seed);
  bool nonconvergent = false;
  json summary;
  switch (experiment) {
    case Experiment::Fid: summary = run_fid(cfg, options, writer, hash, nonconvergent); break;
    case Experiment::HahnEcho: summary = run_hahn(cfg, options, writer, hash, nonconvergent); break;
    case Experiment::CpmgScan: summary = run_cpmg_scan(cfg, options, writer, hash, nonconvergent); break;
    case Experiment::Spectrum: summary = run_spectrum(cfg, options, writer, hash, nonconvergent); break;
    case Experiment::Occupancy: summary = run_occupancy(cfg, options, writer, hash, nonconvergent); break;
    case Experiment::EstimateT2n: summary = run_t2n(cfg, options, writer, hash, nonconvergent); break;
  }
  summary["experiment"] = experiment_name(experiment);
  summary["config_hash"] = hash;
  summary["seed"] = cfg.seed;
  writer.text("summary.json", summary.dump(2) + "\n");
  writer.text("config.json", cfg.to_json().dump(2) + "\n");

  json manifest;
  manifest["tool"] = "cespin";
  manifest["version"] = kToolVersion;
  manifest["experiment"] = experiment_name(experiment);
  manifest["config_hash"] = hash;
  manifest["seed"] = cfg.seed;
  manifest["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  json files = json::array();
  json flagged = json::object();
  for (const auto& name : writer.files()) {
    const fs::path p = cfg.output_dir / name;
    files.push_back({{"name", name}, {"fnv1a64", file_checksum(p)}, {"bytes", fs::file_size(p)}});
    if (p.extension() == ".csv" && name.find("readout") == std::string::npos) {
      std::ifstream in(p);
      std::string line;
      while (std::getline(in, line) && line.starts_with("#"))
        if (line.starts_with("# nonconvergent ")) flagged[name] = json::parse("[" + [&] {
          std::string csv;
          std::istringstream s(line.substr(16));
          for (std::string tok; s >> tok;) csv += (csv.empty() ? "" : ",") + tok;
          return csv;
        }() + "]");
    }
  }
  manifest["files"] = files;
  manifest["nonconvergent"] = flagged;
  const fs::path tmp = cfg.output_dir / "manifest.json.tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << manifest.dump(2) << "\n";
    if (!out) throw Error("cannot write " + tmp.string());
  }
  fs::rename(tmp, cfg.output_dir / "manifest.json");

  RunResult r;
  r.directory = cfg.output_dir;
  r.files = writer.files();
  r.config_hash = hash;
  r.nonconvergent = nonconvergent;
  r.summary = std::move(summary);
  return r;
}

RunDifference diff_runs(const fs::path& run_a, const fs::path& run_b, double threshold) {
  auto resolve = [](const fs::path& p) { return fs::is_directory(p) ? p / "curve.csv" : p; };
  const auto a = read_curve_csv(resolve(run_a));
  const auto b = read_curve_csv(resolve(run_b));
  if (a.meta.sequence != b.meta.sequence)
    throw ValidationError("runs use different sequences: " + a.meta.sequence + " vs " + b.meta.sequence);
  if (a.tau != b.tau || a.time != b.time) throw ValidationError("runs use different tau grids");
  RunDifference d;
  d.difference = a;
  std::set<std::size_t> flagged(a.nonconvergent.begin(), a.nonconvergent.end());
  flagged.insert(b.nonconvergent.begin(), b.nonconvergent.end());
  d.difference.nonconvergent.assign(flagged.begin(), flagged.end());
  std::vector<double> shifted(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    d.difference.values[k] = a.values[k] - b.values[k];
    shifted[k] = 1.0 + d.difference.values[k].real();
  }
  if (a.size() >= 3) d.dips = find_dips(a.tau, shifted, a.tau.front(), a.tau.back(), threshold);
  return d;
}

}  // namespace cespin
