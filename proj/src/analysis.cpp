#include "cespin/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

#include <unsupported/Eigen/FFT>
#include <unsupported/Eigen/LevenbergMarquardt>
#include <unsupported/Eigen/NumericalDiff>

namespace cespin {
namespace {

using Eigen::VectorXd;

void check_same_length(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("abscissa and data lengths differ");
}

std::vector<double> log_grid(double lo, double hi, int n) {
  std::vector<double> g(n);
  for (int i = 0; i < n; ++i) g[i] = lo * std::pow(hi / lo, i / double(n - 1));
  return g;
}

/// Linear least squares of y on the given columns; returns the residual sum of squares.
double linear_fit(const Eigen::MatrixXd& basis, const VectorXd& y, VectorXd& coef) {
  coef = basis.colPivHouseholderQr().solve(y);
  return (basis * coef - y).squaredNorm();
}

struct Model {
  std::string name;
  std::vector<std::string> names;
  std::function<double(double, const VectorXd&)> eval;
};

struct Residuals : Eigen::DenseFunctor<double> {
  const Model* model;
  const VectorXd* x;
  const VectorXd* y;

  Residuals(const Model& m, const VectorXd& xs, const VectorXd& ys)
      : Eigen::DenseFunctor<double>(static_cast<int>(m.names.size()), static_cast<int>(xs.size())),
        model(&m), x(&xs), y(&ys) {}

  int operator()(const VectorXd& p, VectorXd& r) const {
    for (Eigen::Index i = 0; i < x->size(); ++i) r[i] = model->eval((*x)[i], p) - (*y)[i];
    return 0;
  }
};

bool lm_converged(Eigen::LevenbergMarquardtSpace::Status s) {
  using namespace Eigen::LevenbergMarquardtSpace;
  switch (s) {
    case RelativeReductionTooSmall:
    case RelativeErrorTooSmall:
    case RelativeErrorAndReductionTooSmall:
    case CosinusTooSmall:
    case FtolTooSmall:
    case XtolTooSmall:
    case GtolTooSmall:
      return true;
    default:
      return false;
  }
}

FitResult least_squares(const Model& model, std::span<const double> xs, std::span<const double> ys, VectorXd p) {
  const VectorXd x = Eigen::Map<const VectorXd>(xs.data(), static_cast<Eigen::Index>(xs.size()));
  const VectorXd y = Eigen::Map<const VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
  Eigen::NumericalDiff<Residuals> functor(Residuals(model, x, y));
  Eigen::LevenbergMarquardt<Eigen::NumericalDiff<Residuals>> lm(functor);
  lm.setMaxfev(kFitMaxIterations);
  lm.setXtol(kFitTolerance);
  lm.setFtol(kFitTolerance);
  const auto status = lm.minimize(p);

  FitResult out;
  out.model = model.name;
  out.iterations = static_cast<int>(lm.iterations());
  VectorXd r(x.size());
  functor(p, r);
  out.residual_norm = r.norm();
  out.converged = lm_converged(status) && p.allFinite();

  const auto m = x.size(), n = p.size();
  Eigen::MatrixXd jac(m, n);
  functor.df(p, jac);
  VectorXd err = VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
  if (m > n) {
    const double s2 = r.squaredNorm() / static_cast<double>(m - n);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(jac.transpose() * jac);
    if (ldlt.info() == Eigen::Success)
      err = (s2 * ldlt.solve(Eigen::MatrixXd::Identity(n, n))).diagonal().cwiseAbs().cwiseSqrt();
  }
  for (Eigen::Index k = 0; k < n; ++k) out.parameters[model.names[k]] = {p[k], err[k]};
  return out;
}

double span_of(std::span<const double> x) { return *std::max_element(x.begin(), x.end()) - *std::min_element(x.begin(), x.end()); }

double smallest_step(std::span<const double> x) {
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  double d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s[i] > s[i - 1]) d = std::min(d, s[i] - s[i - 1]);
  return d;
}

void require_points(std::span<const double> x, std::size_t n, const char* what) {
  if (x.size() < n) throw ValidationError(std::string(what) + " needs at least " + std::to_string(n) + " points");
}

VectorXd to_vector(std::span<const double> y) {
  return Eigen::Map<const VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
}

}  // namespace

std::string window_name(Window w) { return w == Window::Hann ? "hann" : "rect"; }

Window parse_window(const std::string& name) {
  if (name == "rect" || name == "rectangular") return Window::Rectangular;
  if (name == "hann") return Window::Hann;
  throw ValidationError("unknown window '" + name + "'");
}

Spectrum fft_spectrum(std::span<const double> t, std::span<const double> y, Window window, int zero_pad) {
  check_same_length(t, y);
  if (t.size() < 8) throw ValidationError("spectrum needs at least 8 samples");
  if (zero_pad < 1) throw ValidationError("zero padding factor must be >= 1");
  const std::size_t n = t.size();
  const double dt = (t[n - 1] - t[0]) / static_cast<double>(n - 1);
  if (!(dt > 0.0)) throw ValidationError("time grid must be increasing");
  for (std::size_t k = 1; k < n; ++k)
    if (std::abs((t[k] - t[k - 1]) - dt) > 1e-6 * dt) throw ValidationError("time grid is not uniform");

  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(n);
  const std::size_t m = n * static_cast<std::size_t>(zero_pad);
  std::vector<double> in(m, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    double w = 1.0;
    if (window == Window::Hann) w = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * k / static_cast<double>(n - 1)));
    in[k] = w * (y[k] - mean);
  }
  Eigen::FFT<double> fft;
  std::vector<Complex> out;
  fft.fwd(out, in);

  Spectrum s;
  s.window = window;
  s.zero_pad = zero_pad;
  s.padded_length = m;
  const std::size_t half = m / 2 + 1;
  s.frequency.resize(half);
  s.magnitude.resize(half);
  s.bins.assign(out.begin(), out.begin() + static_cast<long>(half));
  for (std::size_t k = 0; k < half; ++k) {
    s.frequency[k] = 1e3 * static_cast<double>(k) / (static_cast<double>(m) * dt);
    s.magnitude[k] = std::abs(out[k]);
  }
  return s;
}

Spectrum fft_spectrum(const CoherenceCurve& curve, Window window, int zero_pad) {
  const auto re = curve.real();
  return fft_spectrum(curve.tau, re, window, zero_pad);
}

std::vector<Peak> find_peaks(const Spectrum& spectrum, double min_prominence) {
  const auto& y = spectrum.magnitude;
  std::vector<Peak> peaks;
  const std::size_t n = y.size();
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (!(y[i] > y[i - 1] && y[i] >= y[i + 1])) continue;
    double left = y[i], right = y[i];
    for (std::size_t j = i; j-- > 0;) {
      if (y[j] > y[i]) break;
      left = std::min(left, y[j]);
    }
    for (std::size_t j = i + 1; j < n; ++j) {
      if (y[j] > y[i]) break;
      right = std::min(right, y[j]);
    }
    const double prominence = y[i] - std::max(left, right);
    if (prominence >= min_prominence && prominence > 0.0)
      peaks.push_back({spectrum.frequency[i], y[i], prominence, i});
  }
  std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
    return a.magnitude != b.magnitude ? a.magnitude > b.magnitude : a.frequency < b.frequency;
  });
  return peaks;
}

double band_centroid(const Spectrum& spectrum, double lo, double hi) {
  double weight = 0.0, moment = 0.0;
  for (std::size_t k = 0; k < spectrum.size(); ++k) {
    if (spectrum.frequency[k] < lo || spectrum.frequency[k] > hi) continue;
    const double p = spectrum.magnitude[k] * spectrum.magnitude[k];
    weight += p;
    moment += p * spectrum.frequency[k];
  }
  if (weight == 0.0) throw ValidationError("empty frequency band");
  return moment / weight;
}

DipReport find_dips(std::span<const double> x, std::span<const double> y, double lo, double hi, double threshold,
                    double min_depth) {
  check_same_length(x, y);
  for (std::size_t k = 1; k < x.size(); ++k)
    if (!(x[k] > x[k - 1])) throw ValidationError("dip search needs an increasing grid");
  DipReport report;
  const std::size_t n = x.size();
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (x[i] < lo || x[i] > hi) continue;
    if (!(y[i] < y[i - 1] && y[i] <= y[i + 1]) || !(y[i] < threshold)) continue;

    std::size_t l = i, r = i;
    for (std::size_t j = i; j-- > 0;) {
      if (y[j] < y[i]) break;
      if (y[j] > y[l]) l = j;
    }
    for (std::size_t j = i + 1; j < n; ++j) {
      if (y[j] < y[i]) break;
      if (y[j] > y[r]) r = j;
    }

    // parabola through the three samples around the minimum
    const double x0 = x[i - 1], x1 = x[i], x2 = x[i + 1];
    const double y0 = y[i - 1], y1 = y[i], y2 = y[i + 1];
    const double d0 = (y1 - y0) / (x1 - x0), d1 = (y2 - y1) / (x2 - x1);
    const double a = (d1 - d0) / (x2 - x0);
    double xc = x1, yc = y1;
    if (a > 0.0) {
      const double b = d0 - a * (x0 + x1);
      xc = std::clamp(-b / (2.0 * a), x0, x2);
      yc = y0 + d0 * (xc - x0) + a * (xc - x0) * (xc - x1);
    }

    const double base = (l == r) ? y[l] : y[l] + (y[r] - y[l]) * (xc - x[l]) / (x[r] - x[l]);
    const double depth = std::clamp(base - yc, 0.0, 1.0);
    if (depth < min_depth || depth <= 0.0) continue;

    const double level = yc + 0.5 * depth;
    double xl = x[l], xr = x[r];
    for (std::size_t j = i; j > l; --j)
      if (y[j - 1] >= level) {
        xl = x[j - 1] + (level - y[j - 1]) * (x[j] - x[j - 1]) / (y[j] - y[j - 1]);
        break;
      }
    for (std::size_t j = i; j < r; ++j)
      if (y[j + 1] >= level) {
        xr = x[j] + (level - y[j]) * (x[j + 1] - x[j]) / (y[j + 1] - y[j]);
        break;
      }
    report.centers.push_back(xc);
    report.values.push_back(yc);
    report.depths.push_back(depth);
    report.widths.push_back(xr - xl);
  }
  return report;
}

DipReport find_dips(const CoherenceCurve& curve, double lo, double hi, double threshold, double min_depth) {
  const auto re = curve.real();
  return find_dips(curve.tau, re, lo, hi, threshold, min_depth);
}

FitResult fit_stretched_exp(std::span<const double> tau, std::span<const double> y, double exponent,
                            bool free_exponent) {
  check_same_length(tau, y);
  require_points(tau, 5, "stretched exponential fit");
  for (double v : y)
    if (!(std::abs(v) <= 1.1)) throw ValidationError("stretched exponential fit expects values in [-1.1, 1.1]");

  const double t_max = 2.0 * *std::max_element(tau.begin(), tau.end());
  const double t_min = 2.0 * smallest_step(tau);
  const double t_ceiling = 1e3 * t_max;
  const VectorXd yv = to_vector(y);

  double best_rss = std::numeric_limits<double>::infinity(), best_t = t_ceiling, best_a = 1.0;
  for (double t2 : log_grid(std::max(t_min, 1e-6), 10.0 * t_max, 200)) {
    Eigen::MatrixXd basis(tau.size(), 1);
    for (std::size_t k = 0; k < tau.size(); ++k) basis(k, 0) = std::exp(-std::pow(2.0 * tau[k] / t2, exponent));
    VectorXd c;
    const double rss = linear_fit(basis, yv, c);
    if (rss < best_rss) best_rss = rss, best_t = t2, best_a = c[0];
  }

  Model model{"stretched_exp", {"amplitude", "t2"}, {}};
  VectorXd p0(2);
  p0 << best_a, best_t;
  if (free_exponent) {
    model.names.push_back("exponent");
    p0.conservativeResize(3);
    p0[2] = exponent;
    model.eval = [](double t, const VectorXd& p) { return p[0] * std::exp(-std::pow(2.0 * t / std::abs(p[1]), p[2])); };
  } else {
    model.eval = [exponent](double t, const VectorXd& p) {
      return p[0] * std::exp(-std::pow(2.0 * t / std::abs(p[1]), exponent));
    };
  }
  FitResult fit = least_squares(model, tau, y, p0);
  auto& t2 = fit.parameters["t2"];
  t2.value = std::abs(t2.value);
  if (!std::isfinite(t2.value) || t2.value > t_ceiling) {
    t2 = {kInfiniteTime, kInfiniteTime};
    fit.converged = false;
  }
  return fit;
}

FitResult fit_gaussian_fid(std::span<const double> t, std::span<const double> y) {
  check_same_length(t, y);
  require_points(t, 5, "Gaussian fit");
  const VectorXd yv = to_vector(y);
  const double span = span_of(t);
  double best_rss = std::numeric_limits<double>::infinity();
  VectorXd p0(3);
  for (double tc : log_grid(std::max(smallest_step(t), 1e-9), 10.0 * span, 200)) {
    Eigen::MatrixXd basis(t.size(), 2);
    for (std::size_t k = 0; k < t.size(); ++k) basis.row(k) << std::exp(-std::pow(t[k] / tc, 2)), 1.0;
    VectorXd c;
    const double rss = linear_fit(basis, yv, c);
    if (rss < best_rss) best_rss = rss, p0 << c[0], tc, c[1];
  }
  const Model model{"gaussian_fid", {"amplitude", "t2star", "offset"}, [](double x, const VectorXd& p) {
                      return p[0] * std::exp(-std::pow(x / p[1], 2)) + p[2];
                    }};
  FitResult fit = least_squares(model, t, y, p0);
  fit.parameters["t2star"].value = std::abs(fit.parameters["t2star"].value);
  return fit;
}

FitResult fit_lorentzian(std::span<const double> f, std::span<const double> y) {
  check_same_length(f, y);
  require_points(f, 5, "Lorentzian fit");
  const VectorXd yv = to_vector(y);
  const double span = span_of(f);
  const double lo = *std::min_element(f.begin(), f.end());
  double best_rss = std::numeric_limits<double>::infinity();
  VectorXd p0(4);
  const int centers = 200;
  for (int ic = 0; ic <= centers; ++ic) {
    const double f0 = lo + span * ic / centers;
    for (double w : log_grid(std::max(smallest_step(f), 1e-9), 2.0 * span, 60)) {
      Eigen::MatrixXd basis(f.size(), 2);
      for (std::size_t k = 0; k < f.size(); ++k) {
        const double d = (f[k] - f0) / (0.5 * w);
        basis.row(k) << 1.0 / (1.0 + d * d), 1.0;
      }
      VectorXd c;
      const double rss = linear_fit(basis, yv, c);
      if (rss < best_rss) best_rss = rss, p0 << f0, w, c[0], c[1];
    }
  }
  const Model model{"lorentzian", {"center", "fwhm", "amplitude", "offset"}, [](double x, const VectorXd& p) {
                      const double d = (x - p[0]) / (0.5 * p[1]);
                      return p[2] / (1.0 + d * d) + p[3];
                    }};
  FitResult fit = least_squares(model, f, y, p0);
  fit.parameters["fwhm"].value = std::abs(fit.parameters["fwhm"].value);
  return fit;
}

FitResult fit_lorentzian(const Spectrum& spectrum) { return fit_lorentzian(spectrum.frequency, spectrum.magnitude); }

FitResult fit_decaying_cosine(std::span<const double> t, std::span<const double> y) {
  check_same_length(t, y);
  require_points(t, 8, "decaying cosine fit");
  const VectorXd yv = to_vector(y);
  const double span = span_of(t);
  const double dt = smallest_step(t);

  // frequency guess from the strongest spectral line, then a local grid in (f, T)
  double f_guess = 0.0;
  try {
    const auto spec = fft_spectrum(t, y, Window::Hann, 8);
    const auto peaks = find_peaks(spec, 0.0);
    if (!peaks.empty()) f_guess = peaks.front().frequency;
  } catch (const ValidationError&) {
  }
  const double df = 1e3 / span;
  std::vector<double> freqs;
  if (f_guess > 0.0)
    for (int k = -20; k <= 20; ++k) freqs.push_back(std::max(0.0, f_guess + 0.05 * k * df));
  else
    for (int k = 1; k <= 400; ++k) freqs.push_back(k * 0.5e3 / (dt * 400));

  double best_rss = std::numeric_limits<double>::infinity();
  VectorXd p0(5);
  for (double f : freqs)
    for (double tau : log_grid(std::max(dt, 1e-9), 100.0 * span, 60)) {
      Eigen::MatrixXd basis(t.size(), 3);
      for (std::size_t k = 0; k < t.size(); ++k) {
        const double env = std::exp(-t[k] / tau), ph = phase_of(f, t[k]);
        basis.row(k) << env * std::cos(ph), env * std::sin(ph), 1.0;
      }
      VectorXd c;
      const double rss = linear_fit(basis, yv, c);
      if (rss < best_rss) best_rss = rss, p0 << std::hypot(c[0], c[1]), f, tau, std::atan2(-c[1], c[0]), c[2];
    }
  const Model model{"decaying_cosine", {"amplitude", "frequency", "decay", "phase", "offset"},
                    [](double x, const VectorXd& p) {
                      return p[0] * std::exp(-x / p[2]) * std::cos(phase_of(p[1], x) + p[3]) + p[4];
                    }};
  return least_squares(model, t, y, p0);
}

FitResult fit_exponential(std::span<const double> t, std::span<const double> y) {
  check_same_length(t, y);
  require_points(t, 4, "exponential fit");
  const VectorXd yv = to_vector(y);
  const double span = span_of(t);
  double best_rss = std::numeric_limits<double>::infinity();
  VectorXd p0(3);
  for (double tc : log_grid(std::max(smallest_step(t), 1e-9), 100.0 * span, 200)) {
    Eigen::MatrixXd basis(t.size(), 2);
    for (std::size_t k = 0; k < t.size(); ++k) basis.row(k) << std::exp(-t[k] / tc), 1.0;
    VectorXd c;
    const double rss = linear_fit(basis, yv, c);
    if (rss < best_rss) best_rss = rss, p0 << c[0], tc, c[1];
  }
  const Model model{"exponential", {"amplitude", "decay", "offset"},
                    [](double x, const VectorXd& p) { return p[0] * std::exp(-x / p[1]) + p[2]; }};
  return least_squares(model, t, y, p0);
}

double gaussian_linewidth(double t2star_us) {
  return 1e3 * 2.0 * std::sqrt(std::log(2.0)) / (std::numbers::pi * t2star_us);
}

namespace {

bool species_matches(const std::string& label, const std::string& filter) {
  if (label == filter) return true;
  const auto first = label.find_first_not_of("0123456789");
  return first != std::string::npos && label.substr(first) == filter;
}

}  // namespace

double nuclear_t2_estimate(const BathLattice& lattice, const std::string& species, const Vec3& field_direction,
                           std::optional<std::size_t> spin_index) {
  const Vec3 b = field_direction.normalized();
  const auto& spins = lattice.spins();
  std::size_t center = spins.size();
  if (spin_index) {
    if (*spin_index >= spins.size()) throw ValidationError("spin index out of range");
    center = *spin_index;
  } else {
    for (std::size_t i = 0; i < spins.size(); ++i)
      if (species_matches(spins[i].species.label, species) &&
          (center == spins.size() || spins[i].position.norm() < spins[center].position.norm()))
        center = i;
    if (center == spins.size()) throw ValidationError("no '" + species + "' spin in the lattice");
  }
  const BathSpin& c = spins[center];
  double second_moment = 0.0;
  for (std::size_t j = 0; j < spins.size(); ++j) {
    if (j == center || spins[j].species.label != c.species.label) continue;
    const Vec3 d = spins[j].position - c.position;
    const double r = d.norm();
    const double cos_t = d.dot(b) / r;
    const double jzz =
        dipolar_prefactor_hz(c.species.gyromagnetic_ratio, spins[j].species.gyromagnetic_ratio, r) * (3 * cos_t * cos_t - 1);
    second_moment += 0.25 * jzz * jzz;
  }
  if (second_moment == 0.0) return kInfiniteTime;
  return 1e6 * std::sqrt(2.0) / (2.0 * std::numbers::pi * std::sqrt(second_moment));
}

}  // namespace cespin
