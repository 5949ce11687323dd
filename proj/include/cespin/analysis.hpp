#pragma once

#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cespin/coherence.hpp"
#include "cespin/hamiltonian.hpp"
#include "cespin/lattice.hpp"

namespace cespin {

enum class Window { Rectangular, Hann };

std::string window_name(Window w);
Window parse_window(const std::string& name);

/// One-sided spectrum of a mean-subtracted, optionally windowed real signal.
/// `magnitude` is the unnormalized DFT modulus |Y_k|; `bins` keeps the complex values.
struct Spectrum {
  std::vector<double> frequency;  // kHz
  std::vector<double> magnitude;
  std::vector<Complex> bins;
  Window window = Window::Rectangular;
  int zero_pad = 1;
  std::size_t padded_length = 0;

  std::size_t size() const { return frequency.size(); }
  double resolution() const { return frequency.size() > 1 ? frequency[1] - frequency[0] : 0.0; }
};

/// Spectrum of samples `y` on the uniform grid `t` (us). Throws on fewer than
/// 8 points or a non-uniform grid.
Spectrum fft_spectrum(std::span<const double> t, std::span<const double> y, Window window = Window::Rectangular,
                      int zero_pad = 1);

/// Spectrum of Re L against the pulse interval tau.
Spectrum fft_spectrum(const CoherenceCurve& curve, Window window = Window::Rectangular, int zero_pad = 1);

struct Peak {
  double frequency = 0.0;
  double magnitude = 0.0;
  double prominence = 0.0;
  std::size_t index = 0;
};

/// Local maxima whose prominence reaches `min_prominence`, largest first.
std::vector<Peak> find_peaks(const Spectrum& spectrum, double min_prominence);

/// Power-weighted mean frequency of the bins in [lo, hi] kHz.
double band_centroid(const Spectrum& spectrum, double lo, double hi);

struct DipReport {
  std::vector<double> centers;  // us, parabola-refined
  std::vector<double> values;   // curve value at the refined center
  std::vector<double> depths;   // below the line through the flanking maxima, clipped to [0, 1]
  std::vector<double> widths;   // full width at half depth, us

  std::size_t size() const { return centers.size(); }
};

/// Local minima of y inside [lo, hi] that fall below `threshold` and are at
/// least `min_depth` deep relative to their flanking maxima.
DipReport find_dips(std::span<const double> x, std::span<const double> y, double lo, double hi, double threshold,
                    double min_depth = 0.0);
DipReport find_dips(const CoherenceCurve& curve, double lo, double hi, double threshold, double min_depth = 0.0);

struct FitParameter {
  double value = 0.0;
  double error = 0.0;
};

struct FitResult {
  std::string model;
  std::map<std::string, FitParameter> parameters;
  double residual_norm = 0.0;
  bool converged = false;
  int iterations = 0;

  double operator[](const std::string& name) const { return parameters.at(name).value; }
};

inline constexpr int kFitMaxIterations = 500;
inline constexpr double kFitTolerance = 1e-10;

/// A exp[-(2 tau / T2)^n]; parameters "amplitude", "t2" (and "exponent" when free).
/// Data without a decay returns t2 = infinity and converged = false.
FitResult fit_stretched_exp(std::span<const double> tau, std::span<const double> y, double exponent = 3.0,
                            bool free_exponent = false);

/// A exp[-(t / T2*)^2] + c; parameters "amplitude", "t2star", "offset".
FitResult fit_gaussian_fid(std::span<const double> t, std::span<const double> y);

/// c + A (w/2)^2 / ((f - f0)^2 + (w/2)^2); parameters "center", "fwhm", "amplitude", "offset".
FitResult fit_lorentzian(std::span<const double> f, std::span<const double> y);
FitResult fit_lorentzian(const Spectrum& spectrum);

/// A exp(-t / T) cos(2 pi f t + phi) + c with f in kHz; parameters
/// "amplitude", "frequency", "decay", "phase", "offset".
FitResult fit_decaying_cosine(std::span<const double> t, std::span<const double> y);

/// A exp(-t / T) + c; parameters "amplitude", "decay", "offset".
FitResult fit_exponential(std::span<const double> t, std::span<const double> y);

/// FWHM in kHz of the spectrum of a Gaussian decay exp[-(t/T2*)^2], T2* in us.
double gaussian_linewidth(double t2star_us);

/// Second-moment dephasing time (us) of one nucleus from the secular zz part
/// of its dipolar couplings to like spins: T2* = sqrt(2) / (2 pi sigma),
/// sigma^2 = sum_j J_j^2 / 4. The nucleus defaults to the spin of that
/// species nearest the defect. Returns infinity without like neighbours.
double nuclear_t2_estimate(const BathLattice& lattice, const std::string& species, const Vec3& field_direction,
                           std::optional<std::size_t> spin_index = std::nullopt);

inline constexpr double kInfiniteTime = std::numeric_limits<double>::infinity();

}  // namespace cespin
