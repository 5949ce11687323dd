#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "cespin/analysis.hpp"
#include "cespin/cce.hpp"

using namespace cespin;

namespace {

constexpr double kPi = std::numbers::pi;

const SpinSpecies kY{"89Y", -2.0885906, 0.5, 1.0};
const SpinSpecies kSi{"29Si", -8.465, 0.5, 0.047};
const GTensor kG = GTensor::cerium_yso();
const MagneticField kB(0.097, Vec3::UnitZ());

std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i) x[i] = a + (b - a) * i / (n - 1);
  return x;
}

template <typename F>
std::vector<double> sample(const std::vector<double>& x, F f) {
  std::vector<double> y(x.size());
  std::transform(x.begin(), x.end(), y.begin(), f);
  return y;
}

CrystalDefinition yso() { return load_crystal_definition(CESPIN_DATA_DIR "/yso.crystal"); }

BathSpin proximal_silicon() {
  const auto lat = build_supercell(yso(), Vec3(2, 2, 2), 0, 1).without_spins_within("Si", 6.0).with_forced_spin("Si", 3.6);
  return sites_within(lat, 4.0, std::string("Si")).front();
}

}  // namespace

TEST_CASE("spectrum of a pure tone") {
  const auto t = linspace(0.0, 100.0, 2001);
  const auto y = sample(t, [](double x) { return std::cos(2 * kPi * 0.2 * x); });
  for (auto w : {Window::Rectangular, Window::Hann}) {
    const auto s = fft_spectrum(t, y, w, 4);
    const auto peaks = find_peaks(s, 0.0);
    REQUIRE(!peaks.empty());
    CHECK(std::abs(peaks[0].frequency - 200.0) <= s.resolution());
    CHECK(s.resolution() == doctest::Approx(1e3 / (4 * 2001 * 0.05)));
  }
}

TEST_CASE("Parseval with a rectangular window") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n;
  const auto t = linspace(0.0, 10.0, 500);
  const auto y = sample(t, [&](double) { return n(rng); });
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= y.size();
  double energy = 0.0;
  for (double v : y) energy += (v - mean) * (v - mean);
  for (int pad : {1, 2, 4}) {
    const auto s = fft_spectrum(t, y, Window::Rectangular, pad);
    const std::size_t m = s.padded_length;
    REQUIRE(m % 2 == 0);
    double sum = 0.0;
    for (std::size_t k = 0; k < s.size(); ++k) {
      const double w = (k == 0 || k == m / 2) ? 1.0 : 2.0;
      sum += w * s.magnitude[k] * s.magnitude[k];
    }
    CHECK(sum / static_cast<double>(m) == doctest::Approx(energy).epsilon(1e-6));
  }
}

TEST_CASE("real even signal has a real spectrum") {
  const int n = 256;
  std::vector<double> t(n), y(n);
  for (int k = 0; k < n; ++k) {
    t[k] = 0.1 * k;
    y[k] = std::cos(2 * kPi * 3 * k / n) + 0.5 * std::cos(2 * kPi * 17 * k / n) + 0.2;
  }
  const auto s = fft_spectrum(t, y);
  const double peak = *std::max_element(s.magnitude.begin(), s.magnitude.end());
  for (const auto& b : s.bins) CHECK(std::abs(b.imag()) < 1e-9 * peak);
}

TEST_CASE("spectrum input guards") {
  const auto t = linspace(0.0, 1.0, 7);
  CHECK_THROWS_AS(fft_spectrum(t, t), ValidationError);
  auto u = linspace(0.0, 1.0, 32);
  u[10] += 0.01;
  CHECK_THROWS_AS(fft_spectrum(u, u), ValidationError);
}

TEST_CASE("peak finding") {
  CHECK(find_peaks(Spectrum{}, 0.0).empty());
  const auto t = linspace(0.0, 100.0, 4001);
  const auto y = sample(t, [](double x) { return std::cos(2 * kPi * 0.12 * x) + 0.7 * std::cos(2 * kPi * 0.2 * x + 0.3); });
  const auto s = fft_spectrum(t, y, Window::Hann, 2);
  const double top = *std::max_element(s.magnitude.begin(), s.magnitude.end());
  const auto peaks = find_peaks(s, 0.1 * top);
  REQUIRE(peaks.size() == 2);
  CHECK(std::abs(peaks[0].frequency - 120.0) <= s.resolution());
  CHECK(std::abs(peaks[1].frequency - 200.0) <= s.resolution());
  CHECK(peaks[0].magnitude >= peaks[1].magnitude);
}

TEST_CASE("dip finding") {
  const auto x = linspace(0.0, 2.0, 201);
  SUBCASE("flat curve") {
    const std::vector<double> one(x.size(), 1.0);
    CHECK(find_dips(x, one, 0.0, 2.0, 0.9).size() == 0);
  }
  SUBCASE("Gaussian dips") {
    const double s = 0.05;
    const auto y = sample(x, [&](double v) {
      return 1.0 - 0.4 * std::exp(-std::pow(v - 0.613, 2) / (2 * s * s)) - 0.25 * std::exp(-std::pow(v - 1.337, 2) / (2 * s * s));
    });
    const auto d = find_dips(x, y, 0.0, 2.0, 0.9);
    REQUIRE(d.size() == 2);
    CHECK(d.centers[0] == doctest::Approx(0.613).epsilon(2e-3));
    CHECK(d.centers[1] == doctest::Approx(1.337).epsilon(2e-3));
    CHECK(d.depths[0] == doctest::Approx(0.4).epsilon(0.01));
    CHECK(d.widths[0] == doctest::Approx(2 * std::sqrt(2 * std::log(2.0)) * s).epsilon(0.02));
    CHECK(find_dips(x, y, 0.0, 1.0, 0.9).size() == 1);
    CHECK(find_dips(x, y, 0.0, 2.0, 0.7).size() == 1);
    CHECK(find_dips(x, y, 0.0, 2.0, 0.9, 0.3).size() == 1);
    for (double c : d.centers) CHECK((c >= 0.0 && c <= 2.0));
  }
}

TEST_CASE("proximal silicon dips follow the filter resonance") {
  const std::vector<BathSpin> one{proximal_silicon()};
  const auto m = make_bath_model(one, kG, kB);
  const double larmor = nuclear_larmor(kSi, kB);
  const auto taus = linspace(0.3, 0.92, 621);

  const auto c1 = cluster_coherence(m, {0}, make_sequence(SequenceKind::Hahn, 1, 0), taus);
  CoherenceCurve curve1 = make_curve(make_sequence(SequenceKind::Hahn, 1, 0), taus);
  curve1.values = c1.values;
  const auto d1 = find_dips(curve1, 0.3, 0.92, 0.9);
  REQUIRE(d1.size() == 1);
  CHECK(d1.centers[0] == doctest::Approx(0.609).epsilon(0.10));
  const double f_dip = filter_center_frequency(make_sequence(SequenceKind::Hahn, 1, d1.centers[0]));
  CHECK(std::abs(f_dip - larmor) < 0.1 * larmor);

  // the tau-axis spectrum of the echo peaks near the same frequency
  const auto wide = linspace(0.0, 40.0, 4001);
  CoherenceCurve long_curve = make_curve(make_sequence(SequenceKind::Hahn, 1, 0), wide);
  long_curve.values = cluster_coherence(m, {0}, make_sequence(SequenceKind::Hahn, 1, 0), wide).values;
  const auto spec = fft_spectrum(long_curve, Window::Hann, 2);
  const auto peaks = find_peaks(spec, 0.0);
  bool near = false;
  for (std::size_t k = 0; k < std::min<std::size_t>(peaks.size(), 3); ++k)
    near |= std::abs(peaks[k].frequency - f_dip) < 0.1 * f_dip;
  CHECK(near);

  const auto seq5 = make_sequence(SequenceKind::Cpmg, 5, 0);
  CoherenceCurve curve5 = make_curve(seq5, taus);
  curve5.values = cluster_coherence(m, {0}, seq5, taus).values;
  CHECK(find_dips(curve5, 0.3, 0.92, 0.9).size() == 5);
}

TEST_CASE("yttrium bath spectrum") {
  const auto lat = build_supercell(yso(), Vec3(3, 3, 3), 0, 1).truncated(12.0);
  const auto ys = sites_within(lat, 12.0, std::string("Y"));
  const auto m = make_bath_model(ys, kG, kB, false);
  const auto seq = make_sequence(SequenceKind::Hahn, 1, 0);
  const double larmor = nuclear_larmor(kY, kB);

  // a few revivals: the near-spin multiplet is unresolved and peaks at the Larmor frequency
  const auto c = compute_cce(m, enumerate_clusters(ys, 1), seq, linspace(0.0, 25.0, 1251));
  const auto peaks = find_peaks(fft_spectrum(c), 0.0);
  REQUIRE(!peaks.empty());
  CHECK(peaks[0].frequency == doctest::Approx(larmor).epsilon(0.05));

  // a longer window resolves hyperfine-split lines around the same center
  const auto lc = compute_cce(m, enumerate_clusters(ys, 1), seq, linspace(0.0, 60.0, 3001));
  const auto s = fft_spectrum(lc, Window::Rectangular, 4);
  CHECK(band_centroid(s, 120.0, 290.0) == doctest::Approx(larmor).epsilon(0.05));
  const auto fine = find_peaks(s, 0.0);
  const double top = fine[0].magnitude;
  int satellites = 0;
  for (const auto& p : fine) satellites += p.frequency >= 50.0 && p.frequency <= 120.0 && p.magnitude > 0.05 * top;
  CHECK(satellites > 0);
  CHECK_THROWS_AS(band_centroid(s, 1e6, 2e6), ValidationError);
}

TEST_CASE("stretched exponential fit") {
  const auto tau = linspace(0.0, 150.0, 151);
  const auto y = sample(tau, [](double t) { return std::exp(-std::pow(2 * t / 124.0, 3)); });
  const auto fit = fit_stretched_exp(tau, y);
  CHECK(fit.converged);
  CHECK(fit["t2"] == doctest::Approx(124.0).epsilon(0.01));
  CHECK(fit["amplitude"] == doctest::Approx(1.0).epsilon(0.01));
  CHECK(fit.residual_norm >= 0.0);
  CHECK(fit.iterations <= kFitMaxIterations);

  const auto free = fit_stretched_exp(tau, y, 2.0, true);
  CHECK(free["exponent"] == doctest::Approx(3.0).epsilon(0.01));
  CHECK(free["t2"] == doctest::Approx(124.0).epsilon(0.01));

  const std::vector<double> ones(tau.size(), 1.0);
  const auto flat = fit_stretched_exp(tau, ones);
  CHECK(!flat.converged);
  CHECK(std::isinf(flat["t2"]));

  CHECK_THROWS_AS(fit_stretched_exp(std::vector<double>{0, 1, 2}, std::vector<double>{1, 1, 1}), ValidationError);
  CHECK_THROWS_AS(fit_stretched_exp(tau, sample(tau, [](double) { return 2.0; })), ValidationError);
}

TEST_CASE("stretched exponential fit under noise") {
  const auto tau = linspace(0.0, 150.0, 151);
  std::vector<double> t2s;
  for (int seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 0.05);
    auto y = sample(tau, [&](double t) { return std::clamp(std::exp(-std::pow(2 * t / 124.0, 3)) + n(rng), -1.1, 1.1); });
    t2s.push_back(fit_stretched_exp(tau, y)["t2"]);
  }
  std::nth_element(t2s.begin(), t2s.begin() + 25, t2s.end());
  CHECK(t2s[25] == doctest::Approx(124.0).epsilon(0.05));
}

TEST_CASE("Gaussian FID fit and linewidth") {
  const auto t = linspace(0.0, 1.5, 151);
  const auto y = sample(t, [](double x) { return 0.8 * std::exp(-std::pow(x / 0.310, 2)) + 0.05; });
  const auto fit = fit_gaussian_fid(t, y);
  CHECK(fit.converged);
  CHECK(fit["t2star"] == doctest::Approx(0.310).epsilon(0.01));
  CHECK(fit["offset"] == doctest::Approx(0.05).epsilon(0.01));
  const double fwhm = gaussian_linewidth(fit["t2star"]);
  CHECK(fwhm == doctest::Approx(1710.0).epsilon(0.01));
  CHECK(fwhm / 2200.0 > 0.5);
  CHECK(fwhm / 2200.0 < 2.0);

  // numerical FFT of the decay has the same half width
  const auto tt = linspace(-20.0, 20.0, 8001);
  const auto g = sample(tt, [](double x) { return std::exp(-std::pow(x / 0.310, 2)); });
  const auto s = fft_spectrum(tt, g);
  // without padding the mean subtraction only touches bin 0
  const double half = 0.5 * s.magnitude[1];
  std::size_t k = 1;
  while (s.magnitude[k] > half) ++k;
  const double f_half = s.frequency[k - 1] + (s.magnitude[k - 1] - half) / (s.magnitude[k - 1] - s.magnitude[k]) *
                                                 (s.frequency[k] - s.frequency[k - 1]);
  CHECK(2.0 * f_half == doctest::Approx(fwhm).epsilon(0.01));
}

TEST_CASE("Lorentzian fit") {
  const auto f = linspace(1'920'000.0, 1'941'000.0, 211);
  const auto y = sample(f, [](double x) {
    const double d = (x - 1'930'500.0) / 1100.0;
    return 1.0 - 0.12 / (1.0 + d * d);
  });
  const auto fit = fit_lorentzian(f, y);
  CHECK(fit.converged);
  CHECK(fit["fwhm"] == doctest::Approx(2200.0).epsilon(0.01));
  CHECK(fit["center"] == doctest::Approx(1'930'500.0).epsilon(1e-6));
  CHECK(fit["amplitude"] == doctest::Approx(-0.12).epsilon(0.01));
}

TEST_CASE("decaying cosine fit") {
  const auto t = linspace(0.0, 3.0, 301);
  const auto y = sample(t, [](double x) { return 0.3 * std::exp(-x / 2.0) * std::cos(2 * kPi * 5.6 * x + 0.4) + 0.5; });
  const auto fit = fit_decaying_cosine(t, y);
  CHECK(fit.converged);
  CHECK(fit["frequency"] == doctest::Approx(5600.0).epsilon(0.01));
  CHECK(fit["decay"] == doctest::Approx(2.0).epsilon(0.01));
  CHECK(fit["offset"] == doctest::Approx(0.5).epsilon(0.01));
  for (const auto& [name, p] : fit.parameters) CHECK(std::isfinite(p.value));
}

TEST_CASE("exponential fit and time rescaling") {
  for (double t1 : {610.0, 280.0}) {
    const auto t = linspace(0.0, 3000.0, 121);
    const auto y = sample(t, [&](double x) { return 0.9 * std::exp(-x / t1) + 0.1; });
    const auto fit = fit_exponential(t, y);
    CHECK(fit.converged);
    CHECK(fit["decay"] == doctest::Approx(t1).epsilon(0.01));

    std::vector<double> ms(t.size());
    std::transform(t.begin(), t.end(), ms.begin(), [](double x) { return x * 1e-3; });
    const auto scaled = fit_exponential(ms, y);
    CHECK(scaled["decay"] * 1e3 == doctest::Approx(fit["decay"]).epsilon(1e-6));
  }
  const auto tau = linspace(0.0, 150.0, 151);
  const auto y = sample(tau, [](double t) { return std::exp(-std::pow(2 * t / 124.0, 3)); });
  std::vector<double> ns(tau.size());
  std::transform(tau.begin(), tau.end(), ns.begin(), [](double x) { return x * 1e3; });
  CHECK(fit_stretched_exp(ns, y)["t2"] == doctest::Approx(1e3 * fit_stretched_exp(tau, y)["t2"]).epsilon(1e-6));
}

TEST_CASE("nuclear dephasing time estimate") {
  const auto isolated = BathLattice::from_spins({{kSi, Vec3(4, 0, 0)}, {kY, Vec3(0, 5, 0)}});
  CHECK(std::isinf(nuclear_t2_estimate(isolated, "Si", Vec3::UnitZ())));

  const auto def = yso();
  const auto y = nuclear_t2_estimate(build_supercell(def, Vec3(4, 4, 4), 0, 1), "Y", Vec3::UnitZ());
  MESSAGE("Y T2* estimate " << y * 1e-3 << " ms");
  CHECK(y > 5e3);
  CHECK(y < 5e5);

  std::vector<double> si;
  for (std::uint64_t seed = 1; seed <= 20; ++seed)
    si.push_back(nuclear_t2_estimate(build_supercell(def, Vec3(4, 4, 4), 0, seed), "Si", Vec3::UnitZ()));
  std::sort(si.begin(), si.end());
  MESSAGE("29Si T2* estimate median " << si[10] * 1e-3 << " ms");
  CHECK(si[10] > 1e3);
  CHECK(si[10] < 1e5);
  CHECK(si.back() > 1.2 * si.front());
}
