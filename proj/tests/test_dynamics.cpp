#include <doctest.h>

#include <cmath>
#include <random>

#include "cespin/cce.hpp"
#include "cespin/dynamics.hpp"
#include "oracles.hpp"

using namespace cespin;

namespace {

const SpinSpecies kSi{"29Si", -8.465, 0.5, 0.047};
const SpinSpecies kY{"89Y", -2.0885906, 0.5, 1.0};

CMatrix pure_state(const CVector& psi) { return psi * psi.adjoint(); }

CMatrix random_density(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  CMatrix a(dim, dim);
  for (int i = 0; i < dim * dim; ++i) a.data()[i] = Complex(n(rng), n(rng));
  CMatrix rho = a * a.adjoint();
  return rho / rho.trace();
}

CMatrix random_hermitian(int dim, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  CMatrix a(dim, dim);
  for (int i = 0; i < dim * dim; ++i) a.data()[i] = scale * Complex(n(rng), n(rng));
  return 0.5 * (a + a.adjoint());
}

/// Independent Lindblad generator via explicit Kronecker products; vec is column-major.
CMatrix oracle_generator(const CMatrix& h, double g1, double g2, int site, int n) {
  const int d = static_cast<int>(h.rows());
  const CMatrix id = CMatrix::Identity(d, d);
  const auto s = oracle::pauli_halves();
  auto lr = [&](const CMatrix& a, const CMatrix& b) -> CMatrix {
    return Eigen::kroneckerProduct(b.transpose(), a).eval();
  };
  const oracle::cd mi(0, -oracle::kTwoPi * 1e-3);
  CMatrix gen = mi * (lr(h, id) - lr(id, h));
  const CMatrix sx = oracle::kron_embed(2.0 * s[0], site, n), sy = oracle::kron_embed(2.0 * s[1], site, n),
                sz = oracle::kron_embed(2.0 * s[2], site, n);
  const CMatrix one = CMatrix::Identity(d * d, d * d);
  gen += 1e-3 * g2 * (lr(sz, sz) - one);
  gen += 1e-3 * 0.5 * g1 * (lr(sx, sx) - one + lr(sy, sy) - one);
  return gen;
}

CMatrix oracle_evolve(const CMatrix& rho, const CMatrix& gen, double t) {
  const int d = static_cast<int>(rho.rows());
  CVector v = Eigen::Map<const CVector>(rho.data(), d * d);
  CVector out = (gen * t).exp() * v;
  return Eigen::Map<CMatrix>(out.data(), d, d);
}

std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i) x[i] = a + (b - a) * i / (n - 1);
  return x;
}

}  // namespace

TEST_CASE("pulse sequences") {
  CHECK(make_sequence(SequenceKind::Cpmg, 5, 0.3).total_time() == doctest::Approx(3.0));
  CHECK(make_sequence(SequenceKind::Fid, 0, 0.7).total_time() == doctest::Approx(0.7));
  CHECK_THROWS_AS(make_sequence(SequenceKind::Fid, 1, 0.3), ValidationError);
  CHECK_THROWS_AS(make_sequence(SequenceKind::Hahn, 2, 0.3), ValidationError);
  CHECK_THROWS_AS(make_sequence(SequenceKind::Cpmg, 0, 0.3), ValidationError);
  CHECK_THROWS_AS(make_sequence(SequenceKind::Cpmg, 2, -1.0), ValidationError);

  const auto hahn = make_sequence(SequenceKind::Hahn, 1, 0.4);
  CHECK(hahn.segments() == std::vector<double>{0.4, 0.4});
  const auto c3 = make_sequence(SequenceKind::Cpmg, 3, 0.5);
  CHECK(c3.segments() == std::vector<double>{0.5, 1.0, 1.0, 0.5});
  CHECK(make_sequence(SequenceKind::Fid, 0, 0.2).segments() == std::vector<double>{0.2});
  for (const auto& s : {hahn, c3}) {
    double sum = 0;
    for (double x : s.segments()) sum += x;
    CHECK(sum == doctest::Approx(s.total_time()));
  }

  CHECK(c3.descriptor() == "CPMG-3");
  CHECK(parse_sequence_descriptor("CPMG-3", 0.5).segments() == c3.segments());
  CHECK(parse_sequence_descriptor("HAHN").kind == SequenceKind::Hahn);
  CHECK(parse_sequence_descriptor("FID").n_pulses == 0);
  CHECK_THROWS(parse_sequence_descriptor("CPMG-x"));

  // Hahn and CPMG-1 evolve identically
  const std::vector<BathSpin> spins{{kY, Vec3(2.5, 1.0, 3.0)}};
  const auto model = make_bath_model(spins, GTensor::cerium_yso(), MagneticField(0.097, Vec3::UnitZ()));
  const auto taus = linspace(0.0, 5.0, 21);
  const auto a = cluster_coherence(model, {0}, make_sequence(SequenceKind::Hahn, 1, 0), taus);
  const auto b = cluster_coherence(model, {0}, make_sequence(SequenceKind::Cpmg, 1, 0), taus);
  for (std::size_t k = 0; k < taus.size(); ++k) CHECK(std::abs(a.values[k] - b.values[k]) < 1e-15);
}

TEST_CASE("filter center frequency") {
  CHECK(filter_center_frequency(make_sequence(SequenceKind::Cpmg, 1, 0.609)) == doctest::Approx(821.0).epsilon(1e-3));
  CHECK(filter_center_frequency(make_sequence(SequenceKind::Cpmg, 2, 2.47)) == doctest::Approx(202.6).epsilon(1e-3));
  const double f = filter_center_frequency(make_sequence(SequenceKind::Cpmg, 5, 0.8));
  CHECK(filter_center_frequency(make_sequence(SequenceKind::Cpmg, 5, 1.6)) == doctest::Approx(0.5 * f));
  CHECK_THROWS_AS(filter_center_frequency(make_sequence(SequenceKind::Fid, 0, 1.0)), ValidationError);
}

TEST_CASE("Lindblad single-spin analytic decays") {
  const CMatrix h0 = CMatrix::Zero(2, 2);
  SUBCASE("pure dephasing") {
    CVector psi(2);
    psi << std::sqrt(0.7), Complex(0.3, std::sqrt(0.3 - 0.09));
    const CMatrix rho = pure_state(psi);
    const double g2 = 64.0;
    for (double t : {0.5, 3.0, 10.0}) {
      for (auto m : {LindbladMethod::Exponential, LindbladMethod::RungeKutta}) {
        const CMatrix out = lindblad_propagate(rho, h0, {0.0, g2, 0}, t, m);
        CHECK(std::abs(out(0, 1) - rho(0, 1) * std::exp(-2.0 * g2 * 1e-3 * t)) < 1e-9);
        CHECK(std::abs(out(0, 0) - rho(0, 0)) < 1e-12);
      }
    }
  }
  SUBCASE("relaxation") {
    CMatrix rho = CMatrix::Zero(2, 2);
    rho(0, 0) = 1.0;
    const double g1 = 64.0;
    for (double t : {0.5, 3.0, 10.0}) {
      const CMatrix out = lindblad_propagate(rho, h0, {g1, 0.0, 0}, t);
      const double sz = (out(0, 0) - out(1, 1)).real();
      CHECK(sz == doctest::Approx(std::exp(-2.0 * g1 * 1e-3 * t)).epsilon(1e-10));
    }
  }
}

TEST_CASE("Lindblad generator matches the Kronecker oracle") {
  std::mt19937_64 rng(3);
  for (int n : {1, 2, 3}) {
    const int d = 1 << n;
    const CMatrix h = random_hermitian(d, 150.0, rng);
    const CMatrix rho = random_density(d, rng);
    for (int site = 0; site < n; ++site) {
      const LindbladParams p{40.0, 25.0, static_cast<std::size_t>(site)};
      const CMatrix gen = oracle_generator(h, p.relaxation, p.dephasing, site, n);
      CHECK((lindblad_superoperator(h, h, p, site) - gen).norm() < 1e-12 * gen.norm());
      const CMatrix expect = oracle_evolve(rho, gen, 2.3);
      CHECK((lindblad_propagate(rho, h, p, 2.3) - expect).norm() < 1e-7);
    }
  }
}

TEST_CASE("Lindblad propagation properties") {
  std::mt19937_64 rng(17);
  const CMatrix h = random_hermitian(4, 300.0, rng);
  const CMatrix rho = random_density(4, rng);
  const LindbladParams p{64.0, 64.0, 1};

  SUBCASE("closed-system limit") {
    const CMatrix out = lindblad_propagate(rho, h, {0.0, 0.0, 0}, 1.7);
    const CMatrix u = oracle::propagator(h, 1.7);
    CHECK((out - u * rho * u.adjoint()).norm() < 1e-10);
  }
  SUBCASE("trace, hermiticity, positivity") {
    for (auto m : {LindbladMethod::Exponential, LindbladMethod::RungeKutta}) {
      const CMatrix out = lindblad_propagate(rho, h, p, 5.0, m);
      CHECK(std::abs(out.trace() - 1.0) < 1e-9);
      CHECK((out - out.adjoint()).norm() < 1e-12);
      CHECK(Eigen::SelfAdjointEigenSolver<CMatrix>(0.5 * (out + out.adjoint())).eigenvalues().minCoeff() > -1e-12);
    }
  }
  SUBCASE("semigroup") {
    const CMatrix once = lindblad_propagate(rho, h, p, 3.0);
    const CMatrix twice = lindblad_propagate(lindblad_propagate(rho, h, p, 1.2), h, p, 1.8);
    CHECK((once - twice).norm() < 1e-10);
  }
  SUBCASE("exponential and Runge-Kutta agree") {
    const CMatrix a = lindblad_propagate(rho, h, p, 4.0, LindbladMethod::Exponential);
    const CMatrix b = lindblad_propagate(rho, h, p, 4.0, LindbladMethod::RungeKutta);
    CHECK((a - b).norm() < 1e-6);
  }
  SUBCASE("input validation") {
    CMatrix bad = rho;
    bad(0, 1) += 0.1;
    CHECK_THROWS_AS(lindblad_propagate(bad, h, p, 1.0), ValidationError);
    CHECK_THROWS_AS(lindblad_propagate(2.0 * rho, h, p, 1.0), ValidationError);
    CMatrix neg = CMatrix::Zero(4, 4);
    neg(0, 0) = 1.5;
    neg(1, 1) = -0.5;
    CHECK_THROWS_AS(lindblad_propagate(neg, h, p, 1.0), ValidationError);
    CHECK_THROWS_AS(lindblad_propagate(rho, h, {-1.0, 0.0, 0}, 1.0), ValidationError);
  }
}

TEST_CASE("noisy cluster coherence") {
  const GTensor g = GTensor::cerium_yso();
  const MagneticField b(0.097, Vec3::UnitZ());
  const std::vector<BathSpin> spins{{kSi, 3.6 * Vec3(0.3, -0.5, 0.8).normalized()}, {kY, Vec3(3.4, 2.0, -1.1)}};
  const auto model = make_bath_model(spins, g, b);
  const auto taus = linspace(0.2, 1.2, 41);

  SUBCASE("zero rates reproduce the coherent result") {
    for (const Cluster& c : {Cluster{0}, Cluster{0, 1}}) {
      const auto seq = make_sequence(SequenceKind::Cpmg, 2, 0);
      const auto coherent = cluster_coherence(model, c, seq, taus);
      for (auto m : {LindbladMethod::Exponential, LindbladMethod::RungeKutta}) {
        const auto noisy = noisy_cluster_coherence(model, c, seq, taus, {0.0, 0.0, 0}, m);
        for (std::size_t k = 0; k < taus.size(); ++k) CHECK(std::abs(noisy.values[k] - coherent.values[k]) < 1e-8);
      }
    }
  }
  SUBCASE("target must belong to the cluster") {
    CHECK_THROWS_AS(noisy_cluster_coherence(model, {1}, make_sequence(SequenceKind::Hahn, 1, 0), taus, {1.0, 1.0, 0}),
                    ValidationError);
  }
  SUBCASE("dip depth shrinks with noise") {
    const auto seq = make_sequence(SequenceKind::Cpmg, 5, 0);
    // largest drop below the chord through points 0.1 us to either side
    auto depth = [](const std::vector<Complex>& v) {
      const std::size_t w = 4;
      double d = 0.0;
      for (std::size_t k = w; k + w < v.size(); ++k)
        d = std::max(d, 0.5 * (v[k - w].real() + v[k + w].real()) - v[k].real());
      return d;
    };
    const double coherent = depth(cluster_coherence(model, {0}, seq, taus).values);
    REQUIRE(coherent > 0.1);
    const double moderate = depth(noisy_cluster_coherence(model, {0}, seq, taus, {64.0, 64.0, 0}).values);
    CHECK(moderate < coherent);
    const double strong = depth(noisy_cluster_coherence(model, {0}, seq, taus, {1e4, 1e4, 0}).values);
    CHECK(strong < 0.05 * coherent);
    // cross-check the strong-noise limit against the small-step integrator
    const std::vector<double> few{taus[10], taus[20], taus[30]};
    const auto e = noisy_cluster_coherence(model, {0}, seq, few, {1e4, 1e4, 0}, LindbladMethod::Exponential);
    const auto r = noisy_cluster_coherence(model, {0}, seq, few, {1e4, 1e4, 0}, LindbladMethod::RungeKutta);
    for (std::size_t k = 0; k < few.size(); ++k) CHECK(std::abs(e.values[k] - r.values[k]) < 1e-6);
  }
  SUBCASE("magnitude bound") {
    const auto noisy = noisy_cluster_coherence(model, {0, 1}, make_sequence(SequenceKind::Hahn, 1, 0), taus, {64, 64, 0});
    for (const auto& v : noisy.values) CHECK(std::abs(v) <= 1.0 + 1e-9);
  }
}

TEST_CASE("balanced readout") {
  CoherenceCurve c = make_curve(make_sequence(SequenceKind::Hahn, 1, 0), linspace(0.0, 2.0, 5));
  c.values = {1.0, Complex(0.5, 0.2), Complex(-0.3, 0.1), Complex(0.0, -0.4), Complex(0.9, 0.0)};
  SUBCASE("unit fidelity, no background") {
    const auto r = balanced_readout(c, 1.0, 0.0);
    const auto d = r.contrast();
    for (std::size_t k = 0; k < d.size(); ++k) CHECK(std::abs(d[k] - c.values[k].real()) < 1e-15);
  }
  SUBCASE("zero fidelity") {
    for (double x : balanced_readout(c, 0.0, 3.0).contrast()) CHECK(x == 0.0);
  }
  SUBCASE("ten percent fidelity with background") {
    const auto r = balanced_readout(c, 0.10, 7.5);
    const auto d = r.contrast();
    for (std::size_t k = 0; k < d.size(); ++k) {
      CHECK(std::abs(d[k] - 0.10 * c.values[k].real()) < 1e-12);
      CHECK(r.signal_pi2[k] >= 7.5);
    }
  }
  SUBCASE("fidelity out of range") {
    CHECK_THROWS_AS(balanced_readout(c, 1.2, 0.0), ValidationError);
    CHECK_THROWS_AS(balanced_readout(c, -0.1, 0.0), ValidationError);
  }
}
