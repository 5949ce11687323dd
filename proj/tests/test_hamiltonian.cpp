#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/SVD>

#include "cespin/hamiltonian.hpp"
#include "oracles.hpp"

using namespace cespin;

namespace {

// CODATA 2018, restated here so the tests do not read the library table
constexpr double kMuB = 9.2740100783e-24;
constexpr double kMuN = 5.0507837461e-27;
constexpr double kH = 6.62607015e-34;
constexpr double kHbar = kH / (2 * std::numbers::pi);

const SpinSpecies kY{"89Y", -2.0885906, 0.5, 1.0};
const SpinSpecies kSi{"29Si", -8.465, 0.5, 0.047};

double splitting_khz(const Eigen::Matrix2cd& h) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2cd> es(h);
  return es.eigenvalues()[1] - es.eigenvalues()[0];
}

double rel_hermiticity(const CMatrix& h) { return (h - h.adjoint()).norm() / std::max(h.norm(), 1e-300); }

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  return Vec3(n(rng), n(rng), n(rng)).normalized();
}

}  // namespace

TEST_CASE("electron Zeeman") {
  SUBCASE("zero field") {
    CHECK(electron_zeeman(GTensor::cerium_yso(), MagneticField(0.0, Vec3::UnitZ())).norm() == 0.0);
  }
  SUBCASE("isotropic g = 2 at 0.1 T") {
    const auto h = electron_zeeman(GTensor::isotropic(2.0), MagneticField(0.1, Vec3::UnitZ()));
    const double expect_khz = 2.0 * kMuB * 0.1 / kH * 1e-3;
    CHECK(splitting_khz(h) == doctest::Approx(expect_khz).epsilon(1e-12));
    CHECK(expect_khz * 1e-6 == doctest::Approx(2.7993).epsilon(1e-4));
    CHECK(rel_hermiticity(h) < 1e-14);
  }
  SUBCASE("Eq. 2 tensor along z uses the z column norm") {
    const GTensor g = GTensor::cerium_yso();
    const MagneticField b(0.097, Vec3::UnitZ());
    const double gz = std::sqrt(0.3004 * 0.3004 + 0.0858 * 0.0858 + 0.9098 * 0.9098);
    CHECK(electron_splitting(g, b) == doctest::Approx(kMuB * 0.097 * gz / kH * 1e-3).epsilon(1e-12));
    CHECK(splitting_khz(electron_zeeman(g, b)) == doctest::Approx(electron_splitting(g, b)).epsilon(1e-12));
  }
  SUBCASE("splitting equals mu_B B g_eff / h for random g and field") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    for (int trial = 0; trial < 50; ++trial) {
      GTensor g;
      for (int i = 0; i < 9; ++i) g.matrix.data()[i] = u(rng);
      const Vec3 n = random_unit(rng);
      const MagneticField b(0.05 + 0.01 * trial, n);
      const double split = splitting_khz(electron_zeeman(g, b));
      CHECK(split == doctest::Approx(kMuB * b.magnitude() * effective_g_along(g, n) / kH * 1e-3).epsilon(1e-12));
    }
  }
}

TEST_CASE("shipped g tensor") {
  Mat3 expect;
  expect << 0.6514, 0.2629, 0.3004, 0.2629, 0.6799, -0.0858, 0.3004, -0.0858, 0.9098;
  CHECK(GTensor::cerium_yso().matrix == expect);
}

TEST_CASE("effective g along a direction") {
  CHECK(effective_g_along(GTensor::isotropic(1.0), Vec3(0.6, 0.8, 0.0)) == doctest::Approx(1.0));
  CHECK(effective_g_along({Eigen::Vector3d(0.3, 0.7, 1.9).asDiagonal()}, Vec3::UnitX()) == doctest::Approx(0.3));
  CHECK_THROWS_AS(effective_g_along(GTensor::isotropic(1.0), Vec3(1, 1, 0)), ValidationError);

  const GTensor g = GTensor::cerium_yso();
  double best = 0.0;
  const int steps = 400;
  for (int i = 0; i <= steps; ++i) {
    const double th = std::numbers::pi * i / steps;
    for (int j = 0; j < 2 * steps; ++j) {
      const double ph = std::numbers::pi * j / steps;
      best = std::max(best, effective_g_along(g, Vec3(std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th))));
    }
  }
  const double sigma_max = Eigen::JacobiSVD<Mat3>(g.matrix).singularValues()[0];
  CHECK(best == doctest::Approx(sigma_max).epsilon(1e-4));
  CHECK(best > 1.10);
  CHECK(best < 1.15);
}

TEST_CASE("magnetic field guards") {
  CHECK_THROWS_AS(MagneticField(0.1, Vec3(1, 1e-5, 0)), ValidationError);
  CHECK_THROWS_AS(MagneticField(-0.1, Vec3::UnitZ()), ValidationError);
  CHECK(MagneticField::along(0.1, Vec3(0, 3, 4)).direction().norm() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("nuclear Larmor frequencies") {
  CHECK(nuclear_larmor(kY, MagneticField(0.0, Vec3::UnitZ())) == 0.0);
  // gamma = mu / (hbar I) with mu_Y = -0.137 mu_N
  const double gamma_y_mhz = -0.137 * kMuN / (kHbar * 0.5) / (2 * std::numbers::pi) * 1e-6;
  CHECK(gamma_y_mhz == doctest::Approx(kY.gyromagnetic_ratio).epsilon(2e-3));
  const MagneticField b(0.097, Vec3::UnitZ());
  CHECK(nuclear_larmor(kY, b) == doctest::Approx(202.6).epsilon(5e-4));
  CHECK(nuclear_larmor(kSi, b) == doctest::Approx(821.1).epsilon(1e-4));
  CHECK(nuclear_zeeman_vector(kSi, b).z() < 0.0);
}

TEST_CASE("hyperfine vector") {
  const GTensor g = GTensor::cerium_yso();
  const MagneticField b(0.097, Vec3::UnitZ());
  const BathSpin si{kSi, Vec3(1.2, -2.5, 2.3)};

  SUBCASE("r^-3 scaling") {
    const Vec3 a = hyperfine_vector(si, g, b).khz;
    for (double s : {2.0, 0.5, 3.7}) {
      const Vec3 scaled = hyperfine_vector({kSi, s * si.position}, g, b).khz;
      CHECK((scaled * s * s * s - a).norm() < 1e-12 * a.norm());
    }
  }
  SUBCASE("axial closed form") {
    const double r = 4.0;
    const double mu0_over_4pi = 1e-7;
    const Vec3 a = hyperfine_vector({kSi, r * Vec3::UnitZ()}, GTensor::isotropic(2.0), b).khz;
    const double expect = 2.0 * mu0_over_4pi * kMuB * std::abs(kSi.gyromagnetic_ratio) * 1e6 * 2.0 /
                          std::pow(r * 1e-10, 3) * 1e-3;
    CHECK(std::abs(a.z()) == doctest::Approx(expect).epsilon(1e-9));
    CHECK(a.head<2>().norm() < 1e-12 * expect);
  }
  SUBCASE("proximal silicon at 3.6 Angstrom") {
    const double norm = hyperfine_vector({kSi, 3.6 * Vec3(1, 1, 1).normalized()}, g, b).khz.norm();
    CHECK(norm > 100.0);
    CHECK(norm < 1000.0);
  }
  SUBCASE("contact regime excluded") {
    CHECK_THROWS_AS(hyperfine_vector({kSi, Vec3(0.3, 0, 0)}, g, b), ValidationError);
  }
}

TEST_CASE("bath dipolar tensor") {
  const BathSpin a{kY, Vec3(0.3, 0.1, -0.2)}, bspin{kY, Vec3(0.3, 0.1, -0.2) + 3.5 * Vec3(1, 2, 2) / 3.0};
  const auto c = bath_coupling(a, bspin);
  const auto d = bath_coupling(bspin, a);
  CHECK(std::abs(c.hz.trace()) < 1e-12 * c.hz.norm());
  CHECK((c.hz - c.hz.transpose()).norm() < 1e-15 * c.hz.norm());
  CHECK((c.hz - d.hz).norm() < 1e-15 * c.hz.norm());
  const double scale = 1e-7 * kHbar * std::pow(2 * std::numbers::pi * kY.gyromagnetic_ratio * 1e6, 2) /
                       std::pow(3.5e-10, 3) / (2 * std::numbers::pi);
  CHECK(dipolar_prefactor_hz(kY.gyromagnetic_ratio, kY.gyromagnetic_ratio, 3.5) == doctest::Approx(scale).epsilon(1e-9));
  CHECK(scale > 1.0);
  CHECK(scale < 10.0);
  CHECK_THROWS_AS(bath_coupling(a, a, 0, 0), ValidationError);
  CHECK_THROWS_AS(bath_coupling(a, {kY, a.position + Vec3(0.2, 0, 0)}), ValidationError);
}

TEST_CASE("conditional Hamiltonians") {
  const GTensor g = GTensor::cerium_yso();
  const MagneticField b(0.097, Vec3(0.2, -0.3, 1.0).normalized());
  const std::vector<BathSpin> spins{{kY, Vec3(3.1, 0.4, 2.2)}, {kSi, Vec3(-2.0, 3.3, 0.9)}, {kY, Vec3(0.5, -3.8, -1.7)}};
  const auto model = make_bath_model(spins, g, b);

  SUBCASE("Hermitian and H+ - H- is the full hyperfine term") {
    const auto [hp, hm] = conditional_hamiltonians(spins, g, b);
    CHECK(rel_hermiticity(hp) < 1e-13);
    CHECK(rel_hermiticity(hm) < 1e-13);
    std::vector<Vec3> hf;
    for (std::size_t i = 0; i < spins.size(); ++i) hf.push_back(hyperfine_vector(spins[i], g, b, i).khz);
    CHECK(((hp - hm) - oracle::spin_hamiltonian(hf, {})).norm() < 1e-12 * hp.norm());
  }
  SUBCASE("Kronecker-product oracle including the pair terms") {
    const auto [hp, hm] = conditional_hamiltonians(spins, g, b);
    std::vector<Vec3> fp, fm;
    std::vector<std::vector<Mat3>> pair(3, std::vector<Mat3>(3, Mat3::Zero()));
    for (std::size_t i = 0; i < 3; ++i) {
      const Vec3 z = spins[i].species.gyromagnetic_ratio * 1e3 * b.vector();
      const Vec3 a = hyperfine_vector(spins[i], g, b).khz;
      fp.push_back(z + 0.5 * a);
      fm.push_back(z - 0.5 * a);
      for (std::size_t j = i + 1; j < 3; ++j) pair[i][j] = 1e-3 * bath_coupling(spins[i], spins[j]).hz;
    }
    CHECK((hp - oracle::spin_hamiltonian(fp, pair)).norm() < 1e-12 * hp.norm());
    CHECK((hm - oracle::spin_hamiltonian(fm, pair)).norm() < 1e-12 * hm.norm());
  }
  SUBCASE("fixed-size template agrees with the dense form") {
    const std::vector<std::size_t> idx{0, 1, 2};
    const auto fixed = conditional_hamiltonians<Eigen::Matrix<Complex, 8, 8>>(model, idx);
    const auto dense = conditional_hamiltonians(spins, g, b);
    CHECK((CMatrix(fixed.plus) - dense.plus).norm() < 1e-12);
    CHECK((CMatrix(fixed.minus) - dense.minus).norm() < 1e-12);
  }
  SUBCASE("far spin has H+ = H-") {
    const std::vector<BathSpin> far{{kY, Vec3(0, 0, 1e5)}};
    const auto [hp, hm] = conditional_hamiltonians(far, g, b);
    CHECK((hp - hm).norm() < 1e-9 * hp.norm());
  }
  SUBCASE("single yttrium eigenfrequencies") {
    const std::vector<BathSpin> one{spins[0]};
    const auto [hp, hm] = conditional_hamiltonians(one, g, b);
    const Vec3 wl = kY.gyromagnetic_ratio * 1e3 * b.vector();
    const Vec3 a = hyperfine_vector(spins[0], g, b).khz;
    CHECK(splitting_khz(hp) == doctest::Approx((wl + 0.5 * a).norm()).epsilon(1e-12));
    CHECK(splitting_khz(hm) == doctest::Approx((wl - 0.5 * a).norm()).epsilon(1e-12));
  }
  SUBCASE("pair equals single-spin terms plus the dipolar term") {
    const std::vector<BathSpin> pair{spins[0], spins[2]};
    const auto [hp, hm] = conditional_hamiltonians(pair, g, b);
    const auto s0 = conditional_hamiltonians(std::span(&spins[0], 1), g, b);
    const auto s2 = conditional_hamiltonians(std::span(&spins[2], 1), g, b);
    const CMatrix i2 = CMatrix::Identity(2, 2);
    const CMatrix sum = Eigen::kroneckerProduct(s0.plus, i2).eval() + Eigen::kroneckerProduct(i2, s2.plus).eval();
    const Mat3 d = 1e-3 * bath_coupling(spins[0], spins[2]).hz;
    const CMatrix dip = oracle::spin_hamiltonian({Vec3::Zero(), Vec3::Zero()}, {{Mat3::Zero(), d}, {Mat3::Zero(), Mat3::Zero()}});
    CHECK((hp - sum - dip).norm() < 1e-12 * hp.norm());
    const auto free = conditional_hamiltonians(pair, g, b, false);
    CHECK((free.plus - sum).norm() < 1e-12 * hp.norm());
  }
  SUBCASE("oversize cluster") {
    std::vector<BathSpin> many;
    for (int i = 0; i < 5; ++i) many.push_back({kY, Vec3(4.0 + 4 * i, 0, 0)});
    CHECK_THROWS_AS(conditional_hamiltonians(many, g, b), ValidationError);
  }
}
