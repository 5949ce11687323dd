#include "cespin/hamiltonian.hpp"

#include <cmath>
#include <numbers>

namespace cespin {
namespace {

constexpr double kMinHyperfineDistance = 0.5;  // Angstrom
constexpr double kMinPairDistance = 0.5;       // Angstrom

// mu0 / 4pi
constexpr double kMu0Over4Pi = PhysicalConstants::vacuum_permeability / (4.0 * std::numbers::pi);

Mat3 dipolar_shape(const Vec3& unit) { return 3.0 * unit * unit.transpose() - Mat3::Identity(); }

}  // namespace

GTensor GTensor::cerium_yso() {
  GTensor g;
  g.matrix << 0.6514, 0.2629, 0.3004,
              0.2629, 0.6799, -0.0858,
              0.3004, -0.0858, 0.9098;
  return g;
}

MagneticField::MagneticField(double magnitude_tesla, const Vec3& direction)
    : magnitude_(magnitude_tesla), direction_(direction) {
  if (!(magnitude_tesla >= 0.0) || !std::isfinite(magnitude_tesla))
    throw ValidationError("field magnitude must be finite and non-negative");
  if (std::abs(direction.norm() - 1.0) > 1e-12) throw ValidationError("field direction must be a unit vector");
}

MagneticField MagneticField::along(double magnitude_tesla, const Vec3& direction) {
  const double n = direction.norm();
  if (!(n > 0.0)) throw ValidationError("field direction must be non-zero");
  return MagneticField(magnitude_tesla, direction / n);
}

Eigen::Matrix2cd electron_zeeman(const GTensor& g, const MagneticField& field) {
  // mu_B B.g.S / h in Hz -> kHz
  const Vec3 effective = g.matrix.transpose() * field.vector();
  const double scale = PhysicalConstants::bohr_magneton / PhysicalConstants::planck * 1e-3;
  return spin_projection<Complex>(scale * effective);
}

double electron_splitting(const GTensor& g, const MagneticField& field) {
  return PhysicalConstants::bohr_magneton / PhysicalConstants::planck * 1e-3 * field.magnitude() *
         effective_g_along(g, field.direction());
}

double effective_g_along(const GTensor& g, const Vec3& n) {
  if (std::abs(n.norm() - 1.0) > 1e-9) throw ValidationError("effective_g_along needs a unit vector");
  return (g.matrix.transpose() * n).norm();
}

Vec3 nuclear_zeeman_vector(const SpinSpecies& species, const MagneticField& field) {
  return species.gyromagnetic_ratio * 1e3 * field.vector();
}

double nuclear_larmor(const SpinSpecies& species, const MagneticField& field) {
  return std::abs(species.gyromagnetic_ratio) * 1e3 * field.magnitude();
}

HyperfineVector hyperfine_vector(const BathSpin& spin, const GTensor& g, const MagneticField& field,
                                 std::size_t spin_index) {
  const double r = spin.position.norm();
  if (!(r > kMinHyperfineDistance))
    throw ValidationError("nuclear spin within 0.5 Angstrom of the defect (contact regime)");
  // Dipolar field of one Bohr magneton at distance r, Tesla.
  const double field_t = kMu0Over4Pi * PhysicalConstants::bohr_magneton / std::pow(r * kAngstrom, 3);
  const double scale = spin.species.gyromagnetic_ratio * 1e3 * field_t;  // kHz
  const Vec3 n = spin.position / r;
  const Vec3 electron_axis = g.matrix.transpose() * field.direction();  // (n_B^T g)^T
  return {spin_index, scale * (dipolar_shape(n).transpose() * electron_axis)};
}

double dipolar_prefactor_hz(double gamma_i, double gamma_j, double distance) {
  // gamma_i gamma_j hbar / (2 pi) = h (gamma_i/2pi)(gamma_j/2pi)
  return kMu0Over4Pi * PhysicalConstants::planck * (gamma_i * 1e6) * (gamma_j * 1e6) /
         std::pow(distance * kAngstrom, 3);
}

BathCoupling bath_coupling(const BathSpin& i, const BathSpin& j, std::size_t index_i, std::size_t index_j) {
  const Vec3 d = j.position - i.position;
  const double r = d.norm();
  if (index_i == index_j || !(r > kMinPairDistance))
    throw ValidationError("bath_coupling needs two distinct, separated spins");
  const double pref = dipolar_prefactor_hz(i.species.gyromagnetic_ratio, j.species.gyromagnetic_ratio, r);
  return {index_i, index_j, pref * dipolar_shape(d / r)};
}

Mat3 BathModel::coupling_khz(std::size_t i, std::size_t j) const {
  if (!interacting) return Mat3::Zero();
  return bath_coupling(spins[i], spins[j], i, j).hz * 1e-3;
}

BathModel make_bath_model(std::span<const BathSpin> spins, const GTensor& g, const MagneticField& field,
                          bool interacting) {
  BathModel model;
  model.spins.assign(spins.begin(), spins.end());
  model.interacting = interacting;
  model.zeeman.reserve(spins.size());
  model.hyperfine.reserve(spins.size());
  for (std::size_t i = 0; i < spins.size(); ++i) {
    model.zeeman.push_back(nuclear_zeeman_vector(spins[i].species, field));
    model.hyperfine.push_back(hyperfine_vector(spins[i], g, field, i).khz);
  }
  return model;
}

ConditionalPair<CMatrix> conditional_hamiltonians(std::span<const BathSpin> cluster, const GTensor& g,
                                                  const MagneticField& field, bool interacting, int max_order) {
  if (cluster.empty() || static_cast<int>(cluster.size()) > max_order)
    throw ValidationError("cluster size must be between 1 and " + std::to_string(max_order));
  const BathModel model = make_bath_model(cluster, g, field, interacting);
  std::vector<std::size_t> idx(cluster.size());
  for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
  return conditional_hamiltonians<CMatrix>(model, idx);
}

}  // namespace cespin
