#pragma once

#include <span>
#include <utility>

#include "cespin/constants.hpp"
#include "cespin/lattice.hpp"
#include "cespin/spin_operators.hpp"
#include "cespin/types.hpp"

namespace cespin {

/// Effective g matrix of the electron doublet.
struct GTensor {
  Mat3 matrix = Mat3::Identity();

  /// Ce3+ ground doublet in Y2SiO5.
  static GTensor cerium_yso();
  static GTensor isotropic(double g) { return {g * Mat3::Identity()}; }
};

class MagneticField {
 public:
  MagneticField() = default;
  /// Throws unless |direction| = 1 within 1e-12 and magnitude >= 0.
  MagneticField(double magnitude_tesla, const Vec3& direction);
  /// Normalizes `direction`.
  static MagneticField along(double magnitude_tesla, const Vec3& direction);

  double magnitude() const { return magnitude_; }
  const Vec3& direction() const { return direction_; }
  Vec3 vector() const { return magnitude_ * direction_; }

 private:
  double magnitude_ = 0.0;
  Vec3 direction_ = Vec3::UnitZ();
};

/// Vector multiplying I_i in the electron-nuclear coupling, kHz (cyclic).
struct HyperfineVector {
  std::size_t spin_index = 0;
  Vec3 khz = Vec3::Zero();
};

/// Intra-bath dipolar tensor of one pair, Hz (cyclic).
struct BathCoupling {
  std::size_t i = 0, j = 0;
  Mat3 hz = Mat3::Zero();
};

/// Electron Zeeman operator (mu_B/h) B.g.S, 2x2 in kHz.
Eigen::Matrix2cd electron_zeeman(const GTensor& g, const MagneticField& field);

/// Electron level splitting mu_B |g^T B| / h, kHz.
double electron_splitting(const GTensor& g, const MagneticField& field);

/// |g^T n| for a unit vector n.
double effective_g_along(const GTensor& g, const Vec3& n);

/// |gamma/2pi| B in kHz.
double nuclear_larmor(const SpinSpecies& species, const MagneticField& field);

/// Signed nuclear Zeeman vector gamma/2pi * B, kHz.
Vec3 nuclear_zeeman_vector(const SpinSpecies& species, const MagneticField& field);

HyperfineVector hyperfine_vector(const BathSpin& spin, const GTensor& g, const MagneticField& field,
                                 std::size_t spin_index = 0);

/// mu0 h (gamma_i/2pi)(gamma_j/2pi) / (4 pi r^3) in Hz, r in Angstrom.
double dipolar_prefactor_hz(double gamma_i, double gamma_j, double distance);

BathCoupling bath_coupling(const BathSpin& i, const BathSpin& j, std::size_t index_i = 0,
                           std::size_t index_j = 1);

/// Precomputed single-spin terms of a bath in a given field, in kHz.
struct BathModel {
  std::vector<BathSpin> spins;
  std::vector<Vec3> zeeman;     // gamma/2pi B per spin
  std::vector<Vec3> hyperfine;  // full hyperfine vector per spin
  bool interacting = true;      // include intra-bath dipolar terms

  std::size_t size() const { return spins.size(); }
  /// Dipolar tensor of pair (i,j) in kHz; zero when the bath is non-interacting.
  Mat3 coupling_khz(std::size_t i, std::size_t j) const;
};

BathModel make_bath_model(std::span<const BathSpin> spins, const GTensor& g, const MagneticField& field,
                          bool interacting = true);

inline constexpr int kMaxClusterOrder = 4;

template <typename MatrixT>
struct ConditionalPair {
  MatrixT plus, minus;
};

/// H+/- of a cluster: bath Zeeman and intra-cluster dipolar terms, plus or
/// minus half the hyperfine terms. Spin order follows `cluster`.
template <typename MatrixT>
ConditionalPair<MatrixT> conditional_hamiltonians(const BathModel& model, std::span<const std::size_t> cluster) {
  const int n = static_cast<int>(cluster.size());
  const int dim = 1 << n;
  MatrixT bath = MatrixT::Zero(dim, dim);
  MatrixT hyper = MatrixT::Zero(dim, dim);
  using Scalar = typename MatrixT::Scalar;
  for (int a = 0; a < n; ++a) {
    add_single_site(bath, n, a, spin_projection<Scalar>(model.zeeman[cluster[a]]));
    add_single_site(hyper, n, a, spin_projection<Scalar>(0.5 * model.hyperfine[cluster[a]]));
  }
  if (model.interacting)
    for (int a = 0; a < n; ++a)
      for (int b = a + 1; b < n; ++b) add_two_site(bath, n, a, b, model.coupling_khz(cluster[a], cluster[b]));
  return {bath + hyper, bath - hyper};
}

/// Dense H+/- for up to `max_order` spins given explicitly.
ConditionalPair<CMatrix> conditional_hamiltonians(std::span<const BathSpin> cluster, const GTensor& g,
                                                  const MagneticField& field, bool interacting = true,
                                                  int max_order = kMaxClusterOrder);

}  // namespace cespin
