#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "cespin/constants.hpp"
#include "cespin/sequence.hpp"
#include "cespin/types.hpp"

namespace cespin {

struct CurveMetadata {
  std::string sequence;
  std::uint64_t seed = 0;
  std::string config_hash;
};

/// Sampled electron coherence L. `tau` is the swept pulse interval and
/// `time` the matching total evolution time, both in us.
struct CoherenceCurve {
  std::vector<double> tau;
  std::vector<double> time;
  std::vector<Complex> values;
  /// Grid indices where a cluster correction could not be formed.
  std::vector<std::size_t> nonconvergent;
  CurveMetadata meta;

  std::size_t size() const { return values.size(); }
  std::vector<double> real() const;
  std::vector<double> magnitude() const;
};

CoherenceCurve make_curve(const PulseSequence& seq, std::span<const double> taus);

struct ClusterCoherence {
  Cluster cluster;
  std::vector<Complex> values;
};

/// Throws unless the grid is non-negative and strictly increasing.
void check_tau_grid(std::span<const double> taus);

/// Eigen-decomposed Hermitian generator; propagator(t) = exp(-i 2pi H t).
template <typename MatrixT>
class Propagator {
 public:
  explicit Propagator(const MatrixT& h_khz) {
    Eigen::SelfAdjointEigenSolver<MatrixT> solver(h_khz);
    vectors_ = solver.eigenvectors();
    values_ = solver.eigenvalues();
  }
  MatrixT at(double t_us) const {
    Eigen::Matrix<Complex, MatrixT::RowsAtCompileTime, 1> phases(values_.size());
    for (Eigen::Index k = 0; k < values_.size(); ++k)
      phases[k] = std::polar(1.0, -phase_of(values_[k], t_us));
    return vectors_ * phases.asDiagonal() * vectors_.adjoint();
  }

 private:
  MatrixT vectors_;
  Eigen::Matrix<double, MatrixT::RowsAtCompileTime, 1> values_;
};

/// Tr[U_a rho U_b^dagger] for rho = I/d, where branch a starts under H+ and
/// branch b under H-, alternating at each pi pulse.
template <typename MatrixT>
std::vector<Complex> conditional_coherence(const MatrixT& h_plus, const MatrixT& h_minus, const PulseSequence& seq,
                                           std::span<const double> taus) {
  const Propagator<MatrixT> plus(h_plus), minus(h_minus);
  const auto dim = static_cast<double>(h_plus.rows());
  std::vector<Complex> out;
  out.reserve(taus.size());
  for (double tau : taus) {
    if (tau == 0.0) {
      out.emplace_back(1.0, 0.0);
      continue;
    }
    if (seq.kind == SequenceKind::Fid) {
      const MatrixT ua = plus.at(tau), ub = minus.at(tau);
      out.push_back((ub.conjugate().cwiseProduct(ua)).sum() / dim);
      continue;
    }
    const MatrixT p1 = plus.at(tau), m1 = minus.at(tau);
    MatrixT p2, m2;
    if (seq.n_pulses > 1) {
      p2 = p1 * p1;
      m2 = m1 * m1;
    }
    MatrixT ua = p1, ub = m1;
    for (int k = 1; k <= seq.n_pulses; ++k) {
      const bool last = (k == seq.n_pulses);
      const bool a_plus = (k % 2 == 0);
      const MatrixT& pa = a_plus ? (last ? p1 : p2) : (last ? m1 : m2);
      const MatrixT& pb = a_plus ? (last ? m1 : m2) : (last ? p1 : p2);
      ua = (pa * ua).eval();
      ub = (pb * ub).eval();
    }
    out.push_back((ub.conjugate().cwiseProduct(ua)).sum() / dim);
  }
  return out;
}

}  // namespace cespin
