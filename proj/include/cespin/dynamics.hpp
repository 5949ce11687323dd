#pragma once

#include <span>
#include <vector>

#include "cespin/coherence.hpp"
#include "cespin/hamiltonian.hpp"
#include "cespin/sequence.hpp"
#include "cespin/types.hpp"

namespace cespin {

/// Relaxation (gamma_1) and dephasing (gamma_2) of one designated nuclear spin, in kHz.
struct LindbladParams {
  double relaxation = 0.0;
  double dephasing = 0.0;
  std::size_t target_spin = 0;

  bool active() const { return relaxation > 0.0 || dephasing > 0.0; }
};

enum class LindbladMethod { Automatic, Exponential, RungeKutta };

/// Superoperator of X' = -i 2pi (H_left X - X H_right) + noise(X) on
/// column-major vec(X), in 1/us. Noise acts on `target_site` of an n-spin register.
CMatrix lindblad_superoperator(const CMatrix& h_left, const CMatrix& h_right, const LindbladParams& params,
                               int target_site);

/// Evolves a (possibly non-Hermitian) operator X under the two-sided generator for t us.
CMatrix propagate_two_sided(const CMatrix& x, const CMatrix& h_left, const CMatrix& h_right,
                            const LindbladParams& params, int target_site, double t_us,
                            LindbladMethod method = LindbladMethod::Automatic);

/// Density operator evolution under H (kHz) plus the single-spin channel on
/// register site params.target_spin.
CMatrix lindblad_propagate(const CMatrix& rho, const CMatrix& h, const LindbladParams& params, double t_us,
                           LindbladMethod method = LindbladMethod::Automatic);

/// Coherence of a cluster whose designated spin (params.target_spin, a bath
/// index) also relaxes and dephases during every free-evolution segment.
ClusterCoherence noisy_cluster_coherence(const BathModel& model, const Cluster& cluster, const PulseSequence& seq,
                                         std::span<const double> taus, const LindbladParams& params,
                                         LindbladMethod method = LindbladMethod::Automatic);

struct ReadoutPair {
  std::vector<double> signal_3pi2;
  std::vector<double> signal_pi2;

  /// signal_3pi2 - signal_pi2
  std::vector<double> contrast() const;
};

/// Fluorescence-proportional traces of the two projection phases. Their
/// difference is fidelity * Re L; the background cancels.
ReadoutPair balanced_readout(const CoherenceCurve& curve, double initialization_fidelity, double background);

}  // namespace cespin
