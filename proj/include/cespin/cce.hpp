#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "cespin/coherence.hpp"
#include "cespin/dynamics.hpp"
#include "cespin/hamiltonian.hpp"
#include "cespin/lattice.hpp"

namespace cespin {

/// Pair admission rule: distance <= `distance` (Angstrom) or dipolar
/// prefactor >= `coupling_hz` when set.
struct ClusterCutoff {
  double distance = 8.0;
  std::optional<double> coupling_hz;
};

/// Clusters ordered by size, then lexicographically. Every cluster of size
/// k >= 2 is a clique of admitted pairs, so all its subsets are present too.
struct ClusterSet {
  std::vector<Cluster> clusters;
  int max_order = 1;
  ClusterCutoff cutoff;

  std::size_t count(int order) const;
};

ClusterSet enumerate_clusters(std::span<const BathSpin> spins, int max_order, const ClusterCutoff& cutoff = {});
inline ClusterSet enumerate_clusters(const BathLattice& lattice, int max_order, const ClusterCutoff& cutoff = {}) {
  return enumerate_clusters(lattice.spins(), max_order, cutoff);
}

/// Coherent cluster contribution L_C(tau), normalized so L_C(0) = 1.
ClusterCoherence cluster_coherence(const BathModel& model, const Cluster& cluster, const PulseSequence& seq,
                                   std::span<const double> taus);

/// Product of correlation-corrected factors L~_C = L_C / prod_{C' in C} L~_C'.
/// Grid points where a sub-cluster factor falls below 1e-12 are flagged and
/// that correction is skipped.
CoherenceCurve cce_combine(std::span<const ClusterCoherence> coherences, const ClusterSet& set,
                           const PulseSequence& seq, std::span<const double> taus);

inline constexpr std::size_t kMaxExactSpins = 12;

/// Coherence on the full joint Hilbert space of up to 12 spins, no factorization.
CoherenceCurve exact_coherence(const BathModel& model, const PulseSequence& seq, std::span<const double> taus);

/// Pointwise weighted mean of curves sampled on identical grids.
CoherenceCurve ensemble_average(std::span<const CoherenceCurve> curves, std::span<const double> weights);

struct CceOptions {
  /// 0 selects the hardware concurrency.
  unsigned workers = 0;
  std::function<void(std::size_t done, std::size_t total)> progress;
  /// Noise on one designated bath spin; clusters containing it use the dissipative propagator.
  std::optional<LindbladParams> noise;
  /// When set, only the factor prod_{C containing spin} L~_C is returned:
  /// the ratio of the full result to that of the bath without this spin.
  std::optional<std::size_t> focus_spin;
};

/// Every cluster of `set` that contains `spin`, together with all of their subsets.
ClusterSet clusters_touching(const ClusterSet& set, std::size_t spin);

/// Parallel map over clusters with a fixed-order reduction: output does not
/// depend on the worker count.
CoherenceCurve compute_cce(const BathModel& model, const ClusterSet& set, const PulseSequence& seq,
                           std::span<const double> taus, const CceOptions& options = {});

}  // namespace cespin
