#include "cespin/cce.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <set>
#include <thread>

namespace cespin {
namespace {

constexpr std::size_t kBlockSize = 64;
constexpr double kDegenerateFactor = 1e-12;

using TildeStore = std::map<Cluster, std::vector<Complex>>;

struct BlockResult {
  std::vector<Complex> product;
  std::vector<char> flags;
};

/// Turns L_C into L~_C in place using the stored lower-order factors.
void correct_cluster(std::vector<Complex>& values, const Cluster& cluster, const TildeStore& store,
                     std::vector<char>& flags) {
  const std::size_t k = cluster.size();
  if (k < 2) return;
  std::vector<const std::vector<Complex>*> subs;
  Cluster sub;
  for (unsigned mask = 1; mask + 1 < (1u << k); ++mask) {
    sub.clear();
    for (std::size_t b = 0; b < k; ++b)
      if (mask >> b & 1u) sub.push_back(cluster[b]);
    const auto it = store.find(sub);
    if (it == store.end()) throw ValidationError("cluster set is missing a sub-cluster");
    subs.push_back(&it->second);
  }
  for (std::size_t t = 0; t < values.size(); ++t) {
    Complex denom(1.0, 0.0);
    bool degenerate = false;
    for (const auto* s : subs) {
      if (std::abs((*s)[t]) < kDegenerateFactor) degenerate = true;
      denom *= (*s)[t];
    }
    if (degenerate || std::abs(denom) < kDegenerateFactor) {
      flags[t] = 1;
      values[t] = Complex(1.0, 0.0);
    } else {
      values[t] /= denom;
    }
  }
}

template <int Dim>
std::vector<Complex> fixed_cluster_coherence(const BathModel& model, const Cluster& cluster,
                                             const PulseSequence& seq, std::span<const double> taus) {
  using M = Eigen::Matrix<Complex, Dim, Dim>;
  const auto h = conditional_hamiltonians<M>(model, cluster);
  return conditional_coherence<M>(h.plus, h.minus, seq, taus);
}

std::vector<Complex> coherent_values(const BathModel& model, const Cluster& cluster, const PulseSequence& seq,
                                     std::span<const double> taus) {
  switch (cluster.size()) {
    case 1:
      return fixed_cluster_coherence<2>(model, cluster, seq, taus);
    case 2:
      return fixed_cluster_coherence<4>(model, cluster, seq, taus);
    case 3:
      return fixed_cluster_coherence<8>(model, cluster, seq, taus);
    case 4:
      return fixed_cluster_coherence<16>(model, cluster, seq, taus);
    default:
      throw ValidationError("cluster size must be between 1 and 4");
  }
}

std::vector<std::pair<std::size_t, std::size_t>> order_ranges(const ClusterSet& set) {
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  std::size_t begin = 0;
  for (int order = 1; order <= set.max_order; ++order) {
    std::size_t end = begin;
    while (end < set.clusters.size() && set.clusters[end].size() == static_cast<std::size_t>(order)) ++end;
    ranges.emplace_back(begin, end);
    begin = end;
  }
  if (begin != set.clusters.size()) throw ValidationError("cluster set is not ordered by cluster size");
  return ranges;
}

/// Shared fixed-block reduction. `evaluate(i)` returns L_C for cluster i.
/// Only clusters with `contributes(cluster)` enter the product; the rest
/// just provide correction factors for their supersets.
template <typename Evaluate>
CoherenceCurve reduce_clusters(const ClusterSet& set, const PulseSequence& seq, std::span<const double> taus,
                               unsigned workers, const std::function<void(std::size_t, std::size_t)>& progress,
                               Evaluate&& evaluate, const std::function<bool(const Cluster&)>& contributes = {}) {
  CoherenceCurve curve = make_curve(seq, taus);
  const std::size_t n_t = taus.size();
  std::vector<char> flags(n_t, 0);
  TildeStore store;
  std::size_t done_total = 0;
  std::mutex progress_mutex;

  for (const auto& [begin, end] : order_ranges(set)) {
    const std::size_t count = end - begin;
    const std::size_t n_blocks = (count + kBlockSize - 1) / kBlockSize;
    const bool keep = count > 0 && static_cast<int>(set.clusters[begin].size()) < set.max_order;
    std::vector<std::vector<Complex>> kept(keep ? count : 0);
    std::vector<BlockResult> blocks(n_blocks);
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;

    auto work = [&]() {
      try {
        for (std::size_t b; (b = next.fetch_add(1)) < n_blocks;) {
          BlockResult r{std::vector<Complex>(n_t, Complex(1.0, 0.0)), std::vector<char>(n_t, 0)};
          std::vector<char> ignored(n_t, 0);
          const std::size_t lo = begin + b * kBlockSize, hi = std::min(end, lo + kBlockSize);
          for (std::size_t i = lo; i < hi; ++i) {
            std::vector<Complex> values = evaluate(i);
            const bool counted = !contributes || contributes(set.clusters[i]);
            correct_cluster(values, set.clusters[i], store, counted ? r.flags : ignored);
            if (counted)
              for (std::size_t t = 0; t < n_t; ++t) r.product[t] *= values[t];
            if (keep) kept[i - begin] = std::move(values);
          }
          blocks[b] = std::move(r);
          if (progress) {
            std::lock_guard lock(progress_mutex);
            done_total += hi - lo;
            progress(done_total, set.clusters.size());
          }
        }
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = n_blocks;
      }
    };

    const unsigned n_workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(n_blocks)));
    if (n_workers <= 1) {
      work();
    } else {
      std::vector<std::jthread> pool;
      for (unsigned w = 0; w < n_workers; ++w) pool.emplace_back(work);
    }
    if (failure) std::rethrow_exception(failure);

    for (const auto& r : blocks)
      for (std::size_t t = 0; t < n_t; ++t) {
        curve.values[t] *= r.product[t];
        flags[t] |= r.flags[t];
      }
    for (std::size_t i = 0; i < kept.size(); ++i) store.emplace(set.clusters[begin + i], std::move(kept[i]));
  }
  for (std::size_t t = 0; t < n_t; ++t)
    if (flags[t]) curve.nonconvergent.push_back(t);
  return curve;
}

bool pair_admitted(const BathSpin& a, const BathSpin& b, const ClusterCutoff& cutoff) {
  const double r = (a.position - b.position).norm();
  if (r <= cutoff.distance) return true;
  if (!cutoff.coupling_hz) return false;
  const double c = std::abs(dipolar_prefactor_hz(a.species.gyromagnetic_ratio, b.species.gyromagnetic_ratio, r));
  return c >= *cutoff.coupling_hz;
}

}  // namespace

std::size_t ClusterSet::count(int order) const {
  return static_cast<std::size_t>(std::count_if(clusters.begin(), clusters.end(), [order](const Cluster& c) {
    return c.size() == static_cast<std::size_t>(order);
  }));
}

ClusterSet enumerate_clusters(std::span<const BathSpin> spins, int max_order, const ClusterCutoff& cutoff) {
  if (max_order < 1 || max_order > kMaxClusterOrder) throw ValidationError("CCE order must be 1, 2, 3 or 4");
  ClusterSet set;
  set.max_order = max_order;
  set.cutoff = cutoff;
  const std::size_t n = spins.size();
  for (std::size_t i = 0; i < n; ++i) set.clusters.push_back({i});
  if (max_order == 1) return set;

  // Forward adjacency (j > i), sorted.
  std::vector<std::vector<std::size_t>> adj(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (pair_admitted(spins[i], spins[j], cutoff)) adj[i].push_back(j);
  auto linked = [&adj](std::size_t i, std::size_t j) {
    return std::binary_search(adj[i].begin(), adj[i].end(), j);
  };

  std::vector<Cluster> previous;
  for (std::size_t i = 0; i < n; ++i) previous.push_back({i});
  for (int order = 2; order <= max_order; ++order) {
    std::vector<Cluster> current;
    for (const auto& c : previous) {
      for (std::size_t j : adj[c.back()]) {
        bool clique = true;
        for (std::size_t m = 0; m + 1 < c.size() && clique; ++m) clique = linked(c[m], j);
        if (!clique) continue;
        Cluster next = c;
        next.push_back(j);
        current.push_back(std::move(next));
      }
    }
    set.clusters.insert(set.clusters.end(), current.begin(), current.end());
    previous = std::move(current);
  }
  return set;
}

ClusterCoherence cluster_coherence(const BathModel& model, const Cluster& cluster, const PulseSequence& seq,
                                   std::span<const double> taus) {
  check_tau_grid(taus);
  for (std::size_t i : cluster)
    if (i >= model.size()) throw ValidationError("cluster index outside the bath");
  return {cluster, coherent_values(model, cluster, seq, taus)};
}

CoherenceCurve cce_combine(std::span<const ClusterCoherence> coherences, const ClusterSet& set,
                           const PulseSequence& seq, std::span<const double> taus) {
  std::map<Cluster, const ClusterCoherence*> lookup;
  for (const auto& c : coherences) {
    if (c.values.size() != taus.size()) throw ValidationError("cluster coherence sampled on a different grid");
    lookup.emplace(c.cluster, &c);
  }
  return reduce_clusters(set, seq, taus, 1, {}, [&](std::size_t i) {
    const auto it = lookup.find(set.clusters[i]);
    if (it == lookup.end()) throw ValidationError("no coherence supplied for a cluster of the set");
    return it->second->values;
  });
}

ClusterSet clusters_touching(const ClusterSet& set, std::size_t spin) {
  std::set<Cluster> closure;
  Cluster sub;
  for (const auto& c : set.clusters) {
    if (std::find(c.begin(), c.end(), spin) == c.end()) continue;
    for (unsigned mask = 1; mask < (1u << c.size()); ++mask) {
      sub.clear();
      for (std::size_t b = 0; b < c.size(); ++b)
        if (mask >> b & 1u) sub.push_back(c[b]);
      closure.insert(sub);
    }
  }
  ClusterSet out;
  out.max_order = set.max_order;
  out.cutoff = set.cutoff;
  out.clusters.assign(closure.begin(), closure.end());
  std::stable_sort(out.clusters.begin(), out.clusters.end(),
                   [](const Cluster& a, const Cluster& b) { return a.size() < b.size(); });
  return out;
}

CoherenceCurve compute_cce(const BathModel& model, const ClusterSet& set, const PulseSequence& seq,
                           std::span<const double> taus, const CceOptions& options) {
  check_tau_grid(taus);
  unsigned workers = options.workers ? options.workers : std::max(1u, std::thread::hardware_concurrency());
  const bool noisy = options.noise && options.noise->active();
  ClusterSet focused;
  std::function<bool(const Cluster&)> contributes;
  if (options.focus_spin) {
    const std::size_t s = *options.focus_spin;
    if (s >= model.size()) throw ValidationError("focus spin outside the bath");
    focused = clusters_touching(set, s);
    contributes = [s](const Cluster& c) { return std::find(c.begin(), c.end(), s) != c.end(); };
  }
  const ClusterSet& active = options.focus_spin ? focused : set;
  return reduce_clusters(
      active, seq, taus, workers, options.progress,
      [&](std::size_t i) {
        const Cluster& c = active.clusters[i];
        if (noisy && std::find(c.begin(), c.end(), options.noise->target_spin) != c.end())
          return noisy_cluster_coherence(model, c, seq, taus, *options.noise).values;
        return coherent_values(model, c, seq, taus);
      },
      contributes);
}

CoherenceCurve exact_coherence(const BathModel& model, const PulseSequence& seq, std::span<const double> taus) {
  CoherenceCurve curve = make_curve(seq, taus);
  const std::size_t n = model.size();
  if (n > kMaxExactSpins) throw ValidationError("exact evaluation supports at most 12 bath spins");
  if (n == 0) return curve;

  Cluster all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  const auto h = conditional_hamiltonians<CMatrix>(model, all);
  const Eigen::SelfAdjointEigenSolver<CMatrix> plus(h.plus), minus(h.minus);
  // Work in the H+ eigenbasis: U+ is diagonal, U- = W D- W^dagger.
  const CMatrix w = plus.eigenvectors().adjoint() * minus.eigenvectors();
  const Eigen::VectorXd& lp = plus.eigenvalues();
  const Eigen::VectorXd& lm = minus.eigenvalues();
  const auto dim = static_cast<Eigen::Index>(1) << n;

  auto diag_phases = [](const Eigen::VectorXd& lambda, double t) {
    CVector d(lambda.size());
    for (Eigen::Index k = 0; k < lambda.size(); ++k) d[k] = std::polar(1.0, -phase_of(lambda[k], t));
    return d;
  };
  auto minus_prop = [&](double t) -> CMatrix { return w * diag_phases(lm, t).asDiagonal() * w.adjoint(); };

  for (std::size_t k = 0; k < taus.size(); ++k) {
    const double tau = taus[k];
    if (tau == 0.0) continue;
    if (seq.kind == SequenceKind::Fid) {
      const CVector dp = diag_phases(lp, tau), dm = diag_phases(lm, tau);
      Complex acc(0.0, 0.0);
      for (Eigen::Index r = 0; r < dim; ++r) {
        Complex m_rr(0.0, 0.0);
        for (Eigen::Index c = 0; c < dim; ++c) m_rr += std::norm(w(r, c)) * dm[c];
        acc += std::conj(m_rr) * dp[r];
      }
      curve.values[k] = acc / static_cast<double>(dim);
      continue;
    }
    const CVector p1 = diag_phases(lp, tau);
    const CMatrix m1 = minus_prop(tau);
    CVector p2;
    CMatrix m2;
    if (seq.n_pulses > 1) {
      p2 = diag_phases(lp, 2.0 * tau);
      m2 = minus_prop(2.0 * tau);
    }
    CMatrix ua = p1.asDiagonal();
    CMatrix ub = m1;
    for (int s = 1; s <= seq.n_pulses; ++s) {
      const bool last = (s == seq.n_pulses);
      const CVector& p = last ? p1 : p2;
      const CMatrix& m = last ? m1 : m2;
      if (s % 2 == 0) {  // branch a under H+, branch b under H-
        ua = p.asDiagonal() * ua;
        ub = (m * ub).eval();
      } else {
        ua = (m * ua).eval();
        ub = p.asDiagonal() * ub;
      }
    }
    curve.values[k] = ub.conjugate().cwiseProduct(ua).sum() / static_cast<double>(dim);
  }
  return curve;
}

CoherenceCurve ensemble_average(std::span<const CoherenceCurve> curves, std::span<const double> weights) {
  if (curves.empty() || curves.size() != weights.size())
    throw ValidationError("ensemble needs one weight per curve");
  double total = 0.0;
  for (double w : weights) total += w;
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("ensemble weights must sum to 1");
  CoherenceCurve out = curves.front();
  for (const auto& c : curves)
    if (c.tau != out.tau || c.time != out.time) throw ValidationError("ensemble curves use different grids");
  if (curves.size() == 1) return out;
  std::vector<char> flagged(out.size(), 0);
  for (std::size_t t = 0; t < out.size(); ++t) {
    Complex acc(0.0, 0.0);
    for (std::size_t c = 0; c < curves.size(); ++c) acc += weights[c] * curves[c].values[t];
    out.values[t] = acc;
  }
  for (const auto& c : curves)
    for (std::size_t t : c.nonconvergent) flagged[t] = 1;
  out.nonconvergent.clear();
  for (std::size_t t = 0; t < flagged.size(); ++t)
    if (flagged[t]) out.nonconvergent.push_back(t);
  return out;
}

}  // namespace cespin
