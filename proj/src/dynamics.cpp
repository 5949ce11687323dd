#include "cespin/dynamics.hpp"

#include <algorithm>
#include <cmath>

#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

namespace cespin {
namespace {

int register_size(Eigen::Index dim) {
  int n = 0;
  while ((Eigen::Index{1} << n) < dim) ++n;
  if ((Eigen::Index{1} << n) != dim) throw ValidationError("operator dimension is not a power of two");
  return n;
}

struct NoiseOperators {
  CMatrix sx, sy, sz;  // Pauli matrices of the target site
  double relax = 0.0, dephase = 0.0;  // 1/us
};

NoiseOperators noise_operators(const LindbladParams& params, int target_site, int n_spins) {
  if (params.relaxation < 0.0 || params.dephasing < 0.0) throw ValidationError("Lindblad rates must be >= 0");
  if (target_site < 0 || target_site >= n_spins) throw ValidationError("Lindblad target outside register");
  const auto s = spin_half_operators<Complex>();
  return {embed_single_site(2.0 * s[0], target_site, n_spins), embed_single_site(2.0 * s[1], target_site, n_spins),
          embed_single_site(2.0 * s[2], target_site, n_spins), params.relaxation * kPerMicrosecondPerKhz,
          params.dephasing * kPerMicrosecondPerKhz};
}

CMatrix apply_generator(const CMatrix& x, const CMatrix& hl, const CMatrix& hr, const NoiseOperators& noise) {
  const Complex minus_i(0.0, -kRadiansPerKhzMicrosecond);
  CMatrix dx = minus_i * (hl * x - x * hr);
  if (noise.dephase > 0.0) dx += noise.dephase * (noise.sz * x * noise.sz - x);
  if (noise.relax > 0.0)
    dx += 0.5 * noise.relax * (noise.sx * x * noise.sx + noise.sy * x * noise.sy - 2.0 * x);
  return dx;
}

double spectral_radius_khz(const CMatrix& h) {
  return Eigen::SelfAdjointEigenSolver<CMatrix>(h, Eigen::EigenvaluesOnly).eigenvalues().cwiseAbs().maxCoeff();
}

CMatrix rk4(const CMatrix& x0, const CMatrix& hl, const CMatrix& hr, const NoiseOperators& noise, double t_us) {
  if (t_us == 0.0) return x0;
  // Step bounded by 1/(100 * fastest rate), counting coherent frequencies in rad/us.
  const double omega = kRadiansPerKhzMicrosecond * std::max(spectral_radius_khz(hl), spectral_radius_khz(hr)) * 2.0;
  const double fastest = std::max({noise.relax, noise.dephase, omega, 1e-12});
  const double max_step = 1.0 / (100.0 * fastest);
  const auto steps = static_cast<long>(std::ceil(t_us / max_step));
  const double h = t_us / static_cast<double>(steps);
  CMatrix x = x0;
  for (long k = 0; k < steps; ++k) {
    const CMatrix k1 = apply_generator(x, hl, hr, noise);
    const CMatrix k2 = apply_generator(x + 0.5 * h * k1, hl, hr, noise);
    const CMatrix k3 = apply_generator(x + 0.5 * h * k2, hl, hr, noise);
    const CMatrix k4 = apply_generator(x + h * k3, hl, hr, noise);
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return x;
}

CMatrix unvec(const CVector& v, Eigen::Index dim) { return Eigen::Map<const CMatrix>(v.data(), dim, dim); }

CVector vec(const CMatrix& m) { return Eigen::Map<const CVector>(m.data(), m.size()); }

bool use_exponential(LindbladMethod method, Eigen::Index dim) {
  // exact superoperator exponential up to two spins
  return method == LindbladMethod::Exponential || (method == LindbladMethod::Automatic && dim <= 4);
}

void check_density(const CMatrix& rho) {
  if (rho.rows() != rho.cols()) throw ValidationError("density operator must be square");
  if ((rho - rho.adjoint()).norm() > 1e-9) throw ValidationError("density operator is not Hermitian");
  if (std::abs(rho.trace() - Complex(1.0)) > 1e-9) throw ValidationError("density operator trace is not 1");
  const CMatrix herm = 0.5 * (rho + rho.adjoint());
  if (Eigen::SelfAdjointEigenSolver<CMatrix>(herm, Eigen::EigenvaluesOnly).eigenvalues().minCoeff() < -1e-9)
    throw ValidationError("density operator is not positive semidefinite");
}

}  // namespace

CMatrix lindblad_superoperator(const CMatrix& h_left, const CMatrix& h_right, const LindbladParams& params,
                               int target_site) {
  const Eigen::Index dim = h_left.rows();
  const int n = register_size(dim);
  const NoiseOperators noise = noise_operators(params, target_site, n);
  const CMatrix id = CMatrix::Identity(dim, dim);
  const CMatrix id2 = CMatrix::Identity(dim * dim, dim * dim);
  const Complex minus_i(0.0, -kRadiansPerKhzMicrosecond);
  CMatrix s = minus_i * (Eigen::kroneckerProduct(id, h_left).eval() -
                         Eigen::kroneckerProduct(h_right.transpose(), id).eval());
  if (noise.dephase > 0.0)
    s += noise.dephase * (Eigen::kroneckerProduct(noise.sz.transpose(), noise.sz).eval() - id2);
  if (noise.relax > 0.0)
    s += 0.5 * noise.relax *
         (Eigen::kroneckerProduct(noise.sx.transpose(), noise.sx).eval() +
          Eigen::kroneckerProduct(noise.sy.transpose(), noise.sy).eval() - 2.0 * id2);
  return s;
}

CMatrix propagate_two_sided(const CMatrix& x, const CMatrix& h_left, const CMatrix& h_right,
                            const LindbladParams& params, int target_site, double t_us, LindbladMethod method) {
  if (!(t_us >= 0.0)) throw ValidationError("propagation time must be >= 0");
  const Eigen::Index dim = x.rows();
  if (use_exponential(method, dim)) {
    const CMatrix gen = lindblad_superoperator(h_left, h_right, params, target_site);
    const CMatrix prop = (gen * t_us).exp();
    return unvec(prop * vec(x), dim);
  }
  const NoiseOperators noise = noise_operators(params, target_site, register_size(dim));
  return rk4(x, h_left, h_right, noise, t_us);
}

CMatrix lindblad_propagate(const CMatrix& rho, const CMatrix& h, const LindbladParams& params, double t_us,
                           LindbladMethod method) {
  check_density(rho);
  if (h.rows() != rho.rows() || (h - h.adjoint()).norm() > 1e-9 * std::max(1.0, h.norm()))
    throw ValidationError("Hamiltonian must be Hermitian and match the density operator");
  return propagate_two_sided(rho, h, h, params, static_cast<int>(params.target_spin), t_us, method);
}

ClusterCoherence noisy_cluster_coherence(const BathModel& model, const Cluster& cluster, const PulseSequence& seq,
                                         std::span<const double> taus, const LindbladParams& params,
                                         LindbladMethod method) {
  check_tau_grid(taus);
  const auto where = std::find(cluster.begin(), cluster.end(), params.target_spin);
  if (where == cluster.end()) throw ValidationError("Lindblad target spin is not part of the cluster");
  const int target = static_cast<int>(where - cluster.begin());
  const auto h = conditional_hamiltonians<CMatrix>(model, cluster);
  const Eigen::Index dim = h.plus.rows();
  const CMatrix rho = CMatrix::Identity(dim, dim) / static_cast<double>(dim);

  ClusterCoherence out{cluster, {}};
  out.values.reserve(taus.size());
  if (use_exponential(method, dim)) {
    // Segment a = (+,-) conditioning, segment b = (-,+).
    const CMatrix gen_a = lindblad_superoperator(h.plus, h.minus, params, target);
    const CMatrix gen_b = lindblad_superoperator(h.minus, h.plus, params, target);
    for (double tau : taus) {
      const auto segs = seq.with_tau(tau).segments();
      const CMatrix ea1 = (gen_a * tau).exp(), eb1 = (gen_b * tau).exp();
      CMatrix ea2, eb2;
      if (segs.size() > 2) {
        ea2 = ea1 * ea1;
        eb2 = eb1 * eb1;
      }
      CVector x = vec(rho);
      for (std::size_t k = 0; k < segs.size(); ++k) {
        const bool full = (k != 0 && k + 1 != segs.size());
        const CMatrix& e = (k % 2 == 0) ? (full ? ea2 : ea1) : (full ? eb2 : eb1);
        x = e * x;
      }
      out.values.push_back(unvec(x, dim).trace());
    }
    return out;
  }
  const NoiseOperators noise = noise_operators(params, target, register_size(dim));
  for (double tau : taus) {
    CMatrix x = rho;
    const auto segs = seq.with_tau(tau).segments();
    for (std::size_t k = 0; k < segs.size(); ++k)
      x = (k % 2 == 0) ? rk4(x, h.plus, h.minus, noise, segs[k]) : rk4(x, h.minus, h.plus, noise, segs[k]);
    out.values.push_back(x.trace());
  }
  return out;
}

std::vector<double> ReadoutPair::contrast() const {
  std::vector<double> out(signal_3pi2.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = signal_3pi2[k] - signal_pi2[k];
  return out;
}

ReadoutPair balanced_readout(const CoherenceCurve& curve, double initialization_fidelity, double background) {
  if (!(initialization_fidelity >= 0.0 && initialization_fidelity <= 1.0))
    throw ValidationError("initialization fidelity outside [0,1]");
  ReadoutPair out;
  out.signal_3pi2.reserve(curve.size());
  out.signal_pi2.reserve(curve.size());
  for (const Complex& v : curve.values) {
    const double s = initialization_fidelity * v.real();
    out.signal_3pi2.push_back(background + 0.5 * (1.0 + s));
    out.signal_pi2.push_back(background + 0.5 * (1.0 - s));
  }
  return out;
}

}  // namespace cespin
