#pragma once

#include <array>

#include "cespin/types.hpp"

namespace cespin {

/// Spin-1/2 operators S = sigma/2 in the {up, down} basis.
template <typename Scalar = Complex>
std::array<Eigen::Matrix<Scalar, 2, 2>, 3> spin_half_operators() {
  using M = Eigen::Matrix<Scalar, 2, 2>;
  const Scalar half(0.5), i_half(0.0, 0.5);
  M sx, sy, sz;
  sx << Scalar(0), half, half, Scalar(0);
  sy << Scalar(0), -i_half, i_half, Scalar(0);
  sz << half, Scalar(0), Scalar(0), -half;
  return {sx, sy, sz};
}

/// v . S for a real 3-vector.
template <typename Scalar = Complex>
Eigen::Matrix<Scalar, 2, 2> spin_projection(const Vec3& v) {
  const auto s = spin_half_operators<Scalar>();
  return Scalar(v[0]) * s[0] + Scalar(v[1]) * s[1] + Scalar(v[2]) * s[2];
}

// Register convention: spin 0 is the most significant bit; bit value 0 is "up".
inline int spin_bit(int state, int site, int n_spins) { return (state >> (n_spins - 1 - site)) & 1; }
inline int with_spin_bit(int state, int site, int n_spins, int bit) {
  const int mask = 1 << (n_spins - 1 - site);
  return bit ? (state | mask) : (state & ~mask);
}

/// h += op acting on `site` of an n-spin register (op is 2x2).
template <typename MatrixT, typename Op>
void add_single_site(MatrixT& h, int n_spins, int site, const Op& op) {
  const int dim = 1 << n_spins;
  for (int s = 0; s < dim; ++s) {
    const int b = spin_bit(s, site, n_spins);
    for (int bp = 0; bp < 2; ++bp) h(with_spin_bit(s, site, n_spins, bp), s) += op(bp, b);
  }
}

/// h += sum_ab coupling(a,b) S_i^a S_j^b on an n-spin register.
template <typename MatrixT>
void add_two_site(MatrixT& h, int n_spins, int site_i, int site_j, const Mat3& coupling) {
  using Scalar = typename MatrixT::Scalar;
  const auto s = spin_half_operators<Scalar>();
  Eigen::Matrix<Scalar, 4, 4> op = Eigen::Matrix<Scalar, 4, 4>::Zero();
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      if (coupling(a, b) == 0.0) continue;
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
          op(r, c) += Scalar(coupling(a, b)) * s[a](r >> 1, c >> 1) * s[b](r & 1, c & 1);
    }
  const int dim = 1 << n_spins;
  for (int st = 0; st < dim; ++st) {
    const int bi = spin_bit(st, site_i, n_spins), bj = spin_bit(st, site_j, n_spins);
    for (int pi = 0; pi < 2; ++pi)
      for (int pj = 0; pj < 2; ++pj) {
        const int sp = with_spin_bit(with_spin_bit(st, site_i, n_spins, pi), site_j, n_spins, pj);
        h(sp, st) += op(2 * pi + pj, 2 * bi + bj);
      }
  }
}

/// Dense 2^n operator for a single-site 2x2 operator.
inline CMatrix embed_single_site(const Eigen::Matrix2cd& op, int site, int n_spins) {
  const int dim = 1 << n_spins;
  CMatrix h = CMatrix::Zero(dim, dim);
  add_single_site(h, n_spins, site, op);
  return h;
}

}  // namespace cespin
