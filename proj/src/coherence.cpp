#include "cespin/coherence.hpp"

namespace cespin {

std::vector<double> CoherenceCurve::real() const {
  std::vector<double> out(values.size());
  for (std::size_t k = 0; k < values.size(); ++k) out[k] = values[k].real();
  return out;
}

std::vector<double> CoherenceCurve::magnitude() const {
  std::vector<double> out(values.size());
  for (std::size_t k = 0; k < values.size(); ++k) out[k] = std::abs(values[k]);
  return out;
}

void check_tau_grid(std::span<const double> taus) {
  for (std::size_t k = 0; k < taus.size(); ++k) {
    if (!(taus[k] >= 0.0) || !std::isfinite(taus[k])) throw ValidationError("tau grid must be finite and >= 0");
    if (k > 0 && !(taus[k] > taus[k - 1])) throw ValidationError("tau grid must be strictly increasing");
  }
}

CoherenceCurve make_curve(const PulseSequence& seq, std::span<const double> taus) {
  check_tau_grid(taus);
  CoherenceCurve c;
  c.tau.assign(taus.begin(), taus.end());
  c.time.reserve(taus.size());
  for (double t : taus) c.time.push_back(seq.with_tau(t).total_time());
  c.values.assign(taus.size(), Complex(1.0, 0.0));
  c.meta.sequence = seq.descriptor();
  return c;
}

}  // namespace cespin
