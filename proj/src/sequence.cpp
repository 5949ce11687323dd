#include "cespin/sequence.hpp"

#include <cmath>

#include "cespin/types.hpp"

namespace cespin {

std::vector<double> PulseSequence::segments() const {
  if (kind == SequenceKind::Fid) return {tau};
  std::vector<double> seg;
  seg.reserve(static_cast<std::size_t>(n_pulses) + 1);
  seg.push_back(tau);
  for (int k = 1; k < n_pulses; ++k) seg.push_back(2.0 * tau);
  seg.push_back(tau);
  return seg;
}

PulseSequence PulseSequence::with_tau(double new_tau) const {
  PulseSequence out = *this;
  out.tau = new_tau;
  return out;
}

std::string PulseSequence::descriptor() const {
  switch (kind) {
    case SequenceKind::Fid:
      return "FID";
    case SequenceKind::Hahn:
      return "HAHN";
    case SequenceKind::Cpmg:
      return "CPMG-" + std::to_string(n_pulses);
  }
  return {};
}

PulseSequence make_sequence(SequenceKind kind, int n_pulses, double tau, ReadoutPhase readout) {
  if (!(tau >= 0.0) || !std::isfinite(tau)) throw ValidationError("pulse interval must be finite and >= 0");
  switch (kind) {
    case SequenceKind::Fid:
      if (n_pulses != 0) throw ValidationError("FID takes no refocusing pulses");
      break;
    case SequenceKind::Hahn:
      if (n_pulses != 1) throw ValidationError("Hahn echo has exactly one pi pulse");
      break;
    case SequenceKind::Cpmg:
      if (n_pulses < 1) throw ValidationError("CPMG needs at least one pi pulse");
      break;
  }
  return {kind, n_pulses, tau, readout};
}

PulseSequence parse_sequence_descriptor(const std::string& text, double tau) {
  if (text == "FID") return make_sequence(SequenceKind::Fid, 0, tau);
  if (text == "HAHN") return make_sequence(SequenceKind::Hahn, 1, tau);
  if (text.rfind("CPMG-", 0) == 0) {
    try {
      std::size_t used = 0;
      const int n = std::stoi(text.substr(5), &used);
      if (used == text.size() - 5) return make_sequence(SequenceKind::Cpmg, n, tau);
    } catch (const std::exception&) {
    }
  }
  throw ValidationError("unknown sequence descriptor '" + text + "'");
}

double filter_center_frequency(const PulseSequence& seq) {
  if (seq.kind == SequenceKind::Fid) throw ValidationError("FID has no filter frequency");
  if (!(seq.tau > 0.0)) throw ValidationError("filter frequency needs tau > 0");
  return 1e3 / (2.0 * seq.tau);
}

}  // namespace cespin
