#pragma once

#include <string>
#include <vector>

namespace cespin {

enum class SequenceKind { Fid, Hahn, Cpmg };

/// Phase of the final projection pulse in the balanced readout.
enum class ReadoutPhase { HalfPi, ThreeHalvesPi };

/// Free-induction, Hahn echo or CPMG-N timing with ideal instantaneous pulses.
/// Hahn is CPMG with one pi pulse; the pulse interval tau is in us.
struct PulseSequence {
  SequenceKind kind = SequenceKind::Hahn;
  int n_pulses = 1;
  double tau = 0.0;
  ReadoutPhase readout = ReadoutPhase::HalfPi;

  /// tau for FID, 2 N tau otherwise.
  double total_time() const { return kind == SequenceKind::Fid ? tau : 2.0 * n_pulses * tau; }
  /// Free-evolution segments: (tau) for FID, (tau, 2tau, ..., 2tau, tau) otherwise.
  std::vector<double> segments() const;
  PulseSequence with_tau(double new_tau) const;
  /// "FID", "HAHN" or "CPMG-N".
  std::string descriptor() const;
};

PulseSequence make_sequence(SequenceKind kind, int n_pulses, double tau,
                            ReadoutPhase readout = ReadoutPhase::HalfPi);

/// Parses the output of PulseSequence::descriptor().
PulseSequence parse_sequence_descriptor(const std::string& text, double tau = 0.0);

/// Filter pass frequency 1/(2 tau), kHz.
double filter_center_frequency(const PulseSequence& seq);

}  // namespace cespin
