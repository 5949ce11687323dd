#pragma once

#include <numbers>

namespace cespin {

/// CODATA 2018 values in SI units. Every module reads constants from here.
struct PhysicalConstants {
  static constexpr double bohr_magneton = 9.2740100783e-24;      // J/T
  static constexpr double nuclear_magneton = 5.0507837461e-27;   // J/T
  static constexpr double vacuum_permeability = 1.25663706212e-6;  // N/A^2
  static constexpr double planck = 6.62607015e-34;                // J s
  static constexpr double reduced_planck = planck / (2.0 * std::numbers::pi);
};

// Public unit conventions: frequencies in kHz (cyclic), times in us,
// distances in Angstrom, fields in Tesla, gyromagnetic ratios as gamma/2pi in MHz/T.

/// Radians accumulated per (kHz * us). The only place 2*pi enters the dynamics.
inline constexpr double kRadiansPerKhzMicrosecond = 2.0 * std::numbers::pi * 1e-3;

/// Incoherent rates are given in kHz (1e3 per second); converts to 1/us.
inline constexpr double kPerMicrosecondPerKhz = 1e-3;

inline constexpr double kAngstrom = 1e-10;

/// Phase in radians of a cyclic frequency (kHz) acting for a time (us).
constexpr double phase_of(double frequency_khz, double time_us) {
  return kRadiansPerKhzMicrosecond * frequency_khz * time_us;
}

}  // namespace cespin
