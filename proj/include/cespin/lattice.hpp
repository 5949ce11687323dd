#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cespin/types.hpp"

namespace cespin {

struct SpinSpecies {
  std::string label;              // isotope label, e.g. "89Y"
  double gyromagnetic_ratio = 0;  // gamma/2pi in MHz/T, signed
  double spin = 0.5;
  double abundance = 0;           // probability that a site of this element is spin-active
};

struct BasisSite {
  std::string element;
  Vec3 fractional;
};

/// Unit cell with basis and a per-element isotope table.
struct CrystalDefinition {
  std::string name;
  Mat3 lattice_vectors;  // rows are a, b, c in Angstrom
  std::vector<BasisSite> basis;
  std::map<std::string, SpinSpecies> species;

  double cell_volume() const { return lattice_vectors.determinant(); }
  Vec3 to_cartesian(const Vec3& fractional) const {
    return lattice_vectors.transpose() * fractional;
  }
  void validate() const;
};

/// Parses the line-oriented crystal format (sections `lattice_vectors`,
/// `species`, `basis`, each closed by `end`). Errors carry line numbers.
CrystalDefinition parse_crystal_definition(std::string_view text);
CrystalDefinition load_crystal_definition(const std::filesystem::path& path);
std::string format_crystal_definition(const CrystalDefinition& def);

struct BathSpin {
  SpinSpecies species;
  Vec3 position;  // Angstrom, relative to the defect
};

/// A lattice position of the supercell, spin-active or not.
struct LatticeSite {
  std::string element;
  Vec3 position;  // Angstrom, relative to the defect
  Eigen::Vector3i cell;
  std::size_t basis_index = 0;
  bool active = false;
};

/// Immutable finite bath around a defect. Spins are addressed in
/// defect-relative coordinates.
class BathLattice {
 public:
  BathLattice() = default;
  BathLattice(std::vector<LatticeSite> sites, std::map<std::string, SpinSpecies> species,
              Vec3 defect_position, Vec3 box_extent_nm, std::uint64_t seed);

  /// A bath made of explicit spins only (toy and test baths).
  static BathLattice from_spins(std::vector<BathSpin> spins);

  const std::vector<BathSpin>& spins() const { return spins_; }
  const std::vector<LatticeSite>& sites() const { return sites_; }
  const std::map<std::string, SpinSpecies>& species() const { return species_; }
  const Vec3& defect_position() const { return defect_position_; }
  const Vec3& box_extent() const { return box_extent_nm_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t size() const { return spins_.size(); }

  /// Copy with the inactive site of `element` closest to `distance` turned spin-active.
  BathLattice with_forced_spin(const std::string& element, double distance) const;
  /// Copy with every active `element` site inside `radius` deactivated.
  BathLattice without_spins_within(const std::string& element, double radius) const;
  /// Copy keeping only sites with |position| <= radius.
  BathLattice truncated(double radius) const;

 private:
  void rebuild_spins();

  std::vector<LatticeSite> sites_;
  std::map<std::string, SpinSpecies> species_;
  std::vector<BathSpin> spins_;
  Vec3 defect_position_ = Vec3::Zero();
  Vec3 box_extent_nm_ = Vec3::Zero();
  std::uint64_t seed_ = 0;
};

/// Fills a box (extent in nm) centred on the defect basis site, removes the
/// defect's own nucleus and draws isotopes site by site from a counter-based
/// generator keyed by (seed, cell, basis index).
BathLattice build_supercell(const CrystalDefinition& def, const Vec3& extent_nm,
                            std::size_t defect_site_index, std::uint64_t seed);

/// Uniform draw in [0,1) for one lattice site; stable under box enlargement.
double site_uniform(std::uint64_t seed, const Eigen::Vector3i& cell, std::size_t basis_index);

/// Active spins with |r| <= radius, by distance then lexicographic position.
std::vector<BathSpin> sites_within(const BathLattice& lattice, double radius,
                                   const std::optional<std::string>& species_filter = std::nullopt);

/// All lattice sites of `element` within radius, regardless of isotope draw.
std::vector<LatticeSite> lattice_sites_within(const BathLattice& lattice, double radius,
                                              const std::string& element);

/// Binomial distribution B(n_sites, abundance) over occupancy counts 0..n_sites.
std::vector<double> occupancy_distribution(int n_sites, double abundance);

}  // namespace cespin
