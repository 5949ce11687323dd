#include "cespin/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace cespin {
namespace {

constexpr double kMinSeparation = 0.1;  // Angstrom

std::vector<std::string> tokenize(std::string_view line) {
  if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
  std::vector<std::string> out;
  std::istringstream in{std::string(line)};
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

double parse_number(const std::string& tok, int line) {
  try {
    std::size_t used = 0;
    double v = std::stod(tok, &used);
    if (used != tok.size() || !std::isfinite(v)) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw ParseError("expected a number, got '" + tok + "'", line);
  }
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool position_less(const Vec3& a, const Vec3& b) {
  return std::lexicographical_compare(a.data(), a.data() + 3, b.data(), b.data() + 3);
}

}  // namespace

void CrystalDefinition::validate() const {
  if (!(cell_volume() > 1e-9)) throw ValidationError("lattice vectors are not linearly independent");
  if (basis.empty()) throw ValidationError("crystal definition has no basis sites");
  for (const auto& [element, sp] : species) {
    if (!(sp.abundance >= 0.0 && sp.abundance <= 1.0))
      throw ValidationError("species " + element + ": abundance outside [0,1]");
    // Zero-abundance entries are geometry-only and may be spinless.
    const bool half = std::abs(sp.spin - 0.5) < 1e-12;
    const bool spinless = std::abs(sp.spin) < 1e-12 && sp.abundance == 0.0;
    if (!half && !spinless)
      throw ValidationError("species " + element + ": only spin-1/2 nuclei are supported");
  }
  for (const auto& site : basis) {
    if (!species.contains(site.element))
      throw ValidationError("basis element '" + site.element + "' has no species entry");
    for (int k = 0; k < 3; ++k)
      if (!(site.fractional[k] >= 0.0 && site.fractional[k] < 1.0))
        throw ValidationError("fractional coordinate outside [0,1) for element " + site.element);
  }
  for (std::size_t i = 0; i < basis.size(); ++i) {
    for (std::size_t j = i; j < basis.size(); ++j) {
      for (int na = -1; na <= 1; ++na)
        for (int nb = -1; nb <= 1; ++nb)
          for (int nc = -1; nc <= 1; ++nc) {
            if (i == j && na == 0 && nb == 0 && nc == 0) continue;
            const Vec3 df = basis[j].fractional + Vec3(na, nb, nc) - basis[i].fractional;
            if (to_cartesian(df).norm() < kMinSeparation)
              throw ValidationError("basis sites " + std::to_string(i) + " and " + std::to_string(j) +
                                    " closer than 0.1 Angstrom");
          }
    }
  }
}

CrystalDefinition parse_crystal_definition(std::string_view text) {
  CrystalDefinition def;
  enum class Section { None, Lattice, Species, Basis } section = Section::None;
  int lattice_rows = 0;
  int section_line = 0;
  bool seen_lattice = false, seen_species = false, seen_basis = false;

  std::istringstream in{std::string(text)};
  int line_no = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    const auto tok = tokenize(raw);
    if (tok.empty()) continue;
    if (section == Section::None) {
      if (tok[0] == "name") {
        std::string name;
        for (std::size_t k = 1; k < tok.size(); ++k) name += (k > 1 ? " " : "") + tok[k];
        def.name = name;
      } else if (tok[0] == "lattice_vectors" && tok.size() == 1) {
        section = Section::Lattice;
        seen_lattice = true;
      } else if (tok[0] == "species" && tok.size() == 1) {
        section = Section::Species;
        seen_species = true;
      } else if (tok[0] == "basis" && tok.size() == 1) {
        section = Section::Basis;
        seen_basis = true;
      } else {
        throw ParseError("unknown directive '" + tok[0] + "'", line_no);
      }
      section_line = line_no;
      continue;
    }
    if (tok[0] == "end" && tok.size() == 1) {
      if (section == Section::Lattice && lattice_rows != 3)
        throw ParseError("lattice_vectors needs exactly 3 rows", line_no);
      section = Section::None;
      continue;
    }
    switch (section) {
      case Section::Lattice: {
        if (tok.size() != 3) throw ParseError("lattice vector row needs 3 numbers", line_no);
        if (lattice_rows >= 3) throw ParseError("more than 3 lattice vector rows", line_no);
        for (int k = 0; k < 3; ++k) def.lattice_vectors(lattice_rows, k) = parse_number(tok[k], line_no);
        ++lattice_rows;
        break;
      }
      case Section::Species: {
        if (tok.size() != 5)
          throw ParseError("species row needs: element isotope gamma_MHz_per_T spin abundance", line_no);
        SpinSpecies sp{tok[1], parse_number(tok[2], line_no), parse_number(tok[3], line_no),
                       parse_number(tok[4], line_no)};
        if (!(sp.abundance >= 0.0 && sp.abundance <= 1.0))
          throw ParseError("abundance of " + tok[0] + " outside [0,1]", line_no);
        const bool half = std::abs(sp.spin - 0.5) < 1e-12;
        const bool spinless = std::abs(sp.spin) < 1e-12 && sp.abundance == 0.0;
        if (!half && !spinless)
          throw ParseError("species " + tok[0] + " has spin " + tok[3] + "; only spin-1/2 is supported",
                           line_no);
        if (!def.species.emplace(tok[0], sp).second)
          throw ParseError("duplicate species entry for " + tok[0], line_no);
        break;
      }
      case Section::Basis: {
        if (tok.size() != 4) throw ParseError("basis row needs: element x y z", line_no);
        BasisSite site{tok[0], Vec3(parse_number(tok[1], line_no), parse_number(tok[2], line_no),
                                    parse_number(tok[3], line_no))};
        for (int k = 0; k < 3; ++k)
          if (!(site.fractional[k] >= 0.0 && site.fractional[k] < 1.0))
            throw ParseError("fractional coordinate outside [0,1)", line_no);
        if (!def.species.contains(site.element))
          throw ParseError("unknown element label '" + site.element + "'", line_no);
        def.basis.push_back(std::move(site));
        break;
      }
      case Section::None:
        break;
    }
  }
  if (section != Section::None) throw ParseError("section not closed with 'end'", section_line);
  if (!seen_lattice) throw ParseError("missing lattice_vectors section", 0);
  if (!seen_species) throw ParseError("missing species section", 0);
  if (!seen_basis) throw ParseError("missing basis section", 0);
  try {
    def.validate();
  } catch (const ValidationError& e) {
    throw ParseError(e.what(), 0);
  }
  return def;
}

CrystalDefinition load_crystal_definition(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open crystal definition " + path.string(), 0);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_crystal_definition(buf.str());
}

std::string format_crystal_definition(const CrystalDefinition& def) {
  std::ostringstream out;
  out << std::setprecision(17);
  if (!def.name.empty()) out << "name " << def.name << "\n";
  out << "lattice_vectors\n";
  for (int r = 0; r < 3; ++r)
    out << "  " << def.lattice_vectors(r, 0) << " " << def.lattice_vectors(r, 1) << " "
        << def.lattice_vectors(r, 2) << "\n";
  out << "end\nspecies\n";
  for (const auto& [element, sp] : def.species)
    out << "  " << element << " " << sp.label << " " << sp.gyromagnetic_ratio << " " << sp.spin << " "
        << sp.abundance << "\n";
  out << "end\nbasis\n";
  for (const auto& s : def.basis)
    out << "  " << s.element << " " << s.fractional[0] << " " << s.fractional[1] << " "
        << s.fractional[2] << "\n";
  out << "end\n";
  return out.str();
}

double site_uniform(std::uint64_t seed, const Eigen::Vector3i& cell, std::size_t basis_index) {
  std::uint64_t h = splitmix64(seed);
  for (int k = 0; k < 3; ++k)
    h = splitmix64(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(cell[k])) << (8 * k));
  h = splitmix64(h ^ static_cast<std::uint64_t>(basis_index));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

BathLattice::BathLattice(std::vector<LatticeSite> sites, std::map<std::string, SpinSpecies> species,
                         Vec3 defect_position, Vec3 box_extent_nm, std::uint64_t seed)
    : sites_(std::move(sites)),
      species_(std::move(species)),
      defect_position_(std::move(defect_position)),
      box_extent_nm_(std::move(box_extent_nm)),
      seed_(seed) {
  rebuild_spins();
}

BathLattice BathLattice::from_spins(std::vector<BathSpin> spins) {
  std::vector<LatticeSite> sites;
  std::map<std::string, SpinSpecies> species;
  sites.reserve(spins.size());
  for (std::size_t i = 0; i < spins.size(); ++i) {
    if (!(spins[i].position.norm() > 0.0)) throw ValidationError("bath spin placed on the defect");
    species.emplace(spins[i].species.label, spins[i].species);
    sites.push_back({spins[i].species.label, spins[i].position, Eigen::Vector3i::Zero(), i, true});
  }
  BathLattice out;
  out.sites_ = std::move(sites);
  out.species_ = std::move(species);
  out.spins_ = std::move(spins);
  return out;
}

void BathLattice::rebuild_spins() {
  spins_.clear();
  for (const auto& s : sites_) {
    if (!s.active) continue;
    spins_.push_back({species_.at(s.element), s.position});
  }
}

BathLattice BathLattice::with_forced_spin(const std::string& element, double distance) const {
  if (!species_.contains(element)) throw ValidationError("unknown element '" + element + "'");
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < sites_.size(); ++i) {
    const auto& s = sites_[i];
    if (s.element != element || s.active) continue;
    if (!best) {
      best = i;
      continue;
    }
    const double d = std::abs(s.position.norm() - distance);
    const double db = std::abs(sites_[*best].position.norm() - distance);
    if (d < db || (d == db && position_less(s.position, sites_[*best].position))) best = i;
  }
  if (!best) throw ValidationError("no inactive " + element + " site available to force");
  BathLattice out = *this;
  out.sites_[*best].active = true;
  out.rebuild_spins();
  return out;
}

BathLattice BathLattice::without_spins_within(const std::string& element, double radius) const {
  BathLattice out = *this;
  for (auto& s : out.sites_)
    if (s.element == element && s.position.norm() <= radius) s.active = false;
  out.rebuild_spins();
  return out;
}

BathLattice BathLattice::truncated(double radius) const {
  BathLattice out = *this;
  std::erase_if(out.sites_, [radius](const LatticeSite& s) { return s.position.norm() > radius; });
  out.rebuild_spins();
  return out;
}

BathLattice build_supercell(const CrystalDefinition& def, const Vec3& extent_nm,
                            std::size_t defect_site_index, std::uint64_t seed) {
  if (!(extent_nm.array() > 0.0).all()) throw ValidationError("supercell extent must be positive");
  if (defect_site_index >= def.basis.size()) throw ValidationError("defect site index out of range");
  const auto& defect_site = def.basis[defect_site_index];
  if (defect_site.element != "Y")
    throw ValidationError("defect site " + std::to_string(defect_site_index) + " is not a yttrium site");

  const Vec3 defect = def.to_cartesian(defect_site.fractional);
  const Vec3 half = extent_nm * 5.0;  // nm -> Angstrom, halved
  const Mat3 to_frac = def.lattice_vectors.transpose().inverse();

  Eigen::Vector3i lo = Eigen::Vector3i::Constant(std::numeric_limits<int>::max());
  Eigen::Vector3i hi = Eigen::Vector3i::Constant(std::numeric_limits<int>::min());
  for (int corner = 0; corner < 8; ++corner) {
    Vec3 offset;
    for (int k = 0; k < 3; ++k) offset[k] = (corner >> k & 1) ? half[k] : -half[k];
    const Vec3 f = to_frac * (defect + offset);
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], static_cast<int>(std::floor(f[k])) - 1);
      hi[k] = std::max(hi[k], static_cast<int>(std::ceil(f[k])) + 1);
    }
  }

  std::vector<LatticeSite> sites;
  for (int na = lo[0]; na <= hi[0]; ++na)
    for (int nb = lo[1]; nb <= hi[1]; ++nb)
      for (int nc = lo[2]; nc <= hi[2]; ++nc) {
        const Eigen::Vector3i cell(na, nb, nc);
        for (std::size_t b = 0; b < def.basis.size(); ++b) {
          if (cell.isZero() && b == defect_site_index) continue;
          const Vec3 r = def.to_cartesian(cell.cast<double>() + def.basis[b].fractional) - defect;
          // half-open box [-E/2, E/2) tiles space without double counting
          if ((r.array() < -half.array()).any() || (r.array() >= half.array()).any()) continue;
          const auto& sp = def.species.at(def.basis[b].element);
          bool active = false;
          if (sp.abundance >= 1.0)
            active = true;
          else if (sp.abundance > 0.0)
            active = site_uniform(seed, cell, b) < sp.abundance;
          sites.push_back({def.basis[b].element, r, cell, b, active});
        }
      }
  return BathLattice(std::move(sites), def.species, defect, extent_nm, seed);
}

std::vector<BathSpin> sites_within(const BathLattice& lattice, double radius,
                                   const std::optional<std::string>& species_filter) {
  std::vector<BathSpin> out;
  const auto& sites = lattice.sites();
  for (const auto& s : sites) {
    if (!s.active || s.position.norm() > radius) continue;
    if (species_filter && s.element != *species_filter && lattice.species().at(s.element).label != *species_filter)
      continue;
    out.push_back({lattice.species().at(s.element), s.position});
  }
  std::sort(out.begin(), out.end(), [](const BathSpin& a, const BathSpin& b) {
    const double da = a.position.norm(), db = b.position.norm();
    if (da != db) return da < db;
    return position_less(a.position, b.position);
  });
  return out;
}

std::vector<LatticeSite> lattice_sites_within(const BathLattice& lattice, double radius,
                                              const std::string& element) {
  std::vector<LatticeSite> out;
  for (const auto& s : lattice.sites())
    if (s.element == element && s.position.norm() <= radius) out.push_back(s);
  std::sort(out.begin(), out.end(), [](const LatticeSite& a, const LatticeSite& b) {
    const double da = a.position.norm(), db = b.position.norm();
    if (da != db) return da < db;
    return position_less(a.position, b.position);
  });
  return out;
}

std::vector<double> occupancy_distribution(int n_sites, double abundance) {
  if (n_sites < 0) throw ValidationError("negative site count");
  if (!(abundance >= 0.0 && abundance <= 1.0)) throw ValidationError("abundance outside [0,1]");
  std::vector<double> p(static_cast<std::size_t>(n_sites) + 1, 0.0);
  if (abundance == 0.0) {
    p[0] = 1.0;
    return p;
  }
  if (abundance == 1.0) {
    p.back() = 1.0;
    return p;
  }
  const double lq = std::log1p(-abundance), lp = std::log(abundance);
  for (int k = 0; k <= n_sites; ++k) {
    const double log_binom = std::lgamma(n_sites + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n_sites - k + 1.0);
    p[static_cast<std::size_t>(k)] = std::exp(log_binom + k * lp + (n_sites - k) * lq);
  }
  return p;
}

}  // namespace cespin
