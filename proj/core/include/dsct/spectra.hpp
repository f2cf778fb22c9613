#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace dsct {

/// Sampled X-ray spectrum on a uniform energy grid (keV).
struct SpectrumTable {
  std::vector<double> energies;
  std::vector<double> weights;
  double bin_width = 1.0;
  std::string label;

  std::size_t bins() const { return energies.size(); }
  /// Sum of weight * bin_width.
  double area() const;
  /// Throws ValidationError on non-uniform spacing, negative or all-zero weights.
  void validate() const;
};

/// Mass attenuation coefficients of the two basis materials (phi: bone, theta: water).
struct MaterialTable {
  std::vector<double> energies;
  std::vector<double> phi;
  std::vector<double> theta;

  std::size_t bins() const { return energies.size(); }
  void validate() const;
};

/// CSV with header `energy_kev,weight`. Spacing is inferred from the first two rows
/// (1 keV for a single row). Errors name the offending row.
SpectrumTable load_spectrum(const std::filesystem::path& path);
/// CSV with header `energy_kev,phi,theta`.
MaterialTable load_materials(const std::filesystem::path& path);

/// Scales weights so that area() == 1. Throws ValidationError on an all-zero spectrum.
SpectrumTable normalize(const SpectrumTable& spectrum);

struct AlignedTables {
  SpectrumTable spectrum;
  MaterialTable materials;
};

/// Keeps the bins with positive weight and linearly interpolates the material
/// coefficients onto those bin centers.
AlignedTables align(const SpectrumTable& spectrum, const MaterialTable& materials);

/// The per-bin factors used by projection and reconstruction:
/// weight[m] = S_m * delta_E, with phi[m], theta[m] on the same bins.
struct EnergyBins {
  std::vector<double> weight;
  std::vector<double> phi;
  std::vector<double> theta;

  std::size_t size() const { return weight.size(); }
  /// Throws ValidationError on mismatched lengths or an empty table.
  void validate() const;
};

/// normalize -> align -> multiply by bin width.
EnergyBins prepare_bins(const SpectrumTable& spectrum, const MaterialTable& materials);

/// Single-energy model: one bin of unit weight.
EnergyBins monochromatic_bins(double phi, double theta);

/// Location of the bundled approximate tables (80 kV and 140 kV, 1 mm Cu, bone/water).
std::filesystem::path bundled_data_dir();
std::filesystem::path bundled_low_spectrum();
std::filesystem::path bundled_high_spectrum();
std::filesystem::path bundled_materials();

}  // namespace dsct
