#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dsct/geometry.hpp"
#include "dsct/phantom.hpp"
#include "dsct/spectra.hpp"

namespace dsct {

/// Log-projections indexed [view][detector], row-major.
struct Sinogram {
  std::size_t views = 0;
  std::size_t detectors = 0;
  std::vector<double> values;

  Sinogram() = default;
  Sinogram(std::size_t v, std::size_t d) : views(v), detectors(d), values(v * d, 0.0) {}
  std::size_t size() const { return values.size(); }
  friend bool operator==(const Sinogram&, const Sinogram&) = default;
};

/// Low-energy (p1) and high-energy (p2) sinograms of one acquisition.
struct SinogramPair {
  Sinogram low;
  Sinogram high;
  std::string geometry_hash;
};

/// -ln sum_m w_m exp(-phi_m * bone - theta_m * water), evaluated with a
/// min-shift so the largest exponential is exp(0).
double polychromatic_projection(double bone_path, double water_path, const EnergyBins& bins);

/// Polychromatic projections of both spectra for every ray of R.
SinogramPair forward_project(const ImagePair& pair, const ProjectionMatrix& R, const FanBeamGeometry& geom,
                             const EnergyBins& low, const EnergyBins& high);

/// Replaces each entry by -ln(max(N, 1) / i0), N ~ Poisson(i0 * exp(-p)). Each
/// entry draws from its own counter-based stream, so output is independent of
/// the thread count.
SinogramPair add_poisson_noise(const SinogramPair& sino, double i0, std::uint64_t seed);

/// Persists p1.tsr / p2.tsr (f32, [n_S, n_D]) under dir.
void write_sinograms(const std::filesystem::path& dir, const SinogramPair& sino);
SinogramPair read_sinograms(const std::filesystem::path& dir, const std::string& geometry_hash);

}  // namespace dsct
