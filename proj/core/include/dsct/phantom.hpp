#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "dsct/geometry.hpp"
#include "dsct/image.hpp"

namespace dsct {

/// Co-registered bone (f) and water (g) density images on one grid.
struct ImagePair {
  Image f;
  Image g;
  ImageGrid grid;

  static ImagePair zeros(const ImageGrid& grid);
  /// Throws ValidationError on shape mismatch or non-finite values.
  void validate() const;
};

struct EllipseSpec {
  Point2 center;
  double semi_a = 1.0;
  double semi_b = 1.0;
  double rotation = 0.0;  ///< radians
  double intensity = 1.0;

  bool contains(Point2 p) const;
};

/// Distribution parameters of the random ellipse phantoms.
struct PhantomParams {
  double mean_count = 2.0;        ///< Poisson lambda
  double intensity_mean = 1.0;    ///< Gaussian mu
  double intensity_sigma = 0.1;   ///< Gaussian sigma
  double min_axis_fraction = 0.1; ///< semi-axes ~ U[min, max] * fov
  double max_axis_fraction = 0.5;
};

/// Draws one channel's ellipse set; every ellipse lies inside the disc of radius fov.
std::vector<EllipseSpec> sample_ellipses(std::mt19937_64& rng, double fov, const PhantomParams& params = {});

/// Each pixel whose center lies inside at least one ellipse takes the maximum
/// intensity of the covering ellipses; all others are 0.
Image rasterize(const ImageGrid& grid, std::span<const EllipseSpec> ellipses);

/// Independent ellipse sets for f and g, each from its own stream derived from seed.
ImagePair generate_phantom(const ImageGrid& grid, double fov, std::uint64_t seed, const PhantomParams& params = {});

/// The ellipse sets generate_phantom(…, seed) rasterizes, as {f, g}.
std::pair<std::vector<EllipseSpec>, std::vector<EllipseSpec>> phantom_ellipses(double fov, std::uint64_t seed,
                                                                               const PhantomParams& params = {});

/// Linear map of [source_min, source_max] onto [target_min, target_max].
struct DensityRescale {
  double source_min = 0.0;
  double source_max = 1.0;
  double target_min = 0.0;
  double target_max = 1.0;
};

/// Loads an externally supplied f32 ground-truth pair of shape n_R x n_R.
ImagePair ingest_image_pair(const std::filesystem::path& f_path, const std::filesystem::path& g_path,
                            const ImageGrid& grid, std::optional<DensityRescale> f_rescale = std::nullopt,
                            std::optional<DensityRescale> g_rescale = std::nullopt);

/// Writes f and g as f32 tensors of shape [n_R, n_R].
void write_image(const std::filesystem::path& path, const Image& image);
Image read_image(const std::filesystem::path& path);

}  // namespace dsct
