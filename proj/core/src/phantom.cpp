#include "dsct/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dsct/error.hpp"
#include "dsct/hashing.hpp"
#include "dsct/tensor_io.hpp"

namespace dsct {

ImagePair ImagePair::zeros(const ImageGrid& grid) {
  return ImagePair{Image(grid.size, grid.size), Image(grid.size, grid.size), grid};
}

void ImagePair::validate() const {
  if (!f.same_shape(g)) throw ValidationError("image pair: f and g shapes differ");
  if (f.rows != grid.size || f.cols != grid.size) throw ValidationError("image pair: shape does not match grid");
  auto check = [](const Image& img, const char* name) {
    for (double v : img.values) {
      if (!std::isfinite(v)) throw ValidationError(std::string("image pair: non-finite value in channel ") + name);
    }
  };
  check(f, "f");
  check(g, "g");
}

bool EllipseSpec::contains(Point2 p) const {
  const double dx = p.x - center.x;
  const double dy = p.y - center.y;
  const double c = std::cos(rotation);
  const double s = std::sin(rotation);
  const double u = (dx * c + dy * s) / semi_a;
  const double v = (-dx * s + dy * c) / semi_b;
  return u * u + v * v <= 1.0;
}

std::vector<EllipseSpec> sample_ellipses(std::mt19937_64& rng, double fov, const PhantomParams& params) {
  std::poisson_distribution<int> count_dist(params.mean_count);
  std::normal_distribution<double> intensity_dist(params.intensity_mean, params.intensity_sigma);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const int count = count_dist(rng);
  std::vector<EllipseSpec> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    EllipseSpec e;
    e.intensity = std::max(0.0, intensity_dist(rng));
    const double span = params.max_axis_fraction - params.min_axis_fraction;
    e.semi_a = fov * (params.min_axis_fraction + span * unit(rng));
    e.semi_b = fov * (params.min_axis_fraction + span * unit(rng));
    e.rotation = std::numbers::pi * unit(rng);
    // Area-uniform center in the disc that keeps the bounding circle inside the FOV.
    const double reach = fov - std::max(e.semi_a, e.semi_b);
    const double radius = reach * std::sqrt(unit(rng));
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    e.center = {radius * std::cos(phase), radius * std::sin(phase)};
    out.push_back(e);
  }
  return out;
}

Image rasterize(const ImageGrid& grid, std::span<const EllipseSpec> ellipses) {
  Image img(grid.size, grid.size);
  for (std::size_t r = 0; r < grid.size; ++r) {
    for (std::size_t c = 0; c < grid.size; ++c) {
      const Point2 p = grid.pixel_center(r, c);
      bool covered = false;
      double value = 0.0;
      for (const auto& e : ellipses) {
        if (e.contains(p)) {
          value = covered ? std::max(value, e.intensity) : e.intensity;
          covered = true;
        }
      }
      img.at(r, c) = value;
    }
  }
  return img;
}

std::pair<std::vector<EllipseSpec>, std::vector<EllipseSpec>> phantom_ellipses(double fov, std::uint64_t seed,
                                                                               const PhantomParams& params) {
  if (!(fov > 0.0)) throw ValidationError("phantom: FOV radius must be > 0");
  std::mt19937_64 rng_f(derive_seed(seed, 0xF));
  std::mt19937_64 rng_g(derive_seed(seed, 0x6));
  auto f = sample_ellipses(rng_f, fov, params);
  auto g = sample_ellipses(rng_g, fov, params);
  return {std::move(f), std::move(g)};
}

ImagePair generate_phantom(const ImageGrid& grid, double fov, std::uint64_t seed, const PhantomParams& params) {
  grid.validate();
  const auto [ef, eg] = phantom_ellipses(fov, seed, params);
  return ImagePair{rasterize(grid, ef), rasterize(grid, eg), grid};
}

void write_image(const std::filesystem::path& path, const Image& image) {
  std::vector<float> data(image.values.begin(), image.values.end());
  write_tensor<float>(path, {image.rows, image.cols}, data);
}

Image read_image(const std::filesystem::path& path) {
  const auto t = read_tensor<float>(path);
  if (t.shape.size() != 2) throw ValidationError(path.string() + ": expected a 2-D image tensor");
  Image img(t.shape[0], t.shape[1]);
  std::copy(t.values.begin(), t.values.end(), img.values.begin());
  return img;
}

namespace {

void apply_rescale(Image& img, const DensityRescale& r, const char* channel) {
  if (!(r.source_max > r.source_min)) {
    throw ValidationError(std::string("rescale for channel ") + channel + ": source range is empty");
  }
  const double scale = (r.target_max - r.target_min) / (r.source_max - r.source_min);
  for (double& v : img.values) v = r.target_min + (v - r.source_min) * scale;
}

}  // namespace

ImagePair ingest_image_pair(const std::filesystem::path& f_path, const std::filesystem::path& g_path,
                            const ImageGrid& grid, std::optional<DensityRescale> f_rescale,
                            std::optional<DensityRescale> g_rescale) {
  ImagePair pair{read_image(f_path), read_image(g_path), grid};
  if (!pair.f.same_shape(pair.g)) {
    throw ValidationError("ingest: shape mismatch between " + f_path.string() + " (" + std::to_string(pair.f.rows) +
                          "x" + std::to_string(pair.f.cols) + ") and " + g_path.string() + " (" +
                          std::to_string(pair.g.rows) + "x" + std::to_string(pair.g.cols) + ")");
  }
  if (pair.f.rows != grid.size || pair.f.cols != grid.size) {
    throw ValidationError("ingest: images are " + std::to_string(pair.f.rows) + "x" + std::to_string(pair.f.cols) +
                          " but the grid is " + std::to_string(grid.size) + "x" + std::to_string(grid.size));
  }
  auto check = [](const Image& img, const std::filesystem::path& p, const char* channel) {
    for (double v : img.values) {
      if (!std::isfinite(v)) {
        throw ValidationError(std::string("ingest: non-finite value in channel ") + channel + " (" + p.string() + ")");
      }
    }
  };
  check(pair.f, f_path, "f");
  check(pair.g, g_path, "g");
  if (f_rescale) apply_rescale(pair.f, *f_rescale, "f");
  if (g_rescale) apply_rescale(pair.g, *g_rescale, "g");
  return pair;
}

}  // namespace dsct
