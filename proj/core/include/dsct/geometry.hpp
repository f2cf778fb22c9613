#pragma once

// Fan-beam acquisition geometry and the ray-driven system matrix.
//
// Coordinates: the rotation center O is the origin. At view angle beta the
// source sits at -D1 * (cos beta, sin beta) and the flat detector is centered
// at D2 * (cos beta, sin beta), perpendicular to the source-O axis. Detector
// element j is centered at lateral offset (j - (n_D - 1) / 2) * l_D along
// (-sin beta, cos beta).
//
// Pixels: column index runs along +x, row index along +y, flattened as
// row * n_R + col. Pixel intervals are half-open in +x/+y.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dsct {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

struct FanBeamGeometry {
  std::size_t views = 0;
  std::size_t detectors = 0;
  double detector_size = 0.0;       ///< l_D
  double source_to_object = 0.0;    ///< D1
  double object_to_detector = 0.0;  ///< D2
  std::vector<double> angles;       ///< radians, strictly increasing in [0, 2*pi)

  /// Uniform full rotation: angles[i] = 2*pi*i / views.
  static FanBeamGeometry full_rotation(std::size_t views, std::size_t detectors, double detector_size,
                                       double source_to_object, double object_to_detector);

  double half_detector_length() const { return 0.5 * static_cast<double>(detectors) * detector_size; }
  std::size_t ray_count() const { return views * detectors; }

  /// Throws ValidationError if any invariant fails.
  void validate() const;

  friend bool operator==(const FanBeamGeometry&, const FanBeamGeometry&) = default;
};

struct ImageGrid {
  std::size_t size = 0;     ///< n_R pixels per side
  double pixel_size = 0.0;  ///< physical side length of one pixel
  Point2 origin{};          ///< physical center of the grid

  /// Square grid circumscribing the FOV disc: pixel_size = 2 * fov / size.
  static ImageGrid covering_fov(std::size_t size, double fov);

  std::size_t pixel_count() const { return size * size; }
  double extent() const { return static_cast<double>(size) * pixel_size; }
  double min_x() const { return origin.x - 0.5 * extent(); }
  double min_y() const { return origin.y - 0.5 * extent(); }
  Point2 pixel_center(std::size_t row, std::size_t col) const;

  /// Throws ValidationError unless size >= 1 and pixel_size > 0.
  void validate() const;
  /// Additionally requires the grid to cover the FOV disc of the geometry.
  void validate_covers(const FanBeamGeometry& geom) const;

  friend bool operator==(const ImageGrid&, const ImageGrid&) = default;
};

/// Radius of the disc irradiated from every view: D1 * L_H / sqrt(L_H^2 + (D1 + D2)^2).
double fov_radius(const FanBeamGeometry& geom);

/// Source position and the center of detector element `detector` at view `view`.
std::pair<Point2, Point2> ray_endpoints(const FanBeamGeometry& geom, std::size_t view, std::size_t detector);

/// Stable identifier of a (geometry, grid) combination.
std::string geometry_hash(const FanBeamGeometry& geom, const ImageGrid& grid);

/// Read-only view of one system-matrix row.
struct SparseRow {
  std::span<const std::uint32_t> columns;
  std::span<const double> weights;
  double norm_sq = 0.0;

  bool empty() const { return columns.empty(); }
  double dot(std::span<const double> image) const;
  /// image += scale * row
  void axpy(double scale, std::span<double> image) const;
};

/// Compressed sparse row system matrix, one row per ray in angle-major order.
/// Immutable after construction.
class ProjectionMatrix {
 public:
  ProjectionMatrix() = default;
  ProjectionMatrix(ImageGrid grid, std::string key, std::size_t rows, std::vector<std::uint64_t> offsets,
                   std::vector<std::uint32_t> columns, std::vector<double> weights);

  std::size_t rows() const { return row_count_; }
  std::size_t cols() const { return grid_.pixel_count(); }
  std::size_t nonzeros() const { return weights_.size(); }
  const ImageGrid& grid() const { return grid_; }
  const std::string& key() const { return key_; }

  SparseRow row(std::size_t l) const;
  double row_norm_sq(std::size_t l) const { return row_norms_[l]; }

  /// sinogram = R * image
  void apply(std::span<const double> image, std::span<double> sinogram) const;
  /// image = R^T * sinogram
  void apply_transpose(std::span<const double> sinogram, std::span<double> image) const;

  const std::vector<std::uint64_t>& offsets() const { return offsets_; }
  const std::vector<std::uint32_t>& columns() const { return columns_; }
  const std::vector<double>& weights() const { return weights_; }

 private:
  ImageGrid grid_{};
  std::string key_;
  std::size_t row_count_ = 0;
  std::vector<std::uint64_t> offsets_{0};
  std::vector<std::uint32_t> columns_;
  std::vector<double> weights_;
  std::vector<double> row_norms_;
};

/// Exact intersection lengths of the segment a->b with each pixel of the grid,
/// appended to (columns, weights) in traversal order.
void trace_segment(const ImageGrid& grid, Point2 a, Point2 b, std::vector<std::uint32_t>& columns,
                   std::vector<double>& weights);

ProjectionMatrix build_projection_matrix(const FanBeamGeometry& geom, const ImageGrid& grid);

/// Loads R from cache_dir/<hash>/ if present and consistent, else builds and stores it.
ProjectionMatrix load_or_build_projection_matrix(const FanBeamGeometry& geom, const ImageGrid& grid,
                                                 const std::filesystem::path& cache_dir);

/// Geometry document: {"n_s", "n_d", "l_d", "d1", "d2", "n_r"}. Missing keys take
/// the defaults below; unknown keys are rejected.
struct GeometrySpec {
  std::size_t views = 60;
  std::size_t detectors = 256;
  double detector_size = 0.2;
  double source_to_object = 490.0;
  double object_to_detector = 390.0;
  std::size_t grid_size = 256;

  FanBeamGeometry geometry() const;
  /// Grid circumscribing the FOV of geometry().
  ImageGrid grid() const;

  static GeometrySpec parse(const std::string& json_text);
  static GeometrySpec load(const std::filesystem::path& path);
  std::string to_json() const;

  friend bool operator==(const GeometrySpec&, const GeometrySpec&) = default;
};

}  // namespace dsct
