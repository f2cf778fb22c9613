#include "dsct/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numbers>
#include <sstream>

#include "dsct/error.hpp"
#include "dsct/hashing.hpp"
#include "dsct/parallel.hpp"
#include "dsct/tensor_io.hpp"

namespace dsct {

FanBeamGeometry FanBeamGeometry::full_rotation(std::size_t views, std::size_t detectors, double detector_size,
                                               double source_to_object, double object_to_detector) {
  FanBeamGeometry g;
  g.views = views;
  g.detectors = detectors;
  g.detector_size = detector_size;
  g.source_to_object = source_to_object;
  g.object_to_detector = object_to_detector;
  g.angles.resize(views);
  for (std::size_t i = 0; i < views; ++i) {
    g.angles[i] = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(views);
  }
  g.validate();
  return g;
}

void FanBeamGeometry::validate() const {
  if (views < 1) throw ValidationError("geometry: n_S must be >= 1");
  if (detectors < 1) throw ValidationError("geometry: n_D must be >= 1");
  if (!(detector_size > 0.0)) throw ValidationError("geometry: l_D must be > 0");
  if (!(source_to_object > 0.0)) throw ValidationError("geometry: D1 must be > 0");
  if (!(object_to_detector >= 0.0)) throw ValidationError("geometry: D2 must be >= 0");
  if (angles.size() != views) throw ValidationError("geometry: angle count differs from n_S");
  for (std::size_t i = 0; i < angles.size(); ++i) {
    if (!(angles[i] >= 0.0 && angles[i] < 2.0 * std::numbers::pi)) {
      throw ValidationError("geometry: angle " + std::to_string(i) + " outside [0, 2pi)");
    }
    if (i > 0 && !(angles[i] > angles[i - 1])) {
      throw ValidationError("geometry: angles must be strictly increasing");
    }
  }
}

ImageGrid ImageGrid::covering_fov(std::size_t size, double fov) {
  if (size < 1) throw ValidationError("grid: n_R must be >= 1");
  if (!(fov > 0.0)) throw ValidationError("grid: FOV radius must be > 0");
  return ImageGrid{size, 2.0 * fov / static_cast<double>(size), Point2{}};
}

Point2 ImageGrid::pixel_center(std::size_t row, std::size_t col) const {
  return {min_x() + (static_cast<double>(col) + 0.5) * pixel_size,
          min_y() + (static_cast<double>(row) + 0.5) * pixel_size};
}

void ImageGrid::validate() const {
  if (size < 1) throw ValidationError("grid: n_R must be >= 1");
  if (!(pixel_size > 0.0)) throw ValidationError("grid: pixel size must be > 0");
}

void ImageGrid::validate_covers(const FanBeamGeometry& geom) const {
  validate();
  // Relative slack for the circumscribing grid built from the same radius.
  if (extent() < 2.0 * fov_radius(geom) * (1.0 - 1e-12)) {
    throw ValidationError("grid: does not cover the FOV disc");
  }
}

double fov_radius(const FanBeamGeometry& geom) {
  const double lh = geom.half_detector_length();
  const double sdd = geom.source_to_object + geom.object_to_detector;
  return geom.source_to_object * lh / std::sqrt(lh * lh + sdd * sdd);
}

std::pair<Point2, Point2> ray_endpoints(const FanBeamGeometry& geom, std::size_t view, std::size_t detector) {
  if (view >= geom.views || detector >= geom.detectors) {
    throw ValidationError("ray index out of range: view " + std::to_string(view) + ", detector " +
                          std::to_string(detector));
  }
  const double c = std::cos(geom.angles[view]);
  const double s = std::sin(geom.angles[view]);
  const double offset =
      (static_cast<double>(detector) - 0.5 * static_cast<double>(geom.detectors - 1)) * geom.detector_size;
  const Point2 source{-geom.source_to_object * c, -geom.source_to_object * s};
  const Point2 element{geom.object_to_detector * c - offset * s, geom.object_to_detector * s + offset * c};
  return {source, element};
}

std::string geometry_hash(const FanBeamGeometry& geom, const ImageGrid& grid) {
  std::ostringstream ss;
  ss.precision(17);
  ss << "fan:" << geom.views << ':' << geom.detectors << ':' << geom.detector_size << ':'
     << geom.source_to_object << ':' << geom.object_to_detector << ":angles";
  for (double a : geom.angles) ss << ':' << a;
  ss << ";grid:" << grid.size << ':' << grid.pixel_size << ':' << grid.origin.x << ':' << grid.origin.y;
  return to_hex(fnv1a64(ss.str()));
}

double SparseRow::dot(std::span<const double> image) const {
  double acc = 0.0;
  for (std::size_t k = 0; k < columns.size(); ++k) acc += weights[k] * image[columns[k]];
  return acc;
}

void SparseRow::axpy(double scale, std::span<double> image) const {
  for (std::size_t k = 0; k < columns.size(); ++k) image[columns[k]] += scale * weights[k];
}

ProjectionMatrix::ProjectionMatrix(ImageGrid grid, std::string key, std::size_t rows,
                                   std::vector<std::uint64_t> offsets, std::vector<std::uint32_t> columns,
                                   std::vector<double> weights)
    : grid_(grid),
      key_(std::move(key)),
      row_count_(rows),
      offsets_(std::move(offsets)),
      columns_(std::move(columns)),
      weights_(std::move(weights)) {
  if (offsets_.size() != rows + 1 || offsets_.front() != 0 || offsets_.back() != weights_.size() ||
      columns_.size() != weights_.size()) {
    throw ValidationError("projection matrix: inconsistent CSR arrays");
  }
  const std::size_t n = grid_.pixel_count();
  row_norms_.assign(rows, 0.0);
  for (std::size_t l = 0; l < rows; ++l) {
    if (offsets_[l] > offsets_[l + 1]) throw ValidationError("projection matrix: offsets not monotone");
    double acc = 0.0;
    for (auto k = offsets_[l]; k < offsets_[l + 1]; ++k) {
      if (columns_[k] >= n) throw ValidationError("projection matrix: column out of range");
      if (!(weights_[k] >= 0.0)) throw ValidationError("projection matrix: negative weight");
      acc += weights_[k] * weights_[k];
    }
    row_norms_[l] = acc;
  }
}

SparseRow ProjectionMatrix::row(std::size_t l) const {
  if (l >= row_count_) throw ValidationError("ray index " + std::to_string(l) + " out of range");
  const auto begin = offsets_[l];
  const auto count = offsets_[l + 1] - begin;
  return SparseRow{std::span<const std::uint32_t>(columns_).subspan(begin, count),
                   std::span<const double>(weights_).subspan(begin, count), row_norms_[l]};
}

void ProjectionMatrix::apply(std::span<const double> image, std::span<double> sinogram) const {
  if (image.size() != cols() || sinogram.size() != rows()) {
    throw ValidationError("projection matrix: apply size mismatch");
  }
  parallel_for(rows(), [&](std::size_t l) { sinogram[l] = row(l).dot(image); });
}

void ProjectionMatrix::apply_transpose(std::span<const double> sinogram, std::span<double> image) const {
  if (image.size() != cols() || sinogram.size() != rows()) {
    throw ValidationError("projection matrix: apply_transpose size mismatch");
  }
  std::fill(image.begin(), image.end(), 0.0);
  for (std::size_t l = 0; l < rows(); ++l) row(l).axpy(sinogram[l], image);
}

namespace {

// Walks the parameters of one family of grid lines (x = const or y = const)
// crossed by a(t) = start + t * delta, in increasing t.
class PlaneCursor {
 public:
  PlaneCursor(double start, double delta, double grid_min, double pixel, std::size_t count, double t_from)
      : start_(start), delta_(delta), grid_min_(grid_min), pixel_(pixel) {
    if (delta == 0.0) {
      done_ = true;
      return;
    }
    const double pos = (start + t_from * delta - grid_min) / pixel;
    const auto n = static_cast<long long>(count);
    if (delta > 0.0) {
      index_ = std::clamp(static_cast<long long>(std::floor(pos)), 0LL, n);
      step_ = 1;
      end_ = n + 1;
    } else {
      index_ = std::clamp(static_cast<long long>(std::ceil(pos)), 0LL, n);
      step_ = -1;
      end_ = -1;
    }
    while (!done_ && alpha() <= t_from) advance();
  }

  double next() const { return done_ ? std::numeric_limits<double>::infinity() : alpha(); }
  void advance() {
    index_ += step_;
    if (index_ == end_) done_ = true;
  }

 private:
  double alpha() const { return (grid_min_ + static_cast<double>(index_) * pixel_ - start_) / delta_; }

  double start_, delta_, grid_min_, pixel_;
  long long index_ = 0, step_ = 1, end_ = 0;
  bool done_ = false;
};

// Clips the parameter interval against [lo, hi) on one axis. Returns false if
// the segment is parallel to the axis and outside the half-open slab.
bool clip_axis(double start, double delta, double lo, double hi, double& t_lo, double& t_hi) {
  if (delta == 0.0) return start >= lo && start < hi;
  double ta = (lo - start) / delta;
  double tb = (hi - start) / delta;
  if (ta > tb) std::swap(ta, tb);
  t_lo = std::max(t_lo, ta);
  t_hi = std::min(t_hi, tb);
  return true;
}

}  // namespace

void trace_segment(const ImageGrid& grid, Point2 a, Point2 b, std::vector<std::uint32_t>& columns,
                   std::vector<double>& weights) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double length = std::hypot(dx, dy);
  if (length == 0.0) return;

  const double x0 = grid.min_x();
  const double y0 = grid.min_y();
  const double ps = grid.pixel_size;
  const std::size_t n = grid.size;

  double t_lo = 0.0;
  double t_hi = 1.0;
  if (!clip_axis(a.x, dx, x0, x0 + grid.extent(), t_lo, t_hi)) return;
  if (!clip_axis(a.y, dy, y0, y0 + grid.extent(), t_lo, t_hi)) return;
  if (!(t_hi > t_lo)) return;

  PlaneCursor xs(a.x, dx, x0, ps, n, t_lo);
  PlaneCursor ys(a.y, dy, y0, ps, n, t_lo);
  const std::size_t first = columns.size();

  double t = t_lo;
  while (t < t_hi) {
    const double tx = xs.next();
    const double ty = ys.next();
    const double t_next = std::min({tx, ty, t_hi});
    if (t_next > t) {
      // The midpoint decides the pixel, which realizes the half-open tie-break.
      const double mid = 0.5 * (t + t_next);
      const double col = std::floor((a.x + mid * dx - x0) / ps);
      const double row = std::floor((a.y + mid * dy - y0) / ps);
      if (col >= 0.0 && row >= 0.0 && col < static_cast<double>(n) && row < static_cast<double>(n)) {
        const auto j = static_cast<std::uint32_t>(static_cast<std::size_t>(row) * n + static_cast<std::size_t>(col));
        const double w = (t_next - t) * length;
        if (columns.size() > first && columns.back() == j) {
          weights.back() += w;
        } else {
          columns.push_back(j);
          weights.push_back(w);
        }
      }
    }
    t = t_next;
    if (tx == t_next) xs.advance();
    if (ty == t_next) ys.advance();
  }
}

ProjectionMatrix build_projection_matrix(const FanBeamGeometry& geom, const ImageGrid& grid) {
  geom.validate();
  grid.validate_covers(geom);
  if (grid.pixel_count() > std::numeric_limits<std::uint32_t>::max()) {
    throw ValidationError("grid too large for 32-bit column indices");
  }

  struct ViewRows {
    std::vector<std::uint64_t> counts;
    std::vector<std::uint32_t> columns;
    std::vector<double> weights;
  };
  std::vector<ViewRows> per_view(geom.views);
  parallel_for(geom.views, [&](std::size_t v) {
    auto& out = per_view[v];
    out.counts.resize(geom.detectors);
    for (std::size_t d = 0; d < geom.detectors; ++d) {
      const auto [src, det] = ray_endpoints(geom, v, d);
      const std::size_t before = out.columns.size();
      trace_segment(grid, src, det, out.columns, out.weights);
      out.counts[d] = out.columns.size() - before;
    }
  });

  std::vector<std::uint64_t> offsets;
  offsets.reserve(geom.ray_count() + 1);
  offsets.push_back(0);
  std::size_t nnz = 0;
  for (const auto& v : per_view) nnz += v.columns.size();
  std::vector<std::uint32_t> columns;
  std::vector<double> weights;
  columns.reserve(nnz);
  weights.reserve(nnz);
  for (auto& v : per_view) {
    for (auto c : v.counts) offsets.push_back(offsets.back() + c);
    columns.insert(columns.end(), v.columns.begin(), v.columns.end());
    weights.insert(weights.end(), v.weights.begin(), v.weights.end());
  }
  return ProjectionMatrix(grid, geometry_hash(geom, grid), geom.ray_count(), std::move(offsets), std::move(columns),
                          std::move(weights));
}

ProjectionMatrix load_or_build_projection_matrix(const FanBeamGeometry& geom, const ImageGrid& grid,
                                                 const std::filesystem::path& cache_dir) {
  const std::string key = geometry_hash(geom, grid);
  const auto dir = cache_dir / key;
  const auto offsets_path = dir / "offsets.tsr";
  const auto columns_path = dir / "columns.tsr";
  const auto weights_path = dir / "weights.tsr";

  if (std::filesystem::exists(offsets_path) && std::filesystem::exists(columns_path) &&
      std::filesystem::exists(weights_path)) {
    try {
      const auto off = read_tensor<std::int64_t>(offsets_path);
      const auto col = read_tensor<std::int32_t>(columns_path);
      auto w = read_tensor<double>(weights_path);
      std::vector<std::uint64_t> offsets(off.values.begin(), off.values.end());
      std::vector<std::uint32_t> columns(col.values.begin(), col.values.end());
      return ProjectionMatrix(grid, key, geom.ray_count(), std::move(offsets), std::move(columns),
                              std::move(w.values));
    } catch (const ValidationError&) {
      // Stale or corrupt cache entry: rebuild below.
    }
  }

  ProjectionMatrix m = build_projection_matrix(geom, grid);
  std::vector<std::int64_t> off(m.offsets().begin(), m.offsets().end());
  std::vector<std::int32_t> col(m.columns().begin(), m.columns().end());
  write_tensor<std::int64_t>(offsets_path, {off.size()}, off);
  write_tensor<std::int32_t>(columns_path, {col.size()}, col);
  write_tensor<double>(weights_path, {m.weights().size()}, m.weights());
  return m;
}

FanBeamGeometry GeometrySpec::geometry() const {
  return FanBeamGeometry::full_rotation(views, detectors, detector_size, source_to_object, object_to_detector);
}

ImageGrid GeometrySpec::grid() const { return ImageGrid::covering_fov(grid_size, fov_radius(geometry())); }

namespace {

std::size_t positive_count(const nlohmann::json& v, const char* key) {
  if (!v.is_number_integer() || v.get<long long>() < 1) {
    throw ValidationError(std::string("geometry: ") + key + " must be a positive integer");
  }
  return v.get<std::size_t>();
}

double finite_number(const nlohmann::json& v, const char* key) {
  if (!v.is_number() || !std::isfinite(v.get<double>())) {
    throw ValidationError(std::string("geometry: ") + key + " must be a finite number");
  }
  return v.get<double>();
}

}  // namespace

GeometrySpec GeometrySpec::parse(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("geometry: invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ValidationError("geometry: document must be a JSON object");

  GeometrySpec spec;
  for (const auto& [key, value] : doc.items()) {
    if (key == "n_s") spec.views = positive_count(value, "n_s");
    else if (key == "n_d") spec.detectors = positive_count(value, "n_d");
    else if (key == "n_r") spec.grid_size = positive_count(value, "n_r");
    else if (key == "l_d") spec.detector_size = finite_number(value, "l_d");
    else if (key == "d1") spec.source_to_object = finite_number(value, "d1");
    else if (key == "d2") spec.object_to_detector = finite_number(value, "d2");
    else throw ValidationError("geometry: unknown key '" + key + "'");
  }
  spec.geometry();  // validates
  return spec;
}

GeometrySpec GeometrySpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open geometry file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string GeometrySpec::to_json() const {
  nlohmann::json doc{{"n_s", views},        {"n_d", detectors}, {"l_d", detector_size},
                     {"d1", source_to_object}, {"d2", object_to_detector}, {"n_r", grid_size}};
  return doc.dump();
}

}  // namespace dsct
