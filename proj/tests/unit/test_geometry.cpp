#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "dsct/error.hpp"
#include "dsct/geometry.hpp"
#include "dsct/parallel.hpp"
#include "dsct/tensor_io.hpp"
#include "support.hpp"

namespace dsct {
namespace {

using Real = long double;

// Length of the part of segment a->b inside [x0,x1]x[y0,y1], by slab clipping
// in extended precision. Independent of the traversal in trace_segment.
Real clipped_length(Point2 a, Point2 b, Real x0, Real x1, Real y0, Real y1) {
  const Real dx = Real(b.x) - a.x;
  const Real dy = Real(b.y) - a.y;
  Real t0 = 0, t1 = 1;
  auto slab = [&](Real p0, Real d, Real lo, Real hi) {
    if (d == 0) return p0 >= lo && p0 <= hi;
    Real ta = (lo - p0) / d, tb = (hi - p0) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    return t0 < t1;
  };
  if (!slab(a.x, dx, x0, x1) || !slab(a.y, dy, y0, y1)) return 0;
  return (t1 - t0) * std::sqrt(dx * dx + dy * dy);
}

double row_sum(const SparseRow& row) {
  double s = 0.0;
  for (double w : row.weights) s += w;
  return s;
}

TEST(Geometry, FovRadiusOfReferenceSetup) {
  const auto geom = GeometrySpec{}.geometry();
  // D1 * L_H / sqrt(L_H^2 + (D1 + D2)^2) with L_H = 25.6, evaluated by hand.
  EXPECT_NEAR(fov_radius(geom), 14.24851760478475, 1e-12);
}

TEST(Geometry, DefaultsMirrorReferenceSetup) {
  const GeometrySpec s;
  EXPECT_EQ(s.views, 60u);
  EXPECT_EQ(s.detectors, 256u);
  EXPECT_DOUBLE_EQ(s.detector_size, 0.2);
  EXPECT_DOUBLE_EQ(s.source_to_object, 490.0);
  EXPECT_DOUBLE_EQ(s.object_to_detector, 390.0);
}

TEST(Geometry, RayEndpointsAtViewZero) {
  const auto geom = GeometrySpec{}.geometry();
  const auto [src, det0] = ray_endpoints(geom, 0, 0);
  EXPECT_DOUBLE_EQ(src.x, -490.0);
  EXPECT_NEAR(src.y, 0.0, 1e-12);
  EXPECT_DOUBLE_EQ(det0.x, 390.0);
  EXPECT_NEAR(det0.y, -25.5, 1e-12);
  const auto [src2, last] = ray_endpoints(geom, 0, 255);
  EXPECT_NEAR(last.y, 25.5, 1e-12);
  (void)src2;
  EXPECT_THROW(ray_endpoints(geom, 60, 0), ValidationError);
  EXPECT_THROW(ray_endpoints(geom, 0, 256), ValidationError);
}

TEST(Geometry, QuarterTurnView) {
  const auto geom = FanBeamGeometry::full_rotation(4, 3, 1.0, 10.0, 5.0);
  const auto [src, det] = ray_endpoints(geom, 1, 1);
  EXPECT_NEAR(src.x, 0.0, 1e-12);
  EXPECT_NEAR(src.y, -10.0, 1e-12);
  EXPECT_NEAR(det.x, 0.0, 1e-12);
  EXPECT_NEAR(det.y, 5.0, 1e-12);
}

TEST(Geometry, ValidationErrors) {
  EXPECT_THROW(FanBeamGeometry::full_rotation(0, 4, 1, 10, 5), ValidationError);
  EXPECT_THROW(FanBeamGeometry::full_rotation(4, 0, 1, 10, 5), ValidationError);
  EXPECT_THROW(FanBeamGeometry::full_rotation(4, 4, 0, 10, 5), ValidationError);
  EXPECT_THROW(FanBeamGeometry::full_rotation(4, 4, 1, -1, 5), ValidationError);
  auto g = FanBeamGeometry::full_rotation(4, 4, 1, 10, 5);
  g.angles[2] = g.angles[1];
  EXPECT_THROW(g.validate(), ValidationError);
  ImageGrid small{4, 0.1, {}};
  EXPECT_THROW(small.validate_covers(FanBeamGeometry::full_rotation(4, 4, 1, 10, 5)), ValidationError);
}

TEST(Geometry, SpecParsing) {
  const auto s = GeometrySpec::parse(R"({"n_s": 30, "n_r": 64, "l_d": 0.8, "n_d": 64})");
  EXPECT_EQ(s.views, 30u);
  EXPECT_EQ(s.grid_size, 64u);
  EXPECT_DOUBLE_EQ(s.detector_size, 0.8);
  EXPECT_DOUBLE_EQ(s.source_to_object, 490.0);
  EXPECT_EQ(GeometrySpec::parse(s.to_json()), s);
  EXPECT_THROW(GeometrySpec::parse(R"({"n_s": 30, "bogus": 1})"), ValidationError);
  EXPECT_THROW(GeometrySpec::parse(R"({"n_s": -3})"), ValidationError);
  EXPECT_THROW(GeometrySpec::parse(R"({"n_s": 2.5})"), ValidationError);
  EXPECT_THROW(GeometrySpec::parse("[1,2]"), ValidationError);
  EXPECT_THROW(GeometrySpec::parse("{"), ValidationError);
}

TEST(Geometry, GridCircumscribesFov) {
  const GeometrySpec s = test::scaled_spec(30, 64, 64);
  const auto geom = s.geometry();
  const auto grid = s.grid();
  EXPECT_NEAR(grid.extent(), 2.0 * fov_radius(geom), 1e-12);
  EXPECT_NEAR(grid.min_x(), -fov_radius(geom), 1e-12);
  const auto c = grid.pixel_center(0, grid.size - 1);
  EXPECT_NEAR(c.x, fov_radius(geom) - 0.5 * grid.pixel_size, 1e-12);
  EXPECT_NEAR(c.y, -fov_radius(geom) + 0.5 * grid.pixel_size, 1e-12);
}

TEST(Geometry, HashSeparatesConfigurations) {
  const auto a = test::scaled_spec(30, 64, 64);
  auto b = a;
  b.object_to_detector += 1e-9;
  auto c = a;
  c.grid_size = 63;
  EXPECT_NE(geometry_hash(a.geometry(), a.grid()), geometry_hash(b.geometry(), b.grid()));
  EXPECT_NE(geometry_hash(a.geometry(), a.grid()), geometry_hash(c.geometry(), c.grid()));
  EXPECT_EQ(geometry_hash(a.geometry(), a.grid()), geometry_hash(a.geometry(), a.grid()));
}

TEST(Trace, AxisAlignedRayThroughRow) {
  const ImageGrid grid{4, 1.0, {}};
  std::vector<std::uint32_t> cols;
  std::vector<double> w;
  trace_segment(grid, {-10, -0.5}, {10, -0.5}, cols, w);  // horizontal, y inside row 1
  ASSERT_EQ(cols.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(cols[k], 4u + k);
    EXPECT_NEAR(w[k], 1.0, 1e-14);  // lengths come from ray parameters scaled by a 20-unit segment
  }
}

TEST(Trace, DiagonalThroughCorners) {
  const ImageGrid grid{3, 2.0, {}};
  std::vector<std::uint32_t> cols;
  std::vector<double> w;
  trace_segment(grid, {-5, -5}, {5, 5}, cols, w);
  ASSERT_EQ(cols.size(), 3u);
  EXPECT_EQ(cols, (std::vector<std::uint32_t>{0, 4, 8}));
  for (double x : w) EXPECT_NEAR(x, 2.0 * std::sqrt(2.0), 1e-12);
}

TEST(Trace, MissAndInteriorEndpoints) {
  const ImageGrid grid{4, 1.0, {}};
  std::vector<std::uint32_t> cols;
  std::vector<double> w;
  trace_segment(grid, {-10, 5}, {10, 5}, cols, w);
  EXPECT_TRUE(cols.empty());
  trace_segment(grid, {-0.25, 0.25}, {0.75, 0.25}, cols, w);  // starts and ends inside
  double total = 0;
  for (double x : w) total += x;
  EXPECT_NEAR(total, 1.0, 1e-15);
}

TEST(Trace, PerPixelLengthsMatchBoxClipping) {
  const ImageGrid grid{7, 0.9, {0.3, -0.2}};
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-6.0, 6.0);
  for (int trial = 0; trial < 300; ++trial) {
    Point2 a{u(rng), u(rng)}, b{u(rng), u(rng)};
    if (trial % 7 == 0) b.y = a.y;  // axis-parallel cases
    if (trial % 11 == 0) b.x = a.x;
    std::vector<std::uint32_t> cols;
    std::vector<double> w;
    trace_segment(grid, a, b, cols, w);
    std::vector<double> got(grid.pixel_count(), 0.0);
    for (std::size_t k = 0; k < cols.size(); ++k) got[cols[k]] += w[k];
    for (std::size_t r = 0; r < grid.size; ++r) {
      for (std::size_t c = 0; c < grid.size; ++c) {
        const Real x0 = Real(grid.min_x()) + Real(c) * grid.pixel_size;
        const Real y0 = Real(grid.min_y()) + Real(r) * grid.pixel_size;
        const Real want = clipped_length(a, b, x0, x0 + grid.pixel_size, y0, y0 + grid.pixel_size);
        EXPECT_NEAR(got[r * grid.size + c], static_cast<double>(want), 1e-12) << "trial " << trial;
      }
    }
  }
}

TEST(ProjectionMatrix, ChordSumsMatchBoxIntersection) {
  const GeometrySpec s = test::scaled_spec(30, 64, 64);
  const auto geom = s.geometry();
  const auto grid = s.grid();
  const auto R = build_projection_matrix(geom, grid);
  ASSERT_EQ(R.rows(), geom.ray_count());
  for (std::size_t l = 0; l < R.rows(); ++l) {
    const auto [a, b] = ray_endpoints(geom, l / geom.detectors, l % geom.detectors);
    const Real want = clipped_length(a, b, grid.min_x(), grid.min_x() + grid.extent(), grid.min_y(),
                                     grid.min_y() + grid.extent());
    const double got = row_sum(R.row(l));
    EXPECT_LE(std::abs(got - static_cast<double>(want)), 1e-9 * std::max<double>(1.0, want)) << "ray " << l;
  }
}

TEST(ProjectionMatrix, RowNormsAndStructure) {
  const auto s = test::scaled_spec(12, 32, 16);
  const auto R = build_projection_matrix(s.geometry(), s.grid());
  for (std::size_t l = 0; l < R.rows(); ++l) {
    const auto row = R.row(l);
    double n = 0.0;
    for (double w : row.weights) {
      EXPECT_GT(w, 0.0);
      n += w * w;
    }
    EXPECT_DOUBLE_EQ(row.norm_sq, n);
    std::vector<std::uint32_t> sorted(row.columns.begin(), row.columns.end());
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end()) << "duplicate pixel in ray " << l;
    for (auto c : row.columns) EXPECT_LT(c, R.cols());
  }
  EXPECT_THROW(R.row(R.rows()), ValidationError);
}

TEST(ProjectionMatrix, AdjointIdentity) {
  const auto s = test::scaled_spec(30, 64, 64);
  const auto R = build_projection_matrix(s.geometry(), s.grid());
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01;
  std::vector<double> u(R.cols()), v(R.rows()), Ru(R.rows()), Rtv(R.cols());
  for (int trial = 0; trial < 20; ++trial) {
    for (auto& x : u) x = n01(rng);
    for (auto& x : v) x = n01(rng);
    R.apply(u, Ru);
    R.apply_transpose(v, Rtv);
    Real lhs = 0, rhs = 0, nRu = 0, nv = 0;
    for (std::size_t i = 0; i < Ru.size(); ++i) {
      lhs += Real(Ru[i]) * v[i];
      nRu += Real(Ru[i]) * Ru[i];
      nv += Real(v[i]) * v[i];
    }
    for (std::size_t j = 0; j < u.size(); ++j) rhs += Real(u[j]) * Rtv[j];
    EXPECT_LT(std::abs(static_cast<double>((lhs - rhs) / std::sqrt(nRu * nv))), 1e-10);
  }
}

TEST(ProjectionMatrix, QuarterTurnCovariance) {
  // Rotating the image by 90 degrees about O must shift the sinogram by n_S/4
  // views, because the rotated rays of view i are exactly the rays of view i + n_S/4.
  const auto s = test::scaled_spec(40, 64, 32);
  const auto geom = s.geometry();
  const auto grid = s.grid();
  const auto R = build_projection_matrix(geom, grid);
  const std::size_t n = grid.size;
  std::vector<double> u(grid.pixel_count()), rot(grid.pixel_count());
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const auto p = grid.pixel_center(r, c);
      // smooth, off-center and anisotropic so the test is not trivially symmetric
      u[r * n + c] = std::exp(-((p.x - 3) * (p.x - 3) / 20.0 + (p.y + 1) * (p.y + 1) / 8.0)) + 0.01 * p.x;
    }
  }
  // (x, y) -> (-y, x) maps pixel (row, col) to (col, n - 1 - row)
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) rot[c * n + (n - 1 - r)] = u[r * n + c];
  }
  std::vector<double> pu(R.rows()), prot(R.rows());
  R.apply(u, pu);
  R.apply(rot, prot);
  const std::size_t shift = geom.views / 4;
  double scale = 0.0;
  for (double x : pu) scale = std::max(scale, std::abs(x));
  for (std::size_t v = 0; v < geom.views; ++v) {
    const std::size_t w = (v + shift) % geom.views;
    for (std::size_t d = 0; d < geom.detectors; ++d) {
      EXPECT_NEAR(prot[w * geom.detectors + d], pu[v * geom.detectors + d], 1e-10 * scale);
    }
  }
}

TEST(ProjectionMatrix, CenteredDiscProjectsAlikeFromEveryView) {
  const auto s = test::scaled_spec(24, 128, 128);
  const auto geom = s.geometry();
  const auto grid = s.grid();
  const auto R = build_projection_matrix(geom, grid);
  std::vector<double> u(grid.pixel_count());
  for (std::size_t r = 0; r < grid.size; ++r) {
    for (std::size_t c = 0; c < grid.size; ++c) {
      const auto p = grid.pixel_center(r, c);
      u[r * grid.size + c] = std::exp(-(p.x * p.x + p.y * p.y) / 18.0);
    }
  }
  std::vector<double> p(R.rows());
  R.apply(u, p);
  // Central ray: analytic line integral of the Gaussian through its center.
  const double analytic = std::sqrt(std::numbers::pi * 18.0);
  for (std::size_t v = 0; v < geom.views; ++v) {
    const double mid = 0.5 * (p[v * geom.detectors + 63] + p[v * geom.detectors + 64]);
    EXPECT_NEAR(mid, analytic, 0.02 * analytic) << "view " << v;
  }
}

TEST(ProjectionMatrix, ThreadCountDoesNotChangeResult) {
  const auto s = test::scaled_spec(16, 64, 32);
  set_max_threads(1);
  const auto a = build_projection_matrix(s.geometry(), s.grid());
  set_max_threads(4);
  const auto b = build_projection_matrix(s.geometry(), s.grid());
  set_max_threads(0);
  EXPECT_EQ(a.offsets(), b.offsets());
  EXPECT_EQ(a.columns(), b.columns());
  EXPECT_EQ(a.weights(), b.weights());
}

TEST(ProjectionMatrix, CacheRoundTripAndRecovery) {
  test::TempDir tmp;
  const auto s = test::scaled_spec(10, 32, 16);
  const auto built = build_projection_matrix(s.geometry(), s.grid());
  const auto first = load_or_build_projection_matrix(s.geometry(), s.grid(), tmp.path());
  const auto dir = tmp / built.key();
  ASSERT_TRUE(std::filesystem::exists(dir / "weights.tsr"));
  const auto second = load_or_build_projection_matrix(s.geometry(), s.grid(), tmp.path());
  EXPECT_EQ(second.weights(), built.weights());
  EXPECT_EQ(second.columns(), built.columns());
  EXPECT_EQ(second.offsets(), built.offsets());
  EXPECT_EQ(first.weights(), built.weights());

  test::spit(dir / "weights.tsr", "garbage");
  const auto third = load_or_build_projection_matrix(s.geometry(), s.grid(), tmp.path());
  EXPECT_EQ(third.weights(), built.weights());
}

TEST(ProjectionMatrix, RejectsInconsistentCsr) {
  const ImageGrid grid{2, 1.0, {}};
  EXPECT_THROW(ProjectionMatrix(grid, "k", 1, {0, 2}, {0}, {1.0}), ValidationError);
  EXPECT_THROW(ProjectionMatrix(grid, "k", 1, {0, 1}, {9}, {1.0}), ValidationError);
  EXPECT_NO_THROW(ProjectionMatrix(grid, "k", 1, {0, 1}, {3}, {1.0}));
}

}  // namespace
}  // namespace dsct
