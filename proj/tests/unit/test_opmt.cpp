#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dsct/error.hpp"
#include "dsct/opmt.hpp"
#include "dsct/parallel.hpp"
#include "support.hpp"

namespace dsct {
namespace {

using Real = long double;

struct Bundled {
  EnergyBins low, high;
  Bundled() {
    const auto m = load_materials(bundled_materials());
    low = prepare_bins(load_spectrum(bundled_low_spectrum()), m);
    high = prepare_bins(load_spectrum(bundled_high_spectrum()), m);
  }
};

// Dense least squares via normal equations and partial pivoting, in long double.
std::vector<Real> least_squares(const std::vector<std::vector<Real>>& A, const std::vector<Real>& b) {
  const std::size_t n = A[0].size();
  std::vector<std::vector<Real>> M(n, std::vector<Real>(n + 1, 0));
  for (std::size_t r = 0; r < A.size(); ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      if (A[r][i] == 0) continue;
      for (std::size_t j = 0; j < n; ++j) M[i][j] += A[r][i] * A[r][j];
      M[i][n] += A[r][i] * b[r];
    }
  }
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(M[r][c]) > std::abs(M[piv][c])) piv = r;
    }
    std::swap(M[c], M[piv]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const Real f = M[r][c] / M[c][c];
      for (std::size_t k = c; k <= n; ++k) M[r][k] -= f * M[c][k];
    }
  }
  std::vector<Real> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = M[i][n] / M[i][i];
  return x;
}

struct Rig {
  GeometrySpec spec;
  FanBeamGeometry geom;
  ImageGrid grid;
  ProjectionMatrix R;
  explicit Rig(GeometrySpec s) : spec(s), geom(s.geometry()), grid(s.grid()), R(build_projection_matrix(geom, grid)) {}
};

ImagePair random_pair(const ImageGrid& grid, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto p = ImagePair::zeros(grid);
  for (auto& v : p.f.values) v = u(rng);
  for (auto& v : p.g.values) v = u(rng);
  return p;
}

TEST(Linearization, MatchesExtendedPrecisionOracle) {
  const Bundled b;
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 30.0);
  for (int i = 0; i < 200; ++i) {
    const double x1 = u(rng), x2 = u(rng);
    const auto lin = linearize_ray(x1, x2, b.low);
    Real q = 0, Phi = 0, Theta = 0;
    for (std::size_t m = 0; m < b.low.size(); ++m) {
      const Real e = Real(b.low.weight[m]) * std::exp(-Real(b.low.phi[m]) * x1 - Real(b.low.theta[m]) * x2);
      q += e;
      Phi += b.low.phi[m] * e;
      Theta += b.low.theta[m] * e;
    }
    EXPECT_NEAR(lin.predicted, static_cast<double>(-std::log(q)), 1e-12 * static_cast<double>(std::max<Real>(1, -std::log(q))));
    EXPECT_NEAR(lin.q / static_cast<double>(q), 1.0, 1e-12);
    EXPECT_NEAR(lin.phi_sum / static_cast<double>(Phi), 1.0, 1e-12);
    EXPECT_NEAR(lin.theta_sum / static_cast<double>(Theta), 1.0, 1e-12);
    EXPECT_NEAR(lin.a1, static_cast<double>(Phi / q), 1e-13);
    EXPECT_NEAR(lin.a2, static_cast<double>(Theta / q), 1e-13);
  }
}

TEST(Linearization, ZeroStateGivesSpectrumMeans) {
  const Bundled b;
  const auto lin = linearize_ray(0.0, 0.0, b.low);
  double mean_phi = 0, mean_theta = 0;
  for (std::size_t m = 0; m < b.low.size(); ++m) {
    mean_phi += b.low.weight[m] * b.low.phi[m];
    mean_theta += b.low.weight[m] * b.low.theta[m];
  }
  EXPECT_NEAR(lin.predicted, 0.0, 1e-15);
  EXPECT_NEAR(lin.q, 1.0, 1e-15);
  EXPECT_NEAR(lin.a1, mean_phi, 1e-14);
  EXPECT_NEAR(lin.a2, mean_theta, 1e-14);
}

TEST(Linearization, FiniteOnLongPaths) {
  const Bundled b;
  const auto lin = linearize_ray(3000.0, 9000.0, b.high);
  EXPECT_TRUE(std::isfinite(lin.a1));
  EXPECT_TRUE(std::isfinite(lin.log_q));
  EXPECT_GT(lin.a1, 0.0);
}

TEST(Directions, NormalIsUnit) {
  const auto d = unit_normal(3.0, 4.0);
  EXPECT_DOUBLE_EQ(d.x, 0.6);
  EXPECT_DOUBLE_EQ(d.y, 0.8);
  EXPECT_THROW(unit_normal(0.0, 0.0), NumericalError);
}

TEST(Directions, AcuteLineDirectionProperties) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.05, 2.0);
  for (int i = 0; i < 1000; ++i) {
    const double a11 = u(rng), a12 = u(rng), a21 = u(rng), a22 = u(rng);
    const auto d1 = unit_normal(a11, a12);
    const auto d2 = acute_line_direction(a11, a12, a21, a22);
    EXPECT_NEAR(d2.x * d2.x + d2.y * d2.y, 1.0, 1e-14);
    EXPECT_NEAR(d2.x * a21 + d2.y * a22, 0.0, 1e-14);  // lies along H2
    EXPECT_GE(d1.x * d2.x + d1.y * d2.y, 0.0);
    const double det = a11 * a22 - a12 * a21;
    if (det > 0) {
      EXPECT_GT(d2.x, 0.0);  // (a22, -a21) branch
    } else {
      EXPECT_GT(d2.y, 0.0);  // (-a22, a21) branch
    }
  }
  const auto parallel = acute_line_direction(1.0, 2.0, 2.0, 4.0);
  EXPECT_EQ(parallel, (Direction{0.0, 0.0}));
  EXPECT_EQ(compute_direction(1.0, 2.0, 2.0, 4.0, 1.0, 1.0), unit_normal(1.0, 2.0));
}

TEST(Directions, EartWeightsReduceToNormal) {
  EXPECT_EQ(compute_direction(0.4, 0.2, 0.3, 0.25, 1.0, 0.0), unit_normal(0.4, 0.2));
  const auto both = compute_direction(0.4, 0.2, 0.3, 0.25, 1.0, 1.0);
  const auto n = unit_normal(0.4, 0.2);
  const auto c = acute_line_direction(0.4, 0.2, 0.3, 0.25);
  EXPECT_DOUBLE_EQ(both.x, n.x + c.x);
  EXPECT_DOUBLE_EQ(both.y, n.y + c.y);
}

TEST(OpmtConfig, DefaultsAndParsing) {
  const OpmtConfig d;
  EXPECT_EQ(d.sweeps, 10u);
  EXPECT_EQ(d.lambda1, 1.0);
  EXPECT_EQ(d.lambda2, 1.0);
  const auto c = OpmtConfig::parse(R"({"n_sweeps": 3, "lambda2": 0, "nonneg": true})");
  EXPECT_EQ(c.sweeps, 3u);
  EXPECT_EQ(c.lambda2, 0.0);
  EXPECT_TRUE(c.nonneg);
  EXPECT_EQ(OpmtConfig::parse(c.to_json()), c);
  EXPECT_THROW(OpmtConfig::parse(R"({"iters": 3})"), ValidationError);
  EXPECT_THROW(OpmtConfig::parse(R"({"lambda1": 0, "lambda2": 0})"), ValidationError);
  EXPECT_THROW(OpmtConfig::parse(R"({"relaxation": 2.5})"), ValidationError);
  EXPECT_THROW(OpmtConfig::parse(R"({"n_sweeps": -1})"), ValidationError);
  EXPECT_THROW(OpmtConfig::parse(R"({"nonneg": 1})"), ValidationError);
}

TEST(Opmt, SingleRayStepLandsOnLinearizedH1) {
  const Bundled b;
  const Rig s(test::scaled_spec(6, 16, 8));
  const auto truth = random_pair(s.grid, 1);
  auto sino = forward_project(truth, s.R, s.geom, b.low, b.high);
  const ReconProblem problem(sino, s.R, b.low, b.high);
  auto state = ReconState::zeros(s.grid.pixel_count());
  for (auto& v : state.f) v = 0.3;
  const std::size_t ray = 40;
  int calls = 0;
  ray_update(state, ray, problem, OpmtConfig{}, [&](const StepRecord& r) {
    ++calls;
    EXPECT_FALSE(r.skipped);
    const double lhs = r.own_a1 * r.bone_after + r.own_a2 * r.water_after;
    EXPECT_NEAR(lhs, r.target, 1e-10 * std::max(std::abs(r.target), 1.0));
    EXPECT_GE(r.normal.x * r.cross.x + r.normal.y * r.cross.y, 0.0);
    // the image-space move equals step * dir in projection space
    EXPECT_NEAR(r.bone_after - r.bone_before, r.step * r.direction.x, 1e-10);
    EXPECT_NEAR(r.water_after - r.water_before, r.step * r.direction.y, 1e-10);
  });
  EXPECT_EQ(calls, 2);
}

TEST(Opmt, EartSpecializationIsBitwise) {
  const Bundled b;
  const Rig s(test::scaled_spec(12, 32, 16));
  const auto truth = random_pair(s.grid, 2);
  const auto sino = add_poisson_noise(forward_project(truth, s.R, s.geom, b.low, b.high), 1e5, 3);
  const ReconProblem problem(sino, s.R, b.low, b.high);
  OpmtConfig c;
  c.sweeps = 3;
  c.lambda2 = 0.0;
  const auto o = run_opmt(problem, c);
  const auto e = run_eart(problem, c);
  EXPECT_EQ(o.state, e.state);
  ASSERT_EQ(o.residuals.size(), e.residuals.size());
  for (std::size_t i = 0; i < o.residuals.size(); ++i) EXPECT_EQ(o.residuals[i].combined(), e.residuals[i].combined());
}

void expect_least_squares_fixed_point(std::size_t grid_size, std::size_t views, std::size_t dets) {
  const Rig s(test::scaled_spec(views, dets, grid_size));
  const auto lo = monochromatic_bins(0.8, 0.3);
  const auto hi = monochromatic_bins(0.35, 0.2);
  const auto truth = random_pair(s.grid, 4);
  const auto sino = forward_project(truth, s.R, s.geom, lo, hi);

  const std::size_t N = s.grid.pixel_count();
  std::vector<std::vector<Real>> A;
  std::vector<Real> rhs;
  for (std::size_t l = 0; l < s.R.rows(); ++l) {
    const auto row = s.R.row(l);
    std::vector<Real> r1(2 * N, 0), r2(2 * N, 0);
    for (std::size_t k = 0; k < row.columns.size(); ++k) {
      r1[row.columns[k]] += Real(0.8) * row.weights[k];
      r1[N + row.columns[k]] += Real(0.3) * row.weights[k];
      r2[row.columns[k]] += Real(0.35) * row.weights[k];
      r2[N + row.columns[k]] += Real(0.2) * row.weights[k];
    }
    A.push_back(r1);
    rhs.push_back(sino.low.values[l]);
    A.push_back(r2);
    rhs.push_back(sino.high.values[l]);
  }
  const auto x = least_squares(A, rhs);

  const ReconProblem problem(sino, s.R, lo, hi);
  OpmtConfig c;
  c.sweeps = 200;
  for (const bool eart : {false, true}) {
    const auto r = eart ? run_eart(problem, c) : run_opmt(problem, c);
    Real num = 0, den = 0;
    for (std::size_t j = 0; j < N; ++j) {
      num += (r.state.f[j] - x[j]) * (r.state.f[j] - x[j]) + (r.state.g[j] - x[N + j]) * (r.state.g[j] - x[N + j]);
      den += x[j] * x[j] + x[N + j] * x[N + j];
    }
    EXPECT_LT(static_cast<double>(std::sqrt(num / den)), 1e-5) << (eart ? "E-ART" : "OPMT");
  }
}

TEST(Opmt, MonochromaticTwoByTwoReachesLeastSquares) { expect_least_squares_fixed_point(2, 12, 8); }

TEST(Opmt, MonochromaticFourByFourReachesLeastSquares) { expect_least_squares_fixed_point(4, 30, 16); }

TEST(Opmt, ResidualBookkeeping) {
  const Bundled b;
  const Rig s(test::scaled_spec(12, 32, 16));
  const auto truth = random_pair(s.grid, 5);
  const auto sino = forward_project(truth, s.R, s.geom, b.low, b.high);
  const ReconProblem problem(sino, s.R, b.low, b.high);
  OpmtConfig c;
  c.sweeps = 4;
  const auto r = run_opmt(problem, c);
  ASSERT_EQ(r.residuals.size(), 5u);
  EXPECT_EQ(r.state.sweeps, 4u);
  const auto initial = sinogram_residual(ReconState::zeros(s.grid.pixel_count()), problem);
  EXPECT_DOUBLE_EQ(r.residuals[0].low, initial.low);
  for (std::size_t i = 0; i < r.residuals.size(); ++i) EXPECT_EQ(r.residuals[i].sweep, i);
  EXPECT_LT(r.residuals.back().combined(), 0.2 * r.residuals.front().combined());
  const auto csv = residuals_csv(r.residuals);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "sweep,residual_p1,residual_p2");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);

  c.sweeps = 0;
  const auto none = run_opmt(problem, c);
  EXPECT_EQ(none.residuals.size(), 1u);
  EXPECT_EQ(none.state, ReconState::zeros(s.grid.pixel_count()));
}

TEST(Opmt, NonnegativityClamp) {
  const Bundled b;
  const Rig s(test::scaled_spec(12, 32, 16));
  const auto truth = random_pair(s.grid, 6);
  const auto sino = add_poisson_noise(forward_project(truth, s.R, s.geom, b.low, b.high), 1e3, 1);
  const ReconProblem problem(sino, s.R, b.low, b.high);
  OpmtConfig c;
  c.sweeps = 3;
  c.nonneg = true;
  const auto r = run_opmt(problem, c);
  for (double v : r.state.f) EXPECT_GE(v, 0.0);
  for (double v : r.state.g) EXPECT_GE(v, 0.0);
}

TEST(Opmt, SkipThresholdLeavesStateUntouched) {
  const Bundled b;
  const Rig s(test::scaled_spec(6, 16, 8));
  const auto sino = forward_project(random_pair(s.grid, 7), s.R, s.geom, b.low, b.high);
  const ReconProblem problem(sino, s.R, b.low, b.high);
  OpmtConfig c;
  c.sweeps = 1;
  c.skip_eps = 1e6;
  std::size_t skipped = 0;
  const auto r = run_opmt(problem, c, [&](const StepRecord& rec) { skipped += rec.skipped; });
  const auto zero = ReconState::zeros(s.grid.pixel_count());
  EXPECT_EQ(r.state.f, zero.f);
  EXPECT_EQ(r.state.g, zero.g);
  EXPECT_EQ(r.state.sweeps, 1u);
  EXPECT_GT(skipped, 0u);
}

TEST(Opmt, IndependentOfThreadCount) {
  const Bundled b;
  const Rig s(test::scaled_spec(12, 32, 16));
  const auto sino = forward_project(random_pair(s.grid, 8), s.R, s.geom, b.low, b.high);
  const ReconProblem problem(sino, s.R, b.low, b.high);
  OpmtConfig c;
  c.sweeps = 2;
  set_max_threads(1);
  const auto a = run_opmt(problem, c);
  set_max_threads(4);
  const auto d = run_opmt(problem, c);
  set_max_threads(0);
  EXPECT_EQ(a.state, d.state);
  EXPECT_EQ(a.residuals.back().low, d.residuals.back().low);
}

TEST(Opmt, ProblemRejectsMismatchedSinogram) {
  const Bundled b;
  const Rig s(test::scaled_spec(6, 16, 8));
  SinogramPair wrong{Sinogram(6, 16), Sinogram(6, 16), "not-the-hash"};
  EXPECT_THROW(ReconProblem(wrong, s.R, b.low, b.high), ValidationError);
  SinogramPair small{Sinogram(5, 16), Sinogram(5, 16), s.R.key()};
  EXPECT_THROW(ReconProblem(small, s.R, b.low, b.high), ValidationError);
}

}  // namespace
}  // namespace dsct
