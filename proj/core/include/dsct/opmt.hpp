#pragma once

// Row-action reconstruction of basis-material densities from dual-spectrum
// log-projections.
//
// For ray l the polychromatic model is linearized around the current state,
// giving two lines in the (x1, x2) = (R_l f, R_l g) plane:
//   H1: a11 x1 + a12 x2 = b1   (low spectrum)
//   H2: a21 x1 + a22 x2 = b2   (high spectrum)
// OPMT moves onto H1 along dir = lambda1 * dir1 + lambda2 * dir2, where dir1 is
// the unit normal of H1 and dir2 the unit direction of H2 forming an acute
// angle with dir1; it then re-linearizes and moves onto H2 the same way with
// the roles of the spectra swapped. The image-space update spreads the
// ray-space step with the minimum-norm back-projection R_l^T / ||R_l||^2.
// E-ART is the lambda2 = 0 case (orthogonal projections).

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dsct/forward.hpp"
#include "dsct/geometry.hpp"
#include "dsct/spectra.hpp"

namespace dsct {

struct OpmtConfig {
  std::size_t sweeps = 10;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double relaxation = 1.0;
  bool nonneg = false;
  double skip_eps = 1e-12;

  void validate() const;

  /// Keys: n_sweeps, lambda1, lambda2, relaxation, nonneg, skip_eps. Missing
  /// keys keep their defaults; unknown keys are rejected.
  static OpmtConfig parse(const std::string& json_text);
  static OpmtConfig load(const std::filesystem::path& path);
  std::string to_json() const;

  friend bool operator==(const OpmtConfig&, const OpmtConfig&) = default;
};

struct ReconState {
  std::vector<double> f;
  std::vector<double> g;
  std::size_t sweeps = 0;

  static ReconState zeros(std::size_t pixels) { return {std::vector<double>(pixels), std::vector<double>(pixels), 0}; }
  friend bool operator==(const ReconState&, const ReconState&) = default;
};

/// First-order expansion of one spectrum's projection at (bone, water) path lengths.
struct RayLinearization {
  double predicted = 0.0;  ///< p^(n)
  double q = 1.0;          ///< sum w exp(-mu); may underflow to 0 on long paths
  double log_q = 0.0;      ///< ln q, always finite
  double phi_sum = 0.0;    ///< Phi, same scale as q
  double theta_sum = 0.0;  ///< Theta, same scale as q
  double a1 = 0.0;         ///< Phi / q
  double a2 = 0.0;         ///< Theta / q
};

RayLinearization linearize_ray(double bone_path, double water_path, const EnergyBins& bins);
RayLinearization linearize_ray(const ReconState& state, const SparseRow& row, const EnergyBins& bins);

struct Direction {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Direction&, const Direction&) = default;
};

/// (a1, a2) / ||(a1, a2)||. Throws NumericalError for the zero vector.
Direction unit_normal(double a1, double a2);

/// Unit direction along the line (b1, b2) . x = c that forms an acute angle with
/// the normal (a1, a2). Zero when the two lines are parallel.
Direction acute_line_direction(double a1, double a2, double b1, double b2);

/// lambda1 * dir1 + lambda2 * dir2 for the line with normal (a11, a12), where
/// (a21, a22) is the normal of the other line. Returns dir1 alone when the
/// lines are parallel.
Direction compute_direction(double a11, double a12, double a21, double a22, double lambda1, double lambda2);

/// What happened at one hyperplane step; passed to an optional observer.
struct StepRecord {
  std::size_t sweep = 0;
  std::size_t ray = 0;
  int hyperplane = 1;       ///< 1 = low-spectrum line, 2 = high-spectrum line
  double own_a1 = 0.0;      ///< normal of the target line
  double own_a2 = 0.0;
  double other_a1 = 0.0;    ///< normal of the other line at the same state
  double other_a2 = 0.0;
  double target = 0.0;      ///< right-hand side b of the target line
  double bone_before = 0.0, water_before = 0.0;
  double bone_after = 0.0, water_after = 0.0;  ///< recomputed R_l f, R_l g after the step
  Direction normal;         ///< dir1
  Direction cross;          ///< dir2 (zero for E-ART or parallel lines)
  Direction direction;      ///< dir actually used
  double step = 0.0;
  bool skipped = false;
};

using StepObserver = std::function<void(const StepRecord&)>;

/// Read-only inputs of a reconstruction; validates consistency on construction.
class ReconProblem {
 public:
  ReconProblem(const SinogramPair& sino, const ProjectionMatrix& R, const EnergyBins& low, const EnergyBins& high);

  const SinogramPair& sino() const { return sino_; }
  const ProjectionMatrix& matrix() const { return R_; }
  const EnergyBins& low() const { return low_; }
  const EnergyBins& high() const { return high_; }

 private:
  const SinogramPair& sino_;
  const ProjectionMatrix& R_;
  const EnergyBins& low_;
  const EnergyBins& high_;
};

/// One OPMT update for ray l (H1 step, re-linearization, H2 step). Returns false
/// when the ray was skipped entirely.
bool ray_update(ReconState& state, std::size_t ray, const ReconProblem& problem, const OpmtConfig& cfg,
                const StepObserver& observer = {});

/// One E-ART update for ray l: sequential orthogonal projections onto H1 then H2.
bool eart_ray_update(ReconState& state, std::size_t ray, const ReconProblem& problem, const OpmtConfig& cfg,
                     const StepObserver& observer = {});

struct SweepResidual {
  std::size_t sweep = 0;
  double low = 0.0;   ///< ||p1 - p1^(n)||_2
  double high = 0.0;  ///< ||p2 - p2^(n)||_2
  double combined() const;
};

struct ReconResult {
  ReconState state;
  /// Entry 0 is the initial state; entry s follows sweep s.
  std::vector<SweepResidual> residuals;
};

/// Sinogram residual of a state against the measured data.
SweepResidual sinogram_residual(const ReconState& state, const ReconProblem& problem);

/// n sweeps of OPMT from the zero image, rays in angle-major order.
ReconResult run_opmt(const ReconProblem& problem, const OpmtConfig& cfg, const StepObserver& observer = {});

/// n sweeps of E-ART; lambda1 / lambda2 in cfg are ignored.
ReconResult run_eart(const ReconProblem& problem, const OpmtConfig& cfg, const StepObserver& observer = {});

/// CSV text `sweep,residual_p1,residual_p2` with one row per entry.
std::string residuals_csv(const std::vector<SweepResidual>& residuals);

}  // namespace dsct
