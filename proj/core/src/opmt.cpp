#include "dsct/opmt.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>

#include "dsct/error.hpp"

namespace dsct {

void OpmtConfig::validate() const {
  if (!std::isfinite(lambda1) || !std::isfinite(lambda2)) throw ValidationError("opmt: lambdas must be finite");
  if (lambda1 == 0.0 && lambda2 == 0.0) throw ValidationError("opmt: lambda1 and lambda2 cannot both be zero");
  if (!(relaxation > 0.0 && relaxation <= 2.0)) throw ValidationError("opmt: relaxation must lie in (0, 2]");
  if (!(skip_eps > 0.0) || !std::isfinite(skip_eps)) throw ValidationError("opmt: skip_eps must be > 0");
}

OpmtConfig OpmtConfig::parse(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("opmt config: invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ValidationError("opmt config: document must be a JSON object");
  OpmtConfig cfg;
  auto number = [](const nlohmann::json& v, const std::string& key) {
    if (!v.is_number()) throw ValidationError("opmt config: " + key + " must be a number");
    return v.get<double>();
  };
  for (const auto& [key, value] : doc.items()) {
    if (key == "n_sweeps") {
      if (!value.is_number_integer() || value.get<long long>() < 0) {
        throw ValidationError("opmt config: n_sweeps must be a non-negative integer");
      }
      cfg.sweeps = value.get<std::size_t>();
    } else if (key == "lambda1") {
      cfg.lambda1 = number(value, key);
    } else if (key == "lambda2") {
      cfg.lambda2 = number(value, key);
    } else if (key == "relaxation") {
      cfg.relaxation = number(value, key);
    } else if (key == "skip_eps") {
      cfg.skip_eps = number(value, key);
    } else if (key == "nonneg") {
      if (!value.is_boolean()) throw ValidationError("opmt config: nonneg must be a boolean");
      cfg.nonneg = value.get<bool>();
    } else {
      throw ValidationError("opmt config: unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

OpmtConfig OpmtConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string OpmtConfig::to_json() const {
  nlohmann::json doc{{"n_sweeps", sweeps},     {"lambda1", lambda1}, {"lambda2", lambda2},
                     {"relaxation", relaxation}, {"nonneg", nonneg},   {"skip_eps", skip_eps}};
  return doc.dump();
}

RayLinearization linearize_ray(double bone_path, double water_path, const EnergyBins& bins) {
  double shift = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < bins.size(); ++m) {
    shift = std::min(shift, bins.phi[m] * bone_path + bins.theta[m] * water_path);
  }
  double q = 0.0;
  double phi_sum = 0.0;
  double theta_sum = 0.0;
  for (std::size_t m = 0; m < bins.size(); ++m) {
    const double e = bins.weight[m] * std::exp(-(bins.phi[m] * bone_path + bins.theta[m] * water_path - shift));
    q += e;
    phi_sum += bins.phi[m] * e;
    theta_sum += bins.theta[m] * e;
  }
  if (!(q > 0.0) || !std::isfinite(q)) throw NumericalError("linearization: non-positive spectral sum");

  RayLinearization out;
  out.predicted = shift - std::log(q);
  out.log_q = -out.predicted;
  const double scale = std::exp(-shift);
  out.q = q * scale;
  out.phi_sum = phi_sum * scale;
  out.theta_sum = theta_sum * scale;
  out.a1 = phi_sum / q;
  out.a2 = theta_sum / q;
  return out;
}

RayLinearization linearize_ray(const ReconState& state, const SparseRow& row, const EnergyBins& bins) {
  return linearize_ray(row.dot(state.f), row.dot(state.g), bins);
}

Direction unit_normal(double a1, double a2) {
  const double norm = std::sqrt(a1 * a1 + a2 * a2);
  if (!(norm > 0.0) || !std::isfinite(norm)) throw NumericalError("direction: zero or non-finite normal vector");
  return {a1 / norm, a2 / norm};
}

Direction acute_line_direction(double a1, double a2, double b1, double b2) {
  const double det = a1 * b2 - a2 * b1;
  if (det == 0.0) return {};
  const double norm = std::sqrt(b1 * b1 + b2 * b2);
  if (det > 0.0) return {b2 / norm, -b1 / norm};
  return {-b2 / norm, b1 / norm};
}

Direction compute_direction(double a11, double a12, double a21, double a22, double lambda1, double lambda2) {
  const Direction dir1 = unit_normal(a11, a12);
  if (a11 * a22 == a12 * a21) return dir1;
  const Direction dir2 = acute_line_direction(a11, a12, a21, a22);
  return {lambda1 * dir1.x + lambda2 * dir2.x, lambda1 * dir1.y + lambda2 * dir2.y};
}

double SweepResidual::combined() const { return std::sqrt(low * low + high * high); }

ReconProblem::ReconProblem(const SinogramPair& sino, const ProjectionMatrix& R, const EnergyBins& low,
                           const EnergyBins& high)
    : sino_(sino), R_(R), low_(low), high_(high) {
  low.validate();
  high.validate();
  if (sino.low.size() != R.rows() || sino.high.size() != R.rows()) {
    throw ValidationError("reconstruction: sinogram size does not match the projection matrix");
  }
  if (sino.geometry_hash != R.key()) {
    throw ValidationError("reconstruction: sinogram geometry hash " + sino.geometry_hash +
                          " does not match projection matrix " + R.key());
  }
}

namespace {

void apply_row_step(ReconState& state, const SparseRow& row, double step, Direction dir, bool nonneg) {
  const double scale = step / row.norm_sq;
  const double df = scale * dir.x;
  const double dg = scale * dir.y;
  for (std::size_t k = 0; k < row.columns.size(); ++k) {
    const auto j = row.columns[k];
    state.f[j] += df * row.weights[k];
    state.g[j] += dg * row.weights[k];
    if (nonneg) {
      if (state.f[j] < 0.0) state.f[j] = 0.0;
      if (state.g[j] < 0.0) state.g[j] = 0.0;
    }
  }
}

[[noreturn]] void non_finite(const ReconState& state, std::size_t ray, int plane) {
  throw NumericalError("non-finite update at sweep " + std::to_string(state.sweeps + 1) + ", ray " +
                       std::to_string(ray) + ", hyperplane H" + std::to_string(plane));
}

void notify(const StepObserver& observer, StepRecord& rec, const ReconState& state, const SparseRow& row) {
  if (!observer) return;
  rec.bone_after = row.dot(state.f);
  rec.water_after = row.dot(state.g);
  observer(rec);
}

// Oblique step onto the line of `own`; `other` supplies the cross direction.
void oblique_step(ReconState& state, std::size_t ray, const SparseRow& row, double measured, const EnergyBins& own,
                  const EnergyBins& other, int plane, const OpmtConfig& cfg, const StepObserver& observer) {
  const double bone = row.dot(state.f);
  const double water = row.dot(state.g);
  const RayLinearization lin_own = linearize_ray(bone, water, own);
  const RayLinearization lin_other = linearize_ray(bone, water, other);

  const Direction dir = compute_direction(lin_own.a1, lin_own.a2, lin_other.a1, lin_other.a2, cfg.lambda1, cfg.lambda2);
  const double denom = lin_own.a1 * dir.x + lin_own.a2 * dir.y;

  StepRecord rec;
  if (observer) {
    rec.sweep = state.sweeps + 1;
    rec.ray = ray;
    rec.hyperplane = plane;
    rec.own_a1 = lin_own.a1;
    rec.own_a2 = lin_own.a2;
    rec.other_a1 = lin_other.a1;
    rec.other_a2 = lin_other.a2;
    rec.target = measured - lin_own.predicted + lin_own.a1 * bone + lin_own.a2 * water;
    rec.bone_before = bone;
    rec.water_before = water;
    rec.normal = unit_normal(lin_own.a1, lin_own.a2);
    rec.cross = acute_line_direction(lin_own.a1, lin_own.a2, lin_other.a1, lin_other.a2);
    rec.direction = dir;
  }

  if (!(std::abs(denom) > cfg.skip_eps)) {
    rec.skipped = true;
    notify(observer, rec, state, row);
    return;
  }
  const double step = cfg.relaxation * (measured - lin_own.predicted) / denom;
  if (!std::isfinite(step)) non_finite(state, ray, plane);
  apply_row_step(state, row, step, dir, cfg.nonneg);
  rec.step = step;
  notify(observer, rec, state, row);
}

// Orthogonal projection onto the line of `own` in the (x1, x2) plane.
void orthogonal_step(ReconState& state, std::size_t ray, const SparseRow& row, double measured,
                     const EnergyBins& own, int plane, const OpmtConfig& cfg, const StepObserver& observer) {
  const double bone = row.dot(state.f);
  const double water = row.dot(state.g);
  const RayLinearization lin = linearize_ray(bone, water, own);

  const Direction normal = unit_normal(lin.a1, lin.a2);
  const double denom = lin.a1 * normal.x + lin.a2 * normal.y;

  StepRecord rec;
  if (observer) {
    rec.sweep = state.sweeps + 1;
    rec.ray = ray;
    rec.hyperplane = plane;
    rec.own_a1 = lin.a1;
    rec.own_a2 = lin.a2;
    rec.target = measured - lin.predicted + lin.a1 * bone + lin.a2 * water;
    rec.bone_before = bone;
    rec.water_before = water;
    rec.normal = normal;
    rec.direction = normal;
  }

  if (!(std::abs(denom) > cfg.skip_eps)) {
    rec.skipped = true;
    notify(observer, rec, state, row);
    return;
  }
  const double step = cfg.relaxation * (measured - lin.predicted) / denom;
  if (!std::isfinite(step)) non_finite(state, ray, plane);
  apply_row_step(state, row, step, normal, cfg.nonneg);
  rec.step = step;
  notify(observer, rec, state, row);
}

template <typename Update>
ReconResult sweep_all(const ReconProblem& problem, const OpmtConfig& cfg, Update&& update) {
  cfg.validate();
  ReconResult out;
  out.state = ReconState::zeros(problem.matrix().cols());
  out.residuals.push_back(sinogram_residual(out.state, problem));
  const std::size_t rays = problem.matrix().rows();
  for (std::size_t s = 0; s < cfg.sweeps; ++s) {
    for (std::size_t l = 0; l < rays; ++l) update(out.state, l);
    out.state.sweeps = s + 1;
    SweepResidual r = sinogram_residual(out.state, problem);
    r.sweep = s + 1;
    out.residuals.push_back(r);
  }
  return out;
}

}  // namespace

bool ray_update(ReconState& state, std::size_t ray, const ReconProblem& problem, const OpmtConfig& cfg,
                const StepObserver& observer) {
  const SparseRow row = problem.matrix().row(ray);
  if (row.empty() || !(row.norm_sq > 0.0)) return false;
  oblique_step(state, ray, row, problem.sino().low.values[ray], problem.low(), problem.high(), 1, cfg, observer);
  oblique_step(state, ray, row, problem.sino().high.values[ray], problem.high(), problem.low(), 2, cfg, observer);
  return true;
}

bool eart_ray_update(ReconState& state, std::size_t ray, const ReconProblem& problem, const OpmtConfig& cfg,
                     const StepObserver& observer) {
  const SparseRow row = problem.matrix().row(ray);
  if (row.empty() || !(row.norm_sq > 0.0)) return false;
  orthogonal_step(state, ray, row, problem.sino().low.values[ray], problem.low(), 1, cfg, observer);
  orthogonal_step(state, ray, row, problem.sino().high.values[ray], problem.high(), 2, cfg, observer);
  return true;
}

SweepResidual sinogram_residual(const ReconState& state, const ReconProblem& problem) {
  const auto& R = problem.matrix();
  std::vector<double> bone(R.rows());
  std::vector<double> water(R.rows());
  R.apply(state.f, bone);
  R.apply(state.g, water);
  SweepResidual r;
  r.sweep = state.sweeps;
  double low = 0.0;
  double high = 0.0;
  for (std::size_t l = 0; l < R.rows(); ++l) {
    const double d1 = problem.sino().low.values[l] - polychromatic_projection(bone[l], water[l], problem.low());
    const double d2 = problem.sino().high.values[l] - polychromatic_projection(bone[l], water[l], problem.high());
    low += d1 * d1;
    high += d2 * d2;
  }
  r.low = std::sqrt(low);
  r.high = std::sqrt(high);
  return r;
}

ReconResult run_opmt(const ReconProblem& problem, const OpmtConfig& cfg, const StepObserver& observer) {
  return sweep_all(problem, cfg,
                   [&](ReconState& state, std::size_t l) { ray_update(state, l, problem, cfg, observer); });
}

ReconResult run_eart(const ReconProblem& problem, const OpmtConfig& cfg, const StepObserver& observer) {
  return sweep_all(problem, cfg,
                   [&](ReconState& state, std::size_t l) { eart_ray_update(state, l, problem, cfg, observer); });
}

std::string residuals_csv(const std::vector<SweepResidual>& residuals) {
  std::string out = "sweep,residual_p1,residual_p2\n";
  char line[96];
  for (const auto& r : residuals) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g\n", r.sweep, r.low, r.high);
    out += line;
  }
  return out;
}

}  // namespace dsct
