// dsct: command-line driver for the dual-spectral CT pipeline.
//
//   dsct phantom  --out DIR            random ellipse phantom pairs
//   dsct project  --in DIR --out DIR   polychromatic forward projection + noise
//   dsct recon    --in DIR --out DIR   OPMT / E-ART reconstruction
//   dsct dataset  build|verify         training-pair datasets
//   dsct eval     --truth DIR          MSE / PSNR / SSIM tables
//
// Exit codes: 0 ok, 2 invalid input, 3 runtime or numerical failure.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "dsct/dataset.hpp"
#include "dsct/error.hpp"
#include "dsct/forward.hpp"
#include "dsct/geometry.hpp"
#include "dsct/hashing.hpp"
#include "dsct/metrics.hpp"
#include "dsct/opmt.hpp"
#include "dsct/parallel.hpp"
#include "dsct/phantom.hpp"
#include "dsct/spectra.hpp"
#include "dsct/tensor_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Every option is bound to a field here; the file given by --config is loaded
// first and then only the flags actually present on the command line
// override it.
struct Flags {
  std::string config;
  std::size_t threads = 0;

  std::string geometry_file;
  dsct::GeometrySpec geometry;
  std::string low_spectrum;
  std::string high_spectrum;
  std::string materials;
  std::string matrix_cache;

  std::size_t count = 1;
  std::uint64_t seed = 0;
  dsct::PhantomParams phantom;
  double i0 = 1e5;
  std::string split = "8:1:1";

  std::string method = "opmt";
  dsct::OpmtConfig opmt;

  std::string in;
  std::string out;
  std::string spec;
  std::string truth;
  std::string eval_split = "test";
  std::vector<std::string> preds{"opmt=opmt"};
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw dsct::ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool given(const CLI::App* app, const std::string& name) {
  for (const CLI::App* a = app; a != nullptr; a = a->get_parent()) {
    try {
      if (a->count(name) > 0) return true;
    } catch (const CLI::OptionNotFound&) {
    }
  }
  return false;
}

template <typename T>
void take(const CLI::App* app, const std::string& name, const T& flag, T& dst) {
  if (given(app, name)) dst = flag;
}

void add_geometry_options(CLI::App* app, Flags& f) {
  app->add_option("--geometry", f.geometry_file, "Geometry JSON (keys n_s, n_d, l_d, d1, d2, n_r)")
      ->check(CLI::ExistingFile);
  app->add_option("--views", f.geometry.views, "Projection angles n_S over a full rotation");
  app->add_option("--detectors", f.geometry.detectors, "Detector elements n_D");
  app->add_option("--detector-size", f.geometry.detector_size, "Detector element length l_D");
  app->add_option("--d1", f.geometry.source_to_object, "Source-to-rotation-center distance D1");
  app->add_option("--d2", f.geometry.object_to_detector, "Rotation-center-to-detector distance D2");
  app->add_option("--size", f.geometry.grid_size, "Image grid size n_R (square, circumscribing the FOV)");
}

void add_spectra_options(CLI::App* app, Flags& f) {
  app->add_option("--low-spectrum", f.low_spectrum, "Low-energy spectrum CSV (energy_kev,weight)")
      ->default_str("bundled 80 kV, 1 mm Cu");
  app->add_option("--high-spectrum", f.high_spectrum, "High-energy spectrum CSV (energy_kev,weight)")
      ->default_str("bundled 140 kV, 1 mm Cu");
  app->add_option("--materials", f.materials, "Material table CSV (energy_kev,phi,theta)")
      ->default_str("bundled bone/water");
}

void add_opmt_options(CLI::App* app, Flags& f) {
  app->add_option("--iters", f.opmt.sweeps, "Full sweeps over all rays");
  app->add_option("--lambda1", f.opmt.lambda1, "Weight of the hyperplane-normal direction");
  app->add_option("--lambda2", f.opmt.lambda2, "Weight of the acute line direction");
  app->add_option("--relaxation", f.opmt.relaxation, "Relaxation factor in (0, 2]");
  app->add_flag("--nonneg", f.opmt.nonneg, "Clamp densities at zero after every step");
}

void add_phantom_options(CLI::App* app, Flags& f) {
  app->add_option("--mean-count", f.phantom.mean_count, "Poisson mean of ellipses per channel");
  app->add_option("--intensity-mean", f.phantom.intensity_mean, "Gaussian mean of ellipse intensity");
  app->add_option("--intensity-sigma", f.phantom.intensity_sigma, "Gaussian sigma of ellipse intensity");
}

dsct::DatasetConfig merged_config(const CLI::App* app, const Flags& f) {
  dsct::DatasetConfig cfg;
  if (!f.config.empty()) cfg = dsct::DatasetConfig::parse(read_text(f.config));
  if (!f.geometry_file.empty()) cfg.geometry = dsct::GeometrySpec::load(f.geometry_file);
  take(app, "--views", f.geometry.views, cfg.geometry.views);
  take(app, "--detectors", f.geometry.detectors, cfg.geometry.detectors);
  take(app, "--detector-size", f.geometry.detector_size, cfg.geometry.detector_size);
  take(app, "--d1", f.geometry.source_to_object, cfg.geometry.source_to_object);
  take(app, "--d2", f.geometry.object_to_detector, cfg.geometry.object_to_detector);
  take(app, "--size", f.geometry.grid_size, cfg.geometry.grid_size);
  if (given(app, "--low-spectrum")) cfg.low_spectrum = f.low_spectrum;
  if (given(app, "--high-spectrum")) cfg.high_spectrum = f.high_spectrum;
  if (given(app, "--materials")) cfg.materials = f.materials;
  take(app, "--count", f.count, cfg.count);
  take(app, "--seed", f.seed, cfg.seed);
  take(app, "--i0", f.i0, cfg.i0);
  if (given(app, "--split")) cfg.split = dsct::SplitSpec::parse(f.split);
  take(app, "--mean-count", f.phantom.mean_count, cfg.phantom.mean_count);
  take(app, "--intensity-mean", f.phantom.intensity_mean, cfg.phantom.intensity_mean);
  take(app, "--intensity-sigma", f.phantom.intensity_sigma, cfg.phantom.intensity_sigma);
  take(app, "--iters", f.opmt.sweeps, cfg.opmt.sweeps);
  take(app, "--lambda1", f.opmt.lambda1, cfg.opmt.lambda1);
  take(app, "--lambda2", f.opmt.lambda2, cfg.opmt.lambda2);
  take(app, "--relaxation", f.opmt.relaxation, cfg.opmt.relaxation);
  take(app, "--nonneg", f.opmt.nonneg, cfg.opmt.nonneg);
  cfg.validate();
  return cfg.resolved();
}

dsct::ProjectionMatrix matrix_for(const dsct::DatasetConfig& cfg, const Flags& f) {
  const auto geom = cfg.geometry.geometry();
  const auto grid = cfg.geometry.grid();
  if (f.matrix_cache.empty()) return dsct::build_projection_matrix(geom, grid);
  return dsct::load_or_build_projection_matrix(geom, grid, f.matrix_cache);
}

void round_to_float(dsct::Image& img) {
  for (double& v : img.values) v = static_cast<double>(static_cast<float>(v));
}

void write_square(const fs::path& path, std::size_t n, const std::vector<double>& v) {
  dsct::write_tensor<float>(path, {n, n}, std::vector<float>(v.begin(), v.end()));
}

// ---------------------------------------------------------------------------

int cmd_phantom(const CLI::App* app, const Flags& f) {
  const auto cfg = merged_config(app, f);
  const auto geom = cfg.geometry.geometry();
  const auto grid = cfg.geometry.grid();
  const double fov = dsct::fov_radius(geom);
  const fs::path out = f.out;
  dsct::parallel_for(cfg.count, [&](std::size_t i) {
    auto pair = dsct::generate_phantom(grid, fov, dsct::derive_seed(cfg.seed, i, 0), cfg.phantom);
    round_to_float(pair.f);
    round_to_float(pair.g);
    const fs::path dir = out / dsct::sample_id(i);
    fs::create_directories(dir);
    dsct::write_image(dir / "f_gt.tsr", pair.f);
    dsct::write_image(dir / "g_gt.tsr", pair.g);
  });
  json meta{{"geometry", json::parse(cfg.geometry.to_json())}, {"count", cfg.count}, {"seed", cfg.seed}};
  dsct::write_file_atomic(out / "phantoms.json", meta.dump(2) + "\n");
  std::printf("wrote %zu phantom pair(s) of %zux%zu to %s\n", cfg.count, grid.size, grid.size, out.c_str());
  return 0;
}

int cmd_project(const CLI::App* app, const Flags& f) {
  const auto cfg = merged_config(app, f);
  const auto geom = cfg.geometry.geometry();
  const auto grid = cfg.geometry.grid();
  const fs::path in = f.in;
  const fs::path out = f.out;
  const auto pair = dsct::ingest_image_pair(in / "f_gt.tsr", in / "g_gt.tsr", grid);
  const auto materials = dsct::load_materials(cfg.materials);
  const auto low = dsct::prepare_bins(dsct::load_spectrum(cfg.low_spectrum), materials);
  const auto high = dsct::prepare_bins(dsct::load_spectrum(cfg.high_spectrum), materials);
  const auto R = matrix_for(cfg, f);

  auto sino = dsct::forward_project(pair, R, geom, low, high);
  if (cfg.i0 > 0.0) sino = dsct::add_poisson_noise(sino, cfg.i0, dsct::derive_seed(cfg.seed, 0, 1));
  fs::create_directories(out);
  dsct::write_sinograms(out, sino);
  json side{{"geometry", json::parse(cfg.geometry.to_json())},
            {"geometry_hash", sino.geometry_hash},
            {"i0", cfg.i0},
            {"seed", cfg.seed},
            {"low_spectrum", cfg.low_spectrum.string()},
            {"high_spectrum", cfg.high_spectrum.string()},
            {"materials", cfg.materials.string()},
            {"low_spectrum_hash", dsct::to_hex(dsct::hash_file(cfg.low_spectrum))},
            {"high_spectrum_hash", dsct::to_hex(dsct::hash_file(cfg.high_spectrum))},
            {"materials_hash", dsct::to_hex(dsct::hash_file(cfg.materials))}};
  dsct::write_file_atomic(out / "sinogram.json", side.dump(2) + "\n");
  std::printf("wrote %zux%zu sinograms (p1, p2) to %s\n", geom.views, geom.detectors, out.c_str());
  return 0;
}

int cmd_recon(const CLI::App* app, const Flags& f) {
  const fs::path in = f.in;
  dsct::DatasetConfig cfg = merged_config(app, f);
  // The projection sidecar supplies geometry and spectra for anything not set
  // explicitly.
  const fs::path sidecar = in / "sinogram.json";
  if (fs::exists(sidecar) && f.geometry_file.empty() && f.config.empty()) {
    try {
      const json side = json::parse(read_text(sidecar));
      const auto g = dsct::GeometrySpec::parse(side.at("geometry").dump());
      if (!given(app, "--views")) cfg.geometry.views = g.views;
      if (!given(app, "--detectors")) cfg.geometry.detectors = g.detectors;
      if (!given(app, "--detector-size")) cfg.geometry.detector_size = g.detector_size;
      if (!given(app, "--d1")) cfg.geometry.source_to_object = g.source_to_object;
      if (!given(app, "--d2")) cfg.geometry.object_to_detector = g.object_to_detector;
      if (!given(app, "--size")) cfg.geometry.grid_size = g.grid_size;
      if (!given(app, "--low-spectrum")) cfg.low_spectrum = side.at("low_spectrum").get<std::string>();
      if (!given(app, "--high-spectrum")) cfg.high_spectrum = side.at("high_spectrum").get<std::string>();
      if (!given(app, "--materials")) cfg.materials = side.at("materials").get<std::string>();
    } catch (const json::exception& e) {
      throw dsct::ValidationError("malformed " + sidecar.string() + ": " + e.what());
    }
  }

  if (f.method == "eart") {
    // E-ART is OPMT restricted to the normal direction; other weights are a contradiction.
    const double l1 = given(app, "--lambda1") ? f.opmt.lambda1 : 1.0;
    const double l2 = given(app, "--lambda2") ? f.opmt.lambda2 : 0.0;
    if (l1 != 1.0 || l2 != 0.0) {
      throw dsct::ValidationError("--method eart implies lambda1=1, lambda2=0; got " + std::to_string(l1) + ", " +
                                  std::to_string(l2));
    }
    cfg.opmt.lambda1 = 1.0;
    cfg.opmt.lambda2 = 0.0;
  }
  cfg.opmt.validate();

  const auto geom = cfg.geometry.geometry();
  const auto grid = cfg.geometry.grid();
  const auto R = matrix_for(cfg, f);
  const auto sino = dsct::read_sinograms(in, R.key());
  if (sino.low.views != geom.views || sino.low.detectors != geom.detectors) {
    throw dsct::ValidationError("sinograms in " + in.string() + " do not match the geometry");
  }
  const auto materials = dsct::load_materials(cfg.materials);
  const auto low = dsct::prepare_bins(dsct::load_spectrum(cfg.low_spectrum), materials);
  const auto high = dsct::prepare_bins(dsct::load_spectrum(cfg.high_spectrum), materials);
  const dsct::ReconProblem problem(sino, R, low, high);
  const auto result = f.method == "eart" ? dsct::run_eart(problem, cfg.opmt) : dsct::run_opmt(problem, cfg.opmt);

  const fs::path out = f.out;
  fs::create_directories(out);
  write_square(out / ("f_" + f.method + ".tsr"), grid.size, result.state.f);
  write_square(out / ("g_" + f.method + ".tsr"), grid.size, result.state.g);
  dsct::write_file_atomic(out / "residuals.csv", dsct::residuals_csv(result.residuals));
  const auto& last = result.residuals.back();
  std::printf("%s: %zu sweep(s), residual p1=%.6e p2=%.6e\n", f.method.c_str(), cfg.opmt.sweeps, last.low, last.high);
  return 0;
}

int cmd_dataset_build(const CLI::App* app, Flags f) {
  if (!f.spec.empty()) {
    if (!f.config.empty()) throw dsct::ValidationError("give the build spec either positionally or via --config");
    f.config = f.spec;
  }
  const auto cfg = merged_config(app, f);
  const auto manifest = dsct::build_dataset(cfg, f.out, f.matrix_cache);
  std::printf("built %zu samples (train %zu, val %zu, test %zu) in %s\n", manifest.samples.size(),
              manifest.split_count(dsct::Split::train), manifest.split_count(dsct::Split::val),
              manifest.split_count(dsct::Split::test), f.out.c_str());
  return 0;
}

int cmd_dataset_verify(const Flags& f) {
  dsct::verify_manifest(f.in);
  const auto m = dsct::DatasetManifest::load(f.in);
  std::printf("ok: %zu samples verified in %s\n", m.samples.size(), f.in.c_str());
  return 0;
}

struct PredSource {
  std::string label;
  std::string suffix;
  fs::path root;  // empty: alongside the truth
};

PredSource parse_pred(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size()) {
    throw dsct::ValidationError("--pred '" + text + "' must look like label=suffix[@dir]");
  }
  PredSource p;
  p.label = text.substr(0, eq);
  std::string rest = text.substr(eq + 1);
  if (const auto at = rest.find('@'); at != std::string::npos) {
    p.root = rest.substr(at + 1);
    rest = rest.substr(0, at);
  }
  if (rest.empty()) throw dsct::ValidationError("--pred '" + text + "' has an empty suffix");
  p.suffix = rest;
  return p;
}

int cmd_eval(const Flags& f) {
  std::vector<PredSource> preds;
  for (const auto& p : f.preds) preds.push_back(parse_pred(p));

  const fs::path truth = f.truth;
  std::vector<std::pair<std::string, fs::path>> samples;  // id, directory relative to the root
  if (fs::exists(truth / "manifest.json")) {
    const auto m = dsct::DatasetManifest::load(truth);
    for (const auto& e : m.samples) {
      if (f.eval_split != "all" && split_name(e.split) != f.eval_split) continue;
      samples.emplace_back(e.id, e.directory());
    }
  } else {
    samples.emplace_back(truth.filename().string(), fs::path{});
  }
  if (samples.empty()) throw dsct::ValidationError("no samples to evaluate in " + truth.string());

  dsct::MetricReport report;
  for (const auto& pred : preds) {
    const fs::path root = pred.root.empty() ? truth : pred.root;
    for (const auto& [id, rel] : samples) {
      const auto tf = dsct::read_image(truth / rel / "f_gt.tsr");
      const auto tg = dsct::read_image(truth / rel / "g_gt.tsr");
      const auto pf = dsct::read_image(root / rel / ("f_" + pred.suffix + ".tsr"));
      const auto pg = dsct::read_image(root / rel / ("g_" + pred.suffix + ".tsr"));
      report.add(pred.label, id, dsct::evaluate_pair(pf, pg, tf, tg));
    }
  }
  const std::string csv = report.to_csv();
  if (!f.out.empty()) {
    const fs::path out = f.out;
    fs::create_directories(out);
    dsct::write_file_atomic(out / "metrics.csv", csv);
    dsct::write_file_atomic(out / "metrics.json", report.to_json());
  }
  std::fputs(csv.c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-spectral CT toolkit: phantoms, polychromatic projection, OPMT reconstruction, datasets, metrics"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_version_flag("--version", "dsct 1.0.0");

  Flags f;
  app.add_option("--threads", f.threads, "Worker thread cap (0 = all hardware threads)");
  app.add_option("--config", f.config, "JSON run configuration; command-line flags take precedence")
      ->check(CLI::ExistingFile);

  auto* phantom = app.add_subcommand("phantom", "Generate random ellipse phantom pairs (f = bone, g = water)");
  phantom->add_option("--count", f.count, "Number of phantom pairs");
  phantom->add_option("--seed", f.seed, "Master seed");
  phantom->add_option("--out", f.out, "Output directory (one <id>/ per pair)")->required();
  add_geometry_options(phantom, f);
  add_phantom_options(phantom, f);

  auto* project = app.add_subcommand("project", "Polychromatic dual-spectrum forward projection with Poisson noise");
  project->add_option("--in", f.in, "Directory holding f_gt.tsr and g_gt.tsr")->required()->check(CLI::ExistingDirectory);
  project->add_option("--out", f.out, "Output directory for p1.tsr, p2.tsr, sinogram.json")->required();
  project->add_option("--i0", f.i0, "Incident photons per detector element (0 = noise-free)");
  project->add_option("--seed", f.seed, "Noise seed");
  project->add_option("--matrix-cache", f.matrix_cache, "Directory caching projection matrices");
  add_geometry_options(project, f);
  add_spectra_options(project, f);

  auto* recon = app.add_subcommand("recon", "Reconstruct basis images from a dual-spectrum sinogram pair");
  recon->add_option("--in", f.in, "Directory holding p1.tsr, p2.tsr (and sinogram.json)")
      ->required()
      ->check(CLI::ExistingDirectory);
  recon->add_option("--out", f.out, "Output directory for f_<method>.tsr, g_<method>.tsr, residuals.csv")->required();
  recon->add_option("--method", f.method, "Solver")->check(CLI::IsMember({"opmt", "eart"}));
  recon->add_option("--matrix-cache", f.matrix_cache, "Directory caching projection matrices");
  add_opmt_options(recon, f);
  add_geometry_options(recon, f);
  add_spectra_options(recon, f);

  auto* dataset = app.add_subcommand("dataset", "Build or verify a training-pair dataset");
  dataset->require_subcommand(1);
  auto* build = dataset->add_subcommand("build", "Generate, project, reconstruct and store every sample");
  build->add_option("spec", f.spec, "Optional JSON build spec (same keys as --config)")->check(CLI::ExistingFile);
  build->add_option("--out", f.out, "Dataset root (must be absent or empty)")->required();
  build->add_option("--count", f.count, "Number of samples");
  build->add_option("--split", f.split, "train:val:test ratio or exact sizes");
  build->add_option("--seed", f.seed, "Master seed");
  build->add_option("--i0", f.i0, "Incident photons per detector element (0 = noise-free)");
  build->add_option("--matrix-cache", f.matrix_cache, "Directory caching projection matrices");
  add_geometry_options(build, f);
  add_spectra_options(build, f);
  add_opmt_options(build, f);
  add_phantom_options(build, f);
  auto* verify = dataset->add_subcommand("verify", "Check a dataset against its manifest");
  verify->add_option("root", f.in, "Dataset root")->required()->check(CLI::ExistingDirectory);

  auto* eval = app.add_subcommand("eval", "Average MSE / PSNR / SSIM per model and material");
  eval->add_option("--truth", f.truth, "Dataset root, or a directory holding f_gt.tsr and g_gt.tsr")
      ->required()
      ->check(CLI::ExistingDirectory);
  eval->add_option("--pred", f.preds, "Prediction source label=suffix[@dir]; reads f_<suffix>.tsr, g_<suffix>.tsr");
  eval->add_option("--split", f.eval_split, "Dataset split to score")->check(CLI::IsMember({"train", "val", "test", "all"}));
  eval->add_option("--out", f.out, "Directory for metrics.csv and metrics.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    dsct::set_max_threads(f.threads);
    if (phantom->parsed()) return cmd_phantom(phantom, f);
    if (project->parsed()) return cmd_project(project, f);
    if (recon->parsed()) return cmd_recon(recon, f);
    if (build->parsed()) return cmd_dataset_build(build, f);
    if (verify->parsed()) return cmd_dataset_verify(f);
    if (eval->parsed()) return cmd_eval(f);
  } catch (const dsct::ValidationError& e) {
    std::fprintf(stderr, "dsct: error: %s\n", e.what());
    return 2;
  } catch (const dsct::NumericalError& e) {
    std::fprintf(stderr, "dsct: numerical error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "dsct: error: %s\n", e.what());
    return 3;
  }
  return 2;
}
