#include "dsct/spectra.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "dsct/error.hpp"

namespace dsct {

namespace {

constexpr double kSpacingTolerance = 1e-9;

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    while (!field.empty() && field.front() == ' ') field.erase(field.begin());
    out.push_back(field);
  }
  return out;
}

double parse_number(const std::string& text, const std::filesystem::path& path, std::size_t row) {
  double value = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) {
    throw ValidationError(path.string() + ": row " + std::to_string(row) + ": cannot parse '" + text + "'");
  }
  return value;
}

// Returns data rows (header removed), each with the expected field count.
std::vector<std::vector<double>> read_numeric_csv(const std::filesystem::path& path,
                                                  const std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path.string() + ": empty file");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  if (split_csv_line(line) != header) {
    std::string expected;
    for (const auto& h : header) expected += (expected.empty() ? "" : ",") + h;
    throw ValidationError(path.string() + ": row 1: expected header '" + expected + "'");
  }
  std::vector<std::vector<double>> rows;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw ValidationError(path.string() + ": row " + std::to_string(row) + ": expected " +
                            std::to_string(header.size()) + " fields");
    }
    std::vector<double> values;
    for (const auto& f : fields) values.push_back(parse_number(f, path, row));
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw ValidationError(path.string() + ": no data rows");
  return rows;
}

// Row numbers in messages are 1-based file lines; data row i is line i + 2.
void check_uniform_energies(const std::vector<double>& e, double width, const std::string& where) {
  for (std::size_t i = 1; i < e.size(); ++i) {
    if (!(e[i] > e[i - 1])) {
      throw ValidationError(where + ": row " + std::to_string(i + 2) + ": energies must be strictly increasing");
    }
    if (std::abs((e[i] - e[i - 1]) - width) > kSpacingTolerance) {
      throw ValidationError(where + ": row " + std::to_string(i + 2) + ": non-uniform energy spacing");
    }
  }
}

double interpolate(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
  const auto it = std::lower_bound(xs.begin(), xs.end(), x);
  const auto hi = static_cast<std::size_t>(it - xs.begin());
  if (hi < xs.size() && xs[hi] == x) return ys[hi];
  const std::size_t lo = hi - 1;
  const double t = (x - xs[lo]) / (xs[hi] - xs[lo]);
  return ys[lo] + t * (ys[hi] - ys[lo]);
}

}  // namespace

double SpectrumTable::area() const {
  double s = 0.0;
  for (double w : weights) s += w * bin_width;
  return s;
}

void SpectrumTable::validate() const {
  if (energies.empty()) throw ValidationError("spectrum '" + label + "': no bins");
  if (weights.size() != energies.size()) throw ValidationError("spectrum '" + label + "': weight count mismatch");
  if (!(bin_width > 0.0)) throw ValidationError("spectrum '" + label + "': bin width must be > 0");
  check_uniform_energies(energies, bin_width, "spectrum '" + label + "'");
  bool any_positive = false;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!(weights[i] >= 0.0) || !std::isfinite(weights[i])) {
      throw ValidationError("spectrum '" + label + "': row " + std::to_string(i + 2) + ": negative weight");
    }
    any_positive = any_positive || weights[i] > 0.0;
  }
  if (!any_positive) throw ValidationError("spectrum '" + label + "': all weights are zero");
}

void MaterialTable::validate() const {
  if (energies.empty()) throw ValidationError("material table: no bins");
  if (phi.size() != energies.size() || theta.size() != energies.size()) {
    throw ValidationError("material table: column length mismatch");
  }
  for (std::size_t i = 0; i < energies.size(); ++i) {
    const std::string row = "material table: row " + std::to_string(i + 2);
    if (i > 0 && !(energies[i] > energies[i - 1])) throw ValidationError(row + ": energies must be strictly increasing");
    if (!(phi[i] > 0.0) || !(theta[i] > 0.0)) throw ValidationError(row + ": coefficients must be positive");
    if (i > 0 && (phi[i] > phi[i - 1] || theta[i] > theta[i - 1])) {
      throw ValidationError(row + ": coefficients must be non-increasing in energy");
    }
  }
}

SpectrumTable load_spectrum(const std::filesystem::path& path) {
  const auto rows = read_numeric_csv(path, {"energy_kev", "weight"});
  SpectrumTable t;
  t.label = path.stem().string();
  for (const auto& r : rows) {
    t.energies.push_back(r[0]);
    t.weights.push_back(r[1]);
  }
  t.bin_width = t.energies.size() > 1 ? t.energies[1] - t.energies[0] : 1.0;
  if (!(t.bin_width > 0.0)) {
    throw ValidationError(path.string() + ": row 3: energies must be strictly increasing");
  }
  try {
    t.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return t;
}

MaterialTable load_materials(const std::filesystem::path& path) {
  const auto rows = read_numeric_csv(path, {"energy_kev", "phi", "theta"});
  MaterialTable t;
  for (const auto& r : rows) {
    t.energies.push_back(r[0]);
    t.phi.push_back(r[1]);
    t.theta.push_back(r[2]);
  }
  try {
    t.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return t;
}

SpectrumTable normalize(const SpectrumTable& spectrum) {
  const double area = spectrum.area();
  if (!(area > 0.0)) throw ValidationError("spectrum '" + spectrum.label + "': cannot normalize an all-zero spectrum");
  SpectrumTable out = spectrum;
  if (area == 1.0) return out;
  for (double& w : out.weights) w /= area;
  return out;
}

AlignedTables align(const SpectrumTable& spectrum, const MaterialTable& materials) {
  spectrum.validate();
  materials.validate();
  AlignedTables out;
  out.spectrum.bin_width = spectrum.bin_width;
  out.spectrum.label = spectrum.label;
  for (std::size_t i = 0; i < spectrum.bins(); ++i) {
    if (!(spectrum.weights[i] > 0.0)) continue;
    const double e = spectrum.energies[i];
    if (e < materials.energies.front() || e > materials.energies.back()) {
      throw ValidationError("material table [" + std::to_string(materials.energies.front()) + ", " +
                            std::to_string(materials.energies.back()) + "] keV does not cover spectrum bin at " +
                            std::to_string(e) + " keV");
    }
    out.spectrum.energies.push_back(e);
    out.spectrum.weights.push_back(spectrum.weights[i]);
    out.materials.energies.push_back(e);
    out.materials.phi.push_back(interpolate(materials.energies, materials.phi, e));
    out.materials.theta.push_back(interpolate(materials.energies, materials.theta, e));
  }
  return out;
}

void EnergyBins::validate() const {
  if (weight.empty()) throw ValidationError("energy bins: empty");
  if (phi.size() != weight.size() || theta.size() != weight.size()) {
    throw ValidationError("energy bins: misaligned energy grids");
  }
}

EnergyBins prepare_bins(const SpectrumTable& spectrum, const MaterialTable& materials) {
  const auto aligned = align(normalize(spectrum), materials);
  EnergyBins bins;
  for (std::size_t m = 0; m < aligned.spectrum.bins(); ++m) {
    bins.weight.push_back(aligned.spectrum.weights[m] * aligned.spectrum.bin_width);
  }
  bins.phi = aligned.materials.phi;
  bins.theta = aligned.materials.theta;
  bins.validate();
  return bins;
}

EnergyBins monochromatic_bins(double phi, double theta) { return EnergyBins{{1.0}, {phi}, {theta}}; }

std::filesystem::path bundled_data_dir() {
  if (const char* env = std::getenv("DSCT_DATA_DIR"); env != nullptr && *env != '\0') return env;
  const std::filesystem::path build_dir = DSCT_BUILD_DATA_DIR;
  if (std::filesystem::exists(build_dir / "materials_bone_water.csv")) return build_dir;
  return DSCT_INSTALL_DATA_DIR;
}

std::filesystem::path bundled_low_spectrum() { return bundled_data_dir() / "spectrum_80kv_1mmcu.csv"; }
std::filesystem::path bundled_high_spectrum() { return bundled_data_dir() / "spectrum_140kv_1mmcu.csv"; }
std::filesystem::path bundled_materials() { return bundled_data_dir() / "materials_bone_water.csv"; }

}  // namespace dsct
