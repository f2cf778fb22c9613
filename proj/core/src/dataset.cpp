#include "dsct/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "dsct/error.hpp"
#include "dsct/forward.hpp"
#include "dsct/hashing.hpp"
#include "dsct/parallel.hpp"
#include "dsct/spectra.hpp"
#include "dsct/tensor_io.hpp"

namespace dsct {

namespace fs = std::filesystem;
using nlohmann::json;

const char* split_name(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ValidationError("unknown split tag '" + name + "'");
}

SplitSpec SplitSpec::parse(const std::string& text) {
  SplitSpec spec;
  std::size_t pos = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const std::size_t end = k < 2 ? text.find(':', pos) : text.size();
    if (end == std::string::npos) throw ValidationError("split '" + text + "' must have the form a:b:c");
    const std::string part = text.substr(pos, end - pos);
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos || part.size() > 12) {
      throw ValidationError("split '" + text + "': '" + part + "' is not a non-negative integer");
    }
    spec.parts[k] = std::stoull(part);
    pos = end + 1;
  }
  if (spec.parts[0] + spec.parts[1] + spec.parts[2] == 0) throw ValidationError("split '" + text + "' is all zero");
  return spec;
}

std::string SplitSpec::to_string() const {
  return std::to_string(parts[0]) + ":" + std::to_string(parts[1]) + ":" + std::to_string(parts[2]);
}

std::array<std::size_t, 3> SplitSpec::sizes(std::size_t count) const {
  const std::size_t total = parts[0] + parts[1] + parts[2];
  if (total == 0) throw ValidationError("split ratio is all zero");
  if (total == count) return parts;
  std::array<std::size_t, 3> out{};
  std::array<std::size_t, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    if (parts[k] != 0 && count > std::numeric_limits<std::size_t>::max() / parts[k]) {
      throw ValidationError("split ratio " + to_string() + " is too large for " + std::to_string(count) + " samples");
    }
    const std::size_t num = count * parts[k];
    out[k] = num / total;
    remainder[k] = num % total;
    assigned += out[k];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < count; ++i, ++assigned) ++out[order[i % 3]];
  return out;
}

std::vector<Split> assign_splits(std::size_t count, const SplitSpec& spec, std::uint64_t seed) {
  const auto sizes = spec.sizes(count);
  std::vector<std::size_t> ids(count);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  // std::shuffle's algorithm is implementation-defined; a hand-written
  // Fisher-Yates on SplitMix64 keeps the assignment portable.
  SplitMix64 rng(derive_seed(seed, 0x5B117, 0));
  for (std::size_t i = count; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(ids[i - 1], ids[j]);
  }
  std::vector<Split> out(count);
  std::size_t pos = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t n = 0; n < sizes[k]; ++n) out[ids[pos++]] = static_cast<Split>(k);
  }
  return out;
}

std::string sample_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return buf;
}

std::string SampleEntry::directory() const { return std::string(split_name(split)) + "/" + id; }

// ---------------------------------------------------------------------------
// config

namespace {

std::string read_text(const fs::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(std::string("cannot open ") + what + " " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_object(const std::string& text, const char* what) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string(what) + ": invalid JSON: " + e.what());
  }
  if (!doc.is_object()) throw ValidationError(std::string(what) + ": document must be a JSON object");
  return doc;
}

double number(const json& v, const std::string& key) {
  if (!v.is_number()) throw ValidationError("dataset config: '" + key + "' must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ValidationError("dataset config: '" + key + "' must be finite");
  return d;
}

std::uint64_t unsigned_int(const json& v, const std::string& key) {
  if (!v.is_number_unsigned()) throw ValidationError("dataset config: '" + key + "' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

std::string text(const json& v, const std::string& key) {
  if (!v.is_string()) throw ValidationError("dataset config: '" + key + "' must be a string");
  return v.get<std::string>();
}

DensityRescale parse_rescale(const json& v, const std::string& key) {
  if (!v.is_object()) throw ValidationError("dataset config: '" + key + "' must be an object");
  DensityRescale r;
  for (const auto& [k, x] : v.items()) {
    if (k == "source_min") r.source_min = number(x, key + "." + k);
    else if (k == "source_max") r.source_max = number(x, key + "." + k);
    else if (k == "target_min") r.target_min = number(x, key + "." + k);
    else if (k == "target_max") r.target_max = number(x, key + "." + k);
    else throw ValidationError("dataset config: unknown key '" + key + "." + k + "'");
  }
  return r;
}

PhantomParams parse_phantom(const json& v) {
  if (!v.is_object()) throw ValidationError("dataset config: 'phantom' must be an object");
  PhantomParams p;
  for (const auto& [k, x] : v.items()) {
    if (k == "mean_count") p.mean_count = number(x, "phantom." + k);
    else if (k == "intensity_mean") p.intensity_mean = number(x, "phantom." + k);
    else if (k == "intensity_sigma") p.intensity_sigma = number(x, "phantom." + k);
    else if (k == "min_axis_fraction") p.min_axis_fraction = number(x, "phantom." + k);
    else if (k == "max_axis_fraction") p.max_axis_fraction = number(x, "phantom." + k);
    else throw ValidationError("dataset config: unknown key 'phantom." + k + "'");
  }
  return p;
}

}  // namespace

void DatasetConfig::validate() const {
  if (count == 0) throw ValidationError("dataset: count must be >= 1");
  geometry.geometry();
  opmt.validate();
  if (!(i0 >= 0.0) || !std::isfinite(i0)) throw ValidationError("dataset: I0 must be >= 0 (0 disables noise)");
  split.sizes(count);
  if (!ingest.empty() && ingest.size() != count) {
    throw ValidationError("dataset: " + std::to_string(ingest.size()) + " ingest pairs but count is " +
                          std::to_string(count));
  }
  if (phantom.mean_count < 0.0 || phantom.intensity_sigma < 0.0) {
    throw ValidationError("dataset: phantom mean_count and intensity_sigma must be >= 0");
  }
  if (!(phantom.min_axis_fraction > 0.0) || phantom.max_axis_fraction < phantom.min_axis_fraction ||
      phantom.max_axis_fraction >= 1.0) {
    throw ValidationError("dataset: phantom axis fractions must satisfy 0 < min <= max < 1");
  }
}

DatasetConfig DatasetConfig::resolved() const {
  DatasetConfig out = *this;
  if (out.low_spectrum.empty()) out.low_spectrum = bundled_low_spectrum();
  if (out.high_spectrum.empty()) out.high_spectrum = bundled_high_spectrum();
  if (out.materials.empty()) out.materials = bundled_materials();
  return out;
}

DatasetConfig DatasetConfig::parse(const std::string& json_text) {
  const json doc = parse_object(json_text, "dataset config");
  DatasetConfig cfg;
  for (const auto& [key, v] : doc.items()) {
    if (key == "count") cfg.count = unsigned_int(v, key);
    else if (key == "geometry") cfg.geometry = GeometrySpec::parse(v.dump());
    else if (key == "low_spectrum") cfg.low_spectrum = text(v, key);
    else if (key == "high_spectrum") cfg.high_spectrum = text(v, key);
    else if (key == "materials") cfg.materials = text(v, key);
    else if (key == "i0") cfg.i0 = number(v, key);
    else if (key == "opmt") cfg.opmt = OpmtConfig::parse(v.dump());
    else if (key == "split") cfg.split = SplitSpec::parse(text(v, key));
    else if (key == "seed") cfg.seed = unsigned_int(v, key);
    else if (key == "phantom") cfg.phantom = parse_phantom(v);
    else if (key == "f_rescale") cfg.f_rescale = parse_rescale(v, key);
    else if (key == "g_rescale") cfg.g_rescale = parse_rescale(v, key);
    else if (key == "ingest") {
      if (!v.is_array()) throw ValidationError("dataset config: 'ingest' must be an array of {f, g}");
      for (const auto& item : v) {
        if (!item.is_object() || item.size() != 2 || !item.contains("f") || !item.contains("g")) {
          throw ValidationError("dataset config: each ingest entry must be exactly {\"f\": path, \"g\": path}");
        }
        cfg.ingest.push_back({text(item["f"], "ingest.f"), text(item["g"], "ingest.g")});
      }
    } else {
      throw ValidationError("dataset config: unknown key '" + key + "'");
    }
  }
  if (!cfg.ingest.empty() && !doc.contains("count")) cfg.count = cfg.ingest.size();
  cfg.validate();
  return cfg;
}

DatasetConfig DatasetConfig::load(const fs::path& path) { return parse(read_text(path, "dataset config")); }

// ---------------------------------------------------------------------------
// manifest

std::size_t DatasetManifest::split_count(Split s) const {
  return static_cast<std::size_t>(
      std::count_if(samples.begin(), samples.end(), [s](const SampleEntry& e) { return e.split == s; }));
}

std::string DatasetManifest::to_json() const {
  json doc;
  doc["version"] = version;
  doc["complete"] = complete;
  doc["shapes"] = {{"image", {image_size, image_size}}, {"sinogram", {views, detectors}}};
  doc["normalization"] = {{"f", scale_f ? json(*scale_f) : json(nullptr)},
                          {"g", scale_g ? json(*scale_g) : json(nullptr)},
                          {"rule", "max ground truth over the train split; divide to normalize"}};
  doc["provenance"] = {{"geometry", json::parse(geometry_json)},
                       {"geometry_hash", geometry_hash},
                       {"low_spectrum_hash", low_spectrum_hash},
                       {"high_spectrum_hash", high_spectrum_hash},
                       {"materials_hash", materials_hash},
                       {"i0", i0},
                       {"opmt", json::parse(opmt_json)},
                       {"split", split},
                       {"seed", seed}};
  json list = json::array();
  for (const auto& s : samples) {
    json files = json::object();
    for (const char* name : kSampleFiles) {
      std::string stem(name);
      stem.resize(stem.size() - 4);
      files[stem] = s.directory() + "/" + name;
    }
    json entry{{"id", s.id}, {"split", split_name(s.split)}, {"seed", s.seed}, {"status", s.status}, {"files", files}};
    if (!s.error.empty()) entry["error"] = s.error;
    list.push_back(std::move(entry));
  }
  doc["samples"] = std::move(list);
  return doc.dump(2) + "\n";
}

DatasetManifest DatasetManifest::parse(const std::string& json_text) {
  const json doc = parse_object(json_text, "manifest");
  DatasetManifest m;
  try {
    m.version = doc.at("version").get<int>();
    if (m.version != 1) throw ValidationError("manifest: unsupported version " + std::to_string(m.version));
    m.complete = doc.at("complete").get<bool>();
    const auto& shapes = doc.at("shapes");
    m.image_size = shapes.at("image").at(0).get<std::size_t>();
    if (shapes.at("image").at(1).get<std::size_t>() != m.image_size) {
      throw ValidationError("manifest: image shape must be square");
    }
    m.views = shapes.at("sinogram").at(0).get<std::size_t>();
    m.detectors = shapes.at("sinogram").at(1).get<std::size_t>();
    const auto& norm = doc.at("normalization");
    if (!norm.at("f").is_null()) m.scale_f = norm.at("f").get<double>();
    if (!norm.at("g").is_null()) m.scale_g = norm.at("g").get<double>();
    const auto& prov = doc.at("provenance");
    m.geometry_json = prov.at("geometry").dump();
    m.geometry_hash = prov.at("geometry_hash").get<std::string>();
    m.low_spectrum_hash = prov.at("low_spectrum_hash").get<std::string>();
    m.high_spectrum_hash = prov.at("high_spectrum_hash").get<std::string>();
    m.materials_hash = prov.at("materials_hash").get<std::string>();
    m.i0 = prov.at("i0").get<double>();
    m.opmt_json = prov.at("opmt").dump();
    m.split = prov.at("split").get<std::string>();
    m.seed = prov.at("seed").get<std::uint64_t>();
    for (const auto& item : doc.at("samples")) {
      SampleEntry e;
      e.id = item.at("id").get<std::string>();
      e.split = parse_split(item.at("split").get<std::string>());
      e.seed = item.at("seed").get<std::uint64_t>();
      e.status = item.at("status").get<std::string>();
      if (item.contains("error")) e.error = item.at("error").get<std::string>();
      const auto& files = item.at("files");
      for (const char* name : kSampleFiles) {
        std::string stem(name);
        stem.resize(stem.size() - 4);
        if (files.at(stem).get<std::string>() != e.directory() + "/" + name) {
          throw ValidationError("manifest: sample " + e.id + " has an unexpected path for " + stem);
        }
      }
      m.samples.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }
  return m;
}

DatasetManifest DatasetManifest::load(const fs::path& root) {
  return parse(read_text(root / "manifest.json", "manifest"));
}

// ---------------------------------------------------------------------------
// build

namespace {

// Stored tensors are f32; round before projecting so the stored ground truth is
// exactly what produced the sinograms.
void round_to_float(Image& img) {
  for (double& v : img.values) v = static_cast<double>(static_cast<float>(v));
}

void write_vector(const fs::path& path, std::size_t n, const std::vector<double>& v) {
  std::vector<float> data(v.begin(), v.end());
  write_tensor<float>(path, {n, n}, data);
}

}  // namespace

DatasetManifest build_dataset(const DatasetConfig& config_in, const fs::path& root, const fs::path& matrix_cache) {
  config_in.validate();
  const DatasetConfig config = config_in.resolved();
  if (fs::exists(root) && !(fs::is_directory(root) && fs::is_empty(root))) {
    throw ValidationError("dataset: output directory " + root.string() + " exists and is not empty");
  }

  const FanBeamGeometry geom = config.geometry.geometry();
  const ImageGrid grid = config.geometry.grid();
  const double fov = fov_radius(geom);
  const SpectrumTable low_table = load_spectrum(config.low_spectrum);
  const SpectrumTable high_table = load_spectrum(config.high_spectrum);
  const MaterialTable materials = load_materials(config.materials);
  const EnergyBins low = prepare_bins(low_table, materials);
  const EnergyBins high = prepare_bins(high_table, materials);

  DatasetManifest manifest;
  manifest.image_size = grid.size;
  manifest.views = geom.views;
  manifest.detectors = geom.detectors;
  manifest.geometry_json = config.geometry.to_json();
  manifest.geometry_hash = geometry_hash(geom, grid);
  manifest.low_spectrum_hash = to_hex(hash_file(config.low_spectrum));
  manifest.high_spectrum_hash = to_hex(hash_file(config.high_spectrum));
  manifest.materials_hash = to_hex(hash_file(config.materials));
  manifest.i0 = config.i0;
  manifest.opmt_json = config.opmt.to_json();
  manifest.split = config.split.to_string();
  manifest.seed = config.seed;

  const auto splits = assign_splits(config.count, config.split, config.seed);
  manifest.samples.resize(config.count);
  for (std::size_t i = 0; i < config.count; ++i) {
    auto& e = manifest.samples[i];
    e.id = sample_id(i);
    e.split = splits[i];
    e.seed = derive_seed(config.seed, i, 0);
  }

  const ProjectionMatrix R =
      matrix_cache.empty() ? build_projection_matrix(geom, grid) : load_or_build_projection_matrix(geom, grid, matrix_cache);

  fs::create_directories(root);
  std::vector<double> max_f(config.count, 0.0), max_g(config.count, 0.0);
  std::exception_ptr first_error;
  std::mutex error_mutex;

  parallel_for(config.count, [&](std::size_t i) {
    auto& entry = manifest.samples[i];
    try {
      ImagePair truth = config.ingest.empty()
                            ? generate_phantom(grid, fov, entry.seed, config.phantom)
                            : ingest_image_pair(config.ingest[i].f, config.ingest[i].g, grid, config.f_rescale,
                                                config.g_rescale);
      round_to_float(truth.f);
      round_to_float(truth.g);
      SinogramPair sino = forward_project(truth, R, geom, low, high);
      if (config.i0 > 0.0) sino = add_poisson_noise(sino, config.i0, derive_seed(config.seed, i, 1));
      // OPMT sees the sinograms as they are stored.
      for (auto* s : {&sino.low, &sino.high}) {
        for (double& v : s->values) v = static_cast<double>(static_cast<float>(v));
      }
      const ReconProblem problem(sino, R, low, high);
      const ReconResult recon = run_opmt(problem, config.opmt);

      const fs::path dir = root / entry.directory();
      fs::create_directories(dir);
      write_image(dir / "f_gt.tsr", truth.f);
      write_image(dir / "g_gt.tsr", truth.g);
      write_vector(dir / "f_opmt.tsr", grid.size, recon.state.f);
      write_vector(dir / "g_opmt.tsr", grid.size, recon.state.g);
      write_sinograms(dir, sino);
      max_f[i] = *std::max_element(truth.f.values.begin(), truth.f.values.end());
      max_g[i] = *std::max_element(truth.g.values.begin(), truth.g.values.end());
      entry.status = "ok";
    } catch (const std::exception& ex) {
      entry.status = "failed";
      entry.error = ex.what();
      std::lock_guard lock(error_mutex);
      if (!first_error) first_error = std::current_exception();
    }
  });

  bool any_train = false;
  double sf = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < config.count; ++i) {
    if (manifest.samples[i].split != Split::train || manifest.samples[i].status != "ok") continue;
    any_train = true;
    sf = std::max(sf, max_f[i]);
    sg = std::max(sg, max_g[i]);
  }
  if (any_train) {
    manifest.scale_f = sf;
    manifest.scale_g = sg;
  }
  manifest.complete = !first_error;
  write_file_atomic(root / "manifest.json", manifest.to_json());
  if (first_error) std::rethrow_exception(first_error);
  return manifest;
}

void verify_manifest(const fs::path& root) {
  const DatasetManifest m = DatasetManifest::load(root);
  if (!m.complete) throw ValidationError("manifest: dataset at " + root.string() + " is flagged incomplete");
  std::set<std::string> ids;
  for (const auto& e : m.samples) {
    if (!ids.insert(e.id).second) throw ValidationError("manifest: duplicate sample id " + e.id);
    if (e.status != "ok") throw ValidationError("manifest: sample " + e.id + " has status " + e.status);
    const fs::path dir = root / e.directory();
    for (const char* name : kSampleFiles) {
      const fs::path p = dir / name;
      if (!fs::exists(p)) throw ValidationError("manifest: missing file " + p.string());
      const auto t = read_tensor<float>(p);
      const bool sino = std::string(name).starts_with("p");
      const std::vector<std::size_t> want =
          sino ? std::vector<std::size_t>{m.views, m.detectors} : std::vector<std::size_t>{m.image_size, m.image_size};
      if (t.shape != want) throw ValidationError("manifest: " + p.string() + " has an unexpected shape");
      for (float v : t.values) {
        if (!std::isfinite(v)) throw ValidationError("manifest: non-finite value in " + p.string());
      }
    }
  }
  // every split directory entry must be declared
  for (const char* s : {"train", "val", "test"}) {
    const fs::path d = root / s;
    if (!fs::exists(d)) continue;
    for (const auto& child : fs::directory_iterator(d)) {
      const std::string id = child.path().filename().string();
      const auto it = std::find_if(m.samples.begin(), m.samples.end(), [&](const SampleEntry& e) { return e.id == id; });
      if (it == m.samples.end() || split_name(it->split) != std::string(s)) {
        throw ValidationError("manifest: undeclared sample directory " + child.path().string());
      }
    }
  }
}

}  // namespace dsct
