#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dsct/geometry.hpp"
#include "dsct/opmt.hpp"
#include "dsct/phantom.hpp"

namespace dsct {

enum class Split { train, val, test };

const char* split_name(Split split);
Split parse_split(const std::string& name);

/// Ratio "a:b:c" over train, val and test. When a+b+c equals the sample count
/// the parts are taken as exact sizes; otherwise they are scaled with
/// largest-remainder rounding (ties go to the earlier split).
struct SplitSpec {
  std::array<std::size_t, 3> parts{8, 1, 1};

  static SplitSpec parse(const std::string& text);
  std::string to_string() const;
  std::array<std::size_t, 3> sizes(std::size_t count) const;
  friend bool operator==(const SplitSpec&, const SplitSpec&) = default;
};

/// Split tag for every sample id, from a deterministic shuffle of the ids.
std::vector<Split> assign_splits(std::size_t count, const SplitSpec& spec, std::uint64_t seed);

struct IngestPair {
  std::filesystem::path f;
  std::filesystem::path g;
};

struct DatasetConfig {
  std::size_t count = 10;
  GeometrySpec geometry;
  std::filesystem::path low_spectrum;   ///< empty: bundled 80 kV table
  std::filesystem::path high_spectrum;  ///< empty: bundled 140 kV table
  std::filesystem::path materials;      ///< empty: bundled bone/water table
  double i0 = 1e5;                      ///< 0 disables noise
  OpmtConfig opmt;
  SplitSpec split;
  std::uint64_t seed = 0;
  PhantomParams phantom;
  std::vector<IngestPair> ingest;  ///< when non-empty, replaces phantom generation; count must match
  std::optional<DensityRescale> f_rescale;
  std::optional<DensityRescale> g_rescale;

  void validate() const;
  /// Fills the spectra / materials paths left empty with the bundled tables.
  DatasetConfig resolved() const;

  static DatasetConfig parse(const std::string& json_text);
  static DatasetConfig load(const std::filesystem::path& path);
};

inline constexpr const char* kSampleFiles[] = {"f_gt.tsr", "g_gt.tsr", "f_opmt.tsr", "g_opmt.tsr", "p1.tsr", "p2.tsr"};

struct SampleEntry {
  std::string id;
  Split split = Split::train;
  std::uint64_t seed = 0;
  std::string status = "pending";  ///< pending | ok | failed
  std::string error;
  std::string directory() const;  ///< relative to the dataset root
};

struct DatasetManifest {
  int version = 1;
  bool complete = false;
  std::vector<SampleEntry> samples;
  std::optional<double> scale_f;  ///< max ground truth over the training split
  std::optional<double> scale_g;
  std::size_t image_size = 0;
  std::size_t views = 0;
  std::size_t detectors = 0;
  std::string geometry_json;
  std::string geometry_hash;
  std::string low_spectrum_hash;
  std::string high_spectrum_hash;
  std::string materials_hash;
  double i0 = 0.0;
  std::string opmt_json;
  std::string split;
  std::uint64_t seed = 0;

  std::string to_json() const;
  static DatasetManifest parse(const std::string& json_text);
  static DatasetManifest load(const std::filesystem::path& root);

  std::size_t split_count(Split s) const;
};

std::string sample_id(std::size_t index);

/// Builds the dataset under `root`, which must be absent or empty. On a sample
/// failure the manifest is still written with complete=false and the first
/// error is rethrown.
DatasetManifest build_dataset(const DatasetConfig& config, const std::filesystem::path& root,
                              const std::filesystem::path& matrix_cache = {});

/// Checks every referenced file exists, parses, and has the declared shape,
/// and that split tags partition the samples. Throws ValidationError.
void verify_manifest(const std::filesystem::path& root);

}  // namespace dsct
