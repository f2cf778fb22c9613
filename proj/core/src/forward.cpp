#include "dsct/forward.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "dsct/error.hpp"
#include "dsct/hashing.hpp"
#include "dsct/parallel.hpp"
#include "dsct/tensor_io.hpp"

namespace dsct {

double polychromatic_projection(double bone_path, double water_path, const EnergyBins& bins) {
  double shift = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < bins.size(); ++m) {
    shift = std::min(shift, bins.phi[m] * bone_path + bins.theta[m] * water_path);
  }
  double sum = 0.0;
  for (std::size_t m = 0; m < bins.size(); ++m) {
    sum += bins.weight[m] * std::exp(-(bins.phi[m] * bone_path + bins.theta[m] * water_path - shift));
  }
  return shift - std::log(sum);
}

SinogramPair forward_project(const ImagePair& pair, const ProjectionMatrix& R, const FanBeamGeometry& geom,
                             const EnergyBins& low, const EnergyBins& high) {
  low.validate();
  high.validate();
  pair.validate();
  if (!(pair.grid == R.grid())) throw ValidationError("forward: image grid does not match the projection matrix");
  if (R.rows() != geom.ray_count()) throw ValidationError("forward: projection matrix does not match the geometry");
  if (R.key() != geometry_hash(geom, pair.grid)) throw ValidationError("forward: geometry hash mismatch");

  SinogramPair out{Sinogram(geom.views, geom.detectors), Sinogram(geom.views, geom.detectors), R.key()};
  parallel_for(R.rows(), [&](std::size_t l) {
    const SparseRow row = R.row(l);
    const double bone = row.dot(pair.f.values);
    const double water = row.dot(pair.g.values);
    out.low.values[l] = polychromatic_projection(bone, water, low);
    out.high.values[l] = polychromatic_projection(bone, water, high);
  });
  return out;
}

namespace {

double noisy_entry(double p, double i0, std::uint64_t stream_seed) {
  const double mean = i0 * std::exp(-p);
  long long counts = 0;
  if (mean > 0.0) {
    SplitMix64 rng(stream_seed);
    std::poisson_distribution<long long> dist(mean);
    counts = dist(rng);
  }
  // A ray with no detected photons is clamped to one count so -ln stays finite.
  counts = std::max<long long>(counts, 1);
  return -std::log(static_cast<double>(counts) / i0);
}

}  // namespace

SinogramPair add_poisson_noise(const SinogramPair& sino, double i0, std::uint64_t seed) {
  if (!(i0 > 0.0) || !std::isfinite(i0)) throw ValidationError("noise: I0 must be a positive finite count");
  SinogramPair out = sino;
  const std::size_t n = sino.low.size();
  parallel_for(n, [&](std::size_t i) {
    out.low.values[i] = noisy_entry(sino.low.values[i], i0, derive_seed(seed, i, 1));
    out.high.values[i] = noisy_entry(sino.high.values[i], i0, derive_seed(seed, i, 2));
  });
  return out;
}

void write_sinograms(const std::filesystem::path& dir, const SinogramPair& sino) {
  auto put = [&](const char* name, const Sinogram& s) {
    std::vector<float> data(s.values.begin(), s.values.end());
    write_tensor<float>(dir / name, {s.views, s.detectors}, data);
  };
  put("p1.tsr", sino.low);
  put("p2.tsr", sino.high);
}

SinogramPair read_sinograms(const std::filesystem::path& dir, const std::string& geometry_hash) {
  auto get = [&](const char* name) {
    const auto t = read_tensor<float>(dir / name);
    if (t.shape.size() != 2) throw ValidationError((dir / name).string() + ": expected a 2-D sinogram");
    Sinogram s(t.shape[0], t.shape[1]);
    std::copy(t.values.begin(), t.values.end(), s.values.begin());
    return s;
  };
  SinogramPair out{get("p1.tsr"), get("p2.tsr"), geometry_hash};
  if (out.low.views != out.high.views || out.low.detectors != out.high.detectors) {
    throw ValidationError(dir.string() + ": p1 and p2 shapes differ");
  }
  return out;
}

}  // namespace dsct
