#pragma once

#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dsct/image.hpp"

namespace dsct {

/// Mean of squared differences. Throws ValidationError on size mismatch.
double mse(std::span<const double> x, std::span<const double> y);
double mse(const Image& x, const Image& y);

/// 10 log10(peak^2 / mse); +infinity when mse == 0. Throws on peak <= 0.
double psnr_from_mse(double mse_value, double peak);
double psnr(const Image& x, const Image& truth, double peak);

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean local SSIM over every position where the Gaussian window fits inside
/// the image ("valid" filtering). Images must be at least window x window.
double ssim(const Image& x, const Image& truth, double data_range, const SsimParams& params = {});

/// Normalized 1-D Gaussian taps of the SSIM window.
std::vector<double> gaussian_window(std::size_t size, double sigma);

struct ChannelMetrics {
  double mse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double peak = 0.0;    ///< ground-truth maximum used as PSNR peak and SSIM data range
  bool scored = false;  ///< false when peak <= 0; psnr / ssim are then undefined
};

struct PairMetrics {
  ChannelMetrics bone;
  ChannelMetrics water;
};

ChannelMetrics evaluate_channel(const Image& prediction, const Image& truth);
PairMetrics evaluate_pair(const Image& pred_f, const Image& pred_g, const Image& truth_f, const Image& truth_g);

/// Averages over samples for each (model, channel), in the layout of a
/// model-comparison table: rows are metric x material, columns are models.
class MetricReport {
 public:
  void add(const std::string& model, const std::string& sample_id, const PairMetrics& metrics);

  struct Summary {
    double mse = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
    std::size_t samples = 0;
    std::size_t scored = 0;  ///< samples contributing to psnr / ssim
  };
  Summary summary(const std::string& model, bool bone) const;
  std::vector<std::string> models() const { return order_; }

  std::string to_json() const;
  std::string to_csv() const;

 private:
  struct Entry {
    std::string sample;
    PairMetrics metrics;
  };
  std::vector<std::string> order_;
  std::map<std::string, std::vector<Entry>> entries_;
};

}  // namespace dsct
