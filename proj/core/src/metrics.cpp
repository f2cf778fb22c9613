#include "dsct/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>

#include "dsct/error.hpp"

namespace dsct {

double mse(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("mse: size mismatch");
  if (x.empty()) throw ValidationError("mse: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    acc += d * d;
  }
  return acc / static_cast<double>(x.size());
}

double mse(const Image& x, const Image& y) {
  if (!x.same_shape(y)) throw ValidationError("mse: shape mismatch");
  return mse(x.view(), y.view());
}

double psnr_from_mse(double mse_value, double peak) {
  if (!(peak > 0.0)) throw ValidationError("psnr: peak must be > 0");
  if (mse_value == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse_value);
}

double psnr(const Image& x, const Image& truth, double peak) { return psnr_from_mse(mse(x, truth), peak); }

std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> taps(size);
  const double center = 0.5 * static_cast<double>(size - 1);
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - center;
    taps[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += taps[i];
  }
  for (double& t : taps) t /= total;
  return taps;
}

namespace {

// Separable "valid" correlation of src with taps (rows then columns).
Image filter_valid(const Image& src, const std::vector<double>& taps) {
  const std::size_t w = taps.size();
  const std::size_t out_cols = src.cols - w + 1;
  const std::size_t out_rows = src.rows - w + 1;
  Image horizontal(src.rows, out_cols);
  for (std::size_t r = 0; r < src.rows; ++r) {
    for (std::size_t c = 0; c < out_cols; ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < w; ++k) acc += taps[k] * src.at(r, c + k);
      horizontal.at(r, c) = acc;
    }
  }
  Image out(out_rows, out_cols);
  for (std::size_t r = 0; r < out_rows; ++r) {
    for (std::size_t c = 0; c < out_cols; ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < w; ++k) acc += taps[k] * horizontal.at(r + k, c);
      out.at(r, c) = acc;
    }
  }
  return out;
}

Image product(const Image& a, const Image& b) {
  Image out(a.rows, a.cols);
  for (std::size_t i = 0; i < a.size(); ++i) out.values[i] = a.values[i] * b.values[i];
  return out;
}

}  // namespace

double ssim(const Image& x, const Image& truth, double data_range, const SsimParams& params) {
  if (!x.same_shape(truth)) throw ValidationError("ssim: shape mismatch");
  if (!(data_range > 0.0)) throw ValidationError("ssim: data range must be > 0");
  if (x.rows < params.window || x.cols < params.window) {
    throw ValidationError("ssim: image smaller than the " + std::to_string(params.window) + "-pixel window");
  }
  const auto taps = gaussian_window(params.window, params.sigma);
  const double c1 = (params.k1 * data_range) * (params.k1 * data_range);
  const double c2 = (params.k2 * data_range) * (params.k2 * data_range);

  const Image mu_x = filter_valid(x, taps);
  const Image mu_y = filter_valid(truth, taps);
  const Image xx = filter_valid(product(x, x), taps);
  const Image yy = filter_valid(product(truth, truth), taps);
  const Image xy = filter_valid(product(x, truth), taps);

  double total = 0.0;
  for (std::size_t i = 0; i < mu_x.size(); ++i) {
    const double mx = mu_x.values[i];
    const double my = mu_y.values[i];
    const double var_x = xx.values[i] - mx * mx;
    const double var_y = yy.values[i] - my * my;
    const double cov = xy.values[i] - mx * my;
    const double num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
    const double den = (mx * mx + my * my + c1) * (var_x + var_y + c2);
    total += num / den;
  }
  return total / static_cast<double>(mu_x.size());
}

ChannelMetrics evaluate_channel(const Image& prediction, const Image& truth) {
  ChannelMetrics m;
  m.mse = mse(prediction, truth);
  m.peak = truth.values.empty() ? 0.0 : *std::max_element(truth.values.begin(), truth.values.end());
  if (m.peak > 0.0) {
    m.psnr = psnr_from_mse(m.mse, m.peak);
    m.ssim = ssim(prediction, truth, m.peak);
    m.scored = true;
  }
  return m;
}

PairMetrics evaluate_pair(const Image& pred_f, const Image& pred_g, const Image& truth_f, const Image& truth_g) {
  return {evaluate_channel(pred_f, truth_f), evaluate_channel(pred_g, truth_g)};
}

void MetricReport::add(const std::string& model, const std::string& sample_id, const PairMetrics& metrics) {
  if (!entries_.contains(model)) order_.push_back(model);
  entries_[model].push_back({sample_id, metrics});
}

MetricReport::Summary MetricReport::summary(const std::string& model, bool bone) const {
  Summary s;
  const auto it = entries_.find(model);
  if (it == entries_.end()) return s;
  for (const auto& e : it->second) {
    const ChannelMetrics& c = bone ? e.metrics.bone : e.metrics.water;
    s.mse += c.mse;
    ++s.samples;
    if (c.scored) {
      s.psnr += c.psnr;
      s.ssim += c.ssim;
      ++s.scored;
    }
  }
  if (s.samples > 0) s.mse /= static_cast<double>(s.samples);
  if (s.scored > 0) {
    s.psnr /= static_cast<double>(s.scored);
    s.ssim /= static_cast<double>(s.scored);
  } else {
    s.psnr = std::numeric_limits<double>::quiet_NaN();
    s.ssim = std::numeric_limits<double>::quiet_NaN();
  }
  return s;
}

namespace {

nlohmann::json number_or_text(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return nullptr;
  return v > 0 ? "inf" : "-inf";
}

std::string format_value(double v, const char* fmt) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

nlohmann::json channel_json(const ChannelMetrics& c) {
  nlohmann::json j{{"mse", c.mse}, {"peak", c.peak}, {"scored", c.scored}};
  j["psnr"] = c.scored ? number_or_text(c.psnr) : nlohmann::json(nullptr);
  j["ssim"] = c.scored ? number_or_text(c.ssim) : nlohmann::json(nullptr);
  return j;
}

}  // namespace

std::string MetricReport::to_json() const {
  nlohmann::json doc;
  doc["peak_convention"] = "per-sample, per-channel maximum of the ground truth (PSNR peak and SSIM data range)";
  doc["ssim"] = {{"window", 11}, {"sigma", 1.5}, {"k1", 0.01}, {"k2", 0.03}, {"border", "valid"}};
  nlohmann::json models = nlohmann::json::array();
  for (const auto& name : order_) {
    nlohmann::json m;
    m["model"] = name;
    for (const bool bone : {true, false}) {
      const Summary s = summary(name, bone);
      m[bone ? "bone" : "water"] = {{"mse", s.mse},
                                    {"psnr", number_or_text(s.psnr)},
                                    {"ssim", number_or_text(s.ssim)},
                                    {"samples", s.samples},
                                    {"scored", s.scored}};
    }
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& e : entries_.at(name)) {
      samples.push_back({{"id", e.sample}, {"bone", channel_json(e.metrics.bone)},
                         {"water", channel_json(e.metrics.water)}});
    }
    m["samples"] = std::move(samples);
    models.push_back(std::move(m));
  }
  doc["models"] = std::move(models);
  return doc.dump(2) + "\n";
}

std::string MetricReport::to_csv() const {
  std::string out = "metric";
  for (const auto& name : order_) out += "," + name;
  out += "\n";
  for (const bool bone : {true, false}) {
    const std::string material = bone ? "Bone" : "Water";
    std::string mse_row = "Average MSE (" + material + ")";
    std::string psnr_row = "Average PSNR (" + material + ") (dB)";
    std::string ssim_row = "Average SSIM (" + material + ")";
    for (const auto& name : order_) {
      const Summary s = summary(name, bone);
      mse_row += "," + format_value(s.mse, "%.6e");
      psnr_row += "," + format_value(s.psnr, "%.4f");
      ssim_row += "," + format_value(s.ssim, "%.8f");
    }
    out += mse_row + "\n" + psnr_row + "\n" + ssim_row + "\n";
  }
  return out;
}

}  // namespace dsct
