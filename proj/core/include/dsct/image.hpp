#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dsct {

/// Row-major 2-D array of doubles. Row index is the slow axis.
struct Image {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Image() = default;
  Image(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

  std::size_t size() const { return values.size(); }
  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<const double> view() const { return values; }
  std::span<double> view() { return values; }

  bool same_shape(const Image& other) const { return rows == other.rows && cols == other.cols; }
  friend bool operator==(const Image&, const Image&) = default;
};

}  // namespace dsct
