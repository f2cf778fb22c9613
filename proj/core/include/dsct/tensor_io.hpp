#pragma once

// Binary tensor container shared with the refinement component.
//
// Layout (all integers little-endian):
//   bytes 0..8    magic "DSCT-TSR1"
//   bytes 9..12   header length H (uint32)
//   bytes 13..    H bytes of JSON: {"dtype":"f32","order":"row-major","shape":[...]}
//   then          raw little-endian payload, prod(shape) elements
//
// Images and sinograms are always stored as "f32". The wider dtypes "f64",
// "i32" and "i64" exist for the projection-matrix cache only.

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

namespace dsct {

inline constexpr std::string_view kTensorMagic = "DSCT-TSR1";

template <typename T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> values;

  std::size_t element_count() const;
};

/// Product of the dimensions; 1 for a scalar (empty shape).
std::size_t shape_element_count(const std::vector<std::size_t>& shape);

/// Writes atomically (temporary file, then rename). Throws ValidationError when
/// the shape product does not match the value count.
template <typename T>
void write_tensor(const std::filesystem::path& path, const std::vector<std::size_t>& shape,
                  const std::vector<T>& values);

/// Throws ValidationError naming the file on bad magic, malformed header,
/// dtype mismatch, or truncated payload.
template <typename T>
Tensor<T> read_tensor(const std::filesystem::path& path);

/// Returns the dtype string stored in a file's header without reading the payload.
std::string read_tensor_dtype(const std::filesystem::path& path);

/// Writes bytes to path via a sibling temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

extern template void write_tensor<float>(const std::filesystem::path&, const std::vector<std::size_t>&,
                                         const std::vector<float>&);
extern template void write_tensor<double>(const std::filesystem::path&, const std::vector<std::size_t>&,
                                          const std::vector<double>&);
extern template void write_tensor<std::int32_t>(const std::filesystem::path&, const std::vector<std::size_t>&,
                                                const std::vector<std::int32_t>&);
extern template void write_tensor<std::int64_t>(const std::filesystem::path&, const std::vector<std::size_t>&,
                                                const std::vector<std::int64_t>&);
extern template Tensor<float> read_tensor<float>(const std::filesystem::path&);
extern template Tensor<double> read_tensor<double>(const std::filesystem::path&);
extern template Tensor<std::int32_t> read_tensor<std::int32_t>(const std::filesystem::path&);
extern template Tensor<std::int64_t> read_tensor<std::int64_t>(const std::filesystem::path&);

template <typename T>
std::size_t Tensor<T>::element_count() const {
  return shape_element_count(shape);
}

}  // namespace dsct
