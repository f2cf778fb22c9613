#include "dsct/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <random>
#include <sstream>
#include <string>

#include "dsct/error.hpp"

namespace dsct {

namespace {

template <typename T>
constexpr std::string_view dtype_name();
template <>
constexpr std::string_view dtype_name<float>() { return "f32"; }
template <>
constexpr std::string_view dtype_name<double>() { return "f64"; }
template <>
constexpr std::string_view dtype_name<std::int32_t>() { return "i32"; }
template <>
constexpr std::string_view dtype_name<std::int64_t>() { return "i64"; }

static_assert(sizeof(float) == 4 && sizeof(double) == 8);

template <typename T>
void append_le(std::string& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  out.append(bytes, sizeof(T));
}

template <typename T>
T load_le(const char* src) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, src, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

struct ParsedHeader {
  std::string dtype;
  std::vector<std::size_t> shape;
  std::size_t payload_offset = 0;
};

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw ValidationError(path.string() + ": " + what);
}

ParsedHeader parse_header(const std::filesystem::path& path, const std::string& data) {
  const std::size_t fixed = kTensorMagic.size() + 4;
  if (data.size() < fixed) fail(path, "truncated tensor header");
  if (std::string_view(data.data(), kTensorMagic.size()) != kTensorMagic) fail(path, "bad tensor magic");
  const auto header_len = load_le<std::uint32_t>(data.data() + kTensorMagic.size());
  if (data.size() < fixed + header_len) fail(path, "truncated tensor header");

  ParsedHeader out;
  out.payload_offset = fixed + header_len;
  try {
    const auto header = nlohmann::json::parse(data.begin() + static_cast<std::ptrdiff_t>(fixed),
                                              data.begin() + static_cast<std::ptrdiff_t>(out.payload_offset));
    out.dtype = header.at("dtype").get<std::string>();
    if (header.value("order", std::string("row-major")) != "row-major") fail(path, "unsupported order");
    out.shape = header.at("shape").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    fail(path, std::string("malformed tensor header: ") + e.what());
  }
  return out;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

}  // namespace

std::size_t shape_element_count(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::random_device rd;
  auto tmp = path;
  tmp += ".tmp" + std::to_string(rd());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw std::runtime_error("cannot rename into " + path.string() + ": " + ec.message());
  }
}

template <typename T>
void write_tensor(const std::filesystem::path& path, const std::vector<std::size_t>& shape,
                  const std::vector<T>& values) {
  if (shape_element_count(shape) != values.size()) {
    throw ValidationError(path.string() + ": shape product " + std::to_string(shape_element_count(shape)) +
                          " does not match " + std::to_string(values.size()) + " values");
  }
  nlohmann::json header;
  header["dtype"] = std::string(dtype_name<T>());
  header["order"] = "row-major";
  header["shape"] = shape;
  const std::string header_text = header.dump();

  std::string blob;
  blob.reserve(kTensorMagic.size() + 4 + header_text.size() + values.size() * sizeof(T));
  blob.append(kTensorMagic);
  append_le<std::uint32_t>(blob, static_cast<std::uint32_t>(header_text.size()));
  blob.append(header_text);
  for (const T v : values) append_le<T>(blob, v);
  write_file_atomic(path, blob);
}

template <typename T>
Tensor<T> read_tensor(const std::filesystem::path& path) {
  const std::string data = slurp(path);
  const ParsedHeader header = parse_header(path, data);
  if (header.dtype != dtype_name<T>()) {
    fail(path, "dtype " + header.dtype + " where " + std::string(dtype_name<T>()) + " was expected");
  }
  const std::size_t count = shape_element_count(header.shape);
  const std::size_t expected = header.payload_offset + count * sizeof(T);
  if (data.size() < expected) fail(path, "truncated payload");
  if (data.size() > expected) fail(path, "trailing bytes after payload");

  Tensor<T> out;
  out.shape = header.shape;
  out.values.resize(count);
  const char* p = data.data() + header.payload_offset;
  for (std::size_t i = 0; i < count; ++i) out.values[i] = load_le<T>(p + i * sizeof(T));
  return out;
}

std::string read_tensor_dtype(const std::filesystem::path& path) {
  return parse_header(path, slurp(path)).dtype;
}

template void write_tensor<float>(const std::filesystem::path&, const std::vector<std::size_t>&,
                                  const std::vector<float>&);
template void write_tensor<double>(const std::filesystem::path&, const std::vector<std::size_t>&,
                                   const std::vector<double>&);
template void write_tensor<std::int32_t>(const std::filesystem::path&, const std::vector<std::size_t>&,
                                         const std::vector<std::int32_t>&);
template void write_tensor<std::int64_t>(const std::filesystem::path&, const std::vector<std::size_t>&,
                                         const std::vector<std::int64_t>&);
template Tensor<float> read_tensor<float>(const std::filesystem::path&);
template Tensor<double> read_tensor<double>(const std::filesystem::path&);
template Tensor<std::int32_t> read_tensor<std::int32_t>(const std::filesystem::path&);
template Tensor<std::int64_t> read_tensor<std::int64_t>(const std::filesystem::path&);

}  // namespace dsct
