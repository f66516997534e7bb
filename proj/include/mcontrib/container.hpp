#pragma once

// MTN1 tensor container:
//   "MTN1\n"
//   {"dtype":"f32","shape":[d0,d1,...]}\n
//   prod(shape) little-endian IEEE-754 float32 values

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mcontrib/error.hpp"
#include "mcontrib/tensor.hpp"

namespace mcontrib {

inline constexpr std::string_view mtn_magic = "MTN1\n";

namespace detail {

inline std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xFF) << 24) | ((v & 0xFF00) << 8) | ((v >> 8) & 0xFF00) | (v >> 24);
  }
  return v;
}

}  // namespace detail

/// Serializes `tensor` as MTN1. Values are narrowed to float32.
inline std::string encode_mtn(const Tensor& tensor) {
  nlohmann::ordered_json header;
  header["dtype"] = "f32";
  header["shape"] = tensor.shape;
  std::string out(mtn_magic);
  out += header.dump();
  out += '\n';
  const std::size_t offset = out.size();
  out.resize(offset + tensor.size() * 4);
  for (std::size_t j = 0; j < tensor.size(); ++j) {
    const auto bits = detail::to_little_endian(std::bit_cast<std::uint32_t>(static_cast<float>(tensor.data[j])));
    std::memcpy(out.data() + offset + 4 * j, &bits, 4);
  }
  return out;
}

/// Parses an MTN1 byte string. `source` names the file in errors.
inline Tensor decode_mtn(const std::string& bytes, const std::string& source = "<memory>") {
  auto fail = [&](std::size_t offset, const std::string& why) -> DatasetError {
    return DatasetError(source + ": byte " + std::to_string(offset) + ": " + why);
  };
  if (bytes.compare(0, mtn_magic.size(), mtn_magic) != 0) throw fail(0, "missing MTN1 magic");
  const std::size_t header_start = mtn_magic.size();
  const std::size_t header_end = bytes.find('\n', header_start);
  if (header_end == std::string::npos) throw fail(header_start, "unterminated header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(header_start, header_end - header_start));
  } catch (const nlohmann::json::exception& e) {
    throw fail(header_start, std::string("header is not JSON: ") + e.what());
  }
  if (!header.is_object() || header.value("dtype", "") != "f32") throw fail(header_start, "dtype must be \"f32\"");
  std::vector<std::size_t> shape;
  try {
    shape = header.at("shape").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception&) {
    throw fail(header_start, "shape must be an array of nonnegative integers");
  }
  const std::size_t payload_start = header_end + 1;
  const std::size_t count = Tensor::element_count(shape);
  const std::size_t payload = bytes.size() - payload_start;
  if (payload != count * 4) {
    throw fail(payload_start, "payload holds " + std::to_string(payload / 4) + (payload % 4 ? "+" : "") +
                                  " float32 values but shape " + shape_string(shape) + " needs " +
                                  std::to_string(count));
  }
  std::vector<double> data(count);
  for (std::size_t j = 0; j < count; ++j) {
    std::uint32_t bits;
    std::memcpy(&bits, bytes.data() + payload_start + 4 * j, 4);
    const float v = std::bit_cast<float>(detail::to_little_endian(bits));
    if (!std::isfinite(v)) throw fail(payload_start + 4 * j, "non-finite value");
    data[j] = v;
  }
  return Tensor(std::move(shape), std::move(data));
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write to '" + path + "' failed");
}

inline Tensor read_mtn(const std::string& path) { return decode_mtn(read_file(path), path); }

inline void write_mtn(const std::string& path, const Tensor& tensor) { write_file(path, encode_mtn(tensor)); }

}  // namespace mcontrib
