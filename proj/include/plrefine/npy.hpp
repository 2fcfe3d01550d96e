#pragma once

// Reader/writer for the NPY v1.0 container (little-endian float32 and uint8 only).

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "plrefine/errors.hpp"
#include "plrefine/maps.hpp"

namespace plrefine::npy {

static_assert(std::endian::native == std::endian::little, "NPY codec assumes a little-endian host");

enum class DType { float32, uint8 };

struct Array {
  DType dtype = DType::uint8;
  std::vector<std::size_t> shape;
  std::vector<std::uint8_t> bytes;  // raw C-order payload

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
};

namespace detail {

inline constexpr char kMagic[] = "\x93NUMPY";

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Returns the raw text of the value following 'key': in the header dict.
inline std::string_view dict_value(std::string_view header, std::string_view key) {
  const std::string quoted_single = "'" + std::string(key) + "'";
  const std::string quoted_double = "\"" + std::string(key) + "\"";
  auto pos = header.find(quoted_single);
  std::size_t klen = quoted_single.size();
  if (pos == std::string_view::npos) {
    pos = header.find(quoted_double);
    klen = quoted_double.size();
  }
  if (pos == std::string_view::npos) throw MalformedFile("NPY header lacks key '" + std::string(key) + "'");
  auto rest = header.substr(pos + klen);
  auto colon = rest.find(':');
  if (colon == std::string_view::npos) throw MalformedFile("NPY header: missing ':' after key");
  rest = trim(rest.substr(colon + 1));
  std::size_t end = 0;
  if (!rest.empty() && rest.front() == '(') {
    end = rest.find(')');
    if (end == std::string_view::npos) throw MalformedFile("NPY header: unterminated shape tuple");
    return rest.substr(0, end + 1);
  }
  if (!rest.empty() && (rest.front() == '\'' || rest.front() == '"')) {
    end = rest.find(rest.front(), 1);
    if (end == std::string_view::npos) throw MalformedFile("NPY header: unterminated string");
    return rest.substr(0, end + 1);
  }
  end = rest.find_first_of(",}");
  return trim(rest.substr(0, end));
}

inline std::vector<std::size_t> parse_shape(std::string_view tuple) {
  tuple = trim(tuple);
  if (tuple.size() < 2 || tuple.front() != '(' || tuple.back() != ')')
    throw MalformedFile("NPY header: shape is not a tuple");
  tuple = tuple.substr(1, tuple.size() - 2);
  std::vector<std::size_t> shape;
  while (!trim(tuple).empty()) {
    auto comma = tuple.find(',');
    auto item = trim(tuple.substr(0, comma));
    if (!item.empty()) {
      std::size_t v = 0;
      for (char ch : item) {
        if (!std::isdigit(static_cast<unsigned char>(ch))) throw MalformedFile("NPY header: bad shape entry");
        v = v * 10 + static_cast<std::size_t>(ch - '0');
      }
      shape.push_back(v);
    }
    if (comma == std::string_view::npos) break;
    tuple.remove_prefix(comma + 1);
  }
  return shape;
}

inline std::string descr_of(DType t) { return t == DType::float32 ? "<f4" : "|u1"; }

inline std::size_t item_size(DType t) { return t == DType::float32 ? 4 : 1; }

}  // namespace detail

inline Array parse(std::span<const std::uint8_t> data) {
  using detail::kMagic;
  if (data.size() < 10 || std::memcmp(data.data(), kMagic, 6) != 0) throw MalformedFile("not an NPY file (bad magic)");
  const int major = data[6];
  std::size_t header_len = 0;
  std::size_t offset = 0;
  if (major == 1) {
    header_len = static_cast<std::size_t>(data[8]) | (static_cast<std::size_t>(data[9]) << 8);
    offset = 10;
  } else if (major == 2 || major == 3) {
    if (data.size() < 12) throw MalformedFile("truncated NPY header");
    header_len = static_cast<std::size_t>(data[8]) | (static_cast<std::size_t>(data[9]) << 8) |
                 (static_cast<std::size_t>(data[10]) << 16) | (static_cast<std::size_t>(data[11]) << 24);
    offset = 12;
  } else {
    throw MalformedFile("unsupported NPY version " + std::to_string(major));
  }
  if (data.size() < offset + header_len) throw MalformedFile("truncated NPY header");
  const std::string header(reinterpret_cast<const char*>(data.data() + offset), header_len);

  Array out;
  auto descr = detail::dict_value(header, "descr");
  if (descr.size() < 2) throw MalformedFile("NPY header: bad descr");
  descr = descr.substr(1, descr.size() - 2);
  if (descr == "<f4")
    out.dtype = DType::float32;
  else if (descr == "|u1" || descr == "<u1" || descr == "u1" || descr == "|b1")
    out.dtype = DType::uint8;
  else
    throw MalformedFile("unsupported NPY dtype '" + std::string(descr) + "'");

  if (detail::dict_value(header, "fortran_order") != "False")
    throw MalformedFile("Fortran-ordered NPY arrays are not supported");
  out.shape = detail::parse_shape(detail::dict_value(header, "shape"));

  const std::size_t payload = out.element_count() * detail::item_size(out.dtype);
  const std::size_t start = offset + header_len;
  if (data.size() - start < payload) throw MalformedFile("NPY payload is truncated");
  out.bytes.assign(data.begin() + static_cast<std::ptrdiff_t>(start),
                   data.begin() + static_cast<std::ptrdiff_t>(start + payload));
  return out;
}

/// Serializes as NPY v1.0; the header is space-padded so the payload starts on a 64-byte boundary.
inline std::vector<std::uint8_t> serialize(const Array& array) {
  std::string header = "{'descr': '" + detail::descr_of(array.dtype) + "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < array.shape.size(); ++i) {
    header += std::to_string(array.shape[i]);
    if (array.shape.size() == 1 || i + 1 < array.shape.size()) header += ",";
    if (i + 1 < array.shape.size()) header += " ";
  }
  header += "), }";
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header += '\n';
  if (header.size() > 0xFFFF) throw MalformedFile("NPY header too long for v1.0");

  std::vector<std::uint8_t> out;
  out.reserve(10 + header.size() + array.bytes.size());
  out.insert(out.end(), detail::kMagic, detail::kMagic + 6);
  out.push_back(1);
  out.push_back(0);
  out.push_back(static_cast<std::uint8_t>(header.size() & 0xFF));
  out.push_back(static_cast<std::uint8_t>(header.size() >> 8));
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), array.bytes.begin(), array.bytes.end());
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MalformedFile("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

inline void require_rank3(const Array& a, const std::string& what) {
  if (a.shape.size() != 3)
    throw WrongRank(what + " must have shape (C,H,W), got rank " + std::to_string(a.shape.size()));
  for (auto d : a.shape)
    if (d == 0) throw MalformedFile(what + " has a zero-length axis");
}

inline ProbabilityMap decode_probability_map(std::span<const std::uint8_t> data) {
  const Array a = parse(data);
  require_rank3(a, "probability map");
  if (a.dtype != DType::float32) throw MalformedFile("probability map must be float32");
  std::vector<float> values(a.element_count());
  std::memcpy(values.data(), a.bytes.data(), a.bytes.size());
  return ProbabilityMap(static_cast<int>(a.shape[0]), static_cast<int>(a.shape[2]), static_cast<int>(a.shape[1]),
                        std::move(values));
}

inline std::vector<std::uint8_t> encode_probability_map(const ProbabilityMap& map) {
  Array a;
  a.dtype = DType::float32;
  a.shape = {static_cast<std::size_t>(map.num_classes()), static_cast<std::size_t>(map.height()),
             static_cast<std::size_t>(map.width())};
  a.bytes.resize(map.values().size() * sizeof(float));
  std::memcpy(a.bytes.data(), map.values().data(), a.bytes.size());
  return serialize(a);
}

inline MaskSet decode_mask_set(std::span<const std::uint8_t> data) {
  const Array a = parse(data);
  require_rank3(a, "mask set");
  if (a.dtype != DType::uint8) throw MalformedFile("mask set must be uint8");
  const int classes = static_cast<int>(a.shape[0]);
  const int height = static_cast<int>(a.shape[1]);
  const int width = static_cast<int>(a.shape[2]);
  const std::size_t plane_size = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  std::vector<BinaryPlane> planes;
  planes.reserve(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    auto first = a.bytes.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(c) * plane_size);
    planes.emplace_back(width, height, std::vector<std::uint8_t>(first, first + static_cast<std::ptrdiff_t>(plane_size)));
  }
  return MaskSet(std::move(planes));  // validates {0,1}
}

inline std::vector<std::uint8_t> encode_mask_set(const MaskSet& mask) {
  Array a;
  a.dtype = DType::uint8;
  a.shape = {static_cast<std::size_t>(mask.num_classes()), static_cast<std::size_t>(mask.height()),
             static_cast<std::size_t>(mask.width())};
  for (const auto& p : mask.planes()) a.bytes.insert(a.bytes.end(), p.begin(), p.end());
  return serialize(a);
}

}  // namespace plrefine::npy

namespace plrefine {

inline ProbabilityMap read_probability_map(const std::filesystem::path& path) {
  return npy::decode_probability_map(npy::read_file_bytes(path));
}

inline void write_probability_map(const ProbabilityMap& map, const std::filesystem::path& path) {
  npy::write_file_bytes(path, npy::encode_probability_map(map));
}

inline MaskSet read_mask_set(const std::filesystem::path& path) { return npy::decode_mask_set(npy::read_file_bytes(path)); }

inline void write_mask_set(const MaskSet& mask, const std::filesystem::path& path) {
  npy::write_file_bytes(path, npy::encode_mask_set(mask));
}

}  // namespace plrefine
