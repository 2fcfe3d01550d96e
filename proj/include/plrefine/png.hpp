#pragma once

// Minimal PNG codec on top of zlib: non-interlaced grayscale (1/2/4/8-bit) decode,
// 8-bit gray, 1-bit gray and 8-bit RGB encode.

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "plrefine/errors.hpp"
#include "plrefine/maps.hpp"
#include "plrefine/npy.hpp"

namespace plrefine::png {

namespace detail {

inline constexpr std::array<std::uint8_t, 8> kSignature = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

inline void put_chunk(std::vector<std::uint8_t>& out, const char type[4], std::span<const std::uint8_t> body) {
  put_u32(out, static_cast<std::uint32_t>(body.size()));
  const auto type_at = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), body.begin(), body.end());
  const auto crc = crc32(0L, out.data() + type_at, static_cast<uInt>(4 + body.size()));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

// `rows` holds height scanlines of `row_bytes` each, already packed; filter type 0 on every row.
inline std::vector<std::uint8_t> encode_raw(int width, int height, int bit_depth, int color_type,
                                            const std::vector<std::uint8_t>& rows, std::size_t row_bytes) {
  std::vector<std::uint8_t> filtered;
  filtered.reserve(static_cast<std::size_t>(height) * (row_bytes + 1));
  for (int y = 0; y < height; ++y) {
    filtered.push_back(0);
    auto first = rows.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(y) * row_bytes);
    filtered.insert(filtered.end(), first, first + static_cast<std::ptrdiff_t>(row_bytes));
  }
  uLongf compressed_size = compressBound(static_cast<uLong>(filtered.size()));
  std::vector<std::uint8_t> compressed(compressed_size);
  if (compress2(compressed.data(), &compressed_size, filtered.data(), static_cast<uLong>(filtered.size()), 6) != Z_OK)
    throw Error("zlib compression failed");
  compressed.resize(compressed_size);

  std::vector<std::uint8_t> out(kSignature.begin(), kSignature.end());
  std::vector<std::uint8_t> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(width));
  put_u32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(static_cast<std::uint8_t>(bit_depth));
  ihdr.push_back(static_cast<std::uint8_t>(color_type));
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter method
  ihdr.push_back(0);  // no interlace
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", compressed);
  put_chunk(out, "IEND", {});
  return out;
}

inline int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  return pb <= pc ? b : c;
}

}  // namespace detail

/// Decoded grayscale PNG; `bit_depth` is the stored depth, samples are unscaled (1-bit gives 0/1).
struct GrayPng {
  Grid<std::uint8_t> samples;
  int bit_depth = 8;
};

inline std::vector<std::uint8_t> encode_gray8(const Grid<std::uint8_t>& pixels) {
  return detail::encode_raw(pixels.width(), pixels.height(), 8, 0, pixels.data(),
                            static_cast<std::size_t>(pixels.width()));
}

/// 1-bit grayscale; any non-zero value encodes as 1.
inline std::vector<std::uint8_t> encode_mask1(const BinaryPlane& plane) {
  const std::size_t row_bytes = (static_cast<std::size_t>(plane.width()) + 7) / 8;
  std::vector<std::uint8_t> rows(row_bytes * static_cast<std::size_t>(plane.height()), 0);
  for (int y = 0; y < plane.height(); ++y)
    for (int x = 0; x < plane.width(); ++x)
      if (plane(x, y)) rows[static_cast<std::size_t>(y) * row_bytes + x / 8] |= static_cast<std::uint8_t>(0x80 >> (x % 8));
  return detail::encode_raw(plane.width(), plane.height(), 1, 0, rows, row_bytes);
}

/// Interleaved 8-bit RGB, `rgb.size() == 3 * width * height`.
inline std::vector<std::uint8_t> encode_rgb8(int width, int height, const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != static_cast<std::size_t>(width) * height * 3) throw DimensionMismatch("RGB buffer size mismatch");
  return detail::encode_raw(width, height, 8, 2, rgb, static_cast<std::size_t>(width) * 3);
}

/// Grayscale samples of any 8-bit PNG, or of 1/2/4-bit grayscale at their native depth.
inline GrayPng decode_gray(std::span<const std::uint8_t> data) {
  using detail::get_u32;
  if (data.size() < 8 || std::memcmp(data.data(), detail::kSignature.data(), 8) != 0)
    throw MalformedFile("not a PNG (bad signature)");
  std::size_t pos = 8;
  int width = 0, height = 0, bit_depth = 0, color_type = -1;
  std::vector<std::uint8_t> idat;
  bool seen_end = false;
  while (pos + 12 <= data.size()) {
    const std::uint32_t len = get_u32(&data[pos]);
    if (pos + 12 + len > data.size()) throw MalformedFile("PNG chunk overruns file");
    const char* type = reinterpret_cast<const char*>(&data[pos + 4]);
    const std::uint8_t* body = &data[pos + 8];
    const auto crc = crc32(0L, &data[pos + 4], len + 4);
    if (static_cast<std::uint32_t>(crc) != get_u32(body + len)) throw MalformedFile("PNG chunk CRC mismatch");
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw MalformedFile("bad IHDR length");
      width = static_cast<int>(get_u32(body));
      height = static_cast<int>(get_u32(body + 4));
      bit_depth = body[8];
      color_type = body[9];
      if (body[10] != 0 || body[11] != 0) throw MalformedFile("unsupported PNG compression/filter method");
      if (body[12] != 0) throw MalformedFile("interlaced PNG is not supported");
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), body, body + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      seen_end = true;
      break;
    } else if ((type[0] & 0x20) == 0) {
      throw MalformedFile("unsupported critical PNG chunk");
    }
    pos += 12 + len;
  }
  if (!seen_end || width <= 0 || height <= 0) throw MalformedFile("incomplete PNG");
  int channels = 0;
  switch (color_type) {
    case 0: channels = 1; break;
    case 2: channels = 3; break;
    case 4: channels = 2; break;
    case 6: channels = 4; break;
    default: throw MalformedFile("unsupported PNG color type " + std::to_string(color_type));
  }
  const bool low_depth_gray = color_type == 0 && (bit_depth == 1 || bit_depth == 2 || bit_depth == 4);
  if (bit_depth != 8 && !low_depth_gray)
    throw MalformedFile("unsupported PNG bit depth " + std::to_string(bit_depth) + " for color type " +
                        std::to_string(color_type));

  const std::size_t row_bytes = (static_cast<std::size_t>(width) * channels * bit_depth + 7) / 8;
  const std::size_t stride = row_bytes + 1;
  const std::size_t bpp = static_cast<std::size_t>(std::max(1, channels * bit_depth / 8));
  uLongf raw_size = static_cast<uLongf>(stride * static_cast<std::size_t>(height));
  std::vector<std::uint8_t> raw(raw_size);
  const uLongf expected = raw_size;
  if (uncompress(raw.data(), &raw_size, idat.data(), static_cast<uLong>(idat.size())) != Z_OK || raw_size != expected)
    throw MalformedFile("corrupt PNG image data");

  std::vector<std::uint8_t> prev(row_bytes, 0);
  for (int y = 0; y < height; ++y) {
    std::uint8_t* row = &raw[static_cast<std::size_t>(y) * stride];
    const int filter = row[0];
    std::uint8_t* cur = row + 1;
    for (std::size_t i = 0; i < row_bytes; ++i) {
      const int a = i >= bpp ? cur[i - bpp] : 0;
      const int b = prev[i];
      const int c = i >= bpp ? prev[i - bpp] : 0;
      int v = cur[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += detail::paeth(a, b, c); break;
        default: throw MalformedFile("bad PNG filter type");
      }
      cur[i] = static_cast<std::uint8_t>(v);
    }
    std::memcpy(prev.data(), cur, row_bytes);
  }

  // Colour is reduced to luma (ITU-R BT.601 weights); alpha is ignored.
  GrayPng out{Grid<std::uint8_t>(width, height), bit_depth};
  const int per_byte = 8 / bit_depth;
  const int mask = (1 << bit_depth) - 1;
  for (int y = 0; y < height; ++y) {
    const std::uint8_t* cur = &raw[static_cast<std::size_t>(y) * stride + 1];
    for (int x = 0; x < width; ++x) {
      if (channels >= 3) {
        const std::uint8_t* px = cur + static_cast<std::size_t>(x) * channels;
        out.samples(x, y) = static_cast<std::uint8_t>((299 * px[0] + 587 * px[1] + 114 * px[2] + 500) / 1000);
      } else if (bit_depth == 8) {
        out.samples(x, y) = cur[static_cast<std::size_t>(x) * channels];
      } else {
        const int shift = 8 - bit_depth * (x % per_byte + 1);
        out.samples(x, y) = static_cast<std::uint8_t>((cur[x / per_byte] >> shift) & mask);
      }
    }
  }
  return out;
}

inline Image decode_image(std::span<const std::uint8_t> data) {
  GrayPng png = decode_gray(data);
  if (png.bit_depth != 8) {
    const int scale = 255 / ((1 << png.bit_depth) - 1);
    for (auto& v : png.samples) v = static_cast<std::uint8_t>(v * scale);
  }
  return Image(png.samples.width(), png.samples.height(), std::vector<std::uint8_t>(png.samples.data()));
}

/// Mask PNG: any non-zero sample is foreground.
inline BinaryPlane decode_mask(std::span<const std::uint8_t> data) {
  GrayPng png = decode_gray(data);
  for (auto& v : png.samples) v = v != 0;
  return png.samples;
}

}  // namespace plrefine::png

namespace plrefine {

inline Image read_image(const std::filesystem::path& path) { return png::decode_image(npy::read_file_bytes(path)); }

inline void write_image(const Image& image, const std::filesystem::path& path) {
  npy::write_file_bytes(path, png::encode_gray8(image));
}

}  // namespace plrefine
