#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "plrefine/errors.hpp"

namespace plrefine {

/// Dense row-major 2-D raster. x is the column, y is the row, origin top-left.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;

  Grid(int width, int height, T fill = T{})
      : width_(checked_dim(width)), height_(checked_dim(height)),
        data_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill) {}

  Grid(int width, int height, std::vector<T> data)
      : width_(checked_dim(width)), height_(checked_dim(height)), data_(std::move(data)) {
    if (data_.size() != static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_))
      throw DimensionMismatch("grid data size does not match " + std::to_string(width_) + "x" +
                              std::to_string(height_));
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  bool contains(int x, int y) const noexcept { return x >= 0 && y >= 0 && x < width_ && y < height_; }
  bool same_shape(const Grid& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_;
  }
  template <typename U>
  bool same_shape(const Grid<U>& other) const noexcept {
    return width_ == other.width() && height_ == other.height();
  }

  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  T& operator()(int x, int y) noexcept { return data_[index(x, y)]; }
  const T& operator()(int x, int y) const noexcept { return data_[index(x, y)]; }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  bool operator==(const Grid&) const = default;

 private:
  static int checked_dim(int d) {
    if (d < 1) throw DimensionMismatch("grid dimensions must be >= 1, got " + std::to_string(d));
    return d;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

/// One class plane of a multi-label mask; values are 0 or 1.
using BinaryPlane = Grid<std::uint8_t>;

inline std::size_t count_set(const BinaryPlane& plane) {
  std::size_t n = 0;
  for (auto v : plane) n += v != 0;
  return n;
}

inline bool is_empty(const BinaryPlane& plane) {
  for (auto v : plane)
    if (v) return false;
  return true;
}

/// True iff every set pixel of `inner` is also set in `outer`.
inline bool is_subset(const BinaryPlane& inner, const BinaryPlane& outer) {
  if (!inner.same_shape(outer)) throw DimensionMismatch("subset test on planes of different size");
  for (std::size_t i = 0; i < inner.size(); ++i)
    if (inner[i] && !outer[i]) return false;
  return true;
}

inline BinaryPlane complement(const BinaryPlane& plane) {
  BinaryPlane out(plane.width(), plane.height());
  for (std::size_t i = 0; i < plane.size(); ++i) out[i] = plane[i] ? 0 : 1;
  return out;
}

}  // namespace plrefine
