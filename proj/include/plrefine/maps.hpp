#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "plrefine/errors.hpp"
#include "plrefine/grid.hpp"

namespace plrefine {

/// 8-bit grayscale image, row-major.
class Image : public Grid<std::uint8_t> {
 public:
  using Grid::Grid;
};

/// Tolerance applied when validating likelihood values read from files.
inline constexpr double kLikelihoodTolerance = 1e-6;

/// Per-class likelihood raster (C x H x W, class-major then row-major).
/// Classes are independent (multi-label); planes need not sum to one.
class ProbabilityMap {
 public:
  ProbabilityMap() = default;

  ProbabilityMap(int num_classes, int width, int height, std::vector<float> values)
      : num_classes_(num_classes), width_(width), height_(height), values_(std::move(values)) {
    if (num_classes < 1 || width < 1 || height < 1)
      throw DimensionMismatch("probability map needs at least one class and one pixel");
    if (values_.size() != plane_size() * static_cast<std::size_t>(num_classes))
      throw DimensionMismatch("probability map value count does not match its shape");
    for (std::size_t i = 0; i < values_.size(); ++i) {
      const double v = values_[i];
      if (!(v >= -kLikelihoodTolerance && v <= 1.0 + kLikelihoodTolerance))
        throw ValueOutOfRange("likelihood " + std::to_string(v) + " at flat index " + std::to_string(i) +
                              " is outside [0,1]");
    }
  }

  int num_classes() const noexcept { return num_classes_; }
  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t plane_size() const noexcept {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }

  std::span<const float> plane(int c) const {
    return std::span<const float>(values_).subspan(static_cast<std::size_t>(c) * plane_size(), plane_size());
  }
  float at(int c, int x, int y) const {
    return values_[static_cast<std::size_t>(c) * plane_size() + static_cast<std::size_t>(y) * width_ + x];
  }
  const std::vector<float>& values() const noexcept { return values_; }

  bool operator==(const ProbabilityMap&) const = default;

 private:
  int num_classes_ = 0;
  int width_ = 0;
  int height_ = 0;
  std::vector<float> values_;
};

/// Multi-label binary raster. A pixel may belong to several classes.
class MaskSet {
 public:
  MaskSet() = default;

  /// All-empty mask set.
  MaskSet(int num_classes, int width, int height)
      : num_classes_(num_classes), width_(width), height_(height) {
    if (num_classes < 1) throw DimensionMismatch("mask set needs at least one class");
    planes_.assign(static_cast<std::size_t>(num_classes), BinaryPlane(width, height));
  }

  explicit MaskSet(std::vector<BinaryPlane> planes) : planes_(std::move(planes)) {
    if (planes_.empty()) throw DimensionMismatch("mask set needs at least one class");
    num_classes_ = static_cast<int>(planes_.size());
    width_ = planes_.front().width();
    height_ = planes_.front().height();
    for (const auto& p : planes_) {
      if (p.width() != width_ || p.height() != height_)
        throw DimensionMismatch("mask set planes differ in size");
      for (auto v : p)
        if (v > 1) throw ValueOutOfRange("mask value " + std::to_string(v) + " is not 0 or 1");
    }
  }

  int num_classes() const noexcept { return num_classes_; }
  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }

  const BinaryPlane& plane(int c) const { return planes_.at(static_cast<std::size_t>(c)); }
  void set_plane(int c, BinaryPlane plane) {
    if (plane.width() != width_ || plane.height() != height_)
      throw DimensionMismatch("plane size does not match mask set");
    planes_.at(static_cast<std::size_t>(c)) = std::move(plane);
  }
  const std::vector<BinaryPlane>& planes() const noexcept { return planes_; }

  bool same_shape(const MaskSet& o) const noexcept {
    return num_classes_ == o.num_classes_ && width_ == o.width_ && height_ == o.height_;
  }

  bool operator==(const MaskSet&) const = default;

 private:
  int num_classes_ = 0;
  int width_ = 0;
  int height_ = 0;
  std::vector<BinaryPlane> planes_;
};

inline constexpr double kDefaultThreshold = 0.5;

/// Per-class thresholding; a bit is set iff likelihood >= threshold.
inline MaskSet binarize(const ProbabilityMap& map, double threshold = kDefaultThreshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ConfigError("binarization threshold must lie in (0,1), got " + std::to_string(threshold));
  std::vector<BinaryPlane> planes;
  planes.reserve(static_cast<std::size_t>(map.num_classes()));
  for (int c = 0; c < map.num_classes(); ++c) {
    BinaryPlane plane(map.width(), map.height());
    const auto values = map.plane(c);
    for (std::size_t i = 0; i < values.size(); ++i) plane[i] = static_cast<double>(values[i]) >= threshold;
    planes.push_back(std::move(plane));
  }
  return MaskSet(std::move(planes));
}

}  // namespace plrefine
