#pragma once

#include <optional>
#include <string>
#include <vector>

#include "plrefine/errors.hpp"
#include "plrefine/grid.hpp"
#include "plrefine/maps.hpp"

namespace plrefine {

enum class ElementShape { square, disk };

/// Square of radius r covers (2r+1)x(2r+1); disk covers offsets with dx*dx + dy*dy <= r*r.
struct StructElement {
  ElementShape shape = ElementShape::square;
  int radius = 1;

  /// Half-width of the element's horizontal run at each row offset dy in [-r, r], indexed dy + r.
  std::vector<int> row_half_widths() const {
    if (radius < 1) throw ConfigError("structuring element radius must be >= 1");
    std::vector<int> half(static_cast<std::size_t>(2 * radius + 1), radius);
    if (shape == ElementShape::disk) {
      for (int dy = -radius; dy <= radius; ++dy) {
        int w = 0;
        while ((w + 1) * (w + 1) + dy * dy <= radius * radius) ++w;
        half[static_cast<std::size_t>(dy + radius)] = w;
      }
    }
    return half;
  }

  bool operator==(const StructElement&) const = default;
};

enum class MorphKind { none, erosion, dilation };

struct MorphOp {
  MorphKind kind = MorphKind::none;
  std::optional<StructElement> element;  // present iff kind != none

  static MorphOp identity() { return {}; }
  static MorphOp erosion(StructElement e) { return {MorphKind::erosion, e}; }
  static MorphOp dilation(StructElement e) { return {MorphKind::dilation, e}; }

  void validate() const {
    if ((kind == MorphKind::none) != !element.has_value())
      throw ConfigError("morphology element must be present iff the operation is not 'none'");
    if (element && element->radius < 1) throw ConfigError("structuring element radius must be >= 1");
  }

  bool operator==(const MorphOp&) const = default;
};

namespace detail {

// Inclusive prefix counts per row: prefix[y][x+1] = number of set pixels in row y at columns < x+1.
inline std::vector<int> row_prefix_counts(const BinaryPlane& plane) {
  const int w = plane.width();
  std::vector<int> prefix(static_cast<std::size_t>(plane.height()) * (w + 1), 0);
  for (int y = 0; y < plane.height(); ++y) {
    int* row = &prefix[static_cast<std::size_t>(y) * (w + 1)];
    for (int x = 0; x < w; ++x) row[x + 1] = row[x] + (plane(x, y) != 0);
  }
  return prefix;
}

// Outside the image counts as background for both operations.
template <bool Dilate>
BinaryPlane morph(const BinaryPlane& plane, const StructElement& element) {
  const int w = plane.width();
  const int h = plane.height();
  const int r = element.radius;
  const auto half = element.row_half_widths();
  const auto prefix = row_prefix_counts(plane);
  BinaryPlane out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      bool hit = !Dilate;
      for (int dy = -r; dy <= r && hit == !Dilate; ++dy) {
        const int yy = y + dy;
        const int hw = half[static_cast<std::size_t>(dy + r)];
        if (yy < 0 || yy >= h) {
          if constexpr (!Dilate) hit = false;
          continue;
        }
        const int x0 = x - hw;
        const int x1 = x + hw;
        const int* row = &prefix[static_cast<std::size_t>(yy) * (w + 1)];
        if constexpr (Dilate) {
          const int lo = x0 < 0 ? 0 : x0;
          const int hi = x1 >= w ? w - 1 : x1;
          if (row[hi + 1] - row[lo] > 0) hit = true;
        } else {
          if (x0 < 0 || x1 >= w || row[x1 + 1] - row[x0] != x1 - x0 + 1) hit = false;
        }
      }
      out(x, y) = hit;
    }
  }
  return out;
}

}  // namespace detail

/// A pixel is set iff the element centred on it intersects the input.
inline BinaryPlane dilate(const BinaryPlane& plane, const StructElement& element) {
  return detail::morph<true>(plane, element);
}

/// A pixel is kept iff the element centred on it lies entirely inside the input.
inline BinaryPlane erode(const BinaryPlane& plane, const StructElement& element) {
  return detail::morph<false>(plane, element);
}

/// Applies `op` to every class plane. With `fallback_on_empty`, a plane that erosion would wipe out
/// keeps its input instead.
inline MaskSet apply_morph(const MaskSet& mask, const MorphOp& op, bool fallback_on_empty = true) {
  op.validate();
  if (op.kind == MorphKind::none) return mask;
  MaskSet out = mask;
  for (int c = 0; c < mask.num_classes(); ++c) {
    const auto& in = mask.plane(c);
    if (is_empty(in)) continue;
    BinaryPlane result = op.kind == MorphKind::dilation ? dilate(in, *op.element) : erode(in, *op.element);
    if (fallback_on_empty && is_empty(result)) continue;
    out.set_plane(c, std::move(result));
  }
  return out;
}

inline const char* to_string(MorphKind k) {
  switch (k) {
    case MorphKind::none: return "none";
    case MorphKind::erosion: return "erosion";
    case MorphKind::dilation: return "dilation";
  }
  return "none";
}

inline const char* to_string(ElementShape s) { return s == ElementShape::square ? "square" : "disk"; }

inline MorphKind parse_morph_kind(const std::string& s) {
  if (s == "none") return MorphKind::none;
  if (s == "erosion") return MorphKind::erosion;
  if (s == "dilation") return MorphKind::dilation;
  throw ConfigError("unknown morphology kind '" + s + "'");
}

inline ElementShape parse_element_shape(const std::string& s) {
  if (s == "square") return ElementShape::square;
  if (s == "disk") return ElementShape::disk;
  throw ConfigError("unknown structuring element shape '" + s + "'");
}

}  // namespace plrefine
