#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "plrefine/base64.hpp"
#include "plrefine/errors.hpp"
#include "plrefine/grid.hpp"
#include "plrefine/maps.hpp"
#include "plrefine/png.hpp"

// Coordinates: x = column, y = row, origin top-left; boxes are inclusive on both ends.

namespace plrefine {

struct Point {
  int x = 0;
  int y = 0;
  bool operator==(const Point&) const = default;
};

struct BoundingBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  bool contains(Point p) const { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }
  BoundingBox expanded(int margin, int width, int height) const {
    return {std::max(0, x0 - margin), std::max(0, y0 - margin), std::min(width - 1, x1 + margin),
            std::min(height - 1, y1 + margin)};
  }
  bool operator==(const BoundingBox&) const = default;
};

enum class Polarity { positive, negative };

struct SeedPoint {
  Point at;
  Polarity polarity = Polarity::positive;
  bool operator==(const SeedPoint&) const = default;
};

struct PromptSet {
  int class_id = 0;
  std::optional<BoundingBox> box;
  std::vector<SeedPoint> seeds;
  std::optional<BinaryPlane> dense_mask;

  std::vector<Point> points(Polarity polarity) const {
    std::vector<Point> out;
    for (const auto& s : seeds)
      if (s.polarity == polarity) out.push_back(s.at);
    return out;
  }
  bool has_content() const { return box.has_value() || !seeds.empty() || dense_mask.has_value(); }

  bool operator==(const PromptSet&) const = default;
};

/// Which prompt parts are extracted and how refinement rounds are composed.
///
/// Round 0 carries the sparse prompt; when a box is available and at least one self-refinement round
/// follows, round 0 is box-only and the seeds join in the refinement rounds. Each refinement round
/// re-sends every enabled sparse part plus, with `dense_in_refine`, the previous round's mask.
struct PromptMode {
  bool use_box = true;
  bool use_positive_seed = true;
  bool use_negative_seeds = true;
  int self_refine_rounds = 1;
  bool dense_in_refine = true;

  void validate() const {
    if (!use_box && !use_positive_seed)
      throw ConfigError("prompt mode needs a box or a positive seed");
    if (self_refine_rounds < 0) throw ConfigError("self_refine_rounds must be >= 0");
    if (dense_in_refine && self_refine_rounds < 1)
      throw ConfigError("dense_in_refine requires at least one self-refinement round");
  }
  bool operator==(const PromptMode&) const = default;
};

/// Tightest inclusive box around the set pixels.
inline std::optional<BoundingBox> extract_box(const BinaryPlane& plane) {
  std::optional<BoundingBox> box;
  for (int y = 0; y < plane.height(); ++y) {
    for (int x = 0; x < plane.width(); ++x) {
      if (!plane(x, y)) continue;
      if (!box) {
        box = BoundingBox{x, y, x, y};
      } else {
        box->x0 = std::min(box->x0, x);
        box->x1 = std::max(box->x1, x);
        box->y1 = y;
      }
    }
  }
  return box;
}

/// Centre of mass rounded to the nearest pixel. If that pixel is not set, the set pixel closest to
/// the (unrounded) centre of mass is returned instead; ties resolve to the first in raster order.
inline std::optional<Point> extract_positive_seed(const BinaryPlane& plane) {
  double sx = 0, sy = 0;
  std::size_t n = 0;
  for (int y = 0; y < plane.height(); ++y)
    for (int x = 0; x < plane.width(); ++x)
      if (plane(x, y)) {
        sx += x;
        sy += y;
        ++n;
      }
  if (n == 0) return std::nullopt;
  const double cx = sx / static_cast<double>(n);
  const double cy = sy / static_cast<double>(n);
  const Point rounded{static_cast<int>(std::lround(cx)), static_cast<int>(std::lround(cy))};
  if (plane.contains(rounded.x, rounded.y) && plane(rounded.x, rounded.y)) return rounded;

  Point best{};
  double best_d = std::numeric_limits<double>::infinity();
  for (int y = 0; y < plane.height(); ++y)
    for (int x = 0; x < plane.width(); ++x) {
      if (!plane(x, y)) continue;
      const double d = (x - cx) * (x - cx) + (y - cy) * (y - cy);
      if (d < best_d) {
        best_d = d;
        best = {x, y};
      }
    }
  return best;
}

struct PromptExtraction {
  std::vector<PromptSet> prompts;   // one per non-empty class, ascending class id
  std::vector<int> empty_classes;   // classes that produced no prompt
  std::vector<std::string> warnings;
};

/// Builds one prompt set per non-empty class. Negative seeds of class i are the positive seeds of
/// every other non-empty class. A negative seed that falls on class i's own plane (legal overlap) is
/// kept and reported.
inline PromptExtraction build_prompt_sets(const MaskSet& mask, const PromptMode& mode) {
  mode.validate();
  PromptExtraction out;
  std::vector<std::optional<Point>> positives(static_cast<std::size_t>(mask.num_classes()));
  for (int c = 0; c < mask.num_classes(); ++c) {
    positives[static_cast<std::size_t>(c)] = extract_positive_seed(mask.plane(c));
    if (!positives[static_cast<std::size_t>(c)]) out.empty_classes.push_back(c);
  }
  for (int c = 0; c < mask.num_classes(); ++c) {
    const auto& own = positives[static_cast<std::size_t>(c)];
    if (!own) continue;
    const auto& plane = mask.plane(c);
    PromptSet ps;
    ps.class_id = c;
    if (mode.use_box) ps.box = extract_box(plane);
    if (mode.use_positive_seed) ps.seeds.push_back({*own, Polarity::positive});
    if (mode.use_negative_seeds) {
      for (int o = 0; o < mask.num_classes(); ++o) {
        const auto& other = positives[static_cast<std::size_t>(o)];
        if (o == c || !other) continue;
        if (plane(other->x, other->y))
          out.warnings.push_back("class " + std::to_string(c) + ": negative seed from class " + std::to_string(o) +
                                 " at (" + std::to_string(other->x) + "," + std::to_string(other->y) +
                                 ") lies on the class's own mask (overlap)");
        ps.seeds.push_back({*other, Polarity::negative});
      }
    }
    out.prompts.push_back(std::move(ps));
  }
  return out;
}

// ---- JSON ----

inline nlohmann::json points_to_json(const std::vector<Point>& pts) {
  auto arr = nlohmann::json::array();
  for (const auto& p : pts) arr.push_back({p.x, p.y});
  return arr;
}

inline std::vector<Point> points_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ProtocolViolation("point list must be an array");
  std::vector<Point> out;
  for (const auto& p : j) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number_integer() || !p[1].is_number_integer())
      throw ProtocolViolation("point must be [x, y] integers");
    out.push_back({p[0].get<int>(), p[1].get<int>()});
  }
  return out;
}

inline nlohmann::json box_to_json(const std::optional<BoundingBox>& box) {
  if (!box) return nullptr;
  return {box->x0, box->y0, box->x1, box->y1};
}

inline std::optional<BoundingBox> box_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  if (!j.is_array() || j.size() != 4) throw ProtocolViolation("box must be [x0, y0, x1, y1] or null");
  for (const auto& v : j)
    if (!v.is_number_integer()) throw ProtocolViolation("box coordinates must be integers");
  BoundingBox b{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
  if (b.x0 > b.x1 || b.y0 > b.y1) throw ProtocolViolation("box corners are out of order");
  return b;
}

inline nlohmann::json mask_to_json(const std::optional<BinaryPlane>& mask) {
  if (!mask) return nullptr;
  return base64::encode(png::encode_mask1(*mask));
}

inline std::optional<BinaryPlane> mask_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  if (!j.is_string()) throw ProtocolViolation("mask must be a base64 PNG string or null");
  try {
    return png::decode_mask(base64::decode(j.get<std::string>()));
  } catch (const MalformedFile& e) {
    throw ProtocolViolation(std::string("mask PNG: ") + e.what());
  }
}

inline nlohmann::json to_json(const PromptSet& ps) {
  return {{"class_id", ps.class_id},
          {"box", box_to_json(ps.box)},
          {"positive_points", points_to_json(ps.points(Polarity::positive))},
          {"negative_points", points_to_json(ps.points(Polarity::negative))},
          {"dense_mask", mask_to_json(ps.dense_mask)}};
}

inline PromptSet prompt_set_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("class_id")) throw ProtocolViolation("prompt set must be an object with class_id");
  PromptSet ps;
  ps.class_id = j.at("class_id").get<int>();
  ps.box = box_from_json(j.value("box", nlohmann::json()));
  for (auto p : points_from_json(j.value("positive_points", nlohmann::json::array())))
    ps.seeds.push_back({p, Polarity::positive});
  for (auto p : points_from_json(j.value("negative_points", nlohmann::json::array())))
    ps.seeds.push_back({p, Polarity::negative});
  ps.dense_mask = mask_from_json(j.value("dense_mask", nlohmann::json()));
  return ps;
}

}  // namespace plrefine
