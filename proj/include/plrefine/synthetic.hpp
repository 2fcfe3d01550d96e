#pragma once

// Synthetic multi-class scenes for demos and tests: bright elliptic blobs on a dark noisy
// background (the ground truth), and degraded probability maps that play the role of an imprecise
// segmentation model's output.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <random>
#include <utility>
#include <vector>

#include "plrefine/dataset.hpp"
#include "plrefine/grid.hpp"
#include "plrefine/maps.hpp"
#include "plrefine/morphology.hpp"
#include "plrefine/npy.hpp"
#include "plrefine/png.hpp"

namespace plrefine::synthetic {

struct Ellipse {
  double cx, cy, rx, ry;
  bool contains(int x, int y) const {
    const double dx = (x - cx) / rx, dy = (y - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
  }
};

struct SceneOptions {
  int width = 96;
  int height = 96;
  int num_classes = 4;
  double min_radius = 9;
  double max_radius = 14;
  int border = 6;         // minimum distance of a blob from the image edge
  int separation = 6;     // minimum gap between blob bounding circles
  double noise_sigma = 12;
  double blur_sigma = 1.5;        // Gaussian blur of the clean rendering, before noise
  double absent_probability = 0;  // chance that a class is missing from the scene
};

struct DegradeOptions {
  int radius = 3;                 // disk erosion or dilation, chosen per class
  double boundary_noise = 0.05;   // flip probability for pixels on the degraded boundary
  bool spurious_blobs = true;     // add a weaker false-positive blob per class
};

struct Case {
  Image image;
  MaskSet truth;
  ProbabilityMap probs;
};

namespace detail {

inline std::vector<std::optional<Ellipse>> place_blobs(const SceneOptions& o, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> radius(o.min_radius, o.max_radius);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::optional<Ellipse>> blobs;
  for (int c = 0; c < o.num_classes; ++c) {
    if (unit(rng) < o.absent_probability) {
      blobs.emplace_back();
      continue;
    }
    std::optional<Ellipse> placed;
    for (int tries = 0; tries < 500 && !placed; ++tries) {
      const double rx = radius(rng), ry = radius(rng);
      const double r = std::max(rx, ry);
      if (2 * (r + o.border) >= std::min(o.width, o.height)) break;
      std::uniform_real_distribution<double> px(r + o.border, o.width - 1 - r - o.border);
      std::uniform_real_distribution<double> py(r + o.border, o.height - 1 - r - o.border);
      Ellipse e{px(rng), py(rng), rx, ry};
      bool clear = true;
      for (const auto& other : blobs) {
        if (!other) continue;
        const double d = std::hypot(e.cx - other->cx, e.cy - other->cy);
        if (d < r + std::max(other->rx, other->ry) + o.separation) clear = false;
      }
      if (clear) placed = e;
    }
    blobs.push_back(placed);
  }
  return blobs;
}

inline BinaryPlane rasterize(const Ellipse& e, int w, int h) {
  BinaryPlane p(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) p(x, y) = e.contains(x, y);
  return p;
}

inline std::vector<double> gaussian_blur(std::vector<double> v, int w, int h, double sigma) {
  if (sigma <= 0) return v;
  const int r = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(2 * r + 1);
  double sum = 0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& x : k) x /= sum;
  std::vector<double> tmp(v.size());
  auto at = [](int i, int n) { return std::clamp(i, 0, n - 1); };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * v[y * w + at(x + i, w)];
      tmp[y * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[at(y + i, h) * w + x];
      v[y * w + x] = acc;
    }
  return v;
}

inline Image render(const MaskSet& truth, double noise_sigma, double blur_sigma, std::mt19937_64& rng) {
  const int w = truth.width(), h = truth.height();
  std::vector<double> clean(static_cast<std::size_t>(w) * h, 40.0);
  for (int c = 0; c < truth.num_classes(); ++c)
    for (std::size_t i = 0; i < clean.size(); ++i)
      if (truth.plane(c)[i]) clean[i] = 120 + 40 * (c % 4);
  clean = gaussian_blur(std::move(clean), w, h, blur_sigma);
  std::normal_distribution<double> noise(0.0, noise_sigma);
  Image img(w, h);
  for (std::size_t i = 0; i < clean.size(); ++i)
    img[i] = static_cast<std::uint8_t>(std::clamp(std::lround(clean[i] + noise(rng)), 0L, 255L));
  return img;
}

}  // namespace detail

/// Ground-truth scene only (image + masks).
inline std::pair<Image, MaskSet> make_scene(std::uint64_t seed, const SceneOptions& o = {}) {
  std::mt19937_64 rng(seed);
  const auto blobs = detail::place_blobs(o, rng);
  MaskSet truth(o.num_classes, o.width, o.height);
  for (int c = 0; c < o.num_classes; ++c)
    if (blobs[static_cast<std::size_t>(c)]) truth.set_plane(c, detail::rasterize(*blobs[static_cast<std::size_t>(c)], o.width, o.height));
  Image image = detail::render(truth, o.noise_sigma, o.blur_sigma, rng);
  return {std::move(image), std::move(truth)};
}

/// Degraded copy of a plane: disk erosion or dilation, then random flips on the boundary band.
inline BinaryPlane degrade_plane(const BinaryPlane& truth, const DegradeOptions& o, std::mt19937_64& rng) {
  if (is_empty(truth)) return truth;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const StructElement disk{ElementShape::disk, o.radius};
  BinaryPlane out = unit(rng) < 0.5 ? erode(truth, disk) : dilate(truth, disk);
  if (is_empty(out)) out = truth;
  const BinaryPlane before = out;
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) {
      bool boundary = false;
      for (auto [dx, dy] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}})
        if (before.contains(x + dx, y + dy) && before(x + dx, y + dy) != before(x, y)) boundary = true;
      if (boundary && unit(rng) < o.boundary_noise) out(x, y) = !out(x, y);
    }
  return out;
}

/// Likelihoods: degraded foreground in [0.65,0.95], spurious blob in [0.5,0.62], elsewhere [0,0.3].
inline ProbabilityMap degrade(const MaskSet& truth, std::uint64_t seed, const DegradeOptions& o = {}) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> high(0.65, 0.95), low(0.0, 0.3), weak(0.5, 0.62), unit(0.0, 1.0);
  const int w = truth.width(), h = truth.height();
  std::vector<float> values;
  values.reserve(static_cast<std::size_t>(truth.num_classes()) * w * h);
  for (int c = 0; c < truth.num_classes(); ++c) {
    const BinaryPlane fg = degrade_plane(truth.plane(c), o, rng);
    BinaryPlane spurious(w, h);
    if (o.spurious_blobs && !is_empty(truth.plane(c))) {
      const auto grown = dilate(fg, {ElementShape::square, 2});
      for (int tries = 0; tries < 50; ++tries) {
        const int cx = 3 + static_cast<int>(unit(rng) * (w - 6));
        const int cy = 3 + static_cast<int>(unit(rng) * (h - 6));
        Ellipse e{double(cx), double(cy), 2.5, 2.5};
        const auto blob = detail::rasterize(e, w, h);
        bool touches = false;
        for (std::size_t i = 0; i < blob.size(); ++i)
          if (blob[i] && (grown[i] || truth.plane(c)[i])) touches = true;
        if (!touches) {
          spurious = blob;
          break;
        }
      }
    }
    for (std::size_t i = 0; i < fg.size(); ++i)
      values.push_back(static_cast<float>(fg[i] ? high(rng) : spurious[i] ? weak(rng) : low(rng)));
  }
  return ProbabilityMap(truth.num_classes(), w, h, std::move(values));
}

inline Case make_case(std::uint64_t seed, const SceneOptions& scene = {}, const DegradeOptions& deg = {}) {
  auto [image, truth] = make_scene(seed, scene);
  auto probs = degrade(truth, seed, deg);
  return {std::move(image), std::move(truth), std::move(probs)};
}

/// Scene whose ground truth is exactly the prediction dilated by a square element of `radius`,
/// so that the cleaning step "dilation, square, radius" reproduces it exactly.
inline Case make_planted_case(std::uint64_t seed, int radius = 8, int width = 64, int height = 64, int num_classes = 3) {
  std::mt19937_64 rng(seed);
  SceneOptions o;
  o.width = width;
  o.height = height;
  o.num_classes = num_classes;
  o.min_radius = 4;
  o.max_radius = 8;
  o.border = radius + 2;
  o.separation = 2 * radius + 2;
  const auto blobs = detail::place_blobs(o, rng);
  MaskSet pred(num_classes, width, height), truth(num_classes, width, height);
  for (int c = 0; c < num_classes; ++c) {
    if (!blobs[static_cast<std::size_t>(c)]) continue;
    auto p = detail::rasterize(*blobs[static_cast<std::size_t>(c)], width, height);
    truth.set_plane(c, dilate(p, {ElementShape::square, radius}));
    pred.set_plane(c, std::move(p));
  }
  std::vector<float> values;
  for (const auto& p : pred.planes())
    for (auto v : p) values.push_back(v ? 0.8f : 0.05f);
  Image image = detail::render(truth, 4.0, 0.0, rng);
  return {std::move(image), std::move(truth), ProbabilityMap(num_classes, width, height, std::move(values))};
}

/// Writes cases as <dir>/{images,probs,gt}/<split>_<k>.{png,npy} plus <dir>/index.json.
/// Unlabelled entries get no ground-truth path in the index; their truth is still written so
/// refined pseudo labels can be scored.
inline DatasetIndex write_dataset(const std::filesystem::path& dir, const std::map<Split, int>& counts,
                                  std::uint64_t seed, const SceneOptions& scene = {}, const DegradeOptions& deg = {}) {
  namespace fs = std::filesystem;
  for (const char* sub : {"images", "probs", "gt"}) fs::create_directories(dir / sub);
  DatasetIndex index;
  std::uint64_t k = 0;
  for (const auto& [split, n] : counts)
    for (int i = 0; i < n; ++i, ++k) {
      const Case c = make_case(seed * 1000003ULL + k, scene, deg);
      const std::string stem = std::string(to_string(split)) + "_" + std::to_string(i);
      DatasetEntry e;
      e.image = dir / "images" / (stem + ".png");
      e.probs = dir / "probs" / (stem + ".npy");
      const fs::path gt = dir / "gt" / (stem + ".npy");
      write_image(c.image, e.image);
      write_probability_map(c.probs, e.probs);
      write_mask_set(c.truth, gt);
      if (split != Split::unlabelled) e.gt = gt;
      e.split = split;
      index.entries.push_back(std::move(e));
    }
  save_index(index, dir / "index.json");
  return index;
}

}  // namespace plrefine::synthetic
