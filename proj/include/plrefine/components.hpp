#pragma once

#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "plrefine/errors.hpp"
#include "plrefine/grid.hpp"
#include "plrefine/maps.hpp"

namespace plrefine {

enum class Connectivity { four = 4, eight = 8 };

/// Connected components of one class plane. Ids run 1..num_components in the raster order of each
/// component's first pixel; 0 is background.
struct ComponentLabeling {
  Grid<std::int32_t> labels;
  int num_components = 0;
  std::vector<std::vector<std::size_t>> component_pixels;  // index id-1, row-major pixel indices ascending

  const std::vector<std::size_t>& pixels_of(int id) const { return component_pixels.at(static_cast<std::size_t>(id - 1)); }
};

namespace detail {

class DisjointSet {
 public:
  std::int32_t make() {
    parent_.push_back(static_cast<std::int32_t>(parent_.size()));
    return parent_.back();
  }
  std::int32_t find(std::int32_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::int32_t a, std::int32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    // keep the smaller provisional label as root so roots follow raster order
    if (b < a) std::swap(a, b);
    parent_[b] = a;
  }

 private:
  std::vector<std::int32_t> parent_;
};

}  // namespace detail

/// Two-pass union-find labelling.
inline ComponentLabeling label_components(const BinaryPlane& plane, Connectivity connectivity = Connectivity::eight) {
  const int w = plane.width();
  const int h = plane.height();
  Grid<std::int32_t> provisional(w, h, -1);
  detail::DisjointSet sets;

  const bool eight = connectivity == Connectivity::eight;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!plane(x, y)) continue;
      std::int32_t label = -1;
      auto visit = [&](int nx, int ny) {
        if (!plane.contains(nx, ny)) return;
        const auto n = provisional(nx, ny);
        if (n < 0) return;
        if (label < 0)
          label = n;
        else
          sets.unite(label, n);
      };
      visit(x - 1, y);
      visit(x, y - 1);
      if (eight) {
        visit(x - 1, y - 1);
        visit(x + 1, y - 1);
      }
      provisional(x, y) = label >= 0 ? label : sets.make();
    }
  }

  ComponentLabeling out{Grid<std::int32_t>(w, h, 0), 0, {}};
  std::vector<std::int32_t> final_id;
  for (std::size_t i = 0; i < plane.size(); ++i) {
    const auto p = provisional[i];
    if (p < 0) continue;
    const auto root = static_cast<std::size_t>(sets.find(p));
    if (final_id.size() <= root) final_id.resize(root + 1, 0);
    if (final_id[root] == 0) {
      final_id[root] = ++out.num_components;
      out.component_pixels.emplace_back();
    }
    const auto id = final_id[root];
    out.labels[i] = id;
    out.component_pixels[static_cast<std::size_t>(id - 1)].push_back(i);
  }
  return out;
}

/// Mean likelihood of a component (sum of likelihoods normalized by area).
inline double component_score(const ComponentLabeling& labeling, int id, std::span<const float> likelihoods) {
  double sum = 0.0;
  const auto& pixels = labeling.pixels_of(id);
  for (auto i : pixels) sum += likelihoods[i];
  return sum / static_cast<double>(pixels.size());
}

/// Id of the component with the highest area-normalized likelihood; exact ties go to the component
/// whose first pixel comes first in raster order (the smaller id). Empty when there are no components.
inline std::optional<int> select_best_component(const ComponentLabeling& labeling, std::span<const float> likelihoods) {
  if (likelihoods.size() != labeling.labels.size())
    throw DimensionMismatch("likelihood plane size does not match the labeling");
  std::optional<int> best;
  double best_score = 0.0;
  for (int id = 1; id <= labeling.num_components; ++id) {
    const double s = component_score(labeling, id, likelihoods);
    if (!best || s > best_score) {
      best = id;
      best_score = s;
    }
  }
  return best;
}

/// Reduces every class plane to its single best component (or leaves it empty).
inline MaskSet keep_best_component(const MaskSet& mask, const ProbabilityMap& probs,
                                   Connectivity connectivity = Connectivity::eight) {
  if (mask.num_classes() != probs.num_classes() || mask.width() != probs.width() || mask.height() != probs.height())
    throw DimensionMismatch("mask set and probability map differ in shape");
  MaskSet out(mask.num_classes(), mask.width(), mask.height());
  for (int c = 0; c < mask.num_classes(); ++c) {
    const auto labeling = label_components(mask.plane(c), connectivity);
    const auto best = select_best_component(labeling, probs.plane(c));
    if (!best) continue;
    BinaryPlane plane(mask.width(), mask.height());
    for (auto i : labeling.pixels_of(*best)) plane[i] = 1;
    out.set_plane(c, std::move(plane));
  }
  return out;
}

}  // namespace plrefine
