#pragma once

#include <string>
#include <vector>

#include "plrefine/prompts.hpp"

namespace wire_cases {

struct Case {
  std::string name;
  plrefine::Image image;
  plrefine::PromptSet prompt;
};

inline plrefine::Image gradient_image() {
  plrefine::Image img(10, 7);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) img(x, y) = static_cast<std::uint8_t>(20 * x + 7 * y);
  return img;
}

inline std::vector<Case> all() {
  using namespace plrefine;
  std::vector<Case> out;
  PromptSet box;
  box.box = BoundingBox{1, 2, 6, 5};
  out.push_back({"box_only", gradient_image(), box});

  PromptSet points = box;
  points.seeds = {{{3, 3}, Polarity::positive}, {{9, 0}, Polarity::negative}, {{0, 6}, Polarity::negative}};
  out.push_back({"box_points", gradient_image(), points});

  PromptSet dense = points;
  BinaryPlane m(10, 7);
  for (int y = 2; y <= 5; ++y)
    for (int x = 1; x <= 6; ++x) m(x, y) = (x + y) % 3 != 0;
  dense.dense_mask = m;
  out.push_back({"box_points_dense", gradient_image(), dense});
  return out;
}

}  // namespace wire_cases
