#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "plrefine/prompts.hpp"
#include "support.hpp"

using namespace plrefine;

namespace {

BoundingBox scan_box(const BinaryPlane& p) {
  int x0 = p.width(), y0 = p.height(), x1 = -1, y1 = -1;
  for (int y = 0; y < p.height(); ++y)
    for (int x = 0; x < p.width(); ++x)
      if (p(x, y)) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  return {x0, y0, x1, y1};
}

// Independent seed rule: rounded centroid if set, else the set pixel nearest the exact centroid.
Point expected_seed(const BinaryPlane& p) {
  long sx = 0, sy = 0, n = 0;
  for (int y = 0; y < p.height(); ++y)
    for (int x = 0; x < p.width(); ++x)
      if (p(x, y)) sx += x, sy += y, ++n;
  const double cx = double(sx) / n, cy = double(sy) / n;
  const int rx = int(std::floor(cx + 0.5)), ry = int(std::floor(cy + 0.5));
  if (p(rx, ry)) return {rx, ry};
  Point best{-1, -1};
  double bd = 1e300;
  for (int y = 0; y < p.height(); ++y)
    for (int x = 0; x < p.width(); ++x)
      if (p(x, y)) {
        const double d = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        if (d < bd) bd = d, best = {x, y};
      }
  return best;
}

}  // namespace

TEST(Prompts, BoxIsTightAndSeedIsOnTheMask) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 300; ++t) {
    const auto p = testing_support::random_plane(rng, 24, 19, 1 + t % 4, 0.0);
    if (is_empty(p)) continue;
    ASSERT_EQ(*extract_box(p), scan_box(p));
    const auto s = *extract_positive_seed(p);
    ASSERT_EQ(p(s.x, s.y), 1);
    ASSERT_EQ(s, expected_seed(p));
  }
  EXPECT_FALSE(extract_box(BinaryPlane(4, 4)));
  EXPECT_FALSE(extract_positive_seed(BinaryPlane(4, 4)));
}

TEST(Prompts, RingSnapsToNearestPixel) {
  BinaryPlane ring(9, 9);
  for (int i = 1; i < 8; ++i) ring(i, 1) = ring(i, 7) = ring(1, i) = ring(7, i) = 1;
  const auto s = *extract_positive_seed(ring);
  EXPECT_EQ(s, (Point{4, 1}));
}

TEST(Prompts, NegativesComeFromOtherClasses) {
  MaskSet m(3, 12, 12);
  BinaryPlane a(12, 12), c(12, 12);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) a(x, y) = 1;
  for (int y = 8; y < 12; ++y)
    for (int x = 8; x < 12; ++x) c(x, y) = 1;
  m.set_plane(0, a);
  m.set_plane(2, c);
  const auto ex = build_prompt_sets(m, PromptMode{});
  ASSERT_EQ(ex.prompts.size(), 2u);
  EXPECT_EQ(ex.empty_classes, std::vector<int>{1});
  EXPECT_TRUE(ex.warnings.empty());
  const auto& p0 = ex.prompts[0];
  EXPECT_EQ(p0.class_id, 0);
  EXPECT_EQ(*p0.box, (BoundingBox{0, 0, 3, 3}));
  EXPECT_EQ(p0.points(Polarity::positive), (std::vector<Point>{{2, 2}}));
  EXPECT_EQ(p0.points(Polarity::negative), (std::vector<Point>{{10, 10}}));
  EXPECT_EQ(ex.prompts[1].points(Polarity::negative), (std::vector<Point>{{2, 2}}));

  PromptMode box_only;
  box_only.use_positive_seed = box_only.use_negative_seeds = false;
  box_only.self_refine_rounds = 0;
  box_only.dense_in_refine = false;
  for (const auto& ps : build_prompt_sets(m, box_only).prompts) {
    EXPECT_TRUE(ps.box);
    EXPECT_TRUE(ps.seeds.empty());
  }
}

TEST(Prompts, OverlappingNegativeIsKeptAndReported) {
  MaskSet m(2, 10, 10);
  BinaryPlane big(10, 10), small(10, 10);
  for (auto& v : big) v = 1;
  small(1, 1) = 1;
  m.set_plane(0, big);
  m.set_plane(1, small);
  const auto ex = build_prompt_sets(m, PromptMode{});
  ASSERT_EQ(ex.warnings.size(), 1u);
  EXPECT_NE(ex.warnings[0].find("overlap"), std::string::npos);
  EXPECT_EQ(ex.prompts[0].points(Polarity::negative), (std::vector<Point>{{1, 1}}));
}

TEST(PromptMode, Validation) {
  PromptMode m;
  m.use_box = m.use_positive_seed = false;
  EXPECT_THROW(m.validate(), ConfigError);
  m = {};
  m.self_refine_rounds = 0;
  EXPECT_THROW(m.validate(), ConfigError);
  m.dense_in_refine = false;
  EXPECT_NO_THROW(m.validate());
  m.self_refine_rounds = -1;
  EXPECT_THROW(m.validate(), ConfigError);
}

TEST(Prompts, JsonRoundTrip) {
  PromptSet ps;
  ps.class_id = 3;
  ps.box = BoundingBox{1, 2, 5, 6};
  ps.seeds = {{{3, 4}, Polarity::positive}, {{0, 0}, Polarity::negative}};
  BinaryPlane dense(7, 8);
  dense(2, 3) = dense(6, 7) = 1;
  ps.dense_mask = dense;
  EXPECT_EQ(prompt_set_from_json(to_json(ps)), ps);

  PromptSet bare;
  bare.seeds = {{{1, 1}, Polarity::positive}};
  const auto j = to_json(bare);
  EXPECT_TRUE(j["box"].is_null());
  EXPECT_TRUE(j["dense_mask"].is_null());
  EXPECT_EQ(prompt_set_from_json(j), bare);
}

TEST(Prompts, JsonRejectsMalformedParts) {
  EXPECT_THROW(box_from_json(nlohmann::json::array({1, 2, 3})), ProtocolViolation);
  EXPECT_THROW(box_from_json(nlohmann::json::array({5, 0, 1, 3})), ProtocolViolation);
  EXPECT_THROW(points_from_json(nlohmann::json::array({nlohmann::json::array({1.5, 2})})), ProtocolViolation);
  EXPECT_THROW(mask_from_json("not base64!"), ProtocolViolation);
  EXPECT_THROW(prompt_set_from_json(nlohmann::json::object()), ProtocolViolation);
}
