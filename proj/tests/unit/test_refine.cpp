#include <gtest/gtest.h>

#include <mutex>

#include "plrefine/refine.hpp"
#include "support.hpp"

using namespace plrefine;

namespace {

struct Call {
  PromptSet prompt;
  bool had_context = false;
};

// Records every request and answers with a fixed mask per call index.
class RecordingRefiner final : public Refiner {
 public:
  explicit RecordingRefiner(RefinerCapabilities caps = {}) : caps_(caps) {}
  RefinerCapabilities capabilities() const override { return caps_; }
  RefineResponse refine(const RefineRequest& r) override {
    BinaryPlane out(r.image.width(), r.image.height());
    out(static_cast<int>(calls.size()) % r.image.width(), 0) = 1;
    calls.push_back({r.prompt, r.cleaned != nullptr});
    answers.push_back(out);
    return {out, std::nullopt};
  }
  std::vector<Call> calls;
  std::vector<BinaryPlane> answers;

 private:
  RefinerCapabilities caps_;
};

class WrongSizeRefiner final : public Refiner {
 public:
  RefinerCapabilities capabilities() const override { return {}; }
  RefineResponse refine(const RefineRequest&) override { return {BinaryPlane(2, 2), 2.0}; }
};

PromptSet sample_prompt() {
  PromptSet ps;
  ps.class_id = 1;
  ps.box = BoundingBox{2, 2, 6, 6};
  ps.seeds = {{{4, 4}, Polarity::positive}, {{9, 9}, Polarity::negative}};
  return ps;
}

}  // namespace

TEST(RefineClass, BoxFirstThenSeedsWithPreviousMask) {
  const Image img(12, 12);
  RecordingRefiner r;
  const auto res = refine_class(r, img, sample_prompt(), PromptMode{});
  ASSERT_EQ(r.calls.size(), 2u);
  EXPECT_EQ(res.calls, 2);
  const auto& first = r.calls[0].prompt;
  EXPECT_TRUE(first.box);
  EXPECT_TRUE(first.seeds.empty());
  EXPECT_FALSE(first.dense_mask);
  const auto& second = r.calls[1].prompt;
  EXPECT_EQ(second.box, first.box);
  EXPECT_EQ(second.seeds, sample_prompt().seeds);
  ASSERT_TRUE(second.dense_mask);
  EXPECT_EQ(*second.dense_mask, r.answers[0]);
  EXPECT_EQ(res.mask, r.answers[1]);
  EXPECT_TRUE(res.warnings.empty());
}

TEST(RefineClass, RoundsCountAndSparseOnlyRefinement) {
  const Image img(12, 12);
  PromptMode mode;
  mode.self_refine_rounds = 3;
  mode.dense_in_refine = false;
  RecordingRefiner r;
  EXPECT_EQ(refine_class(r, img, sample_prompt(), mode).calls, 4);
  for (std::size_t i = 1; i < r.calls.size(); ++i) EXPECT_FALSE(r.calls[i].prompt.dense_mask);

  PromptMode single;
  single.self_refine_rounds = 0;
  single.dense_in_refine = false;
  RecordingRefiner s;
  refine_class(s, img, sample_prompt(), single);
  ASSERT_EQ(s.calls.size(), 1u);
  EXPECT_EQ(s.calls[0].prompt.seeds.size(), 2u);
}

TEST(RefineClass, BoxOnlyServiceGetsOneCall) {
  const Image img(12, 12);
  RecordingRefiner r({false, true, false});
  const auto res = refine_class(r, img, sample_prompt(), PromptMode{});
  ASSERT_EQ(r.calls.size(), 1u);
  EXPECT_TRUE(r.calls[0].prompt.box);
  EXPECT_TRUE(r.calls[0].prompt.seeds.empty());
  EXPECT_FALSE(res.warnings.empty());
}

TEST(RefineClass, PointOnlyServiceDropsBox) {
  const Image img(12, 12);
  RecordingRefiner r({true, false, true});
  refine_class(r, img, sample_prompt(), PromptMode{});
  ASSERT_EQ(r.calls.size(), 2u);
  for (const auto& c : r.calls) EXPECT_FALSE(c.prompt.box);
  EXPECT_EQ(r.calls[0].prompt.seeds.size(), 2u);
}

TEST(RefineClass, NothingLeftLeavesClassEmpty) {
  const Image img(12, 12);
  RecordingRefiner r({true, false, false});
  PromptSet box_only;
  box_only.box = BoundingBox{0, 0, 3, 3};
  const auto res = refine_class(r, img, box_only, PromptMode{});
  EXPECT_TRUE(r.calls.empty());
  EXPECT_TRUE(is_empty(res.mask));
  EXPECT_EQ(res.calls, 0);
}

TEST(RefineClass, RejectsBadPromptsAndAnswers) {
  const Image img(8, 8);
  RecordingRefiner r;
  auto bad = sample_prompt();
  EXPECT_THROW(refine_class(r, img, bad, PromptMode{}), Error);
  bad.box = BoundingBox{0, 0, 3, 3};
  bad.seeds = {{{4, 4}, Polarity::positive}};
  WrongSizeRefiner w;
  EXPECT_THROW(refine_class(w, img, bad, PromptMode{}), ProtocolViolation);
}

TEST(RefineMaskSet, PassesCleanedContextAndCountsCalls) {
  const Image img(12, 12);
  MaskSet cleaned(3, 12, 12);
  RecordingRefiner r;
  auto a = sample_prompt();
  a.class_id = 0;
  auto b = sample_prompt();
  b.class_id = 2;
  const auto res = refine_mask_set(r, img, {a, b}, PromptMode{}, 3, &cleaned);
  EXPECT_EQ(res.calls, 4);
  for (const auto& c : r.calls) EXPECT_TRUE(c.had_context);
  EXPECT_TRUE(is_empty(res.mask.plane(1)));
  EXPECT_EQ(res.mask.plane(2), r.answers[3]);
  auto c = sample_prompt();
  c.class_id = 3;
  EXPECT_THROW(refine_mask_set(r, img, {c}, PromptMode{}, 3), Error);
}

TEST(OracleRefiner, ClipsTruthToGrownRegion) {
  MaskSet truth(1, 20, 20);
  BinaryPlane t(20, 20);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 20; ++x) t(x, y) = 1;
  truth.set_plane(0, t);
  const Image img(20, 20);
  OracleRefiner o(truth, 2);
  PromptSet ps;
  ps.box = BoundingBox{5, 5, 7, 8};
  const auto m = o.refine({img, ps, nullptr}).mask;
  EXPECT_EQ(count_set(m), 7u * 8u);
  EXPECT_EQ(m(3, 3), 1);
  EXPECT_EQ(m(2, 3), 0);

  PromptSet seeds;
  seeds.seeds = {{{0, 0}, Polarity::positive}, {{1, 2}, Polarity::positive}};
  EXPECT_EQ(count_set(o.refine({img, seeds, nullptr}).mask), 4u * 5u);
  PromptSet negative_only;
  negative_only.seeds = {{{0, 0}, Polarity::negative}};
  EXPECT_TRUE(is_empty(o.refine({img, negative_only, nullptr}).mask));
  EXPECT_THROW(OracleRefiner(truth, -1), ConfigError);
  EXPECT_THROW(o.refine({Image(5, 5), ps, nullptr}), DimensionMismatch);
}
