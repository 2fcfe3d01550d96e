#pragma once

#include <algorithm>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "plrefine/errors.hpp"
#include "plrefine/grid.hpp"
#include "plrefine/maps.hpp"
#include "plrefine/prompts.hpp"

namespace plrefine {

struct RefinerCapabilities {
  bool accepts_points = true;
  bool accepts_box = true;
  bool accepts_dense = true;

  void validate() const {
    if (!accepts_points && !accepts_box && !accepts_dense)
      throw ConfigError("refiner must accept at least one prompt kind");
  }
  bool operator==(const RefinerCapabilities&) const = default;
};

struct RefineRequest {
  const Image& image;
  PromptSet prompt;
  // In-process context: the cleaned component the prompt was extracted from. Never put on the wire.
  const BinaryPlane* cleaned = nullptr;
};

struct RefineResponse {
  BinaryPlane mask;
  std::optional<double> confidence;
};

/// A prompt-driven segmentation backend producing one image-sized mask per request.
class Refiner {
 public:
  virtual ~Refiner() = default;
  virtual RefinerCapabilities capabilities() const = 0;
  virtual RefineResponse refine(const RefineRequest& request) = 0;
  /// False declares a serial contract: callers must not overlap calls on this instance.
  virtual bool concurrent_calls_safe() const { return true; }
};

inline void check_prompt_bounds(const PromptSet& prompt, const Image& image) {
  auto inside = [&](Point p) { return image.contains(p.x, p.y); };
  if (prompt.box && (!inside({prompt.box->x0, prompt.box->y0}) || !inside({prompt.box->x1, prompt.box->y1})))
    throw Error("prompt box for class " + std::to_string(prompt.class_id) + " lies outside the image");
  for (const auto& s : prompt.seeds)
    if (!inside(s.at)) throw Error("seed point for class " + std::to_string(prompt.class_id) + " lies outside the image");
  if (prompt.dense_mask && !prompt.dense_mask->same_shape(image))
    throw DimensionMismatch("dense prompt size differs from the image");
}

struct ClassRefinement {
  BinaryPlane mask;
  int calls = 0;
  std::vector<std::string> warnings;
};

namespace detail {

inline PromptSet filter_to_capabilities(PromptSet prompt, const RefinerCapabilities& caps,
                                        std::vector<std::string>& warnings) {
  auto warn_once = [&](const std::string& msg) {
    for (const auto& w : warnings)
      if (w == msg) return;
    warnings.push_back(msg);
  };
  const std::string cls = "class " + std::to_string(prompt.class_id) + ": ";
  if (prompt.box && !caps.accepts_box) {
    prompt.box.reset();
    warn_once(cls + "refiner does not accept boxes; box dropped");
  }
  if (!prompt.seeds.empty() && !caps.accepts_points) {
    prompt.seeds.clear();
    warn_once(cls + "refiner does not accept points; seeds dropped");
  }
  if (prompt.dense_mask && !caps.accepts_dense) {
    prompt.dense_mask.reset();
    warn_once(cls + "refiner does not accept dense prompts; dense mask dropped");
  }
  return prompt;
}

inline RefineResponse checked_call(Refiner& refiner, const Image& image, PromptSet prompt, const BinaryPlane* cleaned) {
  RefineResponse resp = refiner.refine(RefineRequest{image, std::move(prompt), cleaned});
  if (!resp.mask.same_shape(image))
    throw ProtocolViolation("refiner returned a " + std::to_string(resp.mask.width()) + "x" +
                            std::to_string(resp.mask.height()) + " mask for a " + std::to_string(image.width()) + "x" +
                            std::to_string(image.height()) + " image");
  for (auto v : resp.mask)
    if (v > 1) throw ProtocolViolation("refiner mask is not binary");
  if (resp.confidence && !(*resp.confidence >= 0.0 && *resp.confidence <= 1.0))
    throw ProtocolViolation("refiner confidence outside [0,1]");
  return resp;
}

}  // namespace detail

/// Refines one class: an initial sparse round followed by `mode.self_refine_rounds` rounds that feed
/// the previous mask back as a dense prompt. Self-refinement is skipped (with a warning) when the
/// refiner cannot take dense prompts. Prompt parts the refiner does not accept are dropped.
inline ClassRefinement refine_class(Refiner& refiner, const Image& image, const PromptSet& extracted,
                                    const PromptMode& mode, const BinaryPlane* cleaned = nullptr) {
  mode.validate();
  check_prompt_bounds(extracted, image);
  const auto caps = refiner.capabilities();
  caps.validate();

  ClassRefinement out{BinaryPlane(image.width(), image.height()), 0, {}};
  int rounds = mode.self_refine_rounds;
  if (rounds > 0 && !caps.accepts_dense) {
    out.warnings.push_back("class " + std::to_string(extracted.class_id) +
                           ": refiner cannot self-refine (no dense prompts); refinement rounds skipped");
    rounds = 0;
  }

  PromptSet sparse = extracted;
  sparse.dense_mask.reset();

  PromptSet initial = sparse;
  if (rounds > 0 && initial.box && caps.accepts_box) initial.seeds.clear();
  initial = detail::filter_to_capabilities(std::move(initial), caps, out.warnings);
  if (!initial.has_content()) {
    out.warnings.push_back("class " + std::to_string(extracted.class_id) +
                           ": no prompt left after capability filtering; class left empty");
    return out;
  }

  out.mask = detail::checked_call(refiner, image, std::move(initial), cleaned).mask;
  ++out.calls;
  for (int r = 1; r <= rounds; ++r) {
    PromptSet next = sparse;
    if (mode.dense_in_refine) next.dense_mask = out.mask;
    next = detail::filter_to_capabilities(std::move(next), caps, out.warnings);
    out.mask = detail::checked_call(refiner, image, std::move(next), cleaned).mask;
    ++out.calls;
  }
  return out;
}

struct MaskRefinement {
  MaskSet mask;
  int calls = 0;
  std::vector<std::string> warnings;
};

/// Refines every prompt set independently and assembles the class planes. Classes without a prompt
/// stay empty. `cleaned`, when given, supplies each class's cleaned plane as in-process context.
inline MaskRefinement refine_mask_set(Refiner& refiner, const Image& image, const std::vector<PromptSet>& prompts,
                                      const PromptMode& mode, int num_classes, const MaskSet* cleaned = nullptr) {
  MaskRefinement out{MaskSet(num_classes, image.width(), image.height()), 0, {}};
  for (const auto& ps : prompts) {
    if (ps.class_id < 0 || ps.class_id >= num_classes)
      throw Error("prompt class id " + std::to_string(ps.class_id) + " out of range");
    const BinaryPlane* context = cleaned ? &cleaned->plane(ps.class_id) : nullptr;
    auto r = refine_class(refiner, image, ps, mode, context);
    out.mask.set_plane(ps.class_id, std::move(r.mask));
    out.calls += r.calls;
    out.warnings.insert(out.warnings.end(), r.warnings.begin(), r.warnings.end());
  }
  return out;
}

/// Test double for a promptable model: answers a class-i prompt with ground-truth plane i
/// restricted to the prompt region grown by `margin` pixels. The region is the box when present,
/// otherwise the extent of the dense mask, otherwise the extent of the positive seeds.
class OracleRefiner final : public Refiner {
 public:
  explicit OracleRefiner(MaskSet ground_truth, int margin = 8) : truth_(std::move(ground_truth)), margin_(margin) {
    if (margin < 0) throw ConfigError("oracle margin must be >= 0");
  }

  RefinerCapabilities capabilities() const override { return {true, true, true}; }

  RefineResponse refine(const RefineRequest& request) override {
    const auto& image = request.image;
    if (truth_.width() != image.width() || truth_.height() != image.height())
      throw DimensionMismatch("oracle ground truth size differs from the image");
    const auto& prompt = request.prompt;
    BinaryPlane out(image.width(), image.height());
    if (prompt.class_id < 0 || prompt.class_id >= truth_.num_classes()) return {std::move(out), std::nullopt};

    std::optional<BoundingBox> region = prompt.box;
    if (!region && prompt.dense_mask) region = extract_box(*prompt.dense_mask);
    if (!region) {
      for (const auto& p : prompt.points(Polarity::positive)) {
        if (!region) {
          region = BoundingBox{p.x, p.y, p.x, p.y};
        } else {
          region = BoundingBox{std::min(region->x0, p.x), std::min(region->y0, p.y), std::max(region->x1, p.x),
                               std::max(region->y1, p.y)};
        }
      }
    }
    if (!region) return {std::move(out), std::nullopt};

    const auto grown = region->expanded(margin_, image.width(), image.height());
    const auto& truth = truth_.plane(prompt.class_id);
    for (int y = grown.y0; y <= grown.y1; ++y)
      for (int x = grown.x0; x <= grown.x1; ++x) out(x, y) = truth(x, y);
    return {std::move(out), std::nullopt};
  }

 private:
  MaskSet truth_;
  int margin_;
};

}  // namespace plrefine
