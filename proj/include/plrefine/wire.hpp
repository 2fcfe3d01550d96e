#pragma once

// JSON bodies of the refinement service protocol:
//   POST /v1/refine        {"image","box","positive_points","negative_points","dense_mask"}
//                       -> {"mask","confidence"}
//   GET  /v1/capabilities -> {"accepts_points","accepts_box","accepts_dense","model"}
// Images travel as base64 8-bit grayscale PNG, masks as base64 1-bit PNG.

#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "plrefine/base64.hpp"
#include "plrefine/errors.hpp"
#include "plrefine/png.hpp"
#include "plrefine/prompts.hpp"
#include "plrefine/refine.hpp"

namespace plrefine::wire {

inline nlohmann::json encode_refine_request(const Image& image, const PromptSet& prompt) {
  return {{"image", base64::encode(png::encode_gray8(image))},
          {"box", box_to_json(prompt.box)},
          {"positive_points", points_to_json(prompt.points(Polarity::positive))},
          {"negative_points", points_to_json(prompt.points(Polarity::negative))},
          {"dense_mask", mask_to_json(prompt.dense_mask)}};
}

struct DecodedRequest {
  Image image;
  PromptSet prompt;  // class_id is not part of the wire body and decodes as 0
};

/// Server-side decode. Malformed bodies raise ProtocolViolation.
inline DecodedRequest decode_refine_request(const nlohmann::json& body) {
  if (!body.is_object() || !body.contains("image") || !body["image"].is_string())
    throw ProtocolViolation("refine request needs an 'image' string");
  DecodedRequest out;
  try {
    out.image = png::decode_image(base64::decode(body["image"].get<std::string>()));
  } catch (const MalformedFile& e) {
    throw ProtocolViolation(std::string("image PNG: ") + e.what());
  }
  nlohmann::json prompt = {{"class_id", 0},
                           {"box", body.value("box", nlohmann::json())},
                           {"positive_points", body.value("positive_points", nlohmann::json::array())},
                           {"negative_points", body.value("negative_points", nlohmann::json::array())},
                           {"dense_mask", body.value("dense_mask", nlohmann::json())}};
  out.prompt = prompt_set_from_json(prompt);
  return out;
}

inline nlohmann::json encode_refine_response(const RefineResponse& response) {
  return {{"mask", base64::encode(png::encode_mask1(response.mask))},
          {"confidence", response.confidence ? nlohmann::json(*response.confidence) : nlohmann::json()}};
}

/// Client-side decode; the mask must match the request image size.
inline RefineResponse decode_refine_response(const nlohmann::json& body, int width, int height) {
  if (!body.is_object() || !body.contains("mask") || !body["mask"].is_string())
    throw ProtocolViolation("refine response needs a 'mask' string");
  auto mask = mask_from_json(body["mask"]);
  if (mask->width() != width || mask->height() != height)
    throw ProtocolViolation("response mask is " + std::to_string(mask->width()) + "x" + std::to_string(mask->height()) +
                            ", expected " + std::to_string(width) + "x" + std::to_string(height));
  RefineResponse out{std::move(*mask), std::nullopt};
  if (body.contains("confidence") && !body["confidence"].is_null()) {
    if (!body["confidence"].is_number()) throw ProtocolViolation("confidence must be a number or null");
    out.confidence = body["confidence"].get<double>();
  }
  return out;
}

inline RefineResponse decode_refine_response(const std::string& body, int width, int height) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProtocolViolation(std::string("response is not JSON: ") + e.what());
  }
  return decode_refine_response(j, width, height);
}

inline nlohmann::json encode_capabilities(const RefinerCapabilities& caps, const std::string& model) {
  return {{"accepts_points", caps.accepts_points},
          {"accepts_box", caps.accepts_box},
          {"accepts_dense", caps.accepts_dense},
          {"model", model}};
}

inline RefinerCapabilities decode_capabilities(const nlohmann::json& body) {
  auto flag = [&](const char* key) {
    if (!body.is_object() || !body.contains(key) || !body[key].is_boolean())
      throw ProtocolViolation(std::string("capabilities lack boolean '") + key + "'");
    return body[key].get<bool>();
  };
  RefinerCapabilities caps{flag("accepts_points"), flag("accepts_box"), flag("accepts_dense")};
  if (!caps.accepts_points && !caps.accepts_box && !caps.accepts_dense)
    throw ProtocolViolation("service accepts no prompt kind");
  return caps;
}

}  // namespace plrefine::wire
