#include <gtest/gtest.h>

#include <fstream>

#include "fixtures/wire_cases.hpp"
#include "plrefine/wire.hpp"

using namespace plrefine;

namespace {

nlohmann::json load_fixture(const std::string& name) {
  std::ifstream in(std::string(PLREFINE_FIXTURE_DIR) + "/wire/" + name + ".json");
  if (!in) throw std::runtime_error("missing wire fixture " + name);
  return nlohmann::json::parse(in);
}

}  // namespace

TEST(Wire, RequestsMatchGoldenBodies) {
  for (const auto& c : wire_cases::all()) {
    SCOPED_TRACE(c.name);
    EXPECT_EQ(wire::encode_refine_request(c.image, c.prompt), load_fixture(c.name));
  }
}

TEST(Wire, GoldenBodiesDecodeToTheirInputs) {
  for (const auto& c : wire_cases::all()) {
    SCOPED_TRACE(c.name);
    const auto d = wire::decode_refine_request(load_fixture(c.name));
    EXPECT_EQ(d.image, c.image);
    EXPECT_EQ(d.prompt, c.prompt);
  }
}

TEST(Wire, BoxOnlyBodyHasNullsAndEmptyLists) {
  const auto j = load_fixture("box_only");
  EXPECT_EQ(j["box"], nlohmann::json::array({1, 2, 6, 5}));
  EXPECT_TRUE(j["positive_points"].empty());
  EXPECT_TRUE(j["negative_points"].empty());
  EXPECT_TRUE(j["dense_mask"].is_null());
}

TEST(Wire, ResponseDecodesAndChecksSize) {
  const auto j = load_fixture("response");
  const auto r = wire::decode_refine_response(j, 10, 7);
  EXPECT_EQ(count_set(r.mask), 1u);
  EXPECT_EQ(r.mask(4, 3), 1);
  EXPECT_DOUBLE_EQ(*r.confidence, 0.75);
  EXPECT_THROW(wire::decode_refine_response(j, 10, 8), ProtocolViolation);
  EXPECT_THROW(wire::decode_refine_response(std::string("<html>"), 10, 7), ProtocolViolation);
  auto bad = j;
  bad["confidence"] = "high";
  EXPECT_THROW(wire::decode_refine_response(bad, 10, 7), ProtocolViolation);
  bad.erase("mask");
  EXPECT_THROW(wire::decode_refine_response(bad, 10, 7), ProtocolViolation);
}

TEST(Wire, RequestDecodeRejectsMalformedBodies) {
  EXPECT_THROW(wire::decode_refine_request(nlohmann::json::object()), ProtocolViolation);
  EXPECT_THROW(wire::decode_refine_request({{"image", "AAAA"}}), ProtocolViolation);
  auto j = load_fixture("box_points");
  j["positive_points"] = {{1}};
  EXPECT_THROW(wire::decode_refine_request(j), ProtocolViolation);
}

TEST(Wire, Capabilities) {
  const RefinerCapabilities caps{false, true, false};
  EXPECT_EQ(wire::decode_capabilities(wire::encode_capabilities(caps, "m")), caps);
  EXPECT_THROW(wire::decode_capabilities({{"accepts_points", true}}), ProtocolViolation);
  EXPECT_THROW(wire::decode_capabilities(wire::encode_capabilities({false, false, false}, "m")), ProtocolViolation);
}
