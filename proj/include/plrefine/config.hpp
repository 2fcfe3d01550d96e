#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "plrefine/components.hpp"
#include "plrefine/errors.hpp"
#include "plrefine/hpo.hpp"
#include "plrefine/metrics.hpp"
#include "plrefine/morphology.hpp"
#include "plrefine/prompts.hpp"
#include "plrefine/randomwalk.hpp"
#include "plrefine/remote_options.hpp"

namespace plrefine {

enum class RefinerKind { oracle, random_walk, remote };

inline const char* to_string(RefinerKind k) {
  switch (k) {
    case RefinerKind::oracle: return "oracle";
    case RefinerKind::random_walk: return "random_walk";
    case RefinerKind::remote: return "remote";
  }
  return "remote";
}

inline RefinerKind parse_refiner_kind(const std::string& s) {
  if (s == "oracle") return RefinerKind::oracle;
  if (s == "random_walk") return RefinerKind::random_walk;
  if (s == "remote") return RefinerKind::remote;
  throw ConfigError("unknown refiner kind '" + s + "'");
}

inline constexpr int kConfigSchemaVersion = 1;

/// Every tunable choice of the cleaning / prompting / refinement chain. Defaults are the
/// validated-best setting: dilation with a square element of radius 8, a box first and then one
/// self-refinement round with positive and negative seeds plus the previous mask.
struct RefinementConfig {
  double threshold = kDefaultThreshold;
  Connectivity connectivity = Connectivity::eight;
  MorphOp morph = MorphOp::dilation({ElementShape::square, 8});
  bool fallback_on_empty = true;
  PromptMode prompt_mode;
  RefinerKind refiner = RefinerKind::remote;
  int oracle_margin = 8;
  RandomWalkParams random_walk;
  RemoteOptions remote;
  AbsentPolicy absent_policy = AbsentPolicy::exclude;
  std::uint64_t rng_seed = 0;
  int workers = 0;  // 0: one per hardware thread

  void validate() const {
    if (!(threshold > 0 && threshold < 1)) throw ConfigError("threshold must lie in (0,1)");
    morph.validate();
    prompt_mode.validate();
    if (oracle_margin < 0) throw ConfigError("oracle margin must be >= 0");
    random_walk.validate();
    if (workers < 0) throw ConfigError("workers must be >= 0");
  }
};

inline nlohmann::json to_json(const RefinementConfig& c) {
  nlohmann::json morph{{"kind", to_string(c.morph.kind)}};
  if (c.morph.element) {
    morph["shape"] = to_string(c.morph.element->shape);
    morph["radius"] = c.morph.element->radius;
  }
  return {
      {"schema_version", kConfigSchemaVersion},
      {"threshold", c.threshold},
      {"connectivity", static_cast<int>(c.connectivity)},
      {"morph", morph},
      {"fallback_on_empty", c.fallback_on_empty},
      {"prompt_mode",
       {{"use_box", c.prompt_mode.use_box},
        {"use_positive_seed", c.prompt_mode.use_positive_seed},
        {"use_negative_seeds", c.prompt_mode.use_negative_seeds},
        {"self_refine_rounds", c.prompt_mode.self_refine_rounds},
        {"dense_in_refine", c.prompt_mode.dense_in_refine}}},
      {"refiner",
       {{"kind", to_string(c.refiner)},
        {"oracle", {{"margin", c.oracle_margin}}},
        {"random_walk",
         {{"beta", c.random_walk.beta},
          {"threshold", c.random_walk.threshold},
          {"point_brush_radius", c.random_walk.seeds.point_brush_radius},
          {"mask_foreground", c.random_walk.seeds.mask_foreground},
          {"seed_erosion_radius", c.random_walk.seeds.foreground_erosion_radius},
          {"box_margin", c.random_walk.seeds.box_margin},
          {"border_background", c.random_walk.seeds.border_is_background},
          {"tol", c.random_walk.tol},
          {"max_iter", c.random_walk.max_iter}}},
        {"remote",
         {{"endpoint", c.remote.endpoint},
          {"timeout_s", c.remote.timeout_seconds},
          {"retries", c.remote.retries},
          {"backoff_ms", c.remote.initial_backoff.count()},
          {"max_in_flight", c.remote.max_in_flight}}}}},
      {"absent_policy", to_string(c.absent_policy)},
      {"rng_seed", c.rng_seed},
      {"workers", c.workers}};
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

}  // namespace detail

/// Missing keys keep their defaults; unknown keys are errors.
inline RefinementConfig config_from_json(const nlohmann::json& j) {
  using detail::reject_unknown_keys;
  RefinementConfig c;
  try {
    reject_unknown_keys(j,
                        {"schema_version", "threshold", "connectivity", "morph", "fallback_on_empty", "prompt_mode",
                         "refiner", "absent_policy", "rng_seed", "workers"},
                        "config");
    if (j.value("schema_version", kConfigSchemaVersion) != kConfigSchemaVersion)
      throw ConfigError("unsupported config schema_version");
    c.threshold = j.value("threshold", c.threshold);
    if (j.contains("connectivity")) {
      const int conn = j["connectivity"].get<int>();
      if (conn != 4 && conn != 8) throw ConfigError("connectivity must be 4 or 8");
      c.connectivity = conn == 4 ? Connectivity::four : Connectivity::eight;
    }
    if (j.contains("morph")) {
      const auto& m = j["morph"];
      reject_unknown_keys(m, {"kind", "shape", "radius"}, "morph");
      c.morph.kind = parse_morph_kind(m.value("kind", std::string("none")));
      if (c.morph.kind == MorphKind::none) {
        c.morph.element.reset();
      } else {
        c.morph.element = StructElement{parse_element_shape(m.value("shape", std::string("square"))), m.value("radius", 1)};
      }
    }
    c.fallback_on_empty = j.value("fallback_on_empty", c.fallback_on_empty);
    if (j.contains("prompt_mode")) {
      const auto& p = j["prompt_mode"];
      reject_unknown_keys(p, {"use_box", "use_positive_seed", "use_negative_seeds", "self_refine_rounds", "dense_in_refine"},
                          "prompt_mode");
      c.prompt_mode.use_box = p.value("use_box", c.prompt_mode.use_box);
      c.prompt_mode.use_positive_seed = p.value("use_positive_seed", c.prompt_mode.use_positive_seed);
      c.prompt_mode.use_negative_seeds = p.value("use_negative_seeds", c.prompt_mode.use_negative_seeds);
      c.prompt_mode.self_refine_rounds = p.value("self_refine_rounds", c.prompt_mode.self_refine_rounds);
      c.prompt_mode.dense_in_refine = p.value("dense_in_refine", c.prompt_mode.dense_in_refine);
    }
    if (j.contains("refiner")) {
      const auto& r = j["refiner"];
      reject_unknown_keys(r, {"kind", "oracle", "random_walk", "remote"}, "refiner");
      if (r.contains("kind")) c.refiner = parse_refiner_kind(r["kind"].get<std::string>());
      if (r.contains("oracle")) {
        reject_unknown_keys(r["oracle"], {"margin"}, "refiner.oracle");
        c.oracle_margin = r["oracle"].value("margin", c.oracle_margin);
      }
      if (r.contains("random_walk")) {
        const auto& w = r["random_walk"];
        reject_unknown_keys(w, {"beta", "threshold", "point_brush_radius", "mask_foreground", "seed_erosion_radius", "box_margin", "border_background", "tol", "max_iter"},
                            "refiner.random_walk");
        c.random_walk.beta = w.value("beta", c.random_walk.beta);
        c.random_walk.threshold = w.value("threshold", c.random_walk.threshold);
        c.random_walk.seeds.foreground_erosion_radius =
            w.value("seed_erosion_radius", c.random_walk.seeds.foreground_erosion_radius);
        c.random_walk.seeds.point_brush_radius = w.value("point_brush_radius", c.random_walk.seeds.point_brush_radius);
        c.random_walk.seeds.mask_foreground = w.value("mask_foreground", c.random_walk.seeds.mask_foreground);
        c.random_walk.seeds.box_margin = w.value("box_margin", c.random_walk.seeds.box_margin);
        c.random_walk.seeds.border_is_background = w.value("border_background", c.random_walk.seeds.border_is_background);
        c.random_walk.tol = w.value("tol", c.random_walk.tol);
        c.random_walk.max_iter = w.value("max_iter", c.random_walk.max_iter);
      }
      if (r.contains("remote")) {
        const auto& s = r["remote"];
        reject_unknown_keys(s, {"endpoint", "timeout_s", "retries", "backoff_ms", "max_in_flight"}, "refiner.remote");
        c.remote.endpoint = s.value("endpoint", c.remote.endpoint);
        c.remote.timeout_seconds = s.value("timeout_s", c.remote.timeout_seconds);
        c.remote.retries = s.value("retries", c.remote.retries);
        c.remote.initial_backoff = std::chrono::milliseconds(s.value("backoff_ms", c.remote.initial_backoff.count()));
        c.remote.max_in_flight = s.value("max_in_flight", c.remote.max_in_flight);
      }
    }
    if (j.contains("absent_policy")) c.absent_policy = parse_absent_policy(j["absent_policy"].get<std::string>());
    c.rng_seed = j.value("rng_seed", c.rng_seed);
    c.workers = j.value("workers", c.workers);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

inline RefinementConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not JSON: " + e.what());
  }
}

/// FNV-1a 64 over the canonical JSON of every result-affecting field (worker count excluded).
inline std::string fingerprint(const RefinementConfig& c) {
  auto j = to_json(c);
  j.erase("workers");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---- search-space bridge ----

/// Writes one sampled search point into a copy of `base`. Known names: morph_kind, element_shape,
/// radius, use_box, use_positive_seed, use_negative_seeds, self_refine (bool: one round with the
/// dense prompt, or none), self_refine_rounds, threshold, connectivity, oracle_margin, beta,
/// rw_threshold, rw_brush_radius, rw_box_margin, mask_foreground, seed_erosion_radius.
inline RefinementConfig apply_params(const RefinementConfig& base, const hpo::Params& params) {
  RefinementConfig c = base;
  auto shape = c.morph.element ? c.morph.element->shape : ElementShape::square;
  auto radius = c.morph.element ? c.morph.element->radius : 1;
  auto kind = c.morph.kind;
  for (const auto& [name, v] : params) {
    if (name == "morph_kind") kind = parse_morph_kind(v.get<std::string>());
    else if (name == "element_shape") shape = parse_element_shape(v.get<std::string>());
    else if (name == "radius") radius = v.get<int>();
    else if (name == "use_box") c.prompt_mode.use_box = v.get<bool>();
    else if (name == "use_positive_seed") c.prompt_mode.use_positive_seed = v.get<bool>();
    else if (name == "use_negative_seeds") c.prompt_mode.use_negative_seeds = v.get<bool>();
    else if (name == "self_refine") {
      const bool on = v.get<bool>();
      c.prompt_mode.self_refine_rounds = on ? 1 : 0;
      c.prompt_mode.dense_in_refine = on;
    } else if (name == "self_refine_rounds") {
      c.prompt_mode.self_refine_rounds = v.get<int>();
      c.prompt_mode.dense_in_refine = c.prompt_mode.self_refine_rounds > 0;
    } else if (name == "threshold") c.threshold = v.get<double>();
    else if (name == "connectivity") c.connectivity = v.get<int>() == 4 ? Connectivity::four : Connectivity::eight;
    else if (name == "oracle_margin") c.oracle_margin = v.get<int>();
    else if (name == "beta") c.random_walk.beta = v.get<double>();
    else if (name == "rw_threshold") c.random_walk.threshold = v.get<double>();
    else if (name == "rw_brush_radius") c.random_walk.seeds.point_brush_radius = v.get<int>();
    else if (name == "rw_box_margin") c.random_walk.seeds.box_margin = v.get<int>();
    else if (name == "mask_foreground") c.random_walk.seeds.mask_foreground = v.get<bool>();
    else if (name == "seed_erosion_radius") c.random_walk.seeds.foreground_erosion_radius = v.get<int>();
    else throw ConfigError("search dimension '" + name + "' does not map onto the configuration");
  }
  c.morph = kind == MorphKind::none ? MorphOp::identity() : MorphOp{kind, StructElement{shape, radius}};
  c.validate();
  return c;
}

/// Morphology operator, element and radius U(1,8), plus the prompt choices including
/// self-refinement. The random walker adds beta (log-uniform over [10,5000]) and its box margin.
inline hpo::SearchSpace default_search_space(RefinerKind refiner = RefinerKind::remote) {
  using hpo::Dimension;
  hpo::SearchSpace s{{Dimension::categorical("morph_kind", {"none", "erosion", "dilation"}),
                      Dimension::categorical("element_shape", {"square", "disk"}), Dimension::integer("radius", 1, 8),
                      Dimension::boolean("use_box"), Dimension::boolean("use_positive_seed"),
                      Dimension::boolean("use_negative_seeds"), Dimension::boolean("self_refine")}};
  if (refiner == RefinerKind::random_walk) {
    s.dims.push_back(Dimension::real("beta", 10.0, 5000.0, true));
    s.dims.push_back(Dimension::integer("rw_box_margin", 0, 4));
  }
  return s;
}

}  // namespace plrefine
