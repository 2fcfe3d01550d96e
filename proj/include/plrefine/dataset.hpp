#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "plrefine/errors.hpp"

namespace plrefine {

enum class Split { train, val, test, unlabelled };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::unlabelled: return "unlabelled";
  }
  return "unlabelled";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s == "unlabelled") return Split::unlabelled;
  throw ConfigError("unknown split '" + s + "'");
}

struct DatasetEntry {
  std::filesystem::path image;
  std::filesystem::path probs;
  std::optional<std::filesystem::path> gt;
  Split split = Split::unlabelled;

  /// File stem used to name every per-image output.
  std::string id() const { return image.stem().string(); }
};

struct DatasetIndex {
  std::vector<DatasetEntry> entries;

  std::vector<DatasetEntry> of_split(Split s) const {
    std::vector<DatasetEntry> out;
    for (const auto& e : entries)
      if (e.split == s) out.push_back(e);
    return out;
  }

  /// Paths distinct, unlabelled entries without ground truth, ids unique.
  void validate() const {
    std::set<std::string> paths, ids;
    for (const auto& e : entries) {
      for (const auto* p : {&e.image, &e.probs})
        if (!p->empty() && !paths.insert(p->lexically_normal().string()).second)
          throw ConfigError("path listed twice in index: " + p->string());
      if (e.gt && !paths.insert(e.gt->lexically_normal().string()).second)
        throw ConfigError("path listed twice in index: " + e.gt->string());
      if (e.split == Split::unlabelled && e.gt) throw ConfigError("unlabelled entry " + e.image.string() + " has ground truth");
      if (!ids.insert(e.id()).second) throw ConfigError("two index entries share the image stem '" + e.id() + "'");
    }
  }
};

/// {"entries":[{"image":"...","probs":"...","gt":null,"split":"unlabelled"},...]}. Relative paths
/// resolve against `base_dir`.
inline DatasetIndex index_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  DatasetIndex index;
  try {
    if (!j.is_object() || !j.contains("entries") || !j["entries"].is_array())
      throw ConfigError("index needs an 'entries' array");
    auto resolve = [&](const std::string& p) {
      std::filesystem::path path(p);
      return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
    };
    for (const auto& e : j["entries"]) {
      DatasetEntry entry;
      entry.image = resolve(e.at("image").get<std::string>());
      if (e.contains("probs") && !e["probs"].is_null()) entry.probs = resolve(e["probs"].get<std::string>());
      if (e.contains("gt") && !e["gt"].is_null()) entry.gt = resolve(e["gt"].get<std::string>());
      entry.split = parse_split(e.at("split").get<std::string>());
      index.entries.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed index: ") + e.what());
  }
  index.validate();
  return index;
}

inline nlohmann::json to_json(const DatasetIndex& index, const std::filesystem::path& base_dir = {}) {
  auto rel = [&](const std::filesystem::path& p) {
    return base_dir.empty() ? p.generic_string() : p.lexically_relative(base_dir).generic_string();
  };
  auto entries = nlohmann::json::array();
  for (const auto& e : index.entries)
    entries.push_back({{"image", rel(e.image)},
                       {"probs", e.probs.empty() ? nlohmann::json() : nlohmann::json(rel(e.probs))},
                       {"gt", e.gt ? nlohmann::json(rel(*e.gt)) : nlohmann::json()},
                       {"split", to_string(e.split)}});
  return {{"entries", entries}};
}

inline DatasetIndex load_index(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open index " + path.string());
  try {
    return index_from_json(nlohmann::json::parse(in), path.parent_path());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("index " + path.string() + " is not JSON: " + e.what());
  }
}

inline void save_index(const DatasetIndex& index, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json(index, path.parent_path()).dump(2) << '\n';
}

}  // namespace plrefine
