#pragma once

// Shared helpers for the unit and acceptance suites.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "plrefine/grid.hpp"
#include "plrefine/maps.hpp"
#include "plrefine/refine.hpp"

namespace testing_support {

using plrefine::BinaryPlane;

/// Random plane made of a few filled rectangles and disks plus salt noise, so that it has several
/// components of varied shape.
inline BinaryPlane random_plane(std::mt19937_64& rng, int w, int h, int blobs = 4, double salt = 0.01) {
  BinaryPlane p(w, h);
  std::uniform_int_distribution<int> X(0, w - 1), Y(0, h - 1), R(1, std::max(1, std::min(w, h) / 5));
  std::bernoulli_distribution coin(0.5), salty(salt);
  for (int b = 0; b < blobs; ++b) {
    const int cx = X(rng), cy = Y(rng), r = R(rng);
    const bool disk = coin(rng);
    for (int y = cy - r; y <= cy + r; ++y)
      for (int x = cx - r; x <= cx + r; ++x)
        if (p.contains(x, y) && (!disk || (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r)) p(x, y) = 1;
  }
  for (auto& v : p)
    if (salty(rng)) v = 1;
  return p;
}

inline std::vector<float> random_likelihoods(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            ("plrefine_test_" + std::to_string(stamp) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

/// Returns the cleaned component it was handed, so that the pipeline's output is exactly the
/// cleaning step's output.
class EchoRefiner final : public plrefine::Refiner {
 public:
  plrefine::RefinerCapabilities capabilities() const override { return {true, true, true}; }
  plrefine::RefineResponse refine(const plrefine::RefineRequest& r) override {
    return {r.cleaned ? *r.cleaned : BinaryPlane(r.image.width(), r.image.height()), std::nullopt};
  }
};

}  // namespace testing_support
