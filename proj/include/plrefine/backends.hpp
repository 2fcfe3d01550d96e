#pragma once

#include <cstdlib>
#include <functional>
#include <memory>
#include <mutex>

#include "plrefine/config.hpp"
#include "plrefine/randomwalk.hpp"
#include "plrefine/refine.hpp"
#include "plrefine/remote.hpp"

namespace plrefine {

/// Supplies the refiner for one image; `ground_truth` is null for unlabelled images.
using RefinerFactory = std::function<std::shared_ptr<Refiner>(const MaskSet* ground_truth)>;

/// Honors a refiner's serial contract by funnelling every call through one mutex.
class SerializedRefiner final : public Refiner {
 public:
  SerializedRefiner(std::shared_ptr<Refiner> inner, std::shared_ptr<std::mutex> lock)
      : inner_(std::move(inner)), lock_(std::move(lock)) {}
  RefinerCapabilities capabilities() const override {
    std::lock_guard guard(*lock_);
    return inner_->capabilities();
  }
  RefineResponse refine(const RefineRequest& request) override {
    std::lock_guard guard(*lock_);
    return inner_->refine(request);
  }

 private:
  std::shared_ptr<Refiner> inner_;
  std::shared_ptr<std::mutex> lock_;
};

/// Endpoint from the environment override when set, else from the config.
inline RemoteOptions effective_remote_options(const RefinementConfig& config) {
  RemoteOptions o = config.remote;
  if (const char* env = std::getenv(kEndpointEnvVar); env && *env) o.endpoint = env;
  return o;
}

inline RefinerFactory make_refiner_factory(const RefinementConfig& config) {
  switch (config.refiner) {
    case RefinerKind::oracle:
      return [margin = config.oracle_margin](const MaskSet* truth) -> std::shared_ptr<Refiner> {
        if (!truth) throw ConfigError("the oracle refiner needs ground truth for every image");
        return std::make_shared<OracleRefiner>(*truth, margin);
      };
    case RefinerKind::random_walk: {
      auto shared = std::make_shared<RandomWalkRefiner>(config.random_walk);
      return [shared](const MaskSet*) -> std::shared_ptr<Refiner> { return shared; };
    }
    case RefinerKind::remote: {
      auto shared = std::make_shared<RemoteRefiner>(effective_remote_options(config));
      return [shared](const MaskSet*) -> std::shared_ptr<Refiner> { return shared; };
    }
  }
  throw ConfigError("unknown refiner kind");
}

}  // namespace plrefine
