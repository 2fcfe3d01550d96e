#pragma once

#include <chrono>
#include <string>

namespace plrefine {

struct RemoteOptions {
  std::string endpoint = "http://127.0.0.1:8000";
  double timeout_seconds = 60.0;
  int retries = 3;
  std::chrono::milliseconds initial_backoff{200};
  int max_in_flight = 4;
};

/// Environment variable that overrides the configured service endpoint.
inline constexpr const char* kEndpointEnvVar = "PLREFINE_ENDPOINT";

}  // namespace plrefine
