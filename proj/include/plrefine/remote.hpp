#pragma once

#include <chrono>
#include <condition_variable>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <thread>

#include <httplib.h>

#include "plrefine/errors.hpp"
#include "plrefine/refine.hpp"
#include "plrefine/remote_options.hpp"
#include "plrefine/wire.hpp"

namespace plrefine {

/// Client for a refinement service speaking the /v1 protocol. Safe for concurrent calls; at most
/// `max_in_flight` requests are outstanding at once. Transport failures and 5xx answers are retried
/// with exponential backoff; other non-200 answers are protocol violations.
class RemoteRefiner final : public Refiner {
 public:
  explicit RemoteRefiner(RemoteOptions options) : options_(std::move(options)) {
    static const std::regex url(R"(^(http://[^/\s:]+(?::\d+)?)(/[^\s]*)?$)");
    std::smatch m;
    if (!std::regex_match(options_.endpoint, m, url))
      throw ConfigError("refiner endpoint must look like http://host[:port][/prefix], got '" + options_.endpoint + "'");
    host_ = m[1].str();
    prefix_ = m[2].str();
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    if (options_.retries < 0) throw ConfigError("retries must be >= 0");
    if (options_.max_in_flight < 1) throw ConfigError("max_in_flight must be >= 1");
    if (!(options_.timeout_seconds > 0)) throw ConfigError("timeout must be positive");
  }

  RefinerCapabilities capabilities() const override {
    std::lock_guard lock(caps_mutex_);
    if (!caps_) {
      const std::string body = send([](httplib::Client& c, const std::string& path) { return c.Get(path); },
                                    "/v1/capabilities");
      try {
        caps_ = wire::decode_capabilities(nlohmann::json::parse(body));
      } catch (const nlohmann::json::exception& e) {
        throw ProtocolViolation(std::string("capabilities are not JSON: ") + e.what());
      }
    }
    return *caps_;
  }

  RefineResponse refine(const RefineRequest& request) override {
    const std::string payload = wire::encode_refine_request(request.image, request.prompt).dump();
    Slot slot(*this);
    const std::string body = send(
        [&](httplib::Client& c, const std::string& path) { return c.Post(path, payload, "application/json"); },
        "/v1/refine");
    return wire::decode_refine_response(body, request.image.width(), request.image.height());
  }

  const RemoteOptions& options() const noexcept { return options_; }

 private:
  class Slot {
   public:
    explicit Slot(const RemoteRefiner& owner) : owner_(owner) {
      std::unique_lock lock(owner_.slot_mutex_);
      owner_.slot_cv_.wait(lock, [&] { return owner_.in_flight_ < owner_.options_.max_in_flight; });
      ++owner_.in_flight_;
    }
    ~Slot() {
      {
        std::lock_guard lock(owner_.slot_mutex_);
        --owner_.in_flight_;
      }
      owner_.slot_cv_.notify_one();
    }
    Slot(const Slot&) = delete;
    Slot& operator=(const Slot&) = delete;

   private:
    const RemoteRefiner& owner_;
  };

  template <typename Call>
  std::string send(Call&& call, const std::string& route) const {
    std::string last_error;
    auto backoff = options_.initial_backoff;
    for (int attempt = 0; attempt <= options_.retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
      }
      httplib::Client client(host_);
      const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
          std::chrono::duration<double>(options_.timeout_seconds));
      client.set_connection_timeout(timeout);
      client.set_read_timeout(timeout);
      client.set_write_timeout(timeout);
      auto res = call(client, prefix_ + route);
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 200) return res->body;
      if (res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      throw ProtocolViolation(route + " answered HTTP " + std::to_string(res->status) + ": " + res->body);
    }
    throw RefinerUnavailable(host_ + prefix_ + route + " unavailable after " + std::to_string(options_.retries + 1) +
                             " attempts (" + last_error + ")");
  }

  RemoteOptions options_;
  std::string host_;
  std::string prefix_;
  mutable std::mutex caps_mutex_;
  mutable std::optional<RefinerCapabilities> caps_;
  mutable std::mutex slot_mutex_;
  mutable std::condition_variable slot_cv_;
  mutable int in_flight_ = 0;
};

}  // namespace plrefine
