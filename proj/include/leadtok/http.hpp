#pragma once

// Minimal JSON-over-HTTP client used by the judge and live generation
// backends: URL splitting, bearer auth from an environment variable,
// retries with exponential backoff and a per-endpoint request interval.

#include "leadtok/error.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

namespace leadtok {

struct HttpEndpoint {
  std::string url;                  // full URL, e.g. http://localhost:8000/v1/completions
  std::string model;
  std::string api_key_env = "OPENAI_API_KEY";
  double timeout_s = 120.0;
  int retries = 3;
  double backoff_s = 0.5;           // first retry delay; doubles each attempt
  double min_interval_s = 0.0;      // rate limit between requests to this endpoint
};

/// Transport-level failure after all retries.
class TransportError : public Error {
 public:
  TransportError(const std::string& what, int status) : Error(what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint url needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

class JsonHttpClient {
 public:
  explicit JsonHttpClient(HttpEndpoint ep) : ep_(std::move(ep)), url_(split_url(ep_.url)) {}

  const HttpEndpoint& endpoint() const { return ep_; }

  nlohmann::json post(const nlohmann::json& body) {
    std::string last_error;
    int last_status = 0;
    double delay = ep_.backoff_s;
    for (int attempt = 0; attempt <= ep_.retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(std::chrono::duration<double>(delay));
        delay *= 2.0;
      }
      throttle();
      httplib::Client cli(url_.origin);
      const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
          std::chrono::duration<double>(ep_.timeout_s));
      cli.set_connection_timeout(timeout);
      cli.set_read_timeout(timeout);
      cli.set_write_timeout(timeout);
      httplib::Headers headers;
      if (!ep_.api_key_env.empty()) {
        if (const char* key = std::getenv(ep_.api_key_env.c_str()); key && *key)
          headers.emplace("Authorization", std::string("Bearer ") + key);
      }
      auto res = cli.Post(url_.path, headers, body.dump(), "application/json");
      if (!res) {
        last_error = "transport: " + httplib::to_string(res.error());
        last_status = 0;
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "status " + std::to_string(res->status);
        last_status = res->status;
        continue;
      }
      if (res->status != 200)
        throw TransportError(ep_.url + ": status " + std::to_string(res->status) + ": " + res->body.substr(0, 300),
                             res->status);
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::parse_error& e) {
        throw TransportError(ep_.url + ": response is not JSON: " + e.what(), res->status);
      }
    }
    throw TransportError(ep_.url + ": giving up after " + std::to_string(ep_.retries + 1) + " attempts (" +
                             last_error + ")",
                         last_status);
  }

 private:
  void throttle() {
    if (ep_.min_interval_s <= 0) return;
    std::lock_guard lock(mu_);
    const auto now = std::chrono::steady_clock::now();
    const auto gap = std::chrono::duration<double>(ep_.min_interval_s);
    if (now - last_ < gap) std::this_thread::sleep_for(gap - (now - last_));
    last_ = std::chrono::steady_clock::now();
  }

  HttpEndpoint ep_;
  SplitUrl url_;
  std::mutex mu_;
  std::chrono::steady_clock::time_point last_{};
};

}  // namespace leadtok
