#pragma once

// Text-generator clients for enriched-prompt generation. Output is returned
// raw; validation is a separate step.

#include <chrono>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

// Eigen must come first: httplib drags in <resolv.h>, whose `_res` macro
// collides with Eigen parameter names.
#include <Eigen/Dense>
#include <httplib.h>
#include <json.hpp>

#include "clinalign/common.hpp"
#include "clinalign/datastore.hpp"

namespace clinalign {

struct GenerationRequest {
  std::string sample_id;
  std::string label;
  std::string domain;
  std::string image_ref;
};

class TextGenerator {
 public:
  virtual ~TextGenerator() = default;
  virtual std::string generate(const GenerationRequest& req) = 0;
};

// Reads <dir>/<sample_id>.json verbatim.
class OfflineGenerator : public TextGenerator {
 public:
  explicit OfflineGenerator(fs::path dir) : dir_(std::move(dir)) {}

  std::string generate(const GenerationRequest& req) override {
    const fs::path p = dir_ / (req.sample_id + ".json");
    if (!fs::exists(p)) throw LoadError("fixture missing: " + p.string());
    return read_file(p);
  }

 private:
  fs::path dir_;
};

struct HttpClientConfig {
  std::string base_url;  // e.g. http://127.0.0.1:8088
  std::chrono::milliseconds timeout{10000};
  int max_retries = 3;
  std::chrono::milliseconds backoff{200};
};

// POSTs the request as JSON to <base_url>/generate and returns the body.
// Transport failures and 5xx responses are retried; calls to one endpoint
// are serialized.
class HttpGenerator : public TextGenerator {
 public:
  explicit HttpGenerator(HttpClientConfig cfg) : cfg_(std::move(cfg)), client_(cfg_.base_url) {
    if (!client_.is_valid()) throw Error("generator: invalid base URL '" + cfg_.base_url + "'");
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg_.timeout - secs);
    client_.set_connection_timeout(secs.count(), usecs.count());
    client_.set_read_timeout(secs.count(), usecs.count());
    client_.set_write_timeout(secs.count(), usecs.count());
  }

  std::string generate(const GenerationRequest& req) override {
    const json body = {{"sample_id", req.sample_id}, {"label", req.label}, {"domain", req.domain},
                       {"image_ref", req.image_ref}};
    std::lock_guard lock(mu_);
    std::string last = "no attempt";
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(cfg_.backoff * attempt);
      auto res = client_.Post("/generate", body.dump(), "application/json");
      if (!res) {
        last = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500) {
        last = "status " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200)
        throw Error("generator rejected '" + req.sample_id + "' with status " + std::to_string(res->status));
      return res->body;
    }
    throw RetriableError("generator unavailable after " + std::to_string(cfg_.max_retries + 1) +
                         " attempts (" + last + ")");
  }

 private:
  HttpClientConfig cfg_;
  httplib::Client client_;
  std::mutex mu_;
};

}  // namespace clinalign
