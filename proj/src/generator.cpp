#include "spantrace/generator.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "spantrace/text.hpp"

namespace spantrace {

using json = nlohmann::json;

std::string oracle_evaluate(const std::vector<OracleRule>& rules, std::string_view prompt,
                            std::string_view fallback) {
  const OracleRule* best = nullptr;
  for (const auto& r : rules) {
    if (r.trigger.empty()) continue;
    if (best && r.priority <= best->priority) continue;
    if (prompt.find(r.trigger) != std::string_view::npos) best = &r;
  }
  return best ? best->response : std::string(fallback);
}

OracleBackend::OracleBackend(std::vector<OracleRule> rules, std::string fallback)
    : rules_(std::move(rules)), fallback_(std::move(fallback)) {
  std::sort(rules_.begin(), rules_.end(),
            [](const OracleRule& a, const OracleRule& b) { return a.priority > b.priority; });
}

GenerationResult OracleBackend::generate(const GenerationRequest& req) {
  std::string completion = oracle_evaluate(rules_, req.prompt, fallback_);
  if (char_length(completion) > req.params.max_output_chars) {
    completion = char_substr(completion, 0, req.params.max_output_chars);
  }
  return GenerationResult{std::move(completion), GenerationSource::kOracle};
}

RemoteBackend::RemoteBackend(RemoteConfig config) : config_(std::move(config)) {}

std::string RemoteBackend::identity() const {
  return "remote:" + config_.base_url + ":" + config_.model;
}

GenerationResult RemoteBackend::generate(const GenerationRequest& req) {
  json body;
  body["model"] = config_.model;
  body["messages"] = json::array({json{{"role", "user"}, {"content", req.prompt}}});
  body["temperature"] = req.params.temperature;
  const std::string payload = body.dump();

  std::string last_error;
  int backoff = config_.backoff_ms;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    httplib::Client client(config_.base_url);
    client.set_connection_timeout(5, 0);
    client.set_read_timeout(60, 0);
    httplib::Headers headers;
    if (!config_.api_key.empty()) {
      headers.emplace("Authorization", "Bearer " + config_.api_key);
    }
    auto res = client.Post(config_.path, headers, payload, "application/json");
    if (res && res->status >= 200 && res->status < 300) {
      try {
        json j = json::parse(res->body);
        return GenerationResult{
            j.at("choices").at(0).at("message").at("content").get<std::string>(),
            GenerationSource::kRemote};
      } catch (const std::exception& e) {
        last_error = std::string("malformed response body: ") + e.what();
      }
    } else if (res) {
      last_error = "http status " + std::to_string(res->status);
      // Client errors will not succeed on retry.
      if (res->status >= 400 && res->status < 500 && res->status != 429) {
        throw TransportError("remote backend rejected request: " + last_error);
      }
    } else {
      last_error = "transport failure: " + httplib::to_string(res.error());
    }
    if (attempt < config_.max_attempts) {
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
      backoff *= 2;
    }
  }
  throw TransportError("remote backend failed after " + std::to_string(config_.max_attempts) +
                       " attempts: " + last_error);
}

std::string cache_key(const GenerationRequest& req, std::string_view backend_identity) {
  std::ostringstream key;
  key << backend_identity << '\x1f' << req.params.temperature << '\x1f'
      << req.params.max_output_chars << '\x1f' << req.prompt;
  return key.str();
}

CachedGenerator::CachedGenerator(std::shared_ptr<GeneratorBackend> backend, bool cache_enabled)
    : backend_(std::move(backend)), cache_enabled_(cache_enabled) {}

GenerationResult CachedGenerator::generate(const GenerationRequest& req) {
  const std::string key = cache_key(req, backend_->identity());
  {
    std::lock_guard<std::mutex> lock(mu_);
    ++requests_;
    if (cache_enabled_) {
      auto it = cache_.find(key);
      if (it != cache_.end()) {
        return GenerationResult{it->second, GenerationSource::kCache};
      }
    }
  }
  GenerationResult result = backend_->generate(req);  // may throw; never cached
  {
    std::lock_guard<std::mutex> lock(mu_);
    ++backend_calls_;
    if (cache_enabled_) cache_[key] = result.completion;
  }
  return result;
}

std::uint64_t CachedGenerator::backend_calls() const {
  std::lock_guard<std::mutex> lock(mu_);
  return backend_calls_;
}

std::uint64_t CachedGenerator::requests() const {
  std::lock_guard<std::mutex> lock(mu_);
  return requests_;
}

void CachedGenerator::reset_counters() {
  std::lock_guard<std::mutex> lock(mu_);
  backend_calls_ = 0;
  requests_ = 0;
}

}  // namespace spantrace
