#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace spantrace {

struct DecodeParams {
  double temperature = 0.0;
  std::size_t max_output_chars = 400;
};

struct GenerationRequest {
  std::string prompt;
  DecodeParams params;
};

enum class GenerationSource { kOracle, kRemote, kCache };

struct GenerationResult {
  std::string completion;
  GenerationSource source = GenerationSource::kOracle;
};

// Retryable transport failure from a remote backend.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GeneratorBackend {
 public:
  virtual ~GeneratorBackend() = default;
  virtual GenerationResult generate(const GenerationRequest& req) = 0;
  // Stable identity string, part of the cache key.
  virtual std::string identity() const = 0;
};

struct OracleRule {
  std::string trigger;   // non-empty; fires when a raw substring of the prompt
  std::string response;
  int priority = 0;      // unique within a rule set; higher wins
};

inline constexpr const char* kDefaultAbstain = "I don't know.";

// Among rules whose trigger occurs in the prompt, the highest-priority
// response wins; otherwise the fallback. Pure function.
std::string oracle_evaluate(const std::vector<OracleRule>& rules, std::string_view prompt,
                            std::string_view fallback = kDefaultAbstain);

// Deterministic scripted generator for offline verification of the
// black-box contract.
class OracleBackend : public GeneratorBackend {
 public:
  OracleBackend() = default;
  explicit OracleBackend(std::vector<OracleRule> rules,
                         std::string fallback = kDefaultAbstain);

  GenerationResult generate(const GenerationRequest& req) override;
  std::string identity() const override { return "oracle"; }

 private:
  std::vector<OracleRule> rules_;  // sorted priority desc
  std::string fallback_ = kDefaultAbstain;
};

struct RemoteConfig {
  std::string base_url;     // e.g. http://127.0.0.1:8080
  std::string path = "/v1/chat/completions";
  std::string model;
  std::string api_key;      // resolved from env by the CLI, never logged
  int max_attempts = 3;
  int backoff_ms = 100;     // doubled per retry
};

// Chat-completion style HTTP client. Retries transport failures with
// exponential backoff, then throws TransportError.
class RemoteBackend : public GeneratorBackend {
 public:
  explicit RemoteBackend(RemoteConfig config);
  GenerationResult generate(const GenerationRequest& req) override;
  std::string identity() const override;

 private:
  RemoteConfig config_;
};

// Wraps a backend with an optional replay cache and call accounting.
// Thread-safe. Errors are never cached.
class CachedGenerator {
 public:
  explicit CachedGenerator(std::shared_ptr<GeneratorBackend> backend, bool cache_enabled = true);

  GenerationResult generate(const GenerationRequest& req);

  std::uint64_t backend_calls() const;
  std::uint64_t requests() const;
  void reset_counters();
  bool cache_enabled() const { return cache_enabled_; }
  GeneratorBackend& backend() { return *backend_; }

 private:
  std::shared_ptr<GeneratorBackend> backend_;
  bool cache_enabled_;
  mutable std::mutex mu_;
  std::map<std::string, std::string> cache_;
  std::uint64_t backend_calls_ = 0;
  std::uint64_t requests_ = 0;
};

// Canonical cache key over (prompt, decode params, backend identity).
std::string cache_key(const GenerationRequest& req, std::string_view backend_identity);

}  // namespace spantrace
