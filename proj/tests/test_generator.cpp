#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <memory>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "spantrace/generator.hpp"

using namespace spantrace;

TEST_CASE("oracle picks the highest-priority matching rule") {
  const std::vector<OracleRule> rules = {
      {"capital is Sydney", "Sydney", 2},
      {"Canberra is the capital", "Canberra", 1},
  };
  CHECK(oracle_evaluate(rules, "Canberra is the capital of Australia.") == "Canberra");
  CHECK(oracle_evaluate(rules, "Canberra is the capital. The capital is Sydney.") == "Sydney");
  CHECK(oracle_evaluate(rules, "nothing matches here") == kDefaultAbstain);
  CHECK(oracle_evaluate(rules, "nothing", "custom fallback") == "custom fallback");
  CHECK(oracle_evaluate({{"", "never", 9}}, "anything") == kDefaultAbstain);
}

TEST_CASE("oracle backend truncates to max_output_chars") {
  OracleBackend backend({{"hit", "a very long completion indeed", 1}});
  GenerationRequest req;
  req.prompt = "hit";
  req.params.max_output_chars = 6;
  CHECK(backend.generate(req).completion == "a very");
}

TEST_CASE("cache returns identical completions and counts backend calls") {
  auto backend = std::make_shared<OracleBackend>(
      std::vector<OracleRule>{{"ping", "pong", 1}});
  CachedGenerator gen(backend, true);
  GenerationRequest req;
  req.prompt = "ping";
  const auto first = gen.generate(req);
  const auto second = gen.generate(req);
  CHECK(first.completion == "pong");
  CHECK(second.completion == "pong");
  CHECK(first.source == GenerationSource::kOracle);
  CHECK(second.source == GenerationSource::kCache);
  CHECK(gen.backend_calls() == 1);
  CHECK(gen.requests() == 2);

  // Different decode params miss the cache.
  req.params.temperature = 0.7;
  gen.generate(req);
  CHECK(gen.backend_calls() == 2);

  CachedGenerator uncached(backend, false);
  uncached.generate(GenerationRequest{"ping", {}});
  uncached.generate(GenerationRequest{"ping", {}});
  CHECK(uncached.backend_calls() == 2);
}

TEST_CASE("cache key separates prompt, params, and identity") {
  GenerationRequest a{"p", {0.0, 400}};
  GenerationRequest b{"p", {0.5, 400}};
  GenerationRequest c{"q", {0.0, 400}};
  CHECK(cache_key(a, "oracle") != cache_key(b, "oracle"));
  CHECK(cache_key(a, "oracle") != cache_key(c, "oracle"));
  CHECK(cache_key(a, "oracle") != cache_key(a, "remote:x:y"));
  CHECK(cache_key(a, "oracle") == cache_key(a, "oracle"));
}

namespace {

class FailingBackend : public GeneratorBackend {
 public:
  GenerationResult generate(const GenerationRequest&) override {
    ++calls;
    throw TransportError("down");
  }
  std::string identity() const override { return "failing"; }
  int calls = 0;
};

}  // namespace

TEST_CASE("errors are propagated and never cached") {
  auto backend = std::make_shared<FailingBackend>();
  CachedGenerator gen(backend, true);
  CHECK_THROWS_AS(gen.generate(GenerationRequest{"p", {}}), TransportError);
  CHECK_THROWS_AS(gen.generate(GenerationRequest{"p", {}}), TransportError);
  CHECK(backend->calls == 2);  // second call hit the backend again
}

TEST_CASE("remote backend talks chat-completions and retries flaky servers") {
  std::atomic<int> hits{0};
  httplib::Server server;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    const int n = ++hits;
    if (n == 1) {
      res.status = 500;  // first attempt fails, retry succeeds
      return;
    }
    const auto body = nlohmann::json::parse(req.body);
    nlohmann::json out;
    out["choices"] = nlohmann::json::array(
        {{{"message",
           {{"role", "assistant"},
            {"content", "echo:" + body.at("messages").at(0).at("content").get<std::string>()}}}}});
    res.set_content(out.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  RemoteConfig cfg;
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
  cfg.model = "test-model";
  cfg.backoff_ms = 1;
  RemoteBackend backend(cfg);
  const auto result = backend.generate(GenerationRequest{"hello", {}});
  CHECK(result.completion == "echo:hello");
  CHECK(result.source == GenerationSource::kRemote);
  CHECK(hits.load() == 2);
  CHECK(backend.identity() == "remote:" + cfg.base_url + ":test-model");

  server.stop();
  th.join();
}

TEST_CASE("remote backend gives up with TransportError when unreachable") {
  RemoteConfig cfg;
  cfg.base_url = "http://127.0.0.1:1";  // nothing listens here
  cfg.model = "m";
  cfg.max_attempts = 2;
  cfg.backoff_ms = 1;
  RemoteBackend backend(cfg);
  CHECK_THROWS_AS(backend.generate(GenerationRequest{"p", {}}), TransportError);
}

TEST_CASE("remote backend does not retry hard client errors") {
  std::atomic<int> hits{0};
  httplib::Server server;
  server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 401;
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  RemoteConfig cfg;
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
  cfg.model = "m";
  cfg.backoff_ms = 1;
  RemoteBackend backend(cfg);
  CHECK_THROWS_AS(backend.generate(GenerationRequest{"p", {}}), TransportError);
  CHECK(hits.load() == 1);

  server.stop();
  th.join();
}
