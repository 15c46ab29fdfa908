#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <httplib.h>

#include <atomic>
#include <cstdlib>
#include <memory>
#include <nlohmann/json.hpp>
#include <string>
#include <thread>
#include <vector>

#include "drd/backend.hpp"
#include "drd/digest.hpp"
#include "drd/error.hpp"
#include "drd/extraction.hpp"
#include "drd/models.hpp"
#include "drd/synthtask.hpp"
#include "testutil.hpp"

using namespace drd;
using namespace drd::backend;
using json = nlohmann::json;

namespace {

GenerationRequest make_request(std::string prompt, double temp, int n,
                               int first_index = 0) {
  GenerationRequest r;
  r.prompt = std::move(prompt);
  r.temperature = temp;
  r.sample_count = n;
  r.max_new_tokens = 96;
  r.first_sample_index = first_index;
  return r;
}

const std::string kPrompt = "Q: Start with 5. Add 3. What is the total?\nA: ";

// in-process OpenAI-style server for remote backend tests
class FakeServer {
 public:
  FakeServer() {
    server_.Post("/v1/completions", [this](const httplib::Request& req,
                                           httplib::Response& res) {
      ++hits_;
      last_auth_ = req.get_header_value("Authorization");
      if (fail_first_ > 0) {
        --fail_first_;
        res.status = 503;
        return;
      }
      json body = json::parse(req.body);
      last_body_ = body;
      json choices = json::array();
      for (int i = 0; i < body.at("n").get<int>(); ++i)
        choices.push_back({{"text", "The answer is 8."}});
      res.set_content(json{{"choices", choices}}.dump(), "application/json");
    });
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req,
                                                httplib::Response& res) {
      ++hits_;
      json body = json::parse(req.body);
      last_body_ = body;
      json choices = json::array();
      for (int i = 0; i < body.at("n").get<int>(); ++i)
        choices.push_back(
            {{"message", {{"role", "assistant"}, {"content", "The answer is 8."}}}});
      res.set_content(json{{"choices", choices}}.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  int hits() const { return hits_; }
  void fail_next(int n) { fail_first_ = n; }
  json last_body() const { return last_body_; }
  std::string last_auth() const { return last_auth_; }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> hits_{0};
  std::atomic<int> fail_first_{0};
  json last_body_;
  std::string last_auth_;
};

}  // namespace

TEST_CASE("render_prompt substitutes placeholders once and literally") {
  PromptTemplate t{"demo", "X {a} Y {b} Z"};
  const auto out = render_prompt(t, {{"a", "1"}, {"b", "{a}"}});
  CHECK(out == "X 1 Y {a} Z");  // substituted values are not re-expanded
}

TEST_CASE("render_prompt rejects unbound placeholders by name") {
  PromptTemplate t{"demo", "hello {missing}"};
  try {
    render_prompt(t, {});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("missing") != std::string::npos);
  }
}

TEST_CASE("built-in templates exist and bind their documented placeholders") {
  CHECK(render_prompt(identity_template(), {{"question", "Q?"}}) == "Q?");
  const auto g = render_prompt(gsm8k_template(), {{"question", "What is 2+2?"}});
  CHECK(g.find("What is 2+2?") != std::string::npos);
  const auto m = render_prompt(
      mmlu_template(),
      {{"fewshot1_question", "q1"}, {"fewshot1_options", "o1"}, {"fewshot1_answer", "a1"},
       {"fewshot2_question", "q2"}, {"fewshot2_options", "o2"}, {"fewshot2_answer", "a2"},
       {"question", "q3"}, {"options", "o3"}});
  CHECK(m.find("q3") != std::string::npos);
  CHECK(m.find("o3") != std::string::npos);
  CHECK_THROWS_AS(template_by_name("nope"), ConfigError);
  CHECK(template_by_name("identity").name == identity_template().name);
}

TEST_CASE("simulated teacher is a pure function of seed, prompt, temp, index") {
  synthtask::TeacherErrorModel m;
  SimulatedTeacherBackend a(m, 42);
  SimulatedTeacherBackend b(m, 42);
  const auto r = make_request(kPrompt, 0.5, 4);
  CHECK(a.generate(r) == b.generate(r));

  // splitting a batch by first_sample_index reproduces the same samples
  auto whole = a.generate(make_request(kPrompt, 0.5, 4));
  auto head = a.generate(make_request(kPrompt, 0.5, 2));
  auto tail = a.generate(make_request(kPrompt, 0.5, 2, 2));
  REQUIRE(whole.size() == 4);
  CHECK(whole[0] == head[0]);
  CHECK(whole[1] == head[1]);
  CHECK(whole[2] == tail[0]);
  CHECK(whole[3] == tail[1]);

  // a different seed gives a different stream
  SimulatedTeacherBackend c(m, 43);
  CHECK(a.generate(make_request(kPrompt, 1.0, 6)) !=
        c.generate(make_request(kPrompt, 1.0, 6)));
}

TEST_CASE("simulated teacher answers correctly at temperature zero") {
  synthtask::TeacherErrorModel m;  // base accuracy 0.95 > 0 slope at T=0
  m.base_accuracy = 1.0;
  SimulatedTeacherBackend t(m, 7);
  auto out = t.generate(make_request(kPrompt, 0.0, 1));
  REQUIRE(out.size() == 1);
  auto ans = extraction::extract_final_answer(out[0]);
  REQUIRE(ans);
  CHECK(ans->canonical == "8");
}

TEST_CASE("policy backend serves a policy deterministically") {
  models::Vocabulary vocab(synthtask::vocabulary_tokens());
  models::PolicyModel p(vocab, 8, 12, 3);
  PolicyBackend a(p.clone(), 11, "student");
  PolicyBackend b(std::move(p), 11, "student");
  const auto r = make_request(kPrompt, 0.7, 3);
  CHECK(a.generate(r) == b.generate(r));
  CHECK(a.model_id() == "student");
  auto whole = a.generate(make_request(kPrompt, 0.7, 3));
  auto tail = a.generate(make_request(kPrompt, 0.7, 1, 2));
  CHECK(whole[2] == tail[0]);
}

TEST_CASE("response cache stores and retrieves by full key") {
  testutil::TempDir dir("cache");
  ResponseCache cache(dir.path());
  const std::string digest = sha256_hex(kPrompt);
  CHECK_FALSE(cache.get("m", digest, 0.5, 0).has_value());
  cache.put("m", digest, 0.5, 0, "hello");
  auto hit = cache.get("m", digest, 0.5, 0);
  REQUIRE(hit);
  CHECK(*hit == "hello");
  // every key component matters
  CHECK_FALSE(cache.get("other", digest, 0.5, 0).has_value());
  CHECK_FALSE(cache.get("m", digest, 0.6, 0).has_value());
  CHECK_FALSE(cache.get("m", digest, 0.5, 1).has_value());
}

TEST_CASE("caching backend forwards only missing samples") {
  testutil::TempDir dir("cache");
  synthtask::TeacherErrorModel m;
  auto make_cached = [&] {
    return CachingBackend(std::make_unique<SimulatedTeacherBackend>(m, 42),
                          dir.path());
  };
  CachingBackend first = make_cached();
  auto a = first.generate(make_request(kPrompt, 0.3, 3));
  CHECK(first.forwarded_calls() == 1);
  auto b = first.generate(make_request(kPrompt, 0.3, 3));
  CHECK(first.forwarded_calls() == 1);  // fully cached
  CHECK(a == b);

  // extending the sample count fetches just the tail
  auto c = first.generate(make_request(kPrompt, 0.3, 5));
  CHECK(first.forwarded_calls() == 2);
  CHECK(c[0] == a[0]);
  CHECK(c[2] == a[2]);

  // a fresh instance over the same directory sees the same entries
  CachingBackend second = make_cached();
  auto d = second.generate(make_request(kPrompt, 0.3, 5));
  CHECK(second.forwarded_calls() == 0);
  CHECK(d == c);
}

TEST_CASE("remote backend speaks the completions protocol") {
  FakeServer server;
  RemoteConfig cfg;
  cfg.base_url = server.url();
  cfg.auth_env = "";  // no token
  cfg.model = "test-model";
  RemoteBackend rb(cfg);
  auto out = rb.generate(make_request(kPrompt, 0.5, 2));
  REQUIRE(out.size() == 2);
  CHECK(out[0] == "The answer is 8.");
  const json body = server.last_body();
  CHECK(body.at("model") == "test-model");
  CHECK(body.at("prompt") == kPrompt);
  CHECK(body.at("n") == 2);
  CHECK(body.at("temperature") == 0.5);
}

TEST_CASE("remote backend speaks the chat protocol") {
  FakeServer server;
  RemoteConfig cfg;
  cfg.base_url = server.url();
  cfg.api_kind = "chat";
  cfg.auth_env = "";
  RemoteBackend rb(cfg);
  auto out = rb.generate(make_request(kPrompt, 0.0, 1));
  REQUIRE(out.size() == 1);
  CHECK(out[0] == "The answer is 8.");
  CHECK(server.last_body().at("messages")[0].at("content") == kPrompt);
}

TEST_CASE("remote backend sends the bearer token from the environment") {
  FakeServer server;
  setenv("DRD_TEST_TOKEN", "sk-secret", 1);
  RemoteConfig cfg;
  cfg.base_url = server.url();
  cfg.auth_env = "DRD_TEST_TOKEN";
  RemoteBackend rb(cfg);
  rb.generate(make_request(kPrompt, 0.0, 1));
  CHECK(server.last_auth() == "Bearer sk-secret");
  unsetenv("DRD_TEST_TOKEN");
}

TEST_CASE("remote backend refuses a missing auth variable") {
  RemoteConfig cfg;
  cfg.base_url = "http://127.0.0.1:1";
  cfg.auth_env = "DRD_DEFINITELY_UNSET_VAR";
  CHECK_THROWS_AS(RemoteBackend{cfg}, ConfigError);
}

TEST_CASE("remote backend retries transient errors with backoff") {
  FakeServer server;
  server.fail_next(2);
  RemoteConfig cfg;
  cfg.base_url = server.url();
  cfg.auth_env = "";
  cfg.max_attempts = 4;
  cfg.initial_backoff_ms = 1;  // keep the test fast
  RemoteBackend rb(cfg);
  auto out = rb.generate(make_request(kPrompt, 0.0, 1));
  CHECK(out.size() == 1);
  CHECK(server.hits() == 3);  // two failures then success
}

TEST_CASE("remote backend gives up after max_attempts") {
  FakeServer server;
  server.fail_next(10);
  RemoteConfig cfg;
  cfg.base_url = server.url();
  cfg.auth_env = "";
  cfg.max_attempts = 2;
  cfg.initial_backoff_ms = 1;
  RemoteBackend rb(cfg);
  CHECK_THROWS_AS(rb.generate(make_request(kPrompt, 0.0, 1)), BackendError);
  CHECK(server.hits() == 2);
}

TEST_CASE("make_backend dispatches on kind and validates it") {
  BackendConfig cfg;
  cfg.kind = "simulated";
  cfg.seed = 5;
  auto be = make_backend(cfg);
  CHECK(be->model_id() == "sim-teacher");
  cfg.kind = "unknown";
  CHECK_THROWS_AS(make_backend(cfg), ConfigError);
  cfg.kind = "policy";
  cfg.policy_checkpoint = "";
  CHECK_THROWS_AS(make_backend(cfg), ConfigError);
}

TEST_CASE("make_backend wraps with the cache when cache_dir is set") {
  testutil::TempDir dir("cache");
  BackendConfig cfg;
  cfg.kind = "simulated";
  cfg.seed = 5;
  cfg.cache_dir = (dir.path() / "c").string();
  auto be = make_backend(cfg);
  auto a = be->generate(make_request(kPrompt, 0.2, 2));
  auto b = be->generate(make_request(kPrompt, 0.2, 2));
  CHECK(a == b);
  CHECK(std::filesystem::exists(dir.path() / "c"));
}
