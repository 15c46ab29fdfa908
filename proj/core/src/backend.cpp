#include "drd/backend.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "drd/corpus.hpp"
#include "drd/digest.hpp"
#include "drd/error.hpp"
#include "drd/rng.hpp"

namespace drd::backend {
namespace {

using nlohmann::json;

// Shortest round-trip rendering, so 0.1 keys the cache as "0.1" everywhere.
std::string temp_repr(double temperature) { return json(temperature).dump(); }

std::uint64_t sample_stream_seed(std::uint64_t seed, const std::string& prompt,
                                 double temperature, int sample_index) {
  const std::string tag = sha256_hex(prompt) + "|" + temp_repr(temperature);
  return derive_seed(seed, tag, static_cast<std::uint64_t>(sample_index));
}

}  // namespace

// ---------------------------------------------------------------------------
// Templates

std::string render_prompt(const PromptTemplate& tmpl,
                          const std::map<std::string, std::string>& bindings) {
  std::string out;
  out.reserve(tmpl.body.size());
  const std::string& body = tmpl.body;
  std::size_t i = 0;
  while (i < body.size()) {
    char c = body[i];
    if (c != '{') {
      out.push_back(c);
      ++i;
      continue;
    }
    std::size_t close = body.find('}', i + 1);
    if (close == std::string::npos)
      throw ConfigError("template '" + tmpl.name + "': unterminated '{' at offset " +
                        std::to_string(i));
    std::string name = body.substr(i + 1, close - i - 1);
    auto it = bindings.find(name);
    if (it == bindings.end())
      throw ConfigError("template '" + tmpl.name + "': placeholder {" + name +
                        "} is not bound");
    out += it->second;
    i = close + 1;
  }
  return out;
}

const PromptTemplate& gsm8k_template() {
  static const PromptTemplate tmpl{
      "gsm8k",
      R"tpl(Q:
There are 15 trees in the grove. Grove workers will plant trees in the grove today. After they are done, there will be 21 trees. How many trees did the grove workers plant today?
A:
Let's break this down step by step!
Step 1: There are 15 trees originally.
Step 2: Then there were 21 trees after some more were planted.
Step 3: So there must have been 21 - 15 = 6.
The answer is 6.

Q:
If there are 3 cars in the parking lot and 2 more cars arrive, how many cars are in the parking lot?
A:
Let's break this down step by step!
Step 1: There are originally 3 cars.
Step 2: 2 more cars arrive, 3 + 2 = 5.
The answer is 5.

Q:
Leah had 32 chocolates and her sister had 42. If they ate 35, how many pieces do they have left in total?
A:
Let's break this down step by step!
Step 1: Originally, Leah had 32 chocolates.
Step 2: Her sister had 42.
Step 3: So in total they had 32 + 42 = 74.
Step 4: After eating 35, they had 74 - 35 = 39.
The answer is 39.

Q: {question}
Let's break this down step by step!)tpl"};
  return tmpl;
}

const PromptTemplate& mmlu_template() {
  static const PromptTemplate tmpl{
      "mmlu",
      R"tpl(Question: {fewshot1_question}
Options: {fewshot1_options}
Answer: {fewshot1_answer}

Question: {fewshot2_question}
Options: {fewshot2_options}
Answer: {fewshot2_answer}

Question: {question}
Options: {options}
Answer:
Let's break this down step by step!)tpl"};
  return tmpl;
}

const PromptTemplate& identity_template() {
  static const PromptTemplate tmpl{"identity", "{question}"};
  return tmpl;
}

const PromptTemplate& template_by_name(const std::string& name) {
  if (name == "gsm8k") return gsm8k_template();
  if (name == "mmlu") return mmlu_template();
  if (name == "identity") return identity_template();
  throw ConfigError("unknown prompt template '" + name +
                    "' (expected gsm8k, mmlu, or identity)");
}

// ---------------------------------------------------------------------------
// SimulatedTeacherBackend

SimulatedTeacherBackend::SimulatedTeacherBackend(synthtask::TeacherErrorModel model,
                                                 std::uint64_t seed,
                                                 std::string model_id)
    : model_(model), seed_(seed), model_id_(std::move(model_id)) {}

std::vector<std::string> SimulatedTeacherBackend::generate(
    const GenerationRequest& request) {
  if (request.sample_count < 0) throw ConfigError("sample_count must be >= 0");
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(request.sample_count));
  for (int s = 0; s < request.sample_count; ++s) {
    Rng rng(sample_stream_seed(seed_, request.prompt, request.temperature,
                               request.first_sample_index + s));
    out.push_back(synthtask::simulated_teacher_generate(request.prompt,
                                                        request.temperature,
                                                        model_, rng));
  }
  return out;
}

// ---------------------------------------------------------------------------
// PolicyBackend

PolicyBackend::PolicyBackend(models::PolicyModel policy, std::uint64_t seed,
                             std::string model_id)
    : policy_(std::move(policy)), seed_(seed), model_id_(std::move(model_id)) {}

std::vector<std::string> PolicyBackend::generate(const GenerationRequest& request) {
  if (request.sample_count < 0) throw ConfigError("sample_count must be >= 0");
  const std::vector<int> prompt_tokens = policy_.vocab().tokenize(request.prompt);
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(request.sample_count));
  for (int s = 0; s < request.sample_count; ++s) {
    Rng rng(sample_stream_seed(seed_, request.prompt, request.temperature,
                               request.first_sample_index + s));
    auto sampled = policy_.sample(prompt_tokens, request.temperature,
                                  request.max_new_tokens, rng);
    out.push_back(policy_.vocab().detokenize(sampled.tokens));
  }
  return out;
}

// ---------------------------------------------------------------------------
// ResponseCache

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw IoError("cannot create cache directory " + dir_.string() + ": " + ec.message());
}

std::filesystem::path ResponseCache::entry_path(const std::string& model_id,
                                                const std::string& prompt_digest,
                                                double temperature,
                                                int sample_index) const {
  const std::string key = model_id + "\n" + prompt_digest + "\n" +
                          temp_repr(temperature) + "\n" + std::to_string(sample_index);
  return dir_ / (sha256_hex(key) + ".json");
}

std::optional<std::string> ResponseCache::get(const std::string& model_id,
                                              const std::string& prompt_digest,
                                              double temperature,
                                              int sample_index) const {
  const auto path = entry_path(model_id, prompt_digest, temperature, sample_index);
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::string raw((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  json parsed = json::parse(raw, nullptr, false);
  if (parsed.is_discarded() || !parsed.contains("text"))
    throw IoError("corrupt cache entry " + path.string());
  return parsed.at("text").get<std::string>();
}

void ResponseCache::put(const std::string& model_id, const std::string& prompt_digest,
                        double temperature, int sample_index,
                        const std::string& text) {
  json entry;
  entry["model_id"] = model_id;
  entry["prompt_digest"] = prompt_digest;
  entry["temperature"] = temperature;
  entry["sample_index"] = sample_index;
  entry["text"] = text;
  corpus::atomic_write(entry_path(model_id, prompt_digest, temperature, sample_index),
                       entry.dump());
}

// ---------------------------------------------------------------------------
// CachingBackend

CachingBackend::CachingBackend(std::unique_ptr<Backend> inner,
                               std::filesystem::path cache_dir)
    : inner_(std::move(inner)), cache_(std::move(cache_dir)) {}

std::vector<std::string> CachingBackend::generate(const GenerationRequest& request) {
  const std::string prompt_digest = sha256_hex(request.prompt);
  const std::string id = inner_->model_id();
  std::vector<std::optional<std::string>> slots(
      static_cast<std::size_t>(std::max(request.sample_count, 0)));
  for (int s = 0; s < request.sample_count; ++s)
    slots[static_cast<std::size_t>(s)] =
        cache_.get(id, prompt_digest, request.temperature,
                   request.first_sample_index + s);

  // Fill gaps in contiguous runs; each response is written back immediately so
  // a failure partway through still leaves completed samples on disk.
  int s = 0;
  while (s < request.sample_count) {
    if (slots[static_cast<std::size_t>(s)].has_value()) {
      ++s;
      continue;
    }
    int run_end = s;
    while (run_end < request.sample_count &&
           !slots[static_cast<std::size_t>(run_end)].has_value())
      ++run_end;
    GenerationRequest sub = request;
    sub.first_sample_index = request.first_sample_index + s;
    sub.sample_count = run_end - s;
    ++forwarded_calls_;
    std::vector<std::string> fresh = inner_->generate(sub);
    if (static_cast<int>(fresh.size()) != sub.sample_count)
      throw BackendError("backend " + id + " returned " + std::to_string(fresh.size()) +
                         " samples, expected " + std::to_string(sub.sample_count));
    for (int k = 0; k < sub.sample_count; ++k) {
      cache_.put(id, prompt_digest, request.temperature,
                 sub.first_sample_index + k, fresh[static_cast<std::size_t>(k)]);
      slots[static_cast<std::size_t>(s + k)] = std::move(fresh[static_cast<std::size_t>(k)]);
    }
    s = run_end;
  }

  std::vector<std::string> out;
  out.reserve(slots.size());
  for (auto& slot : slots) out.push_back(std::move(*slot));
  return out;
}

// ---------------------------------------------------------------------------
// RemoteBackend

RemoteBackend::RemoteBackend(RemoteConfig config) : config_(std::move(config)) {
  if (config_.base_url.empty()) throw ConfigError("remote backend: base_url is empty");
  if (config_.api_kind != "completions" && config_.api_kind != "chat")
    throw ConfigError("remote backend: api_kind must be 'completions' or 'chat', got '" +
                      config_.api_kind + "'");
  if (!config_.auth_env.empty()) {
    const char* value = std::getenv(config_.auth_env.c_str());
    if (value == nullptr || *value == '\0')
      throw ConfigError("remote backend: environment variable " + config_.auth_env +
                        " is not set (it must hold the API token; set auth_env to \"\" "
                        "for endpoints without authentication)");
    token_ = value;
  }
}

std::vector<std::string> RemoteBackend::generate(const GenerationRequest& request) {
  if (request.sample_count <= 0) return {};

  json body;
  body["model"] = config_.model;
  body["temperature"] = request.temperature;
  body["max_tokens"] = request.max_new_tokens;
  body["n"] = request.sample_count;
  std::string path;
  if (config_.api_kind == "chat") {
    path = "/v1/chat/completions";
    body["messages"] = json::array({{{"role", "user"}, {"content", request.prompt}}});
  } else {
    path = "/v1/completions";
    body["prompt"] = request.prompt;
  }

  std::string last_error;
  double backoff_ms = static_cast<double>(config_.initial_backoff_ms);
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    if (attempt > 1) {
      std::this_thread::sleep_for(
          std::chrono::milliseconds(static_cast<long long>(backoff_ms)));
      backoff_ms *= config_.backoff_multiplier;
    }

    httplib::Client client(config_.base_url);
    client.set_connection_timeout(config_.timeout_seconds, 0);
    client.set_read_timeout(config_.timeout_seconds, 0);
    httplib::Headers headers;
    if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);

    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res) {
      last_error = "connection error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      throw BackendError("remote backend: HTTP " + std::to_string(res->status) +
                         " from " + config_.base_url + path + ": " + res->body);

    json parsed = json::parse(res->body, nullptr, false);
    if (parsed.is_discarded() || !parsed.contains("choices") ||
        !parsed.at("choices").is_array()) {
      last_error = "malformed response body";
      continue;
    }
    const json& choices = parsed.at("choices");
    if (static_cast<int>(choices.size()) != request.sample_count) {
      last_error = "expected " + std::to_string(request.sample_count) +
                   " choices, got " + std::to_string(choices.size());
      continue;
    }
    std::vector<std::string> out;
    out.reserve(choices.size());
    for (const json& choice : choices) {
      if (config_.api_kind == "chat")
        out.push_back(choice.at("message").at("content").get<std::string>());
      else
        out.push_back(choice.at("text").get<std::string>());
    }
    return out;
  }
  throw BackendError("remote backend: giving up on " + config_.base_url + path +
                     " after " + std::to_string(config_.max_attempts) +
                     " attempts (last error: " + last_error + ")");
}

// ---------------------------------------------------------------------------

std::unique_ptr<Backend> make_backend(const BackendConfig& config) {
  std::unique_ptr<Backend> inner;
  if (config.kind == "simulated") {
    inner = std::make_unique<SimulatedTeacherBackend>(config.teacher, config.seed,
                                                      config.model_id);
  } else if (config.kind == "policy") {
    if (config.policy_checkpoint.empty())
      throw ConfigError("backend kind 'policy' requires policy_checkpoint");
    auto loaded = models::PolicyModel::load(config.policy_checkpoint);
    inner = std::make_unique<PolicyBackend>(std::move(loaded.model), config.seed,
                                            config.model_id);
  } else if (config.kind == "remote") {
    inner = std::make_unique<RemoteBackend>(config.remote);
  } else {
    throw ConfigError("unknown backend kind '" + config.kind +
                      "' (expected simulated, policy, or remote)");
  }
  if (!config.cache_dir.empty())
    return std::make_unique<CachingBackend>(std::move(inner), config.cache_dir);
  return inner;
}

}  // namespace drd::backend
