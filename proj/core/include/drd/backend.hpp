#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "drd/models.hpp"
#include "drd/synthtask.hpp"

namespace drd::backend {

struct GenerationRequest {
  std::string prompt;
  double temperature = 1.0;
  int sample_count = 1;
  int max_new_tokens = 512;
  // Index of the first requested sample within the (prompt, temperature)
  // stream; deterministic backends key their per-sample streams off it so a
  // cache can refill arbitrary sample indices.
  int first_sample_index = 0;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::vector<std::string> generate(const GenerationRequest& request) = 0;
  virtual std::string model_id() const = 0;
};

// ---------------------------------------------------------------------------
// Prompt templates. {name} placeholders are substituted in one pass; an
// unbound placeholder is a config error naming it. Substituted values are
// inserted literally.

struct PromptTemplate {
  std::string name;
  std::string body;
};

std::string render_prompt(const PromptTemplate& tmpl,
                          const std::map<std::string, std::string>& bindings);

// Few-shot chain-of-thought template for grade-school math questions;
// placeholder: {question}.
const PromptTemplate& gsm8k_template();
// Two-shot multiple-choice template; placeholders: {fewshot1_question},
// {fewshot1_options}, {fewshot1_answer}, {fewshot2_question},
// {fewshot2_options}, {fewshot2_answer}, {question}, {options}.
const PromptTemplate& mmlu_template();
// Pass-through template for the synthetic task; placeholder: {question}.
const PromptTemplate& identity_template();

const PromptTemplate& template_by_name(const std::string& name);

// ---------------------------------------------------------------------------
// Backends

// Scripted teacher over the synthetic task. A pure function of
// (seed, prompt, temperature, sample index): batching and reruns cannot
// change its output.
class SimulatedTeacherBackend : public Backend {
 public:
  SimulatedTeacherBackend(synthtask::TeacherErrorModel model, std::uint64_t seed,
                          std::string model_id = "sim-teacher");
  std::vector<std::string> generate(const GenerationRequest& request) override;
  std::string model_id() const override { return model_id_; }

 private:
  synthtask::TeacherErrorModel model_;
  std::uint64_t seed_;
  std::string model_id_;
};

// Serves an in-process policy checkpoint; used for student collection and
// evaluation. Deterministic in the same way as the simulated teacher.
class PolicyBackend : public Backend {
 public:
  PolicyBackend(models::PolicyModel policy, std::uint64_t seed,
                std::string model_id = "student");
  std::vector<std::string> generate(const GenerationRequest& request) override;
  std::string model_id() const override { return model_id_; }
  const models::PolicyModel& policy() const { return policy_; }

 private:
  models::PolicyModel policy_;
  std::uint64_t seed_;
  std::string model_id_;
};

// Disk cache keyed by (model id, prompt digest, temperature, sample index).
// Requesting more samples later extends the cache instead of invalidating it.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);
  std::optional<std::string> get(const std::string& model_id,
                                 const std::string& prompt_digest,
                                 double temperature, int sample_index) const;
  void put(const std::string& model_id, const std::string& prompt_digest,
           double temperature, int sample_index, const std::string& text);

 private:
  std::filesystem::path entry_path(const std::string& model_id,
                                   const std::string& prompt_digest,
                                   double temperature, int sample_index) const;
  std::filesystem::path dir_;
};

// Wraps any backend with the response cache; only missing sample indices are
// forwarded (in contiguous runs, so remote batching still applies).
class CachingBackend : public Backend {
 public:
  CachingBackend(std::unique_ptr<Backend> inner, std::filesystem::path cache_dir);
  std::vector<std::string> generate(const GenerationRequest& request) override;
  std::string model_id() const override { return inner_->model_id(); }
  std::uint64_t forwarded_calls() const { return forwarded_calls_; }

 private:
  std::unique_ptr<Backend> inner_;
  ResponseCache cache_;
  std::uint64_t forwarded_calls_ = 0;
};

// OpenAI-compatible HTTP endpoint (completions or chat). Bearer token is read
// from an environment variable at construction; transient failures retry with
// exponential backoff.
struct RemoteConfig {
  std::string base_url;                   // e.g. "http://127.0.0.1:8080"
  std::string api_kind = "completions";   // "completions" | "chat"
  std::string model = "teacher";
  std::string auth_env = "DRD_API_KEY";   // empty disables the auth header
  int max_attempts = 5;
  int initial_backoff_ms = 250;
  double backoff_multiplier = 2.0;
  int timeout_seconds = 120;
};

class RemoteBackend : public Backend {
 public:
  explicit RemoteBackend(RemoteConfig config);
  std::vector<std::string> generate(const GenerationRequest& request) override;
  std::string model_id() const override { return config_.model; }

 private:
  RemoteConfig config_;
  std::string token_;
};

// ---------------------------------------------------------------------------

struct BackendConfig {
  std::string kind = "simulated";  // simulated | policy | remote
  std::string model_id = "sim-teacher";
  synthtask::TeacherErrorModel teacher;
  std::string policy_checkpoint;   // kind == policy
  RemoteConfig remote;             // kind == remote
  std::string cache_dir;           // empty disables caching
  std::uint64_t seed = 0;
};

std::unique_ptr<Backend> make_backend(const BackendConfig& config);

}  // namespace drd::backend
