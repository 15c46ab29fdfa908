#include "drd/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include "drd/digest.hpp"
#include "drd/error.hpp"
#include "drd/evaluate.hpp"
#include "drd/rng.hpp"
#include "drd/version.hpp"

namespace drd::pipeline {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config <-> JSON

void expect_keys(const json& j, const std::string& context,
                 std::initializer_list<const char*> keys) {
  if (!j.is_object())
    throw ConfigError("config: '" + context + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw ConfigError("unknown config key '" + context + "." + it.key() + "'");
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json task_block(const PipelineConfig& c) {
  json t;
  t["kind"] = c.task;
  t["queries_file"] = c.queries_file;
  t["prompt_template"] = c.prompt_template;
  json s;
  s["query_count"] = c.synth.query_count;
  s["operand_min"] = c.synth.operand_min;
  s["operand_max"] = c.synth.operand_max;
  s["min_operands"] = c.synth.min_operands;
  s["max_operands"] = c.synth.max_operands;
  t["synthetic"] = s;
  json f;
  f["question1"] = c.mmlu_fewshot.question1;
  f["options1"] = c.mmlu_fewshot.options1;
  f["answer1"] = c.mmlu_fewshot.answer1;
  f["question2"] = c.mmlu_fewshot.question2;
  f["options2"] = c.mmlu_fewshot.options2;
  f["answer2"] = c.mmlu_fewshot.answer2;
  t["mmlu_fewshot"] = f;
  return t;
}

json split_block(const PipelineConfig& c) {
  json s;
  s["train_ratio"] = c.train_ratio;
  s["validation_ratio"] = c.validation_ratio;
  return s;
}

json teacher_block(const PipelineConfig& c) {
  json t;
  t["kind"] = c.teacher.kind;
  t["model_id"] = c.teacher.model_id;
  json e;
  e["base_accuracy"] = c.teacher.teacher.base_accuracy;
  e["temperature_slope"] = c.teacher.teacher.temperature_slope;
  e["accuracy_floor"] = c.teacher.teacher.accuracy_floor;
  e["filler_rate"] = c.teacher.teacher.filler_rate;
  e["max_fillers"] = c.teacher.teacher.max_fillers;
  t["error_model"] = e;
  t["policy_checkpoint"] = c.teacher.policy_checkpoint;
  json r;
  r["base_url"] = c.teacher.remote.base_url;
  r["api_kind"] = c.teacher.remote.api_kind;
  r["model"] = c.teacher.remote.model;
  r["auth_env"] = c.teacher.remote.auth_env;
  r["max_attempts"] = c.teacher.remote.max_attempts;
  r["initial_backoff_ms"] = c.teacher.remote.initial_backoff_ms;
  r["backoff_multiplier"] = c.teacher.remote.backoff_multiplier;
  r["timeout_seconds"] = c.teacher.remote.timeout_seconds;
  t["remote"] = r;
  t["cache_dir"] = c.teacher.cache_dir;
  return t;
}

json distill_block(const PipelineConfig& c) {
  json d;
  d["vote_temperatures"] = c.schedule.vote_temperatures;
  d["extra_temperatures"] = c.schedule.extra_temperatures;
  d["samples_per_temperature"] = c.schedule.samples_per_temperature;
  d["vote_threshold"] = c.vote_threshold;
  d["max_new_tokens"] = c.teacher_max_new_tokens;
  return d;
}

json model_block(const PipelineConfig& c) {
  json m;
  m["embed_dim"] = c.embed_dim;
  m["hidden_dim"] = c.hidden_dim;
  return m;
}

json warmup_block(const PipelineConfig& c) {
  json w;
  w["learning_rate"] = c.sft.learning_rate;
  w["lr_decay"] = c.sft.lr_decay;
  w["batch_size"] = c.sft.batch_size;
  w["epochs"] = c.sft.epochs;
  w["max_sequence_length"] = c.sft.max_sequence_length;
  w["grad_clip_norm"] = c.sft.grad_clip_norm;
  w["eval_max_new_tokens"] = c.sft.eval_max_new_tokens;
  w["train_unfiltered_baseline"] = c.train_unfiltered_baseline;
  return w;
}

json rm_block(const PipelineConfig& c) {
  json r;
  r["student_samples"] = c.student_samples;
  r["student_temperature"] = c.student_temperature;
  r["student_max_new_tokens"] = c.student_max_new_tokens;
  r["teacher_share_ratio"] = c.teacher_share_ratio;
  r["classification_weight"] = c.rm.classification_weight;
  r["learning_rate"] = c.rm.learning_rate;
  r["lr_decay"] = c.rm.lr_decay;
  r["batch_groups"] = c.rm.batch_groups;
  r["max_epochs"] = c.rm.max_epochs;
  r["patience"] = c.rm.patience;
  r["grad_clip_norm"] = c.rm.grad_clip_norm;
  return r;
}

json ppo_block(const PipelineConfig& c) {
  json p;
  p["learning_rate"] = c.ppo.learning_rate;
  p["clip_epsilon"] = c.ppo.clip_epsilon;
  p["kl_coefficient"] = c.ppo.kl_coefficient;
  p["value_coefficient"] = c.ppo.value_coefficient;
  p["gamma"] = c.ppo.gamma;
  p["gae_lambda"] = c.ppo.gae_lambda;
  p["rollouts_per_update"] = c.ppo.rollouts_per_update;
  p["update_epochs"] = c.ppo.update_epochs;
  p["episode_budget"] = c.ppo.episode_budget;
  p["rollout_temperature"] = c.ppo.rollout_temperature;
  p["max_new_tokens"] = c.ppo.max_new_tokens;
  p["eval_interval_updates"] = c.ppo.eval_interval_updates;
  p["patience_evals"] = c.ppo.patience_evals;
  p["eval_max_new_tokens"] = c.ppo.eval_max_new_tokens;
  p["kl_guard"] = c.ppo.kl_guard;
  p["missing_answer_penalty"] = c.ppo.shaping.missing_answer_penalty;
  p["wrong_answer_mode"] = c.ppo.shaping.wrong_answer_mode;
  p["from_base_variant"] = c.ppo_from_base;
  return p;
}

json eval_block(const PipelineConfig& c) {
  json e;
  e["max_new_tokens"] = c.eval_max_new_tokens;
  return e;
}

}  // namespace

json config_to_json(const PipelineConfig& c) {
  json j;
  j["run_dir"] = c.run_dir;
  j["master_seed"] = c.master_seed;
  j["task"] = task_block(c);
  j["split"] = split_block(c);
  j["teacher_backend"] = teacher_block(c);
  j["distill"] = distill_block(c);
  j["model"] = model_block(c);
  j["warmup"] = warmup_block(c);
  j["reward_model"] = rm_block(c);
  j["ppo"] = ppo_block(c);
  j["eval"] = eval_block(c);
  return j;
}

PipelineConfig config_from_json(const json& j) {
  PipelineConfig c;
  expect_keys(j, "config",
              {"run_dir", "master_seed", "task", "split", "teacher_backend",
               "distill", "model", "warmup", "reward_model", "ppo", "eval"});
  read_field(j, "run_dir", c.run_dir);
  read_field(j, "master_seed", c.master_seed);

  if (j.contains("task")) {
    const json& t = j.at("task");
    expect_keys(t, "task",
                {"kind", "queries_file", "prompt_template", "synthetic", "mmlu_fewshot"});
    read_field(t, "kind", c.task);
    read_field(t, "queries_file", c.queries_file);
    read_field(t, "prompt_template", c.prompt_template);
    if (t.contains("synthetic")) {
      const json& s = t.at("synthetic");
      expect_keys(s, "task.synthetic",
                  {"query_count", "operand_min", "operand_max", "min_operands",
                   "max_operands"});
      read_field(s, "query_count", c.synth.query_count);
      read_field(s, "operand_min", c.synth.operand_min);
      read_field(s, "operand_max", c.synth.operand_max);
      read_field(s, "min_operands", c.synth.min_operands);
      read_field(s, "max_operands", c.synth.max_operands);
    }
    if (t.contains("mmlu_fewshot")) {
      const json& f = t.at("mmlu_fewshot");
      expect_keys(f, "task.mmlu_fewshot",
                  {"question1", "options1", "answer1", "question2", "options2",
                   "answer2"});
      read_field(f, "question1", c.mmlu_fewshot.question1);
      read_field(f, "options1", c.mmlu_fewshot.options1);
      read_field(f, "answer1", c.mmlu_fewshot.answer1);
      read_field(f, "question2", c.mmlu_fewshot.question2);
      read_field(f, "options2", c.mmlu_fewshot.options2);
      read_field(f, "answer2", c.mmlu_fewshot.answer2);
    }
  }

  if (j.contains("split")) {
    const json& s = j.at("split");
    expect_keys(s, "split", {"train_ratio", "validation_ratio"});
    read_field(s, "train_ratio", c.train_ratio);
    read_field(s, "validation_ratio", c.validation_ratio);
  }

  if (j.contains("teacher_backend")) {
    const json& t = j.at("teacher_backend");
    expect_keys(t, "teacher_backend",
                {"kind", "model_id", "error_model", "policy_checkpoint", "remote",
                 "cache_dir"});
    read_field(t, "kind", c.teacher.kind);
    read_field(t, "model_id", c.teacher.model_id);
    read_field(t, "policy_checkpoint", c.teacher.policy_checkpoint);
    read_field(t, "cache_dir", c.teacher.cache_dir);
    if (t.contains("error_model")) {
      const json& e = t.at("error_model");
      expect_keys(e, "teacher_backend.error_model",
                  {"base_accuracy", "temperature_slope", "accuracy_floor",
                   "filler_rate", "max_fillers"});
      read_field(e, "base_accuracy", c.teacher.teacher.base_accuracy);
      read_field(e, "temperature_slope", c.teacher.teacher.temperature_slope);
      read_field(e, "accuracy_floor", c.teacher.teacher.accuracy_floor);
      read_field(e, "filler_rate", c.teacher.teacher.filler_rate);
      read_field(e, "max_fillers", c.teacher.teacher.max_fillers);
    }
    if (t.contains("remote")) {
      const json& r = t.at("remote");
      expect_keys(r, "teacher_backend.remote",
                  {"base_url", "api_kind", "model", "auth_env", "max_attempts",
                   "initial_backoff_ms", "backoff_multiplier", "timeout_seconds"});
      read_field(r, "base_url", c.teacher.remote.base_url);
      read_field(r, "api_kind", c.teacher.remote.api_kind);
      read_field(r, "model", c.teacher.remote.model);
      read_field(r, "auth_env", c.teacher.remote.auth_env);
      read_field(r, "max_attempts", c.teacher.remote.max_attempts);
      read_field(r, "initial_backoff_ms", c.teacher.remote.initial_backoff_ms);
      read_field(r, "backoff_multiplier", c.teacher.remote.backoff_multiplier);
      read_field(r, "timeout_seconds", c.teacher.remote.timeout_seconds);
    }
  }

  if (j.contains("distill")) {
    const json& d = j.at("distill");
    expect_keys(d, "distill",
                {"vote_temperatures", "extra_temperatures",
                 "samples_per_temperature", "vote_threshold", "max_new_tokens"});
    read_field(d, "vote_temperatures", c.schedule.vote_temperatures);
    read_field(d, "extra_temperatures", c.schedule.extra_temperatures);
    read_field(d, "samples_per_temperature", c.schedule.samples_per_temperature);
    read_field(d, "vote_threshold", c.vote_threshold);
    read_field(d, "max_new_tokens", c.teacher_max_new_tokens);
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    expect_keys(m, "model", {"embed_dim", "hidden_dim"});
    read_field(m, "embed_dim", c.embed_dim);
    read_field(m, "hidden_dim", c.hidden_dim);
  }

  if (j.contains("warmup")) {
    const json& w = j.at("warmup");
    expect_keys(w, "warmup",
                {"learning_rate", "lr_decay", "batch_size", "epochs",
                 "max_sequence_length", "grad_clip_norm", "eval_max_new_tokens",
                 "train_unfiltered_baseline"});
    read_field(w, "learning_rate", c.sft.learning_rate);
    read_field(w, "lr_decay", c.sft.lr_decay);
    read_field(w, "batch_size", c.sft.batch_size);
    read_field(w, "epochs", c.sft.epochs);
    read_field(w, "max_sequence_length", c.sft.max_sequence_length);
    read_field(w, "grad_clip_norm", c.sft.grad_clip_norm);
    read_field(w, "eval_max_new_tokens", c.sft.eval_max_new_tokens);
    read_field(w, "train_unfiltered_baseline", c.train_unfiltered_baseline);
  }

  if (j.contains("reward_model")) {
    const json& r = j.at("reward_model");
    expect_keys(r, "reward_model",
                {"student_samples", "student_temperature", "student_max_new_tokens",
                 "teacher_share_ratio", "classification_weight", "learning_rate",
                 "lr_decay", "batch_groups", "max_epochs", "patience",
                 "grad_clip_norm"});
    read_field(r, "student_samples", c.student_samples);
    read_field(r, "student_temperature", c.student_temperature);
    read_field(r, "student_max_new_tokens", c.student_max_new_tokens);
    read_field(r, "teacher_share_ratio", c.teacher_share_ratio);
    read_field(r, "classification_weight", c.rm.classification_weight);
    read_field(r, "learning_rate", c.rm.learning_rate);
    read_field(r, "lr_decay", c.rm.lr_decay);
    read_field(r, "batch_groups", c.rm.batch_groups);
    read_field(r, "max_epochs", c.rm.max_epochs);
    read_field(r, "patience", c.rm.patience);
    read_field(r, "grad_clip_norm", c.rm.grad_clip_norm);
  }

  if (j.contains("ppo")) {
    const json& p = j.at("ppo");
    expect_keys(p, "ppo",
                {"learning_rate", "clip_epsilon", "kl_coefficient",
                 "value_coefficient", "gamma", "gae_lambda", "rollouts_per_update",
                 "update_epochs", "episode_budget", "rollout_temperature",
                 "max_new_tokens", "eval_interval_updates", "patience_evals",
                 "eval_max_new_tokens", "kl_guard", "missing_answer_penalty",
                 "wrong_answer_mode", "from_base_variant"});
    read_field(p, "learning_rate", c.ppo.learning_rate);
    read_field(p, "clip_epsilon", c.ppo.clip_epsilon);
    read_field(p, "kl_coefficient", c.ppo.kl_coefficient);
    read_field(p, "value_coefficient", c.ppo.value_coefficient);
    read_field(p, "gamma", c.ppo.gamma);
    read_field(p, "gae_lambda", c.ppo.gae_lambda);
    read_field(p, "rollouts_per_update", c.ppo.rollouts_per_update);
    read_field(p, "update_epochs", c.ppo.update_epochs);
    read_field(p, "episode_budget", c.ppo.episode_budget);
    read_field(p, "rollout_temperature", c.ppo.rollout_temperature);
    read_field(p, "max_new_tokens", c.ppo.max_new_tokens);
    read_field(p, "eval_interval_updates", c.ppo.eval_interval_updates);
    read_field(p, "patience_evals", c.ppo.patience_evals);
    read_field(p, "eval_max_new_tokens", c.ppo.eval_max_new_tokens);
    read_field(p, "kl_guard", c.ppo.kl_guard);
    read_field(p, "missing_answer_penalty", c.ppo.shaping.missing_answer_penalty);
    read_field(p, "wrong_answer_mode", c.ppo.shaping.wrong_answer_mode);
    read_field(p, "from_base_variant", c.ppo_from_base);
  }

  if (j.contains("eval")) {
    const json& e = j.at("eval");
    expect_keys(e, "eval", {"max_new_tokens"});
    read_field(e, "max_new_tokens", c.eval_max_new_tokens);
  }
  return c;
}

PipelineConfig load_config(const std::string& path) {
  if (path.empty()) return PipelineConfig{};
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file " + path + " is not valid JSON");
  return config_from_json(j);
}

std::string stage_digest(const PipelineConfig& c, const std::string& stage) {
  json p;
  if (stage == "distill") {
    p["master_seed"] = c.master_seed;
    p["task"] = task_block(c);
    p["split"] = split_block(c);
    json t = teacher_block(c);
    t.erase("cache_dir");  // cache location never changes outputs
    p["teacher_backend"] = t;
    p["distill"] = distill_block(c);
  } else if (stage == "warmup") {
    p["upstream"] = stage_digest(c, "distill");
    p["model"] = model_block(c);
    p["warmup"] = warmup_block(c);
  } else if (stage == "train-rm") {
    p["upstream"] = stage_digest(c, "warmup");
    p["reward_model"] = rm_block(c);
  } else if (stage == "ppo") {
    p["upstream"] = stage_digest(c, "train-rm");
    p["ppo"] = ppo_block(c);
  } else if (stage == "eval") {
    p["upstream"] = stage_digest(c, "ppo");
    p["eval"] = eval_block(c);
  } else {
    throw ConfigError("unknown stage '" + stage + "'");
  }
  return sha256_hex(p.dump());
}

// ---------------------------------------------------------------------------
// Run-directory plumbing

namespace {

struct Paths {
  fs::path root;
  fs::path queries() const { return root / "queries.jsonl"; }
  fs::path teacher_records() const { return root / "teacher_records.jsonl"; }
  fs::path pseudo_labels() const { return root / "pseudo_labels.jsonl"; }
  fs::path sft_pairs() const { return root / "sft_pairs.jsonl"; }
  fs::path sft_pairs_unfiltered() const { return root / "sft_pairs_unfiltered.jsonl"; }
  fs::path distill_stats() const { return root / "distill_stats.json"; }
  fs::path student_records() const { return root / "student_records.jsonl"; }
  fs::path student_set() const { return root / "student_set.json"; }
  fs::path groups_train() const { return root / "reward_groups_train.jsonl"; }
  fs::path groups_val() const { return root / "reward_groups_val.jsonl"; }
  fs::path rl_pool() const { return root / "rl_pool.json"; }
  fs::path eval_file() const { return root / "eval.json"; }
  fs::path report_md() const { return root / "report.md"; }
  fs::path report_csv() const { return root / "report.csv"; }
  fs::path config_file() const { return root / "config.json"; }
  fs::path checkpoint(const std::string& name) const {
    return root / "checkpoints" / (name + ".json");
  }
  fs::path metrics(const std::string& name) const {
    return root / "metrics" / (name + ".json");
  }
  fs::path manifest(const std::string& stage) const {
    return root / "manifests" / (stage + ".json");
  }
};

Paths paths_of(const PipelineConfig& c) { return Paths{fs::path(c.run_dir)}; }

void ensure_run_dirs(const Paths& p) {
  fs::create_directories(p.root / "checkpoints");
  fs::create_directories(p.root / "metrics");
  fs::create_directories(p.root / "manifests");
}

std::string rel_of(const Paths& p, const fs::path& file) {
  return fs::relative(file, p.root).generic_string();
}

void record_output(corpus::RunManifest& m, const Paths& p, const fs::path& file) {
  m.output_digests[rel_of(p, file)] = sha256_file(file);
}

corpus::RunManifest require_manifest(const PipelineConfig& c, const Paths& p,
                                     const std::string& stage) {
  const fs::path mp = p.manifest(stage);
  if (!fs::exists(mp))
    throw MissingDependencyError("no " + stage + " outputs in " +
                                 p.root.string() + "; run " + stage + " first");
  corpus::RunManifest m = corpus::load_manifest(mp);
  const std::string want = stage_digest(c, stage);
  if (m.config_digest != want)
    throw ConfigError(stage + " outputs in " + p.root.string() +
                      " were produced with a different configuration; re-run " +
                      stage);
  return m;
}

void check_artifact(const corpus::RunManifest& m, const Paths& p,
                    const fs::path& file) {
  const std::string rel = rel_of(p, file);
  auto it = m.output_digests.find(rel);
  if (it == m.output_digests.end())
    throw MissingDependencyError(rel + " is not an output of stage " + m.stage +
                                 "; re-run " + m.stage);
  if (!fs::exists(file))
    throw MissingDependencyError(rel + " is missing; re-run " + m.stage);
  if (sha256_file(file) != it->second)
    throw MissingDependencyError(rel + " changed since " + m.stage +
                                 " ran; re-run " + m.stage);
}

corpus::RunManifest new_manifest(const PipelineConfig& c, const std::string& stage) {
  corpus::RunManifest m;
  m.tool_version = kToolVersion;
  m.stage = stage;
  m.config_digest = stage_digest(c, stage);
  m.master_seed = c.master_seed;
  return m;
}

void write_config_snapshot(const PipelineConfig& c, const Paths& p) {
  corpus::atomic_write(p.config_file(), config_to_json(c).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Task plumbing

distill::PromptFn make_prompt_fn(const PipelineConfig& c) {
  const backend::PromptTemplate* tmpl = &backend::template_by_name(c.prompt_template);
  if (c.prompt_template == "mmlu") {
    const MmluFewshot few = c.mmlu_fewshot;
    if (few.question1.empty() || few.options1.empty() || few.answer1.empty() ||
        few.question2.empty() || few.options2.empty() || few.answer2.empty())
      throw ConfigError("the mmlu template requires all task.mmlu_fewshot fields");
    return [tmpl, few](const corpus::Query& q) {
      if (!q.options.has_value())
        throw ConfigError("query " + q.id +
                          " has no options; the mmlu template requires them");
      return backend::render_prompt(
          *tmpl, {{"question", q.text},
                  {"options", *q.options},
                  {"fewshot1_question", few.question1},
                  {"fewshot1_options", few.options1},
                  {"fewshot1_answer", few.answer1},
                  {"fewshot2_question", few.question2},
                  {"fewshot2_options", few.options2},
                  {"fewshot2_answer", few.answer2}});
    };
  }
  return [tmpl](const corpus::Query& q) {
    return backend::render_prompt(*tmpl, {{"question", q.text}});
  };
}

struct SplitQueries {
  std::vector<corpus::Query> train, validation, test;
  std::vector<corpus::Query> train_val() const {
    std::vector<corpus::Query> out = train;
    out.insert(out.end(), validation.begin(), validation.end());
    return out;
  }
};

SplitQueries load_split_queries(const Paths& p) {
  SplitQueries out;
  for (auto& q : corpus::load_queries(p.queries())) {
    if (q.split == corpus::Split::kTrain) out.train.push_back(std::move(q));
    else if (q.split == corpus::Split::kValidation) out.validation.push_back(std::move(q));
    else out.test.push_back(std::move(q));
  }
  return out;
}

std::unordered_set<std::string> id_set(const std::vector<corpus::Query>& qs) {
  std::unordered_set<std::string> out;
  for (const auto& q : qs) out.insert(q.id);
  return out;
}

std::vector<corpus::GenerationRecord> records_for(
    const std::vector<corpus::GenerationRecord>& records,
    const std::unordered_set<std::string>& ids) {
  std::vector<corpus::GenerationRecord> out;
  for (const auto& r : records)
    if (ids.count(r.query_id)) out.push_back(r);
  return out;
}

models::Vocabulary student_vocabulary(const PipelineConfig& c) {
  if (c.task != "synthetic")
    throw ConfigError(
        "student training requires the synthetic task (file tasks provide no "
        "student tokenizer); use distill to export datasets");
  return models::Vocabulary(synthtask::vocabulary_tokens());
}

backend::BackendConfig teacher_backend_config(const PipelineConfig& c) {
  backend::BackendConfig b = c.teacher;
  b.seed = derive_seed(c.master_seed, "teacher-backend");
  return b;
}

}  // namespace

// ---------------------------------------------------------------------------
// distill

void run_distill(const PipelineConfig& c) {
  const Paths p = paths_of(c);
  ensure_run_dirs(p);

  corpus::RunManifest manifest = new_manifest(c, "distill");

  std::vector<corpus::Query> raw;
  if (c.task == "synthetic") {
    synthtask::SynthConfig sc = c.synth;
    sc.seed = derive_seed(c.master_seed, "synth");
    manifest.stream_seeds["synth"] = sc.seed;
    raw = synthtask::generate_queries(sc);
  } else if (c.task == "file") {
    if (c.queries_file.empty())
      throw ConfigError("task.kind 'file' requires task.queries_file");
    raw = corpus::load_queries(c.queries_file);
    manifest.input_digests["queries_file"] = sha256_file(c.queries_file);
  } else {
    throw ConfigError("unknown task.kind '" + c.task +
                      "' (expected synthetic or file)");
  }

  const std::uint64_t split_seed = derive_seed(c.master_seed, "split");
  manifest.stream_seeds["split"] = split_seed;
  corpus::SplitResult split =
      corpus::split_queries(std::move(raw), c.train_ratio, c.validation_ratio,
                            split_seed);
  std::vector<corpus::Query> all = split.train;
  all.insert(all.end(), split.validation.begin(), split.validation.end());
  all.insert(all.end(), split.test.begin(), split.test.end());
  corpus::save_queries(p.queries(), all);

  backend::BackendConfig bc = teacher_backend_config(c);
  manifest.stream_seeds["teacher-backend"] = bc.seed;
  std::unique_ptr<backend::Backend> teacher = backend::make_backend(bc);

  // the teacher never sees the test split
  std::vector<corpus::Query> train_val = split.train;
  train_val.insert(train_val.end(), split.validation.begin(), split.validation.end());
  distill::PromptFn prompt_fn = make_prompt_fn(c);
  std::vector<corpus::GenerationRecord> records =
      distill::collect_generations(*teacher, train_val, prompt_fn, c.schedule,
                                   corpus::Source::kTeacher, c.teacher_max_new_tokens);

  std::vector<corpus::PseudoLabelRecord> pseudo = distill::vote_pseudo_labels(
      train_val, records, c.schedule, c.vote_threshold);
  distill::propagate_labels(records, pseudo);

  // fine-tuning pairs come from the train split only
  auto train_ids = id_set(split.train);
  std::vector<corpus::GenerationRecord> train_records = records_for(records, train_ids);
  std::vector<distill::SftPair> sft_pairs =
      distill::build_sft_dataset(split.train, train_records);
  std::vector<distill::SftPair> sft_unfiltered =
      distill::build_unfiltered_sft_dataset(split.train, train_records);

  corpus::save_records(p.teacher_records(), records);
  corpus::save_pseudo_labels(p.pseudo_labels(), pseudo);
  distill::save_sft_pairs(p.sft_pairs(), sft_pairs);
  distill::save_sft_pairs(p.sft_pairs_unfiltered(), sft_unfiltered);

  distill::DistillStats stats =
      distill::compute_distill_stats(train_val, records, pseudo, sft_pairs);
  json stats_json = json::parse(stats.to_json());
  stats_json["splits"] = {{"train", split.train.size()},
                          {"validation", split.validation.size()},
                          {"test", split.test.size()}};
  auto oracle = evaluate::oracle_answer_map(train_val);
  if (!oracle.empty()) {
    evaluate::GreedyEval all_acc = evaluate::record_accuracy(records, oracle);
    std::vector<corpus::GenerationRecord> greedy_records;
    for (const auto& r : records)
      if (r.temperature == 0.0) greedy_records.push_back(r);
    evaluate::GreedyEval greedy_acc =
        evaluate::record_accuracy(greedy_records, oracle);
    stats_json["teacher_record_accuracy"] = all_acc.accuracy;
    stats_json["teacher_greedy_accuracy"] = greedy_acc.accuracy;
  }
  corpus::atomic_write(p.distill_stats(), stats_json.dump(2) + "\n");

  write_config_snapshot(c, p);
  record_output(manifest, p, p.queries());
  record_output(manifest, p, p.teacher_records());
  record_output(manifest, p, p.pseudo_labels());
  record_output(manifest, p, p.sft_pairs());
  record_output(manifest, p, p.sft_pairs_unfiltered());
  record_output(manifest, p, p.distill_stats());
  corpus::save_manifest(p.manifest("distill"), manifest);
}

// ---------------------------------------------------------------------------
// warmup

void run_warmup(const PipelineConfig& c) {
  const Paths p = paths_of(c);
  ensure_run_dirs(p);
  corpus::RunManifest upstream = require_manifest(c, p, "distill");
  check_artifact(upstream, p, p.queries());
  check_artifact(upstream, p, p.sft_pairs());
  check_artifact(upstream, p, p.pseudo_labels());

  SplitQueries queries = load_split_queries(p);
  std::vector<distill::SftPair> pairs = distill::load_sft_pairs(p.sft_pairs());
  std::vector<corpus::PseudoLabelRecord> pseudo =
      corpus::load_pseudo_labels(p.pseudo_labels());
  auto validation_answers = evaluate::pseudo_answer_map(pseudo);

  models::Vocabulary vocab = student_vocabulary(c);
  corpus::RunManifest manifest = new_manifest(c, "warmup");
  manifest.input_digests[rel_of(p, p.sft_pairs())] =
      upstream.output_digests.at(rel_of(p, p.sft_pairs()));

  const std::uint64_t init_seed = derive_seed(c.master_seed, "policy-init");
  manifest.stream_seeds["policy-init"] = init_seed;
  models::PolicyModel base(vocab, c.embed_dim, c.hidden_dim, init_seed);
  base.save(p.checkpoint("base"), json{{"role", "base"}}.dump());

  auto save_sft_run = [&](const std::vector<distill::SftPair>& data,
                          const std::string& name, std::uint64_t seed) {
    sft::SftConfig cfg = c.sft;
    cfg.seed = seed;
    sft::SftResult result =
        sft::train_sft(base, data, queries.validation, validation_answers, cfg);
    result.model.save(p.checkpoint(name), json{{"role", name}}.dump());
    json m;
    m["pair_count"] = data.size();
    m["skipped_pairs"] = result.skipped_pairs;
    m["best_epoch"] = result.best_epoch;
    m["best_validation_accuracy"] = result.best_validation_accuracy;
    json epochs = json::array();
    for (const auto& e : result.epochs)
      epochs.push_back({{"epoch", e.epoch},
                        {"mean_loss", e.mean_loss},
                        {"validation_accuracy", e.validation_accuracy}});
    m["epochs"] = epochs;
    corpus::atomic_write(p.metrics(name), m.dump(2) + "\n");
  };

  const std::uint64_t sft_seed = derive_seed(c.master_seed, "sft");
  manifest.stream_seeds["sft"] = sft_seed;
  save_sft_run(pairs, "warmup", sft_seed);

  if (c.train_unfiltered_baseline) {
    check_artifact(upstream, p, p.sft_pairs_unfiltered());
    std::vector<distill::SftPair> unfiltered =
        distill::load_sft_pairs(p.sft_pairs_unfiltered());
    const std::uint64_t seed = derive_seed(c.master_seed, "sft-unfiltered");
    manifest.stream_seeds["sft-unfiltered"] = seed;
    save_sft_run(unfiltered, "sft_all", seed);
  }

  write_config_snapshot(c, p);
  record_output(manifest, p, p.checkpoint("base"));
  record_output(manifest, p, p.checkpoint("warmup"));
  record_output(manifest, p, p.metrics("warmup"));
  if (c.train_unfiltered_baseline) {
    record_output(manifest, p, p.checkpoint("sft_all"));
    record_output(manifest, p, p.metrics("sft_all"));
  }
  corpus::save_manifest(p.manifest("warmup"), manifest);
}

// ---------------------------------------------------------------------------
// train-rm

void run_train_rm(const PipelineConfig& c) {
  const Paths p = paths_of(c);
  ensure_run_dirs(p);
  corpus::RunManifest distill_m = require_manifest(c, p, "distill");
  corpus::RunManifest warmup_m = require_manifest(c, p, "warmup");
  check_artifact(distill_m, p, p.queries());
  check_artifact(distill_m, p, p.teacher_records());
  check_artifact(distill_m, p, p.pseudo_labels());
  check_artifact(warmup_m, p, p.checkpoint("warmup"));

  SplitQueries queries = load_split_queries(p);
  std::vector<corpus::GenerationRecord> teacher_records =
      corpus::load_records(p.teacher_records());
  std::vector<corpus::PseudoLabelRecord> pseudo =
      corpus::load_pseudo_labels(p.pseudo_labels());

  corpus::RunManifest manifest = new_manifest(c, "train-rm");
  manifest.input_digests[rel_of(p, p.checkpoint("warmup"))] =
      warmup_m.output_digests.at(rel_of(p, p.checkpoint("warmup")));

  models::PolicyModel warmup =
      models::PolicyModel::load(p.checkpoint("warmup")).model;

  // student self-samples over train + validation queries
  const std::uint64_t student_seed = derive_seed(c.master_seed, "student-backend");
  manifest.stream_seeds["student-backend"] = student_seed;
  backend::PolicyBackend student(warmup.clone(), student_seed, "student-warmup");
  distill::PromptFn identity = [](const corpus::Query& q) { return q.text; };
  std::vector<corpus::GenerationRecord> student_records =
      distill::collect_generations(student, queries.train_val(), identity,
                                   c.student_temperature, c.student_samples,
                                   corpus::Source::kStudentWarmup,
                                   c.student_max_new_tokens);
  distill::propagate_labels(student_records, pseudo);
  corpus::save_records(p.student_records(), student_records);

  auto train_ids = id_set(queries.train);
  auto val_ids = id_set(queries.validation);
  auto student_train = records_for(student_records, train_ids);
  auto student_val = records_for(student_records, val_ids);
  auto teacher_train = records_for(teacher_records, train_ids);
  auto teacher_val = records_for(teacher_records, val_ids);

  std::vector<std::string> set_train = distill::build_student_set(student_train, pseudo);
  std::vector<std::string> set_val = distill::build_student_set(student_val, pseudo);

  const std::uint64_t groups_seed = derive_seed(c.master_seed, "reward-groups");
  manifest.stream_seeds["reward-groups"] = groups_seed;
  Rng groups_rng(groups_seed);
  distill::RewardGroupBuild train_build = distill::build_reward_groups(
      queries.train, set_train, student_train, teacher_train,
      c.teacher_share_ratio, groups_rng);
  const std::uint64_t groups_val_seed = derive_seed(c.master_seed, "reward-groups-val");
  manifest.stream_seeds["reward-groups-val"] = groups_val_seed;
  Rng val_rng(groups_val_seed);
  distill::RewardGroupBuild val_build = distill::build_reward_groups(
      queries.validation, set_val, student_val, teacher_val,
      c.teacher_share_ratio, val_rng);

  distill::validate_reward_groups(train_build.groups, c.teacher_share_ratio);
  distill::save_reward_groups(p.groups_train(), train_build.groups);
  distill::save_reward_groups(p.groups_val(), val_build.groups);

  json set_json;
  set_json["train"] = set_train;
  set_json["validation"] = set_val;
  json skipped = json::array();
  for (const auto& s : train_build.skipped)
    skipped.push_back({{"query_id", s.query_id}, {"reason", s.reason}});
  for (const auto& s : val_build.skipped)
    skipped.push_back({{"query_id", s.query_id}, {"reason", s.reason}});
  set_json["skipped"] = skipped;
  corpus::atomic_write(p.student_set(), set_json.dump(2) + "\n");

  if (train_build.groups.empty())
    throw NumericalError(
        "no contrastive groups could be built from the train split; the "
        "warm-up student is either never wrong or never right on every "
        "eligible query");

  // scorer: warm-up trunk + zero head
  models::RewardModel rm_init = models::RewardModel::init_from_policy(warmup);
  rm::RmConfig rm_cfg = c.rm;
  rm_cfg.seed = derive_seed(c.master_seed, "rm");
  manifest.stream_seeds["rm"] = rm_cfg.seed;
  rm::RmResult rm_result =
      rm::train_rm(rm_init, train_build.groups, val_build.groups, rm_cfg);
  rm_result.model.save(p.checkpoint("rm"), json{{"role", "reward"}}.dump());

  json rm_metrics;
  rm_metrics["train_groups"] = train_build.groups.size();
  rm_metrics["validation_groups"] = val_build.groups.size();
  rm_metrics["skipped_queries"] = skipped.size();
  rm_metrics["best_epoch"] = rm_result.best_epoch;
  rm_metrics["best_validation"] = {
      {"correct_vs_incorrect", rm_result.best_validation.correct_vs_incorrect},
      {"teacher_vs_student", rm_result.best_validation.teacher_vs_student},
      {"pair_count", rm_result.best_validation.pair_count}};
  json rm_epochs = json::array();
  for (const auto& e : rm_result.epochs)
    rm_epochs.push_back(
        {{"epoch", e.epoch},
         {"mean_loss", e.mean_loss},
         {"validation",
          {{"correct_vs_incorrect", e.validation.correct_vs_incorrect},
           {"teacher_vs_student", e.validation.teacher_vs_student},
           {"pair_count", e.validation.pair_count}}}});
  rm_metrics["epochs"] = rm_epochs;
  corpus::atomic_write(p.metrics("rm"), rm_metrics.dump(2) + "\n");

  // optimization pool: contrastive-group queries plus vote-failed queries,
  // train split only
  std::vector<std::string> group_ids;
  for (const auto& g : train_build.groups) group_ids.push_back(g.query_id);
  std::vector<std::string> failed_ids;
  for (const auto& ps : pseudo)
    if (!ps.labeled && train_ids.count(ps.query_id)) failed_ids.push_back(ps.query_id);
  const std::uint64_t pool_seed = derive_seed(c.master_seed, "rl-pool");
  manifest.stream_seeds["rl-pool"] = pool_seed;
  std::vector<std::string> pool =
      distill::rl_query_pool(group_ids, failed_ids, pool_seed);
  json pool_json;
  pool_json["queries"] = pool;
  corpus::atomic_write(p.rl_pool(), pool_json.dump(2) + "\n");

  write_config_snapshot(c, p);
  record_output(manifest, p, p.student_records());
  record_output(manifest, p, p.student_set());
  record_output(manifest, p, p.groups_train());
  record_output(manifest, p, p.groups_val());
  record_output(manifest, p, p.checkpoint("rm"));
  record_output(manifest, p, p.metrics("rm"));
  record_output(manifest, p, p.rl_pool());
  corpus::save_manifest(p.manifest("train-rm"), manifest);
}

// ---------------------------------------------------------------------------
// ppo

namespace {

json ppo_metrics_json(const rl::PpoResult& result) {
  json m;
  m["best_update"] = result.best_update;
  m["best_validation_accuracy"] = result.best_validation_accuracy;
  m["episodes_used"] = result.episodes_used;
  m["stopped_early"] = result.stopped_early;
  json updates = json::array();
  for (const auto& u : result.updates) {
    json row;
    row["update"] = u.update;
    row["episodes"] = u.episodes;
    row["mean_shaped_reward"] = u.mean_shaped_reward;
    row["mean_raw_score"] = u.mean_raw_score;
    row["mean_kl"] = u.mean_kl;
    row["loss"] = u.loss;
    if (u.validation_accuracy.has_value())
      row["validation_accuracy"] = *u.validation_accuracy;
    updates.push_back(row);
  }
  m["updates"] = updates;
  return m;
}

}  // namespace

void run_ppo(const PipelineConfig& c) {
  const Paths p = paths_of(c);
  ensure_run_dirs(p);
  corpus::RunManifest distill_m = require_manifest(c, p, "distill");
  corpus::RunManifest warmup_m = require_manifest(c, p, "warmup");
  corpus::RunManifest rm_m = require_manifest(c, p, "train-rm");
  check_artifact(distill_m, p, p.queries());
  check_artifact(distill_m, p, p.pseudo_labels());
  check_artifact(warmup_m, p, p.checkpoint("warmup"));
  check_artifact(rm_m, p, p.checkpoint("rm"));
  check_artifact(rm_m, p, p.rl_pool());

  SplitQueries queries = load_split_queries(p);
  std::vector<corpus::PseudoLabelRecord> pseudo =
      corpus::load_pseudo_labels(p.pseudo_labels());
  auto adopted = evaluate::pseudo_answer_map(pseudo);

  models::PolicyModel warmup =
      models::PolicyModel::load(p.checkpoint("warmup")).model;
  models::RewardModel reward = models::RewardModel::load(p.checkpoint("rm")).model;

  std::ifstream pool_in(p.rl_pool());
  json pool_json = json::parse(pool_in);
  std::vector<std::string> pool_ids =
      pool_json.at("queries").get<std::vector<std::string>>();
  std::unordered_map<std::string, const corpus::Query*> train_by_id;
  for (const auto& q : queries.train) train_by_id.emplace(q.id, &q);
  std::vector<corpus::Query> pool;
  pool.reserve(pool_ids.size());
  for (const auto& id : pool_ids) {
    auto it = train_by_id.find(id);
    if (it == train_by_id.end())
      throw IoError("rl_pool.json references unknown train query " + id);
    pool.push_back(*it->second);
  }

  corpus::RunManifest manifest = new_manifest(c, "ppo");
  manifest.input_digests[rel_of(p, p.checkpoint("rm"))] =
      rm_m.output_digests.at(rel_of(p, p.checkpoint("rm")));

  rl::PpoConfig ppo_cfg = c.ppo;
  ppo_cfg.seed = derive_seed(c.master_seed, "ppo");
  manifest.stream_seeds["ppo"] = ppo_cfg.seed;
  rl::PpoResult result = rl::train_ppo(warmup, reward, pool, adopted,
                                       queries.validation,
                                       evaluate::pseudo_answer_map(pseudo), ppo_cfg);
  result.model.save(p.checkpoint("ppo"), json{{"role", "ppo"}}.dump());
  corpus::atomic_write(p.metrics("ppo"), ppo_metrics_json(result).dump(2) + "\n");

  if (c.ppo_from_base) {
    check_artifact(warmup_m, p, p.checkpoint("base"));
    models::PolicyModel base = models::PolicyModel::load(p.checkpoint("base")).model;
    rl::PpoConfig base_cfg = c.ppo;
    base_cfg.seed = derive_seed(c.master_seed, "ppo-from-base");
    manifest.stream_seeds["ppo-from-base"] = base_cfg.seed;
    rl::PpoResult base_result =
        rl::train_ppo(base, reward, pool, adopted, queries.validation,
                      evaluate::pseudo_answer_map(pseudo), base_cfg);
    base_result.model.save(p.checkpoint("ppo_from_base"),
                           json{{"role", "ppo_from_base"}}.dump());
    corpus::atomic_write(p.metrics("ppo_from_base"),
                         ppo_metrics_json(base_result).dump(2) + "\n");
  }

  write_config_snapshot(c, p);
  record_output(manifest, p, p.checkpoint("ppo"));
  record_output(manifest, p, p.metrics("ppo"));
  if (c.ppo_from_base) {
    record_output(manifest, p, p.checkpoint("ppo_from_base"));
    record_output(manifest, p, p.metrics("ppo_from_base"));
  }
  corpus::save_manifest(p.manifest("ppo"), manifest);
}

// ---------------------------------------------------------------------------
// eval

void run_eval(const PipelineConfig& c) {
  const Paths p = paths_of(c);
  ensure_run_dirs(p);
  corpus::RunManifest distill_m = require_manifest(c, p, "distill");
  corpus::RunManifest warmup_m = require_manifest(c, p, "warmup");
  require_manifest(c, p, "train-rm");
  corpus::RunManifest ppo_m = require_manifest(c, p, "ppo");
  check_artifact(distill_m, p, p.queries());
  check_artifact(warmup_m, p, p.checkpoint("base"));
  check_artifact(warmup_m, p, p.checkpoint("warmup"));
  check_artifact(ppo_m, p, p.checkpoint("ppo"));

  SplitQueries queries = load_split_queries(p);
  auto oracle = evaluate::oracle_answer_map(queries.test);
  if (oracle.empty())
    throw ConfigError("eval requires test queries with reference answers");

  json rows = json::array();
  auto add_row = [&rows](const std::string& name, const std::string& description,
                         const evaluate::GreedyEval& e) {
    rows.push_back({{"name", name},
                    {"description", description},
                    {"accuracy", e.accuracy},
                    {"correct", e.correct},
                    {"evaluated", e.evaluated}});
  };

  // teacher row: one greedy sample per test query
  {
    backend::BackendConfig bc = teacher_backend_config(c);
    std::unique_ptr<backend::Backend> teacher = backend::make_backend(bc);
    std::vector<corpus::GenerationRecord> teacher_test =
        distill::collect_generations(*teacher, queries.test, make_prompt_fn(c),
                                     0.0, 1, corpus::Source::kTeacher,
                                     c.teacher_max_new_tokens);
    add_row("teacher", "sampling teacher, greedy",
            evaluate::record_accuracy(teacher_test, oracle));
  }

  auto eval_checkpoint = [&](const std::string& name) {
    models::PolicyModel m = models::PolicyModel::load(p.checkpoint(name)).model;
    return evaluate::greedy_eval(m, queries.test, oracle, c.eval_max_new_tokens);
  };

  add_row("base", "random-init student", eval_checkpoint("base"));
  if (fs::exists(p.checkpoint("sft_all")))
    add_row("sft_all_records", "fine-tuned on every teacher record with an answer",
            eval_checkpoint("sft_all"));
  add_row("warmup", "fine-tuned on vote-filtered records (data distillation only)",
          eval_checkpoint("warmup"));
  if (fs::exists(p.checkpoint("ppo_from_base")))
    add_row("rl_from_base",
            "policy optimization from random init (reward distillation only)",
            eval_checkpoint("ppo_from_base"));
  add_row("full", "warm-up then policy optimization (both stages)",
          eval_checkpoint("ppo"));

  json out;
  out["task"] = c.task;
  out["test_queries"] = queries.test.size();
  out["rows"] = rows;
  corpus::atomic_write(p.eval_file(), out.dump(2) + "\n");

  corpus::RunManifest manifest = new_manifest(c, "eval");
  write_config_snapshot(c, p);
  record_output(manifest, p, p.eval_file());
  corpus::save_manifest(p.manifest("eval"), manifest);
}

// ---------------------------------------------------------------------------
// ablate

namespace {

void copy_into(const Paths& from, const Paths& to, const fs::path& file) {
  const fs::path dest = to.root / fs::relative(file, from.root);
  fs::create_directories(dest.parent_path());
  fs::copy_file(file, dest, fs::copy_options::overwrite_existing);
}

void seed_subrun(const PipelineConfig& parent, const PipelineConfig& sub) {
  const Paths from = paths_of(parent);
  const Paths to = paths_of(sub);
  ensure_run_dirs(to);
  for (const fs::path& f :
       {from.queries(), from.teacher_records(), from.pseudo_labels(),
        from.sft_pairs(), from.sft_pairs_unfiltered(), from.distill_stats(),
        from.manifest("distill"), from.manifest("warmup"),
        from.checkpoint("base"), from.checkpoint("warmup"),
        from.metrics("warmup")}) {
    copy_into(from, to, f);
  }
  for (const fs::path& f : {from.checkpoint("sft_all"), from.metrics("sft_all")})
    if (fs::exists(f)) copy_into(from, to, f);
}

std::string knob_label(const std::string& knob, const json& value) {
  return knob + "=" + (value.is_string() ? value.get<std::string>() : value.dump());
}

}  // namespace

void run_ablate(const PipelineConfig& c, const AblationSpec& spec) {
  const Paths p = paths_of(c);
  require_manifest(c, p, "distill");
  require_manifest(c, p, "warmup");

  json summary;
  auto run_variant = [&](const std::string& knob, const json& value,
                         auto mutate) {
    PipelineConfig sub = c;
    const std::string label = knob_label(knob, value);
    sub.run_dir = (p.root / "ablations" / label).string();
    sub.ppo_from_base = false;  // ablations compare the full pipeline only
    mutate(sub);
    seed_subrun(c, sub);
    run_train_rm(sub);
    run_ppo(sub);
    run_eval(sub);
    std::ifstream in(paths_of(sub).eval_file());
    json eval_json = json::parse(in);
    summary[knob][value.is_string() ? value.get<std::string>() : value.dump()] =
        eval_json.at("rows");
  };

  for (double w : spec.classification_weights)
    run_variant("classification_weight", json(w),
                [w](PipelineConfig& s) { s.rm.classification_weight = w; });
  for (double r : spec.teacher_share_ratios)
    run_variant("teacher_share_ratio", json(r),
                [r](PipelineConfig& s) { s.teacher_share_ratio = r; });
  for (const std::string& mode : spec.wrong_answer_modes)
    run_variant("wrong_answer_mode", json(mode), [&mode](PipelineConfig& s) {
      s.ppo.shaping.wrong_answer_mode = mode;
    });

  fs::create_directories(p.root / "ablations");
  corpus::atomic_write(p.root / "ablations" / "summary.json",
                       summary.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// report

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw IoError(path.string() + " is not valid JSON");
  return j;
}

std::string pct(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f%%", fraction * 100.0);
  return buf;
}

}  // namespace

void run_report(const PipelineConfig& c) {
  const Paths p = paths_of(c);
  if (!fs::exists(p.eval_file()))
    throw MissingDependencyError("no eval.json in " + p.root.string() +
                                 "; run eval first");
  json eval_json = read_json_file(p.eval_file());

  std::string md;
  std::string csv = "variant,accuracy,correct,evaluated\n";
  md += "# Distillation run report\n\n";
  md += "Task: " + eval_json.value("task", std::string("?")) + ", test queries: " +
        std::to_string(eval_json.value("test_queries", 0)) + "\n\n";
  md += "## Test accuracy\n\n";
  md += "| variant | accuracy | correct / evaluated |\n";
  md += "|---|---|---|\n";
  for (const json& row : eval_json.at("rows")) {
    const std::string name = row.at("name").get<std::string>();
    const double acc = row.at("accuracy").get<double>();
    md += "| " + name + " | " + pct(acc) + " | " +
          std::to_string(row.at("correct").get<int>()) + " / " +
          std::to_string(row.at("evaluated").get<int>()) + " |\n";
    csv += name + "," + json(acc).dump() + "," +
           std::to_string(row.at("correct").get<int>()) + "," +
           std::to_string(row.at("evaluated").get<int>()) + "\n";
  }
  md += "\nVariant key:\n\n";
  for (const json& row : eval_json.at("rows"))
    md += "- `" + row.at("name").get<std::string>() + "`: " +
          row.at("description").get<std::string>() + "\n";

  if (fs::exists(p.distill_stats())) {
    json stats = read_json_file(p.distill_stats());
    md += "\n## Dataset distillation\n\n";
    md += "- queries: " + std::to_string(stats.value("query_count", 0)) + "\n";
    md += "- teacher records: " + std::to_string(stats.value("teacher_records", 0)) + "\n";
    md += "- pseudo-labeled queries: " + std::to_string(stats.value("labeled_queries", 0)) +
          ", vote-failed: " + std::to_string(stats.value("failed_queries", 0)) + "\n";
    md += "- fine-tuning pairs kept: " + std::to_string(stats.value("sft_pairs", 0)) + "\n";
    if (stats.contains("pseudo_label_error_rate"))
      md += "- pseudo-label error rate vs ground truth: " +
            pct(stats.value("pseudo_label_error_rate", 0.0)) + "\n";
    if (stats.contains("teacher_greedy_accuracy"))
      md += "- teacher greedy accuracy (train+validation): " +
            pct(stats.value("teacher_greedy_accuracy", 0.0)) + "\n";
  }

  if (fs::exists(p.metrics("warmup"))) {
    json m = read_json_file(p.metrics("warmup"));
    md += "\n## Warm-up\n\n";
    md += "- pairs: " + std::to_string(m.value("pair_count", 0)) +
          ", best epoch: " + std::to_string(m.value("best_epoch", 0)) +
          ", validation accuracy: " + pct(m.value("best_validation_accuracy", 0.0)) +
          "\n";
  }
  if (fs::exists(p.metrics("rm"))) {
    json m = read_json_file(p.metrics("rm"));
    md += "\n## Scorer\n\n";
    md += "- groups: " + std::to_string(m.value("train_groups", 0)) + " train / " +
          std::to_string(m.value("validation_groups", 0)) + " validation\n";
    if (m.contains("best_validation")) {
      const json& bv = m.at("best_validation");
      md += "- validation ranking accuracy: correct-vs-incorrect " +
            pct(bv.value("correct_vs_incorrect", 0.0)) + ", teacher-vs-student " +
            pct(bv.value("teacher_vs_student", 0.0)) + "\n";
    }
  }
  if (fs::exists(p.metrics("ppo"))) {
    json m = read_json_file(p.metrics("ppo"));
    md += "\n## Policy optimization\n\n";
    md += "- episodes: " + std::to_string(m.value("episodes_used", 0)) +
          ", best update: " + std::to_string(m.value("best_update", 0)) +
          ", validation accuracy: " + pct(m.value("best_validation_accuracy", 0.0)) +
          (m.value("stopped_early", false) ? ", stopped early" : "") + "\n";
  }

  const fs::path ablation_summary = p.root / "ablations" / "summary.json";
  if (fs::exists(ablation_summary)) {
    json summary = read_json_file(ablation_summary);
    md += "\n## Ablations\n";
    for (auto it = summary.begin(); it != summary.end(); ++it) {
      md += "\n### " + it.key() + "\n\n";
      md += "| value | full-pipeline accuracy |\n|---|---|\n";
      for (auto vit = it.value().begin(); vit != it.value().end(); ++vit) {
        double acc = 0.0;
        for (const json& row : vit.value())
          if (row.at("name") == "full") acc = row.at("accuracy").get<double>();
        md += "| " + vit.key() + " | " + pct(acc) + " |\n";
      }
    }
  }

  corpus::atomic_write(p.report_md(), md);
  corpus::atomic_write(p.report_csv(), csv);
}

}  // namespace drd::pipeline
