#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "drd/backend.hpp"
#include "drd/distillation.hpp"
#include "drd/rewardmodel.hpp"
#include "drd/rl.hpp"
#include "drd/sft.hpp"
#include "drd/synthtask.hpp"

namespace drd::pipeline {

// Few-shot slots of the multiple-choice template; required when
// prompt_template is "mmlu".
struct MmluFewshot {
  std::string question1, options1, answer1;
  std::string question2, options2, answer2;
};

// Full run configuration. Per-stage RNG seeds are not configurable: every
// stream is derived from master_seed, so one number pins the whole run.
struct PipelineConfig {
  std::string run_dir = "runs/demo";
  std::uint64_t master_seed = 0;

  // task
  std::string task = "synthetic";  // synthetic | file
  std::string queries_file;        // task == file: query JSONL
  std::string prompt_template = "identity";  // identity | gsm8k | mmlu
  synthtask::SynthConfig synth;
  MmluFewshot mmlu_fewshot;

  // split
  double train_ratio = 0.8;
  double validation_ratio = 0.1;

  backend::BackendConfig teacher;

  // distill
  distill::TemperatureSchedule schedule = distill::TemperatureSchedule::standard();
  double vote_threshold = 0.7;
  int teacher_max_new_tokens = 96;

  // student model
  int embed_dim = 32;
  int hidden_dim = 64;

  // warm-up
  sft::SftConfig sft;
  bool train_unfiltered_baseline = true;

  // student collection + reward model
  int student_samples = 30;
  double student_temperature = 0.7;
  int student_max_new_tokens = 96;
  double teacher_share_ratio = 1.0;
  rm::RmConfig rm;

  // policy optimization
  rl::PpoConfig ppo;
  bool ppo_from_base = true;  // also optimize from the random-init policy

  int eval_max_new_tokens = 96;
};

nlohmann::json config_to_json(const PipelineConfig& config);
// Strict: an unknown key anywhere is a config error naming it; missing keys
// keep their defaults.
PipelineConfig config_from_json(const nlohmann::json& j);
// Empty path yields the default config.
PipelineConfig load_config(const std::string& path);

// Digest over only the fields a stage's outputs depend on (chained through
// the upstream stage digests), so downstream knobs can change without
// invalidating upstream artifacts. Stages: distill, warmup, train-rm, ppo,
// eval.
std::string stage_digest(const PipelineConfig& config, const std::string& stage);

void run_distill(const PipelineConfig& config);
void run_warmup(const PipelineConfig& config);
void run_train_rm(const PipelineConfig& config);
void run_ppo(const PipelineConfig& config);
void run_eval(const PipelineConfig& config);

struct AblationSpec {
  std::vector<double> classification_weights;
  std::vector<double> teacher_share_ratios;
  std::vector<std::string> wrong_answer_modes;
};

// Re-runs train-rm/ppo/eval per knob value in run_dir/ablations/<knob>=<value>,
// reusing the parent run's distill and warm-up artifacts.
void run_ablate(const PipelineConfig& config, const AblationSpec& spec);

// Renders report.md and report.csv from eval.json and the metrics files; pure
// function of those files.
void run_report(const PipelineConfig& config);

}  // namespace drd::pipeline
