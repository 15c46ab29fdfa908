// drdistill: two-stage distillation pipeline driver.
//
// A run directory accumulates the artifacts of five stages:
//   distill   sample the teacher, majority-vote pseudo-labels, export datasets
//   warmup    fine-tune the student on vote-filtered teacher responses
//   train-rm  student self-samples, contrastive groups, train the scorer
//   ppo       shaped-reward policy optimization
//   eval      greedy test-split accuracy for every variant
// plus `ablate` (knob sweeps on a finished warm-up) and `report` (markdown/CSV).
//
// Every stage validates the manifests of the stages it builds on and refuses
// stale or foreign artifacts. Flags override the matching config-file field.

#include <cstdio>
#include <exception>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "drd/error.hpp"
#include "drd/pipeline.hpp"
#include "drd/version.hpp"

namespace {

using drd::pipeline::PipelineConfig;
using nlohmann::json;

struct Overrides {
  std::optional<std::string> run_dir;
  std::optional<std::uint64_t> master_seed;

  std::optional<std::string> task;
  std::optional<std::string> queries_file;
  std::optional<std::string> prompt_template;
  std::optional<int> synth_query_count;
  std::optional<int> synth_min_operands;
  std::optional<int> synth_max_operands;

  std::optional<double> train_ratio;
  std::optional<double> validation_ratio;

  std::optional<std::string> backend_kind;
  std::optional<std::string> backend_model_id;
  std::optional<double> teacher_base_accuracy;
  std::optional<double> teacher_temperature_slope;
  std::optional<double> teacher_accuracy_floor;
  std::optional<double> teacher_filler_rate;
  std::optional<std::string> policy_checkpoint;
  std::optional<std::string> remote_base_url;
  std::optional<std::string> remote_api_kind;
  std::optional<std::string> remote_model;
  std::optional<std::string> remote_auth_env;
  std::optional<std::string> cache_dir;

  std::optional<int> samples_per_temperature;
  std::optional<double> vote_threshold;
  std::optional<int> teacher_max_new_tokens;

  std::optional<int> embed_dim;
  std::optional<int> hidden_dim;

  std::optional<double> sft_learning_rate;
  std::optional<int> sft_batch_size;
  std::optional<int> sft_epochs;
  std::optional<bool> unfiltered_baseline;

  std::optional<int> student_samples;
  std::optional<double> student_temperature;
  std::optional<int> student_max_new_tokens;
  std::optional<double> teacher_share_ratio;
  std::optional<double> rm_classification_weight;
  std::optional<double> rm_learning_rate;
  std::optional<int> rm_batch_groups;
  std::optional<int> rm_max_epochs;
  std::optional<int> rm_patience;

  std::optional<double> ppo_learning_rate;
  std::optional<double> ppo_clip_epsilon;
  std::optional<double> ppo_kl_coefficient;
  std::optional<double> ppo_value_coefficient;
  std::optional<int> ppo_rollouts_per_update;
  std::optional<int> ppo_update_epochs;
  std::optional<int> ppo_episode_budget;
  std::optional<double> ppo_rollout_temperature;
  std::optional<int> ppo_max_new_tokens;
  std::optional<int> ppo_eval_interval;
  std::optional<int> ppo_patience_evals;
  std::optional<double> ppo_kl_guard;
  std::optional<double> missing_answer_penalty;
  std::optional<std::string> wrong_answer_mode;
  std::optional<bool> ppo_from_base;

  std::optional<int> eval_max_new_tokens;
};

template <typename T, typename U>
void apply_one(const std::optional<T>& src, U& dst) {
  if (src.has_value()) dst = *src;
}

void apply_overrides(const Overrides& o, PipelineConfig& c) {
  apply_one(o.run_dir, c.run_dir);
  apply_one(o.master_seed, c.master_seed);
  apply_one(o.task, c.task);
  apply_one(o.queries_file, c.queries_file);
  apply_one(o.prompt_template, c.prompt_template);
  apply_one(o.synth_query_count, c.synth.query_count);
  apply_one(o.synth_min_operands, c.synth.min_operands);
  apply_one(o.synth_max_operands, c.synth.max_operands);
  apply_one(o.train_ratio, c.train_ratio);
  apply_one(o.validation_ratio, c.validation_ratio);
  apply_one(o.backend_kind, c.teacher.kind);
  apply_one(o.backend_model_id, c.teacher.model_id);
  apply_one(o.teacher_base_accuracy, c.teacher.teacher.base_accuracy);
  apply_one(o.teacher_temperature_slope, c.teacher.teacher.temperature_slope);
  apply_one(o.teacher_accuracy_floor, c.teacher.teacher.accuracy_floor);
  apply_one(o.teacher_filler_rate, c.teacher.teacher.filler_rate);
  apply_one(o.policy_checkpoint, c.teacher.policy_checkpoint);
  apply_one(o.remote_base_url, c.teacher.remote.base_url);
  apply_one(o.remote_api_kind, c.teacher.remote.api_kind);
  apply_one(o.remote_model, c.teacher.remote.model);
  apply_one(o.remote_auth_env, c.teacher.remote.auth_env);
  apply_one(o.cache_dir, c.teacher.cache_dir);
  apply_one(o.samples_per_temperature, c.schedule.samples_per_temperature);
  apply_one(o.vote_threshold, c.vote_threshold);
  apply_one(o.teacher_max_new_tokens, c.teacher_max_new_tokens);
  apply_one(o.embed_dim, c.embed_dim);
  apply_one(o.hidden_dim, c.hidden_dim);
  apply_one(o.sft_learning_rate, c.sft.learning_rate);
  apply_one(o.sft_batch_size, c.sft.batch_size);
  apply_one(o.sft_epochs, c.sft.epochs);
  apply_one(o.unfiltered_baseline, c.train_unfiltered_baseline);
  apply_one(o.student_samples, c.student_samples);
  apply_one(o.student_temperature, c.student_temperature);
  apply_one(o.student_max_new_tokens, c.student_max_new_tokens);
  apply_one(o.teacher_share_ratio, c.teacher_share_ratio);
  apply_one(o.rm_classification_weight, c.rm.classification_weight);
  apply_one(o.rm_learning_rate, c.rm.learning_rate);
  apply_one(o.rm_batch_groups, c.rm.batch_groups);
  apply_one(o.rm_max_epochs, c.rm.max_epochs);
  apply_one(o.rm_patience, c.rm.patience);
  apply_one(o.ppo_learning_rate, c.ppo.learning_rate);
  apply_one(o.ppo_clip_epsilon, c.ppo.clip_epsilon);
  apply_one(o.ppo_kl_coefficient, c.ppo.kl_coefficient);
  apply_one(o.ppo_value_coefficient, c.ppo.value_coefficient);
  apply_one(o.ppo_rollouts_per_update, c.ppo.rollouts_per_update);
  apply_one(o.ppo_update_epochs, c.ppo.update_epochs);
  apply_one(o.ppo_episode_budget, c.ppo.episode_budget);
  apply_one(o.ppo_rollout_temperature, c.ppo.rollout_temperature);
  apply_one(o.ppo_max_new_tokens, c.ppo.max_new_tokens);
  apply_one(o.ppo_eval_interval, c.ppo.eval_interval_updates);
  apply_one(o.ppo_patience_evals, c.ppo.patience_evals);
  apply_one(o.ppo_kl_guard, c.ppo.kl_guard);
  apply_one(o.missing_answer_penalty, c.ppo.shaping.missing_answer_penalty);
  apply_one(o.wrong_answer_mode, c.ppo.shaping.wrong_answer_mode);
  apply_one(o.ppo_from_base, c.ppo_from_base);
  apply_one(o.eval_max_new_tokens, c.eval_max_new_tokens);
}

void add_common_options(CLI::App* cmd, std::string& config_path, Overrides& o) {
  cmd->add_option("-c,--config", config_path, "JSON config file");
  cmd->add_option("--run-dir", o.run_dir, "run directory for stage artifacts");
  cmd->add_option("--master-seed", o.master_seed, "seed every stage stream derives from");

  cmd->add_option("--task", o.task, "task kind: synthetic | file");
  cmd->add_option("--queries-file", o.queries_file, "query JSONL for task=file");
  cmd->add_option("--prompt-template", o.prompt_template,
                  "identity | gsm8k | mmlu");
  cmd->add_option("--synth-query-count", o.synth_query_count);
  cmd->add_option("--synth-min-operands", o.synth_min_operands);
  cmd->add_option("--synth-max-operands", o.synth_max_operands);

  cmd->add_option("--train-ratio", o.train_ratio);
  cmd->add_option("--validation-ratio", o.validation_ratio);

  cmd->add_option("--backend-kind", o.backend_kind,
                  "teacher backend: simulated | policy | remote");
  cmd->add_option("--backend-model-id", o.backend_model_id);
  cmd->add_option("--teacher-base-accuracy", o.teacher_base_accuracy);
  cmd->add_option("--teacher-temperature-slope", o.teacher_temperature_slope);
  cmd->add_option("--teacher-accuracy-floor", o.teacher_accuracy_floor);
  cmd->add_option("--teacher-filler-rate", o.teacher_filler_rate);
  cmd->add_option("--policy-checkpoint", o.policy_checkpoint,
                  "checkpoint file for backend-kind=policy");
  cmd->add_option("--remote-base-url", o.remote_base_url);
  cmd->add_option("--remote-api-kind", o.remote_api_kind,
                  "completions | chat");
  cmd->add_option("--remote-model", o.remote_model);
  cmd->add_option("--remote-auth-env", o.remote_auth_env,
                  "env var holding the bearer token; empty disables auth");
  cmd->add_option("--cache-dir", o.cache_dir, "on-disk sample cache");

  cmd->add_option("--samples-per-temperature", o.samples_per_temperature);
  cmd->add_option("--vote-threshold", o.vote_threshold,
                  "adopt only when support/total strictly exceeds this");
  cmd->add_option("--teacher-max-new-tokens", o.teacher_max_new_tokens);

  cmd->add_option("--embed-dim", o.embed_dim);
  cmd->add_option("--hidden-dim", o.hidden_dim);

  cmd->add_option("--sft-learning-rate", o.sft_learning_rate);
  cmd->add_option("--sft-batch-size", o.sft_batch_size);
  cmd->add_option("--sft-epochs", o.sft_epochs);
  cmd->add_option("--unfiltered-baseline", o.unfiltered_baseline,
                  "also fine-tune on unfiltered teacher records (0|1)");

  cmd->add_option("--student-samples", o.student_samples);
  cmd->add_option("--student-temperature", o.student_temperature);
  cmd->add_option("--student-max-new-tokens", o.student_max_new_tokens);
  cmd->add_option("--teacher-share-ratio", o.teacher_share_ratio);
  cmd->add_option("--rm-classification-weight", o.rm_classification_weight);
  cmd->add_option("--rm-learning-rate", o.rm_learning_rate);
  cmd->add_option("--rm-batch-groups", o.rm_batch_groups);
  cmd->add_option("--rm-max-epochs", o.rm_max_epochs);
  cmd->add_option("--rm-patience", o.rm_patience);

  cmd->add_option("--ppo-learning-rate", o.ppo_learning_rate);
  cmd->add_option("--ppo-clip-epsilon", o.ppo_clip_epsilon);
  cmd->add_option("--ppo-kl-coefficient", o.ppo_kl_coefficient);
  cmd->add_option("--ppo-value-coefficient", o.ppo_value_coefficient);
  cmd->add_option("--ppo-rollouts-per-update", o.ppo_rollouts_per_update);
  cmd->add_option("--ppo-update-epochs", o.ppo_update_epochs);
  cmd->add_option("--ppo-episode-budget", o.ppo_episode_budget);
  cmd->add_option("--ppo-rollout-temperature", o.ppo_rollout_temperature);
  cmd->add_option("--ppo-max-new-tokens", o.ppo_max_new_tokens);
  cmd->add_option("--ppo-eval-interval", o.ppo_eval_interval);
  cmd->add_option("--ppo-patience-evals", o.ppo_patience_evals);
  cmd->add_option("--ppo-kl-guard", o.ppo_kl_guard,
                  "abort when mean per-token KL exceeds this");
  cmd->add_option("--missing-answer-penalty", o.missing_answer_penalty);
  cmd->add_option("--wrong-answer-mode", o.wrong_answer_mode,
                  "clamp-min-zero | minus-one | none");
  cmd->add_option("--ppo-from-base", o.ppo_from_base,
                  "also optimize from the random-init policy (0|1)");

  cmd->add_option("--eval-max-new-tokens", o.eval_max_new_tokens);
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  return json::parse(in);
}

void print_stage_summary(const std::string& stage, const PipelineConfig& c) {
  const std::string dir = c.run_dir;
  if (stage == "distill") {
    json s = read_json(dir + "/distill_stats.json");
    std::printf("distill: %d queries, %d teacher records, %d labeled, %d vote-failed, %d pairs kept\n",
                s.value("query_count", 0), s.value("teacher_records", 0),
                s.value("labeled_queries", 0), s.value("failed_queries", 0),
                s.value("sft_pairs", 0));
  } else if (stage == "warmup") {
    json m = read_json(dir + "/metrics/warmup.json");
    std::printf("warmup: %zu pairs, best epoch %d, validation accuracy %.3f\n",
                (size_t)m.value("pair_count", 0), m.value("best_epoch", 0),
                m.value("best_validation_accuracy", 0.0));
  } else if (stage == "train-rm") {
    json m = read_json(dir + "/metrics/rm.json");
    const json& bv = m.at("best_validation");
    std::printf("train-rm: %d train groups, ranking accuracy %.3f (correct/incorrect) %.3f (teacher/student)\n",
                m.value("train_groups", 0),
                bv.value("correct_vs_incorrect", 0.0),
                bv.value("teacher_vs_student", 0.0));
  } else if (stage == "ppo") {
    json m = read_json(dir + "/metrics/ppo.json");
    std::printf("ppo: %d episodes, best update %d, validation accuracy %.3f%s\n",
                m.value("episodes_used", 0), m.value("best_update", 0),
                m.value("best_validation_accuracy", 0.0),
                m.value("stopped_early", false) ? " (stopped early)" : "");
  } else if (stage == "eval") {
    json e = read_json(dir + "/eval.json");
    for (const json& row : e.at("rows"))
      std::printf("eval: %-16s %.3f (%d/%d)\n",
                  row.at("name").get<std::string>().c_str(),
                  row.at("accuracy").get<double>(),
                  row.at("correct").get<int>(), row.at("evaluated").get<int>());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-stage teacher-to-student distillation pipeline"};
  app.set_version_flag("--version", drd::kToolVersion);
  app.require_subcommand(1);

  std::string config_path;
  Overrides o;
  drd::pipeline::AblationSpec ablation;

  const std::vector<std::string> stages = {"distill", "warmup", "train-rm",
                                           "ppo", "eval", "ablate", "report"};
  CLI::App* ablate_cmd = nullptr;
  for (const std::string& s : stages) {
    CLI::App* cmd = app.add_subcommand(s);
    add_common_options(cmd, config_path, o);
    if (s == "ablate") {
      ablate_cmd = cmd;
      cmd->add_option("--classification-weights", ablation.classification_weights,
                      "scorer classification-loss weights to sweep");
      cmd->add_option("--teacher-share-ratios", ablation.teacher_share_ratios,
                      "teacher shares per contrastive group to sweep");
      cmd->add_option("--wrong-answer-modes", ablation.wrong_answer_modes,
                      "reward corrections to sweep");
    }
  }
  app.get_subcommand("distill")->description("sample the teacher and build pseudo-labeled datasets");
  app.get_subcommand("warmup")->description("fine-tune the student on vote-filtered responses");
  app.get_subcommand("train-rm")->description("collect student samples and train the scorer");
  app.get_subcommand("ppo")->description("shaped-reward policy optimization");
  app.get_subcommand("eval")->description("greedy test accuracy for every variant");
  app.get_subcommand("ablate")->description("re-run scorer+ppo+eval under knob sweeps");
  app.get_subcommand("report")->description("render report.md / report.csv from run artifacts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;  // bad flags are config errors
  }

  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    PipelineConfig config = drd::pipeline::load_config(config_path);
    apply_overrides(o, config);

    if (stage == "distill") {
      drd::pipeline::run_distill(config);
    } else if (stage == "warmup") {
      drd::pipeline::run_warmup(config);
    } else if (stage == "train-rm") {
      drd::pipeline::run_train_rm(config);
    } else if (stage == "ppo") {
      drd::pipeline::run_ppo(config);
    } else if (stage == "eval") {
      drd::pipeline::run_eval(config);
    } else if (stage == "ablate") {
      if (ablation.classification_weights.empty() &&
          ablation.teacher_share_ratios.empty() &&
          ablation.wrong_answer_modes.empty())
        throw drd::ConfigError(
            "ablate needs at least one of --classification-weights, "
            "--teacher-share-ratios, --wrong-answer-modes");
      drd::pipeline::run_ablate(config, ablation);
      std::printf("ablate: summary at %s/ablations/summary.json\n",
                  config.run_dir.c_str());
    } else if (stage == "report") {
      drd::pipeline::run_report(config);
      std::printf("report: %s/report.md\n", config.run_dir.c_str());
    }
    if (stage != "ablate" && stage != "report") print_stage_summary(stage, config);
    (void)ablate_cmd;
  } catch (const drd::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const drd::MissingDependencyError& e) {
    std::fprintf(stderr, "missing dependency: %s\n", e.what());
    return 3;
  } catch (const drd::NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
