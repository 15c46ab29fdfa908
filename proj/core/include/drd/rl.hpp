#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "drd/corpus.hpp"
#include "drd/models.hpp"
#include "drd/numerics.hpp"

namespace drd::rl {

// ---------------------------------------------------------------------------
// Terminal reward shaping

struct ShapedRewardConfig {
  // Reward when the response has no extractable answer, regardless of whether
  // the query has an adopted vote answer.
  double missing_answer_penalty = -5.0;
  // Applied when the extracted answer contradicts the adopted answer:
  //   clamp-min-zero  min(score, 0)
  //   minus-one       score - 1
  //   none            score unchanged
  std::string wrong_answer_mode = "clamp-min-zero";
};

// Branch semantics, exhaustively:
//   extracted absent                      -> missing_answer_penalty
//   no adopted answer (vote-failed query) -> score
//   extracted matches adopted             -> score
//   extracted contradicts adopted         -> per wrong_answer_mode
double shape_reward(double score, const std::optional<std::string>& extracted,
                    const std::optional<std::string>& adopted_answer,
                    const ShapedRewardConfig& config);

// ---------------------------------------------------------------------------
// Advantage estimation

struct GaeResult {
  std::vector<double> advantages;     // one per response token
  std::vector<double> value_targets;  // advantage + value estimate
};

// Generalized advantage estimation for an episode whose only reward arrives
// with the final token; the post-terminal value is 0.
GaeResult compute_gae(const std::vector<double>& values, double terminal_reward,
                      double gamma, double lambda);

// ---------------------------------------------------------------------------
// PPO

struct PpoConfig {
  double learning_rate = 3e-3;
  double clip_epsilon = 0.2;
  double kl_coefficient = 0.2;
  double value_coefficient = 0.1;
  double gamma = 1.0;
  double gae_lambda = 0.95;
  int rollouts_per_update = 32;
  int update_epochs = 4;
  int episode_budget = 20000;
  double rollout_temperature = 1.0;
  int max_new_tokens = 96;
  // Validation cadence and early stopping (in evaluation rounds); patience
  // <= 0 disables early stopping.
  int eval_interval_updates = 10;
  int patience_evals = 6;
  int eval_max_new_tokens = 96;
  // Abort when the post-update mean per-token divergence from the rollout
  // policy exceeds this.
  double kl_guard = 10.0;
  ShapedRewardConfig shaping;
  std::uint64_t seed = 0;
};

struct Rollout {
  std::string query_id;
  std::vector<int> prompt;
  std::vector<int> response;  // includes the end token when one was emitted
  // Per-token log-probability of the taken token under the rollout-time
  // policy at temperature 1 (importance-ratio baseline).
  std::vector<double> behavior_logprobs;
  // Full per-position log-distributions of the rollout-time policy, for the
  // exact divergence penalty.
  std::vector<std::vector<double>> behavior_logdists;
  double raw_score = 0.0;
  double shaped_reward = 0.0;
  std::vector<double> advantages;
  std::vector<double> value_targets;
};

// Per-token pieces the loss combines; built on the caller's tape so the loss
// itself is a pure differentiable function.
struct PpoLossTerms {
  std::vector<numerics::Value> new_logprobs;  // log pi(a_t|s_t), taped
  std::vector<double> behavior_logprobs;
  std::vector<double> advantages;
  std::vector<numerics::Value> values;        // taped value-head outputs
  std::vector<double> value_targets;
  std::vector<numerics::Value> kl_terms;      // taped per-token KL(new || behavior)
};

// Clipped-surrogate policy loss plus weighted divergence and value terms:
//   -mean(min(ratio * A, clip(ratio, 1-eps, 1+eps) * A))
//   + kl_coefficient * mean(kl) + value_coefficient * mean((v - target)^2)
numerics::Value ppo_loss(numerics::Tape& tape, const PpoLossTerms& terms,
                         const PpoConfig& config);

// Tapes logprobs, values, and divergence terms of `policy` for the rollout
// batch and appends them to `terms`. Rollouts with empty responses are
// skipped.
void build_ppo_terms(numerics::Tape& tape, const models::PolicyModel& policy,
                     const std::vector<Rollout>& rollouts, PpoLossTerms& terms);

struct PpoUpdateMetrics {
  int update = 0;
  int episodes = 0;             // cumulative
  double mean_shaped_reward = 0.0;
  double mean_raw_score = 0.0;
  double mean_kl = 0.0;         // post-update, vs rollout policy
  double loss = 0.0;            // last update epoch
  std::optional<double> validation_accuracy;
};

struct PpoResult {
  models::PolicyModel model;  // best validation checkpoint
  std::vector<PpoUpdateMetrics> updates;
  double best_validation_accuracy = 0.0;
  int best_update = 0;
  int episodes_used = 0;
  bool stopped_early = false;
};

// Policy optimization with a learned scorer and terminal reward shaping.
// Queries cycle through a seeded shuffle of the pool; the scorer never
// changes. Throws NumericalError when the divergence guard trips.
PpoResult train_ppo(
    const models::PolicyModel& init, const models::RewardModel& reward,
    const std::vector<corpus::Query>& pool_queries,
    const std::unordered_map<std::string, std::string>& adopted_answers,
    const std::vector<corpus::Query>& validation_queries,
    const std::unordered_map<std::string, std::string>& validation_answers,
    const PpoConfig& config);

}  // namespace drd::rl
