#include "drd/rl.hpp"

#include <algorithm>
#include <cmath>

#include "drd/error.hpp"
#include "drd/evaluate.hpp"
#include "drd/extraction.hpp"
#include "drd/rng.hpp"

namespace drd::rl {

double shape_reward(double score, const std::optional<std::string>& extracted,
                    const std::optional<std::string>& adopted_answer,
                    const ShapedRewardConfig& config) {
  if (!extracted.has_value()) return config.missing_answer_penalty;
  if (!adopted_answer.has_value()) return score;
  if (extraction::answers_equal(*extracted, *adopted_answer)) return score;
  if (config.wrong_answer_mode == "clamp-min-zero") return std::min(score, 0.0);
  if (config.wrong_answer_mode == "minus-one") return score - 1.0;
  if (config.wrong_answer_mode == "none") return score;
  throw ConfigError("unknown wrong_answer_mode '" + config.wrong_answer_mode +
                    "' (expected clamp-min-zero, minus-one, or none)");
}

GaeResult compute_gae(const std::vector<double>& values, double terminal_reward,
                      double gamma, double lambda) {
  const std::size_t n = values.size();
  GaeResult out;
  out.advantages.resize(n);
  out.value_targets.resize(n);
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double next_value = (i + 1 < n) ? values[i + 1] : 0.0;
    const double reward = (i + 1 == n) ? terminal_reward : 0.0;
    const double delta = reward + gamma * next_value - values[i];
    running = delta + gamma * lambda * running;
    out.advantages[i] = running;
    out.value_targets[i] = running + values[i];
  }
  return out;
}

numerics::Value ppo_loss(numerics::Tape& tape, const PpoLossTerms& terms,
                         const PpoConfig& config) {
  const std::size_t n = terms.new_logprobs.size();
  if (n == 0) throw ConfigError("ppo_loss: no tokens");
  if (terms.behavior_logprobs.size() != n || terms.advantages.size() != n ||
      terms.values.size() != n || terms.value_targets.size() != n ||
      terms.kl_terms.size() != n)
    throw ConfigError("ppo_loss: term lengths disagree");

  std::vector<numerics::Value> surrogate, value_sq;
  surrogate.reserve(n);
  value_sq.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    numerics::Value ratio = tape.exp_op(
        tape.add_scalar(terms.new_logprobs[i], -terms.behavior_logprobs[i]));
    numerics::Value unclipped = tape.scale(ratio, terms.advantages[i]);
    numerics::Value clipped = tape.scale(
        tape.clip(ratio, 1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon),
        terms.advantages[i]);
    surrogate.push_back(tape.minimum(unclipped, clipped));

    numerics::Value err = tape.add_scalar(terms.values[i], -terms.value_targets[i]);
    value_sq.push_back(tape.mul(err, err));
  }
  numerics::Value policy_term =
      tape.scale(tape.mean(tape.stack(surrogate)), -1.0);
  numerics::Value kl_term =
      tape.scale(tape.mean(tape.stack(terms.kl_terms)), config.kl_coefficient);
  numerics::Value value_term =
      tape.scale(tape.mean(tape.stack(value_sq)), config.value_coefficient);
  return tape.add(tape.add(policy_term, kl_term), value_term);
}

void build_ppo_terms(numerics::Tape& tape, const models::PolicyModel& policy,
                     const std::vector<Rollout>& rollouts, PpoLossTerms& terms) {
  if (!models::has_value_head(policy))
    throw ConfigError("build_ppo_terms: policy has no value head");
  auto& ps = const_cast<numerics::ParamStore&>(policy.params());
  numerics::Value w_val = tape.leaf(ps.at("w_val"));
  numerics::Value b_val = tape.leaf(ps.at("b_val"));

  for (const auto& rollout : rollouts) {
    if (rollout.response.empty()) continue;
    const std::size_t len = rollout.response.size();
    if (rollout.behavior_logprobs.size() != len ||
        rollout.behavior_logdists.size() != len ||
        rollout.advantages.size() != len || rollout.value_targets.size() != len)
      throw ConfigError("build_ppo_terms: rollout field lengths disagree");

    std::vector<numerics::Value> hiddens;
    std::vector<numerics::Value> logits =
        policy.response_logits(tape, rollout.prompt, rollout.response, &hiddens);
    for (std::size_t t = 0; t < len; ++t) {
      terms.new_logprobs.push_back(tape.scale(
          tape.softmax_cross_entropy(logits[t],
                                     static_cast<std::size_t>(rollout.response[t])),
          -1.0));
      terms.behavior_logprobs.push_back(rollout.behavior_logprobs[t]);
      terms.advantages.push_back(rollout.advantages[t]);
      terms.values.push_back(tape.add(tape.matmul(w_val, hiddens[t]), b_val));
      terms.value_targets.push_back(rollout.value_targets[t]);

      // exact KL(new || behavior) = sum_v p_new(v) * (lp_new(v) - lp_old(v))
      numerics::Value lp_new = tape.log_softmax(logits[t]);
      numerics::Value lp_old = tape.constant(
          rollout.behavior_logdists[t],
          numerics::Shape{rollout.behavior_logdists[t].size(), 1});
      terms.kl_terms.push_back(
          tape.sum(tape.mul(tape.exp_op(lp_new), tape.sub(lp_new, lp_old))));
    }
  }
}

namespace {

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Untaped mean per-token KL(policy || behavior) over the batch, for the guard
// and metrics.
double batch_kl(const models::PolicyModel& policy,
                const std::vector<Rollout>& rollouts) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& rollout : rollouts) {
    if (rollout.response.empty()) continue;
    auto dists = policy.response_log_distributions(rollout.prompt, rollout.response);
    for (std::size_t t = 0; t < dists.size(); ++t) {
      const auto& lp_new = dists[t];
      const auto& lp_old = rollout.behavior_logdists[t];
      double kl = 0.0;
      for (std::size_t v = 0; v < lp_new.size(); ++v)
        kl += std::exp(lp_new[v]) * (lp_new[v] - lp_old[v]);
      sum += kl;
      ++count;
    }
  }
  return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

}  // namespace

PpoResult train_ppo(
    const models::PolicyModel& init, const models::RewardModel& reward,
    const std::vector<corpus::Query>& pool_queries,
    const std::unordered_map<std::string, std::string>& adopted_answers,
    const std::vector<corpus::Query>& validation_queries,
    const std::unordered_map<std::string, std::string>& validation_answers,
    const PpoConfig& config) {
  if (pool_queries.empty()) throw ConfigError("train_ppo: empty query pool");
  if (config.rollouts_per_update <= 0 || config.update_epochs <= 0)
    throw ConfigError("train_ppo: rollouts_per_update and update_epochs must be positive");
  if (init.vocab() != reward.vocab())
    throw ConfigError("train_ppo: policy and scorer vocabularies differ");

  models::PolicyModel policy = init.clone();
  models::ensure_value_head(policy);

  numerics::AdamConfig adam_cfg;
  adam_cfg.learning_rate = config.learning_rate;
  numerics::AdamState adam = numerics::make_adam_state(policy.params());

  const auto& vocab = policy.vocab();
  std::vector<std::vector<int>> prompt_tokens;
  prompt_tokens.reserve(pool_queries.size());
  for (const auto& q : pool_queries) prompt_tokens.push_back(vocab.tokenize(q.text));

  auto evaluate_now = [&](const models::PolicyModel& m) {
    return evaluate::greedy_eval(m, validation_queries, validation_answers,
                                 config.eval_max_new_tokens)
        .accuracy;
  };

  PpoResult result{policy.clone(), {}, evaluate_now(policy), 0, 0, false};

  std::vector<std::size_t> pool_order(pool_queries.size());
  for (std::size_t i = 0; i < pool_order.size(); ++i) pool_order[i] = i;
  std::size_t pool_cursor = pool_order.size();  // forces a shuffle first
  std::uint64_t pool_pass = 0;

  int episodes = 0;
  int update = 0;
  int evals_since_best = 0;

  while (episodes < config.episode_budget) {
    ++update;
    // rollout phase: frozen snapshot of the current policy
    models::PolicyModel behavior = policy.clone();
    std::vector<Rollout> rollouts;
    const int batch = std::min(config.rollouts_per_update,
                               config.episode_budget - episodes);
    rollouts.reserve(static_cast<std::size_t>(batch));
    std::vector<double> shaped_all, raw_all;
    for (int b = 0; b < batch; ++b) {
      if (pool_cursor >= pool_order.size()) {
        Rng shuffler(derive_seed(config.seed, "ppo-pool", pool_pass++));
        shuffler.shuffle(pool_order);
        pool_cursor = 0;
      }
      const std::size_t qi = pool_order[pool_cursor++];
      const corpus::Query& query = pool_queries[qi];

      Rollout r;
      r.query_id = query.id;
      r.prompt = prompt_tokens[qi];
      Rng rng(derive_seed(config.seed, "ppo-rollout",
                          static_cast<std::uint64_t>(episodes)));
      auto sampled = behavior.sample(r.prompt, config.rollout_temperature,
                                     config.max_new_tokens, rng);
      r.response = std::move(sampled.tokens);
      ++episodes;

      const std::string text = vocab.detokenize(r.response);
      auto extracted = extraction::extract_final_answer(text);
      std::optional<std::string> extracted_canonical;
      if (extracted.has_value()) extracted_canonical = extracted->canonical;
      std::optional<std::string> adopted;
      if (auto it = adopted_answers.find(query.id); it != adopted_answers.end())
        adopted = it->second;

      r.raw_score = reward.score(r.prompt, r.response);
      r.shaped_reward =
          shape_reward(r.raw_score, extracted_canonical, adopted, config.shaping);
      shaped_all.push_back(r.shaped_reward);
      raw_all.push_back(r.raw_score);
      if (r.response.empty()) {
        rollouts.push_back(std::move(r));
        continue;
      }

      // temperature-1 importance baseline; bit-identical to the taped path on
      // the first update epoch, so ratios start at exactly 1
      r.behavior_logprobs = behavior.sequence_logprob(r.prompt, r.response);
      r.behavior_logdists =
          behavior.response_log_distributions(r.prompt, r.response);
      GaeResult gae =
          compute_gae(models::value_estimates(behavior, r.prompt, r.response),
                      r.shaped_reward, config.gamma, config.gae_lambda);
      r.advantages = std::move(gae.advantages);
      r.value_targets = std::move(gae.value_targets);
      rollouts.push_back(std::move(r));
    }

    // update phase
    double last_loss = 0.0;
    for (int pass = 0; pass < config.update_epochs; ++pass) {
      numerics::Tape tape;
      PpoLossTerms terms;
      build_ppo_terms(tape, policy, rollouts, terms);
      if (terms.new_logprobs.empty()) break;  // all responses empty
      numerics::Value loss = ppo_loss(tape, terms, config);
      policy.params().zero_grad();
      tape.backward(loss);
      numerics::adam_step(policy.params(), adam, adam_cfg);
      last_loss = loss.scalar();
    }

    PpoUpdateMetrics metrics;
    metrics.update = update;
    metrics.episodes = episodes;
    metrics.mean_shaped_reward = mean_of(shaped_all);
    metrics.mean_raw_score = mean_of(raw_all);
    metrics.loss = last_loss;
    metrics.mean_kl = batch_kl(policy, rollouts);
    if (metrics.mean_kl > config.kl_guard)
      throw NumericalError(
          "policy update diverged: mean per-token KL " +
          std::to_string(metrics.mean_kl) + " exceeds guard " +
          std::to_string(config.kl_guard) + " at update " + std::to_string(update));

    if (update % config.eval_interval_updates == 0 ||
        episodes >= config.episode_budget) {
      const double acc = evaluate_now(policy);
      metrics.validation_accuracy = acc;
      if (acc > result.best_validation_accuracy) {
        result.best_validation_accuracy = acc;
        result.best_update = update;
        result.model = policy.clone();
        evals_since_best = 0;
      } else {
        ++evals_since_best;
        if (config.patience_evals > 0 && evals_since_best >= config.patience_evals) {
          result.stopped_early = true;
          result.updates.push_back(metrics);
          break;
        }
      }
    }
    result.updates.push_back(metrics);
  }

  result.episodes_used = episodes;
  return result;
}

}  // namespace drd::rl
