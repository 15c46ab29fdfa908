#include "drd/sft.hpp"

#include <algorithm>
#include <cmath>

#include "drd/error.hpp"
#include "drd/evaluate.hpp"
#include "drd/rng.hpp"

namespace drd::sft {

numerics::Value nll_loss(numerics::Tape& tape, const models::PolicyModel& policy,
                         std::span<const int> prompt, std::span<const int> response) {
  if (response.empty()) throw ConfigError("nll_loss: empty response");
  std::vector<numerics::Value> logits = policy.response_logits(tape, prompt, response);
  std::vector<numerics::Value> losses;
  losses.reserve(response.size());
  for (std::size_t i = 0; i < response.size(); ++i)
    losses.push_back(tape.softmax_cross_entropy(
        logits[i], static_cast<std::size_t>(response[i])));
  return tape.mean(tape.stack(losses));
}

SftResult train_sft(const models::PolicyModel& init,
                    const std::vector<distill::SftPair>& pairs,
                    const std::vector<corpus::Query>& validation_queries,
                    const std::unordered_map<std::string, std::string>& validation_answers,
                    const SftConfig& config) {
  if (pairs.empty()) throw ConfigError("train_sft: empty dataset");
  if (config.batch_size <= 0) throw ConfigError("train_sft: batch_size must be positive");
  if (config.epochs < 0) throw ConfigError("train_sft: epochs must be >= 0");

  const auto& vocab = init.vocab();
  struct Tokenized {
    std::vector<int> prompt;
    std::vector<int> response;
  };
  std::vector<Tokenized> data;
  data.reserve(pairs.size());
  int skipped = 0;
  for (const auto& pair : pairs) {
    Tokenized t;
    t.prompt = vocab.tokenize(pair.query_text);
    t.response = vocab.tokenize(pair.response_text);
    t.response.push_back(models::Vocabulary::kEos);
    if (static_cast<int>(t.prompt.size() + t.response.size()) >
        config.max_sequence_length) {
      ++skipped;
      continue;
    }
    data.push_back(std::move(t));
  }
  if (data.empty())
    throw ConfigError("train_sft: every pair exceeds max_sequence_length");

  SftResult result{init.clone(), {}, 0, 0.0, skipped};

  models::PolicyModel policy = init.clone();
  numerics::AdamConfig adam_cfg;
  adam_cfg.learning_rate = config.learning_rate;
  adam_cfg.grad_clip_norm = config.grad_clip_norm;
  numerics::AdamState adam = numerics::make_adam_state(policy.params());

  auto evaluate_now = [&](const models::PolicyModel& m) {
    return evaluate::greedy_eval(m, validation_queries, validation_answers,
                                 config.eval_max_new_tokens)
        .accuracy;
  };

  double best_acc = evaluate_now(policy);
  result.epochs.push_back({0, 0.0, best_acc});
  result.best_epoch = 0;
  result.best_validation_accuracy = best_acc;

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    adam_cfg.learning_rate =
        config.learning_rate * std::pow(config.lr_decay, epoch - 1);
    Rng rng(derive_seed(config.seed, "sft-epoch",
                        static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(
          order.size(), start + static_cast<std::size_t>(config.batch_size));
      numerics::Tape tape;
      std::vector<numerics::Value> pair_losses;
      pair_losses.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const Tokenized& t = data[order[i]];
        pair_losses.push_back(nll_loss(tape, policy, t.prompt, t.response));
      }
      numerics::Value batch_loss = tape.mean(tape.stack(pair_losses));
      policy.params().zero_grad();
      tape.backward(batch_loss);
      numerics::adam_step(policy.params(), adam, adam_cfg);
      loss_sum += batch_loss.scalar() * static_cast<double>(end - start);
      loss_count += end - start;
    }

    const double mean_loss = loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : 0.0;
    const double acc = evaluate_now(policy);
    result.epochs.push_back({epoch, mean_loss, acc});
    if (acc > best_acc) {
      best_acc = acc;
      result.best_epoch = epoch;
      result.best_validation_accuracy = acc;
      result.model = policy.clone();
    }
  }
  return result;
}

}  // namespace drd::sft
