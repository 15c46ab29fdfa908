#include "drd/rewardmodel.hpp"

#include <algorithm>
#include <cmath>

#include "drd/error.hpp"
#include "drd/rng.hpp"

namespace drd::rm {
namespace {

std::vector<int> response_tokens(const models::Vocabulary& vocab,
                                 const std::string& text) {
  std::vector<int> toks = vocab.tokenize(text);
  toks.push_back(models::Vocabulary::kEos);
  return toks;
}

}  // namespace

GroupScores score_group(numerics::Tape& tape, const models::RewardModel& model,
                        const distill::RewardGroup& group) {
  const auto& vocab = model.vocab();
  const std::vector<int> prompt = vocab.tokenize(group.query_text);
  GroupScores scores;
  auto score_all = [&](const std::vector<std::string>& texts,
                       std::vector<numerics::Value>& out) {
    out.reserve(texts.size());
    for (const auto& text : texts)
      out.push_back(model.score_taped(tape, prompt, response_tokens(vocab, text)));
  };
  score_all(group.student_correct, scores.student_correct);
  score_all(group.student_incorrect, scores.student_incorrect);
  score_all(group.teacher_correct, scores.teacher_correct);
  return scores;
}

numerics::Value classification_loss(numerics::Tape& tape, const GroupScores& scores) {
  // -log sigmoid(r) for positives, -log sigmoid(-r) for negatives
  std::vector<numerics::Value> terms;
  terms.reserve(scores.student_correct.size() + scores.student_incorrect.size() +
                scores.teacher_correct.size());
  for (const auto& r : scores.student_correct)
    terms.push_back(tape.scale(tape.log_sigmoid(r), -1.0));
  for (const auto& r : scores.teacher_correct)
    terms.push_back(tape.scale(tape.log_sigmoid(r), -1.0));
  for (const auto& r : scores.student_incorrect)
    terms.push_back(tape.scale(tape.log_sigmoid(tape.scale(r, -1.0)), -1.0));
  if (terms.empty()) throw ConfigError("classification_loss: empty group");
  return tape.mean(tape.stack(terms));
}

numerics::Value preference_loss(numerics::Tape& tape, const GroupScores& scores) {
  const std::size_t n = scores.student_correct.size();
  const std::size_t t = scores.teacher_correct.size();
  if (n == 0 || t == 0 || scores.student_incorrect.size() != n)
    throw ConfigError("preference_loss: malformed group");
  std::vector<numerics::Value> terms;
  terms.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    numerics::Value upper = tape.scale(
        tape.log_sigmoid(tape.sub(scores.teacher_correct[i % t],
                                  scores.student_correct[i])),
        -1.0);
    numerics::Value lower = tape.scale(
        tape.log_sigmoid(tape.sub(scores.student_correct[i],
                                  scores.student_incorrect[i])),
        -1.0);
    terms.push_back(tape.add(upper, lower));
  }
  return tape.mean(tape.stack(terms));
}

numerics::Value group_objective(numerics::Tape& tape, const GroupScores& scores,
                                double classification_weight) {
  numerics::Value pref = preference_loss(tape, scores);
  numerics::Value cls = classification_loss(tape, scores);
  return tape.add(pref, tape.scale(cls, classification_weight));
}

RmEval eval_rm(const models::RewardModel& model,
               const std::vector<distill::RewardGroup>& groups) {
  RmEval eval;
  int ordered = 0, teacher_ordered = 0, pairs = 0;
  for (const auto& g : groups) {
    const auto& vocab = model.vocab();
    const std::vector<int> prompt = vocab.tokenize(g.query_text);
    auto score_of = [&](const std::string& text) {
      return model.score(prompt, response_tokens(vocab, text));
    };
    std::vector<double> sp, sm, tp;
    for (const auto& s : g.student_correct) sp.push_back(score_of(s));
    for (const auto& s : g.student_incorrect) sm.push_back(score_of(s));
    for (const auto& s : g.teacher_correct) tp.push_back(score_of(s));
    const std::size_t n = std::min(sp.size(), sm.size());
    for (std::size_t i = 0; i < n; ++i) {
      ++pairs;
      if (sp[i] > sm[i]) ++ordered;
      if (!tp.empty() && tp[i % tp.size()] > sp[i]) ++teacher_ordered;
    }
  }
  eval.pair_count = pairs;
  if (pairs > 0) {
    eval.correct_vs_incorrect = static_cast<double>(ordered) / pairs;
    eval.teacher_vs_student = static_cast<double>(teacher_ordered) / pairs;
  }
  return eval;
}

RmResult train_rm(const models::RewardModel& init,
                  const std::vector<distill::RewardGroup>& train_groups,
                  const std::vector<distill::RewardGroup>& validation_groups,
                  const RmConfig& config) {
  if (train_groups.empty()) throw ConfigError("train_rm: no training groups");
  if (config.batch_groups <= 0)
    throw ConfigError("train_rm: batch_groups must be positive");

  models::RewardModel model = init.clone();
  numerics::AdamConfig adam_cfg;
  adam_cfg.learning_rate = config.learning_rate;
  adam_cfg.grad_clip_norm = config.grad_clip_norm;
  numerics::AdamState adam = numerics::make_adam_state(model.params());

  RmResult result{init.clone(), {}, 0, eval_rm(init, validation_groups)};
  result.epochs.push_back({0, 0.0, result.best_validation});

  auto better = [](const RmEval& a, const RmEval& b) {
    if (a.correct_vs_incorrect != b.correct_vs_incorrect)
      return a.correct_vs_incorrect > b.correct_vs_incorrect;
    return a.teacher_vs_student > b.teacher_vs_student;
  };

  std::vector<std::size_t> order(train_groups.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  int since_best = 0;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    adam_cfg.learning_rate =
        config.learning_rate * std::pow(config.lr_decay, epoch - 1);
    Rng rng(derive_seed(config.seed, "rm-epoch", static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_groups)) {
      const std::size_t end = std::min(
          order.size(), start + static_cast<std::size_t>(config.batch_groups));
      numerics::Tape tape;
      std::vector<numerics::Value> group_losses;
      group_losses.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        GroupScores scores = score_group(tape, model, train_groups[order[i]]);
        group_losses.push_back(
            group_objective(tape, scores, config.classification_weight));
      }
      numerics::Value batch_loss = tape.mean(tape.stack(group_losses));
      model.params().zero_grad();
      tape.backward(batch_loss);
      numerics::adam_step(model.params(), adam, adam_cfg);
      loss_sum += batch_loss.scalar() * static_cast<double>(end - start);
      loss_count += end - start;
    }

    RmEpochMetrics metrics;
    metrics.epoch = epoch;
    metrics.mean_loss = loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : 0.0;
    metrics.validation = eval_rm(model, validation_groups);
    result.epochs.push_back(metrics);

    if (better(metrics.validation, result.best_validation)) {
      result.best_validation = metrics.validation;
      result.best_epoch = epoch;
      result.model = model.clone();
      since_best = 0;
    } else {
      ++since_best;
      if (config.patience > 0 && since_best >= config.patience) break;
    }
  }
  return result;
}

}  // namespace drd::rm
