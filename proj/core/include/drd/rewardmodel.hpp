#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "drd/distillation.hpp"
#include "drd/models.hpp"
#include "drd/numerics.hpp"

namespace drd::rm {

struct RmConfig {
  // Weight of the correctness-classification term added to the ranking term.
  double classification_weight = 0.5;
  double learning_rate = 1e-3;
  // Per-epoch multiplicative decay on the learning rate; 1.0 keeps it constant.
  double lr_decay = 1.0;
  int batch_groups = 8;
  int max_epochs = 6;
  // Early stop after this many epochs without validation improvement;
  // <= 0 disables early stopping.
  int patience = 2;
  double grad_clip_norm = 1.0;
  std::uint64_t seed = 0;
};

// Scores for one contrastive group, taped for training or plain for eval.
struct GroupScores {
  std::vector<numerics::Value> student_correct;
  std::vector<numerics::Value> student_incorrect;
  std::vector<numerics::Value> teacher_correct;
};

GroupScores score_group(numerics::Tape& tape, const models::RewardModel& model,
                        const distill::RewardGroup& group);

// Binary cross-entropy of sigmoid(score) against 1 for correct members and 0
// for incorrect ones; mean over all members. At all-zero scores this is
// exactly log(2).
numerics::Value classification_loss(numerics::Tape& tape, const GroupScores& scores);

// Ranking term: for pair i, -log sigmoid(teacher[i % t] - student_correct[i])
// - log sigmoid(student_correct[i] - student_incorrect[i]), mean over pairs.
// At all-equal scores this is exactly 2 log(2).
numerics::Value preference_loss(numerics::Tape& tape, const GroupScores& scores);

// preference + classification_weight * classification.
numerics::Value group_objective(numerics::Tape& tape, const GroupScores& scores,
                                double classification_weight);

struct RmEval {
  // Fraction of index-matched (correct, incorrect) student pairs the model
  // orders correctly; ties count as failures.
  double correct_vs_incorrect = 0.0;
  // Fraction of (teacher, correct student) pairs with the teacher scored
  // strictly higher.
  double teacher_vs_student = 0.0;
  int pair_count = 0;
};

RmEval eval_rm(const models::RewardModel& model,
               const std::vector<distill::RewardGroup>& groups);

struct RmEpochMetrics {
  int epoch = 0;
  double mean_loss = 0.0;
  RmEval validation;
};

struct RmResult {
  models::RewardModel model;  // best validation checkpoint
  std::vector<RmEpochMetrics> epochs;
  int best_epoch = 0;
  RmEval best_validation;
};

// Trains the scorer on contrastive groups (a group is never split across
// batches). Checkpoint selection is by validation correct-vs-incorrect
// accuracy, ties broken by teacher-vs-student accuracy.
RmResult train_rm(const models::RewardModel& init,
                  const std::vector<distill::RewardGroup>& train_groups,
                  const std::vector<distill::RewardGroup>& validation_groups,
                  const RmConfig& config);

}  // namespace drd::rm
