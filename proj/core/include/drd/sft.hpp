#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "drd/distillation.hpp"
#include "drd/models.hpp"
#include "drd/numerics.hpp"

namespace drd::sft {

struct SftConfig {
  double learning_rate = 1e-2;
  // Per-epoch multiplicative decay on the learning rate; 1.0 keeps it constant.
  double lr_decay = 1.0;
  int batch_size = 16;
  int epochs = 2;
  // Pairs whose tokenized length (prompt + response + EOS) exceeds this are
  // skipped, not truncated.
  int max_sequence_length = 512;
  double grad_clip_norm = 1.0;
  int eval_max_new_tokens = 96;
  std::uint64_t seed = 0;
};

// Mean negative log-likelihood per response token (EOS included); prompt
// tokens carry no loss.
numerics::Value nll_loss(numerics::Tape& tape, const models::PolicyModel& policy,
                         std::span<const int> prompt, std::span<const int> response);

struct EpochMetrics {
  int epoch = 0;  // 0 is the untrained starting point
  double mean_loss = 0.0;
  double validation_accuracy = 0.0;
};

struct SftResult {
  models::PolicyModel model;  // checkpoint with the best validation accuracy
  std::vector<EpochMetrics> epochs;
  int best_epoch = 0;
  double best_validation_accuracy = 0.0;
  int skipped_pairs = 0;
};

// Supervised fine-tuning on (query, response) pairs. Checkpoint selection is
// by greedy accuracy on the validation queries (the untrained input counts as
// epoch 0, so a run that never improves returns the input model).
SftResult train_sft(const models::PolicyModel& init,
                    const std::vector<distill::SftPair>& pairs,
                    const std::vector<corpus::Query>& validation_queries,
                    const std::unordered_map<std::string, std::string>& validation_answers,
                    const SftConfig& config);

}  // namespace drd::sft
