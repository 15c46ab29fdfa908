#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "drd/corpus.hpp"
#include "drd/models.hpp"

namespace drd::evaluate {

// query id -> reference answer, from ground truth. Queries without one are
// omitted.
std::unordered_map<std::string, std::string> oracle_answer_map(
    const std::vector<corpus::Query>& queries);

// query id -> adopted vote answer; failed queries are omitted.
std::unordered_map<std::string, std::string> pseudo_answer_map(
    const std::vector<corpus::PseudoLabelRecord>& pseudo);

struct GreedyEval {
  double accuracy = 0.0;
  int evaluated = 0;  // queries with a reference answer
  int correct = 0;
};

// Greedy-decodes each query and compares the extracted answer against the
// reference map. Queries without a reference are skipped.
GreedyEval greedy_eval(const models::PolicyModel& policy,
                       const std::vector<corpus::Query>& queries,
                       const std::unordered_map<std::string, std::string>& answers,
                       int max_new_tokens);

// Accuracy of already-collected responses against a reference map; missing
// extraction counts as wrong. Used to measure the sampling teacher.
GreedyEval record_accuracy(
    const std::vector<corpus::GenerationRecord>& records,
    const std::unordered_map<std::string, std::string>& answers);

}  // namespace drd::evaluate
