#include "drd/evaluate.hpp"

#include "drd/extraction.hpp"

namespace drd::evaluate {

std::unordered_map<std::string, std::string> oracle_answer_map(
    const std::vector<corpus::Query>& queries) {
  std::unordered_map<std::string, std::string> out;
  for (const auto& q : queries)
    if (q.oracle_answer.has_value()) out.emplace(q.id, *q.oracle_answer);
  return out;
}

std::unordered_map<std::string, std::string> pseudo_answer_map(
    const std::vector<corpus::PseudoLabelRecord>& pseudo) {
  std::unordered_map<std::string, std::string> out;
  for (const auto& p : pseudo)
    if (p.labeled) out.emplace(p.query_id, p.answer);
  return out;
}

GreedyEval greedy_eval(const models::PolicyModel& policy,
                       const std::vector<corpus::Query>& queries,
                       const std::unordered_map<std::string, std::string>& answers,
                       int max_new_tokens) {
  GreedyEval eval;
  for (const auto& q : queries) {
    auto it = answers.find(q.id);
    if (it == answers.end()) continue;
    ++eval.evaluated;
    std::string text = models::greedy_response_text(policy, q.text, max_new_tokens);
    auto extracted = extraction::extract_final_answer(text);
    if (extracted.has_value() &&
        extraction::answers_equal(extracted->canonical, it->second))
      ++eval.correct;
  }
  if (eval.evaluated > 0)
    eval.accuracy = static_cast<double>(eval.correct) / eval.evaluated;
  return eval;
}

GreedyEval record_accuracy(
    const std::vector<corpus::GenerationRecord>& records,
    const std::unordered_map<std::string, std::string>& answers) {
  GreedyEval eval;
  for (const auto& rec : records) {
    auto it = answers.find(rec.query_id);
    if (it == answers.end()) continue;
    ++eval.evaluated;
    if (rec.extracted_answer.has_value() &&
        extraction::answers_equal(*rec.extracted_answer, it->second))
      ++eval.correct;
  }
  if (eval.evaluated > 0)
    eval.accuracy = static_cast<double>(eval.correct) / eval.evaluated;
  return eval;
}

}  // namespace drd::evaluate
