#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drd/corpus.hpp"
#include "drd/rng.hpp"

namespace drd::synthtask {

// Templated multi-step arithmetic word problems with exact integer answers:
//   "Q: Start with 12. Add 7. Remove 3. What is the total?\nA: "
// Responses walk the chain step by step and end with a single
// "The answer is N." sentence, so answers are exactly extractable.
struct SynthConfig {
  int query_count = 600;
  int operand_min = 2;
  int operand_max = 9;
  // Number of operands including the starting value; each query draws
  // uniformly from [min_operands, max_operands].
  int min_operands = 2;
  int max_operands = 3;
  std::uint64_t seed = 0;
};

// Scripted teacher: per-sample correctness is Bernoulli with
//   accuracy(T) = clamp(base_accuracy - temperature_slope * T, accuracy_floor, 1)
// Wrong responses contain exactly one arithmetically false step whose error
// propagates to a wrong final answer drawn from the distractor rule. Higher
// temperatures append more restatement filler steps, so low-temperature
// output is systematically more concise.
struct TeacherErrorModel {
  double base_accuracy = 0.95;
  double temperature_slope = 0.5;
  double accuracy_floor = 0.3;
  // Per-slot filler probability is min(1, temperature * filler_rate).
  double filler_rate = 0.8;
  int max_fillers = 3;
};

double accuracy_at(const TeacherErrorModel& model, double temperature);

std::vector<corpus::Query> generate_queries(const SynthConfig& config);

// One parsed problem: starting value, (+/-,operand) steps, running partials,
// and the true final answer.
struct ParsedProblem {
  long long start = 0;
  std::vector<std::pair<char, long long>> steps;
  std::vector<long long> partials;  // value after each step
  long long answer = 0;
};

// Recovers the problem from rendered prompt text (the last problem in the
// text, so few-shot wrappers are fine). Returns nullopt when no problem is
// present.
std::optional<ParsedProblem> parse_problem(std::string_view prompt);

// Distractor rule for wrong final answers: truth +/-1, +/-2, +/-10 and the
// digit swap, kept within [0, 99] and excluding the truth itself.
std::vector<long long> wrong_final_candidates(long long truth);

// Deterministic given (prompt, temperature, rng state). Every response,
// correct or not, contains exactly one answer marker.
std::string simulated_teacher_generate(std::string_view prompt, double temperature,
                                       const TeacherErrorModel& model, Rng& rng);

// Token list (reserved markers first) covering every string the task can
// produce; ~30 entries.
const std::vector<std::string>& vocabulary_tokens();

// Fraction of queries whose response's extracted answer matches the oracle.
// Throws ConfigError when a query lacks an oracle answer.
double oracle_accuracy(const std::function<std::string(const corpus::Query&)>& respond,
                       std::span<const corpus::Query> queries);
double oracle_accuracy(const std::vector<corpus::GenerationRecord>& records,
                       std::span<const corpus::Query> queries);

}  // namespace drd::synthtask
