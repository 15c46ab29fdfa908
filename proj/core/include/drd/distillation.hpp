#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "drd/backend.hpp"
#include "drd/corpus.hpp"
#include "drd/extraction.hpp"
#include "drd/rng.hpp"

namespace drd::distill {

// Multi-temperature sampling plan. Only the low-temperature tier takes part
// in answer voting; the high-temperature tier adds stylistic diversity to the
// fine-tuning corpus but never votes.
struct TemperatureSchedule {
  std::vector<double> vote_temperatures;    // vote-eligible (low temperature)
  std::vector<double> extra_temperatures;   // diversity-only (high temperature)
  int samples_per_temperature = 5;

  static TemperatureSchedule standard();    // {0,.1,.2,.3} + {.4..1.0 step .1}, 5 each
  int vote_count() const;
  bool is_vote_temperature(double t) const;
  // Vote temperatures strictly below every extra temperature, all >= 0.
  void validate() const;
};

using PromptFn = std::function<std::string(const corpus::Query&)>;

// Samples `samples_per_temperature` responses per (query, temperature) and
// extracts the final answer of each. Record order: queries in input order,
// vote temperatures first, then extra temperatures.
std::vector<corpus::GenerationRecord> collect_generations(
    backend::Backend& backend, const std::vector<corpus::Query>& queries,
    const PromptFn& make_prompt, const TemperatureSchedule& schedule,
    corpus::Source source, int max_new_tokens);

// Single-temperature convenience used for student self-sampling.
std::vector<corpus::GenerationRecord> collect_generations(
    backend::Backend& backend, const std::vector<corpus::Query>& queries,
    const PromptFn& make_prompt, double temperature, int sample_count,
    corpus::Source source, int max_new_tokens);

// ---------------------------------------------------------------------------
// Majority vote

struct VoteOutcome {
  bool labeled = false;
  std::string answer;                    // winner's display form when labeled
  int support = 0;                       // votes for the winner
  int absent = 0;                        // records with no extractable answer
  int total = 0;                         // all vote-eligible records
  std::map<std::string, int> histogram;  // candidate display form -> count
};

// Majority vote over extracted answers. Records without an extractable answer
// enlarge the denominator but are never candidates. The winner is adopted only
// when support / total strictly exceeds `threshold`; ties on count break
// toward the lexicographically smallest bin key.
VoteOutcome vote(const std::vector<std::optional<std::string>>& extracted,
                 double threshold);

// Runs the vote for every query over its vote-eligible teacher records.
std::vector<corpus::PseudoLabelRecord> vote_pseudo_labels(
    const std::vector<corpus::Query>& queries,
    const std::vector<corpus::GenerationRecord>& teacher_records,
    const TemperatureSchedule& schedule, double threshold);

// Marks every record of a pseudo-labeled query correct/incorrect by comparing
// its extracted answer to the adopted answer (missing extraction counts as
// incorrect). Records of failed queries stay unlabeled.
void propagate_labels(std::vector<corpus::GenerationRecord>& records,
                      const std::vector<corpus::PseudoLabelRecord>& pseudo);

// ---------------------------------------------------------------------------
// Derived datasets

struct SftPair {
  std::string query_id;
  std::string query_text;
  std::string response_text;
};

void save_sft_pairs(const std::filesystem::path& path,
                    const std::vector<SftPair>& pairs);
std::vector<SftPair> load_sft_pairs(const std::filesystem::path& path);

// Teacher records labeled correct, both temperature tiers.
std::vector<SftPair> build_sft_dataset(
    const std::vector<corpus::Query>& queries,
    const std::vector<corpus::GenerationRecord>& teacher_records);

// All teacher records with an extractable answer regardless of label; the
// no-filtering baseline.
std::vector<SftPair> build_unfiltered_sft_dataset(
    const std::vector<corpus::Query>& queries,
    const std::vector<corpus::GenerationRecord>& teacher_records);

// Query ids that were pseudo-labeled and have at least one incorrect student
// sample (missing extraction counts as incorrect). Sorted.
std::vector<std::string> build_student_set(
    const std::vector<corpus::GenerationRecord>& student_records,
    const std::vector<corpus::PseudoLabelRecord>& pseudo);

struct RewardGroup {
  std::string query_id;
  std::string query_text;
  std::vector<std::string> student_correct;    // responses scored above student_incorrect
  std::vector<std::string> student_incorrect;
  std::vector<std::string> teacher_correct;    // responses scored above student_correct
};

struct SkippedQuery {
  std::string query_id;
  std::string reason;
};

struct RewardGroupBuild {
  std::vector<RewardGroup> groups;
  std::vector<SkippedQuery> skipped;
};

// Per-query contrastive groups. With teacher_share_ratio 1 each group is
// balanced: n = min(|student correct|, |student incorrect|, |teacher correct|)
// members per category, sampled uniformly without replacement. The ratio knob
// resizes only the teacher share: t = clamp(round(ratio * n), 1, available).
RewardGroupBuild build_reward_groups(
    const std::vector<corpus::Query>& queries,
    const std::vector<std::string>& student_set,
    const std::vector<corpus::GenerationRecord>& student_records,
    const std::vector<corpus::GenerationRecord>& teacher_records,
    double teacher_share_ratio, Rng& rng);

void validate_reward_groups(const std::vector<RewardGroup>& groups,
                            double teacher_share_ratio);

void save_reward_groups(const std::filesystem::path& path,
                        const std::vector<RewardGroup>& groups);
std::vector<RewardGroup> load_reward_groups(const std::filesystem::path& path);

// Union of the contrastive-group queries and the vote-failed queries,
// deduplicated and shuffled with a seeded generator.
std::vector<std::string> rl_query_pool(const std::vector<std::string>& group_query_ids,
                                       const std::vector<std::string>& failed_query_ids,
                                       std::uint64_t seed);

// ---------------------------------------------------------------------------
// Stage accounting

struct DistillStats {
  int query_count = 0;
  int teacher_records = 0;
  int labeled_queries = 0;
  int failed_queries = 0;
  int sft_pairs = 0;
  double mean_support_fraction = 0.0;  // over labeled queries
  // Vs oracle answers, when present: fraction of labeled queries whose adopted
  // answer is wrong.
  std::optional<double> pseudo_label_error_rate;
  std::string to_json() const;
};

DistillStats compute_distill_stats(
    const std::vector<corpus::Query>& queries,
    const std::vector<corpus::GenerationRecord>& teacher_records,
    const std::vector<corpus::PseudoLabelRecord>& pseudo,
    const std::vector<SftPair>& sft_pairs);

}  // namespace drd::distill
