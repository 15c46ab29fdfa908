#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace drd::corpus {

inline constexpr int kSchemaVersion = 1;

enum class Split { kTrain, kValidation, kTest };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

struct Query {
  std::string id;
  std::string text;
  Split split = Split::kTrain;
  // Ground truth, when the task has one (synthetic always does). Used only
  // for evaluation and diagnostics, never for training labels.
  std::optional<std::string> oracle_answer;
  // Rendered option list for multiple-choice prompts; unused otherwise.
  std::optional<std::string> options;

  bool operator==(const Query&) const = default;
};

enum class Source { kTeacher, kStudentWarmup, kStudentRl };

std::string source_name(Source s);
Source source_from_name(const std::string& name);

enum class Label { kUnlabeled, kCorrect, kIncorrect };

std::string label_name(Label l);
Label label_from_name(const std::string& name);

struct GenerationRecord {
  std::string query_id;
  Source source = Source::kTeacher;
  double temperature = 0.0;
  int sample_index = 0;
  std::string text;
  // Canonical extracted answer; absent when no marker / empty capture.
  std::optional<std::string> extracted_answer;
  // Assigned by label propagation against the query's pseudo-label; stays
  // kUnlabeled while the query has no pseudo-label.
  Label label = Label::kUnlabeled;

  bool operator==(const GenerationRecord&) const = default;
};

struct PseudoLabelRecord {
  std::string query_id;
  bool labeled = false;
  // Winning answer (canonical) and its support as a fraction of all votes in
  // [0, 1]; empty answer and zero support when the query failed the vote.
  std::string answer;
  double support = 0.0;
  // Candidate answers only; extraction failures are tallied separately but
  // still count in the support denominator.
  std::map<std::string, int> vote_histogram;
  int absent_count = 0;
  int total_votes = 0;

  bool operator==(const PseudoLabelRecord&) const = default;
};

// Provenance for one pipeline stage: what configuration and seeds produced
// which files. Stages validate their inputs' digests against the manifests of
// the stages they depend on.
struct RunManifest {
  std::string tool_version;
  std::string stage;
  std::string config_digest;
  std::uint64_t master_seed = 0;
  std::map<std::string, std::uint64_t> stream_seeds;
  std::map<std::string, std::string> input_digests;   // relative path -> sha256
  std::map<std::string, std::string> output_digests;  // relative path -> sha256

  bool operator==(const RunManifest&) const = default;
};

// ---------------------------------------------------------------------------
// Splits

// Deterministic partition by seeded hash of query ids: ids are ordered by
// hash, then sliced by the requested ratios (sizes exact to within rounding).
// Insertion order of the input never matters. Ratios must be in [0,1] and sum
// to at most 1; the remainder becomes the test split.
struct SplitResult {
  std::vector<Query> train;
  std::vector<Query> validation;
  std::vector<Query> test;
};

SplitResult split_queries(std::vector<Query> queries, double train_ratio,
                          double validation_ratio, std::uint64_t seed);

// ---------------------------------------------------------------------------
// JSONL persistence. One record per line, every line tagged with the schema
// version and a record kind; files are written to a temp path then renamed so
// readers never observe partial output. Malformed input reports the 1-based
// line number.

void save_queries(const std::filesystem::path& path, const std::vector<Query>& qs);
std::vector<Query> load_queries(const std::filesystem::path& path);

void save_records(const std::filesystem::path& path,
                  const std::vector<GenerationRecord>& records);
std::vector<GenerationRecord> load_records(const std::filesystem::path& path);

void save_pseudo_labels(const std::filesystem::path& path,
                        const std::vector<PseudoLabelRecord>& labels);
std::vector<PseudoLabelRecord> load_pseudo_labels(const std::filesystem::path& path);

void save_manifest(const std::filesystem::path& path, const RunManifest& m);
RunManifest load_manifest(const std::filesystem::path& path);

// Atomic text write used by every emitter in the pipeline.
void atomic_write(const std::filesystem::path& path, const std::string& content);

}  // namespace drd::corpus
