#include "drd/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "drd/error.hpp"
#include "drd/rng.hpp"

namespace drd::corpus {

using nlohmann::json;

std::string split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
  }
  throw ConfigError("bad split enum");
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "validation") return Split::kValidation;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split name: " + name);
}

std::string source_name(Source s) {
  switch (s) {
    case Source::kTeacher: return "teacher";
    case Source::kStudentWarmup: return "student_warmup";
    case Source::kStudentRl: return "student_rl";
  }
  throw ConfigError("bad source enum");
}

Source source_from_name(const std::string& name) {
  if (name == "teacher") return Source::kTeacher;
  if (name == "student_warmup") return Source::kStudentWarmup;
  if (name == "student_rl") return Source::kStudentRl;
  throw ConfigError("unknown source name: " + name);
}

std::string label_name(Label l) {
  switch (l) {
    case Label::kUnlabeled: return "unlabeled";
    case Label::kCorrect: return "correct";
    case Label::kIncorrect: return "incorrect";
  }
  throw ConfigError("bad label enum");
}

Label label_from_name(const std::string& name) {
  if (name == "unlabeled") return Label::kUnlabeled;
  if (name == "correct") return Label::kCorrect;
  if (name == "incorrect") return Label::kIncorrect;
  throw ConfigError("unknown label name: " + name);
}

// ---------------------------------------------------------------------------
// Splits

SplitResult split_queries(std::vector<Query> queries, double train_ratio,
                          double validation_ratio, std::uint64_t seed) {
  if (!(train_ratio >= 0.0 && train_ratio <= 1.0) ||
      !(validation_ratio >= 0.0 && validation_ratio <= 1.0) ||
      train_ratio + validation_ratio > 1.0 + 1e-12) {
    throw ConfigError("split ratios must be in [0,1] and sum to at most 1");
  }
  {
    std::vector<std::string> ids;
    ids.reserve(queries.size());
    for (const auto& q : queries) ids.push_back(q.id);
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
      throw ConfigError("split_queries: duplicate query id");
    }
  }
  std::stable_sort(queries.begin(), queries.end(),
                   [seed](const Query& a, const Query& b) {
                     const auto ha = derive_seed(seed, a.id);
                     const auto hb = derive_seed(seed, b.id);
                     if (ha != hb) return ha < hb;
                     return a.id < b.id;
                   });
  const auto n = queries.size();
  auto take = [n](double ratio) {
    return static_cast<std::size_t>(
        std::llround(ratio * static_cast<double>(n)));
  };
  std::size_t n_train = std::min(take(train_ratio), n);
  std::size_t n_val = std::min(take(validation_ratio), n - n_train);
  SplitResult out;
  for (std::size_t i = 0; i < n; ++i) {
    Query q = std::move(queries[i]);
    if (i < n_train) {
      q.split = Split::kTrain;
      out.train.push_back(std::move(q));
    } else if (i < n_train + n_val) {
      q.split = Split::kValidation;
      out.validation.push_back(std::move(q));
    } else {
      q.split = Split::kTest;
      out.test.push_back(std::move(q));
    }
  }
  auto by_id = [](std::vector<Query>& v) {
    std::sort(v.begin(), v.end(),
              [](const Query& a, const Query& b) { return a.id < b.id; });
  };
  by_id(out.train);
  by_id(out.validation);
  by_id(out.test);
  return out;
}

// ---------------------------------------------------------------------------
// JSONL IO

void atomic_write(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write file: " + path.string());
    out << content;
    if (!out) throw IoError("write failed: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace {

json query_to_json(const Query& q) {
  json j;
  j["v"] = kSchemaVersion;
  j["kind"] = "query";
  j["id"] = q.id;
  j["text"] = q.text;
  j["split"] = split_name(q.split);
  if (q.oracle_answer) j["oracle"] = *q.oracle_answer;
  if (q.options) j["options"] = *q.options;
  return j;
}

Query query_from_json(const json& j) {
  Query q;
  q.id = j.at("id").get<std::string>();
  q.text = j.at("text").get<std::string>();
  q.split = split_from_name(j.at("split").get<std::string>());
  if (j.contains("oracle")) q.oracle_answer = j["oracle"].get<std::string>();
  if (j.contains("options")) q.options = j["options"].get<std::string>();
  return q;
}

json record_to_json(const GenerationRecord& r) {
  json j;
  j["v"] = kSchemaVersion;
  j["kind"] = "generation";
  j["query_id"] = r.query_id;
  j["source"] = source_name(r.source);
  j["temperature"] = r.temperature;
  j["sample_index"] = r.sample_index;
  j["text"] = r.text;
  if (r.extracted_answer) j["extracted"] = *r.extracted_answer;
  j["label"] = label_name(r.label);
  return j;
}

GenerationRecord record_from_json(const json& j) {
  GenerationRecord r;
  r.query_id = j.at("query_id").get<std::string>();
  r.source = source_from_name(j.at("source").get<std::string>());
  r.temperature = j.at("temperature").get<double>();
  r.sample_index = j.at("sample_index").get<int>();
  r.text = j.at("text").get<std::string>();
  if (j.contains("extracted")) r.extracted_answer = j["extracted"].get<std::string>();
  r.label = label_from_name(j.at("label").get<std::string>());
  return r;
}

json pseudo_to_json(const PseudoLabelRecord& p) {
  json j;
  j["v"] = kSchemaVersion;
  j["kind"] = "pseudo_label";
  j["query_id"] = p.query_id;
  j["status"] = p.labeled ? "labeled" : "failed";
  if (p.labeled) {
    j["answer"] = p.answer;
  }
  j["support"] = p.support;
  j["histogram"] = p.vote_histogram;
  j["absent"] = p.absent_count;
  j["total"] = p.total_votes;
  return j;
}

PseudoLabelRecord pseudo_from_json(const json& j) {
  PseudoLabelRecord p;
  p.query_id = j.at("query_id").get<std::string>();
  const std::string status = j.at("status").get<std::string>();
  if (status == "labeled") {
    p.labeled = true;
  } else if (status == "failed") {
    p.labeled = false;
  } else {
    throw ConfigError("unknown pseudo-label status: " + status);
  }
  if (p.labeled) p.answer = j.at("answer").get<std::string>();
  p.support = j.at("support").get<double>();
  p.vote_histogram = j.at("histogram").get<std::map<std::string, int>>();
  p.absent_count = j.at("absent").get<int>();
  p.total_votes = j.at("total").get<int>();
  return p;
}

template <class T, class ToJson>
void save_jsonl(const std::filesystem::path& path, const std::vector<T>& items,
                ToJson to_json) {
  std::string buf;
  for (const T& item : items) {
    buf += to_json(item).dump();
    buf += '\n';
  }
  atomic_write(path, buf);
}

template <class T, class FromJson>
std::vector<T> load_jsonl(const std::filesystem::path& path, const char* kind,
                          FromJson from_json) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<T> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(line_no) +
                    ": malformed JSON: " + e.what());
    }
    try {
      if (j.value("v", -1) != kSchemaVersion) {
        throw ConfigError("unsupported schema version");
      }
      if (j.value("kind", "") != kind) {
        throw ConfigError("expected record kind '" + std::string(kind) +
                          "', got '" + j.value("kind", "") + "'");
      }
      out.push_back(from_json(j));
    } catch (const std::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

void save_queries(const std::filesystem::path& path, const std::vector<Query>& qs) {
  save_jsonl(path, qs, query_to_json);
}

std::vector<Query> load_queries(const std::filesystem::path& path) {
  return load_jsonl<Query>(path, "query", query_from_json);
}

void save_records(const std::filesystem::path& path,
                  const std::vector<GenerationRecord>& records) {
  save_jsonl(path, records, record_to_json);
}

std::vector<GenerationRecord> load_records(const std::filesystem::path& path) {
  return load_jsonl<GenerationRecord>(path, "generation", record_from_json);
}

void save_pseudo_labels(const std::filesystem::path& path,
                        const std::vector<PseudoLabelRecord>& labels) {
  save_jsonl(path, labels, pseudo_to_json);
}

std::vector<PseudoLabelRecord> load_pseudo_labels(const std::filesystem::path& path) {
  return load_jsonl<PseudoLabelRecord>(path, "pseudo_label", pseudo_from_json);
}

void save_manifest(const std::filesystem::path& path, const RunManifest& m) {
  json j;
  j["v"] = kSchemaVersion;
  j["kind"] = "run_manifest";
  j["tool_version"] = m.tool_version;
  j["stage"] = m.stage;
  j["config_digest"] = m.config_digest;
  j["master_seed"] = m.master_seed;
  j["stream_seeds"] = m.stream_seeds;
  j["inputs"] = m.input_digests;
  j["outputs"] = m.output_digests;
  atomic_write(path, j.dump(2) + "\n");
}

RunManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("malformed manifest " + path.string() + ": " + e.what());
  }
  if (j.value("kind", "") != "run_manifest" || j.value("v", -1) != kSchemaVersion) {
    throw IoError("not a run manifest: " + path.string());
  }
  RunManifest m;
  m.tool_version = j.at("tool_version").get<std::string>();
  m.stage = j.at("stage").get<std::string>();
  m.config_digest = j.at("config_digest").get<std::string>();
  m.master_seed = j.at("master_seed").get<std::uint64_t>();
  m.stream_seeds = j.at("stream_seeds").get<std::map<std::string, std::uint64_t>>();
  m.input_digests = j.at("inputs").get<std::map<std::string, std::string>>();
  m.output_digests = j.at("outputs").get<std::map<std::string, std::string>>();
  return m;
}

}  // namespace drd::corpus
