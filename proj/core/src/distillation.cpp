#include "drd/distillation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "drd/error.hpp"

namespace drd::distill {
namespace {

using nlohmann::json;

std::string fold_case(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

std::unordered_map<std::string, const corpus::Query*> index_queries(
    const std::vector<corpus::Query>& queries) {
  std::unordered_map<std::string, const corpus::Query*> by_id;
  for (const auto& q : queries) by_id.emplace(q.id, &q);
  return by_id;
}

}  // namespace

// ---------------------------------------------------------------------------
// TemperatureSchedule

TemperatureSchedule TemperatureSchedule::standard() {
  TemperatureSchedule s;
  s.vote_temperatures = {0.0, 0.1, 0.2, 0.3};
  s.extra_temperatures = {0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  s.samples_per_temperature = 5;
  return s;
}

int TemperatureSchedule::vote_count() const {
  return static_cast<int>(vote_temperatures.size()) * samples_per_temperature;
}

bool TemperatureSchedule::is_vote_temperature(double t) const {
  return std::find(vote_temperatures.begin(), vote_temperatures.end(), t) !=
         vote_temperatures.end();
}

void TemperatureSchedule::validate() const {
  if (vote_temperatures.empty())
    throw ConfigError("schedule: at least one vote temperature is required");
  if (samples_per_temperature < 1)
    throw ConfigError("schedule: samples_per_temperature must be >= 1");
  for (double t : vote_temperatures)
    if (!(t >= 0.0)) throw ConfigError("schedule: negative vote temperature");
  for (double t : extra_temperatures)
    if (!(t >= 0.0)) throw ConfigError("schedule: negative extra temperature");
  // the vote tier is the reliable one: every vote temperature must sit
  // strictly below every extra temperature
  if (!extra_temperatures.empty()) {
    const double lo =
        *std::min_element(extra_temperatures.begin(), extra_temperatures.end());
    for (double t : vote_temperatures)
      if (!(t < lo))
        throw ConfigError(
            "schedule: vote temperatures must be strictly below every extra "
            "temperature");
  }
}

// ---------------------------------------------------------------------------
// Collection

std::vector<corpus::GenerationRecord> collect_generations(
    backend::Backend& backend, const std::vector<corpus::Query>& queries,
    const PromptFn& make_prompt, const TemperatureSchedule& schedule,
    corpus::Source source, int max_new_tokens) {
  schedule.validate();
  std::vector<double> temps = schedule.vote_temperatures;
  temps.insert(temps.end(), schedule.extra_temperatures.begin(),
               schedule.extra_temperatures.end());

  std::vector<corpus::GenerationRecord> records;
  records.reserve(queries.size() * temps.size() *
                  static_cast<std::size_t>(schedule.samples_per_temperature));
  for (const auto& query : queries) {
    const std::string prompt = make_prompt(query);
    for (double t : temps) {
      backend::GenerationRequest req;
      req.prompt = prompt;
      req.temperature = t;
      req.sample_count = schedule.samples_per_temperature;
      req.max_new_tokens = max_new_tokens;
      std::vector<std::string> texts = backend.generate(req);
      for (int s = 0; s < schedule.samples_per_temperature; ++s) {
        corpus::GenerationRecord rec;
        rec.query_id = query.id;
        rec.source = source;
        rec.temperature = t;
        rec.sample_index = s;
        rec.text = texts[static_cast<std::size_t>(s)];
        if (auto ans = extraction::extract_final_answer(rec.text))
          rec.extracted_answer = ans->canonical;
        records.push_back(std::move(rec));
      }
    }
  }
  return records;
}

std::vector<corpus::GenerationRecord> collect_generations(
    backend::Backend& backend, const std::vector<corpus::Query>& queries,
    const PromptFn& make_prompt, double temperature, int sample_count,
    corpus::Source source, int max_new_tokens) {
  TemperatureSchedule single;
  single.vote_temperatures = {temperature};
  single.samples_per_temperature = sample_count;
  return collect_generations(backend, queries, make_prompt, single, source,
                             max_new_tokens);
}

// ---------------------------------------------------------------------------
// Voting

VoteOutcome vote(const std::vector<std::optional<std::string>>& extracted,
                 double threshold) {
  VoteOutcome out;
  out.total = static_cast<int>(extracted.size());

  // bin key is the case-folded canonical form; display keeps first-seen casing
  std::map<std::string, int> counts;
  std::map<std::string, std::string> display;
  for (const auto& ans : extracted) {
    if (!ans.has_value()) {
      ++out.absent;
      continue;
    }
    std::string key = fold_case(*ans);
    ++counts[key];
    display.emplace(key, *ans);
  }
  for (const auto& [key, n] : counts) out.histogram[display.at(key)] = n;
  if (counts.empty()) return out;

  // std::map iterates keys in order, so the first maximal bin is the
  // lexicographically smallest one
  auto best = counts.begin();
  for (auto it = counts.begin(); it != counts.end(); ++it)
    if (it->second > best->second) best = it;

  out.support = best->second;
  if (extraction::exceeds_strict(best->second, out.total, threshold)) {
    out.labeled = true;
    out.answer = display.at(best->first);
  }
  return out;
}

std::vector<corpus::PseudoLabelRecord> vote_pseudo_labels(
    const std::vector<corpus::Query>& queries,
    const std::vector<corpus::GenerationRecord>& teacher_records,
    const TemperatureSchedule& schedule, double threshold) {
  schedule.validate();
  std::unordered_map<std::string, std::vector<std::optional<std::string>>> votes;
  for (const auto& rec : teacher_records) {
    if (rec.source != corpus::Source::kTeacher) continue;
    if (!schedule.is_vote_temperature(rec.temperature)) continue;
    votes[rec.query_id].push_back(rec.extracted_answer);
  }

  std::vector<corpus::PseudoLabelRecord> out;
  out.reserve(queries.size());
  for (const auto& query : queries) {
    auto it = votes.find(query.id);
    VoteOutcome v = vote(it == votes.end()
                             ? std::vector<std::optional<std::string>>{}
                             : it->second,
                         threshold);
    corpus::PseudoLabelRecord rec;
    rec.query_id = query.id;
    rec.labeled = v.labeled;
    rec.answer = v.answer;
    rec.support = v.total > 0 ? static_cast<double>(v.support) / v.total : 0.0;
    rec.vote_histogram = std::move(v.histogram);
    rec.absent_count = v.absent;
    rec.total_votes = v.total;
    out.push_back(std::move(rec));
  }
  return out;
}

void propagate_labels(std::vector<corpus::GenerationRecord>& records,
                      const std::vector<corpus::PseudoLabelRecord>& pseudo) {
  std::unordered_map<std::string, const corpus::PseudoLabelRecord*> by_id;
  for (const auto& p : pseudo) by_id.emplace(p.query_id, &p);

  for (auto& rec : records) {
    auto it = by_id.find(rec.query_id);
    if (it == by_id.end() || !it->second->labeled) {
      rec.label = corpus::Label::kUnlabeled;
      continue;
    }
    bool match = rec.extracted_answer.has_value() &&
                 extraction::answers_equal(*rec.extracted_answer,
                                           it->second->answer);
    rec.label = match ? corpus::Label::kCorrect : corpus::Label::kIncorrect;
  }
}

// ---------------------------------------------------------------------------
// Derived datasets

void save_sft_pairs(const std::filesystem::path& path,
                    const std::vector<SftPair>& pairs) {
  std::string body;
  for (const auto& p : pairs) {
    json j;
    j["v"] = corpus::kSchemaVersion;
    j["kind"] = "sft_pair";
    j["query_id"] = p.query_id;
    j["query"] = p.query_text;
    j["response"] = p.response_text;
    body += j.dump();
    body += '\n';
  }
  corpus::atomic_write(path, body);
}

std::vector<SftPair> load_sft_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<SftPair> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || j.value("kind", "") != "sft_pair")
      throw IoError(path.string() + ":" + std::to_string(lineno) +
                    ": not an sft_pair line");
    out.push_back({j.at("query_id").get<std::string>(),
                   j.at("query").get<std::string>(),
                   j.at("response").get<std::string>()});
  }
  return out;
}

std::vector<SftPair> build_sft_dataset(
    const std::vector<corpus::Query>& queries,
    const std::vector<corpus::GenerationRecord>& teacher_records) {
  auto by_id = index_queries(queries);
  std::vector<SftPair> out;
  for (const auto& rec : teacher_records) {
    if (rec.source != corpus::Source::kTeacher) continue;
    if (rec.label != corpus::Label::kCorrect) continue;
    auto it = by_id.find(rec.query_id);
    if (it == by_id.end())
      throw ConfigError("teacher record references unknown query " + rec.query_id);
    out.push_back({rec.query_id, it->second->text, rec.text});
  }
  return out;
}

std::vector<SftPair> build_unfiltered_sft_dataset(
    const std::vector<corpus::Query>& queries,
    const std::vector<corpus::GenerationRecord>& teacher_records) {
  auto by_id = index_queries(queries);
  std::vector<SftPair> out;
  for (const auto& rec : teacher_records) {
    if (rec.source != corpus::Source::kTeacher) continue;
    if (!rec.extracted_answer.has_value()) continue;
    auto it = by_id.find(rec.query_id);
    if (it == by_id.end())
      throw ConfigError("teacher record references unknown query " + rec.query_id);
    out.push_back({rec.query_id, it->second->text, rec.text});
  }
  return out;
}

std::vector<std::string> build_student_set(
    const std::vector<corpus::GenerationRecord>& student_records,
    const std::vector<corpus::PseudoLabelRecord>& pseudo) {
  std::unordered_map<std::string, const corpus::PseudoLabelRecord*> by_id;
  for (const auto& p : pseudo) by_id.emplace(p.query_id, &p);

  std::set<std::string> selected;
  for (const auto& rec : student_records) {
    auto it = by_id.find(rec.query_id);
    if (it == by_id.end() || !it->second->labeled) continue;
    bool wrong = !rec.extracted_answer.has_value() ||
                 !extraction::answers_equal(*rec.extracted_answer,
                                            it->second->answer);
    if (wrong) selected.insert(rec.query_id);
  }
  return {selected.begin(), selected.end()};
}

RewardGroupBuild build_reward_groups(
    const std::vector<corpus::Query>& queries,
    const std::vector<std::string>& student_set,
    const std::vector<corpus::GenerationRecord>& student_records,
    const std::vector<corpus::GenerationRecord>& teacher_records,
    double teacher_share_ratio, Rng& rng) {
  if (teacher_share_ratio <= 0.0)
    throw ConfigError("teacher_share_ratio must be positive");
  auto by_id = index_queries(queries);

  std::unordered_map<std::string, std::vector<const corpus::GenerationRecord*>>
      s_correct, s_incorrect, t_correct;
  for (const auto& rec : student_records) {
    if (rec.label == corpus::Label::kCorrect) s_correct[rec.query_id].push_back(&rec);
    else if (rec.label == corpus::Label::kIncorrect) s_incorrect[rec.query_id].push_back(&rec);
  }
  for (const auto& rec : teacher_records)
    if (rec.source == corpus::Source::kTeacher && rec.label == corpus::Label::kCorrect)
      t_correct[rec.query_id].push_back(&rec);

  auto draw = [&rng](std::vector<const corpus::GenerationRecord*> pool, int n) {
    rng.shuffle(pool);
    std::vector<std::string> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(pool[static_cast<std::size_t>(i)]->text);
    return out;
  };

  RewardGroupBuild build;
  for (const auto& qid : student_set) {
    auto qit = by_id.find(qid);
    if (qit == by_id.end())
      throw ConfigError("student set references unknown query " + qid);
    const auto& sp = s_correct[qid];
    const auto& sm = s_incorrect[qid];
    const auto& tp = t_correct[qid];
    if (sp.empty() || sm.empty() || tp.empty()) {
      std::string reason = sp.empty()   ? "no correct student sample"
                           : sm.empty() ? "no incorrect student sample"
                                        : "no correct teacher sample";
      build.skipped.push_back({qid, reason});
      continue;
    }
    const int n = static_cast<int>(std::min({sp.size(), sm.size(), tp.size()}));
    const int t_n = std::clamp<int>(
        static_cast<int>(std::llround(teacher_share_ratio * n)), 1,
        static_cast<int>(tp.size()));

    RewardGroup g;
    g.query_id = qid;
    g.query_text = qit->second->text;
    g.student_correct = draw(sp, n);
    g.student_incorrect = draw(sm, n);
    g.teacher_correct = draw(tp, t_n);
    build.groups.push_back(std::move(g));
  }
  return build;
}

void validate_reward_groups(const std::vector<RewardGroup>& groups,
                            double teacher_share_ratio) {
  std::unordered_set<std::string> seen;
  for (const auto& g : groups) {
    if (!seen.insert(g.query_id).second)
      throw ConfigError("duplicate reward group for query " + g.query_id);
    if (g.student_correct.empty() || g.student_incorrect.empty() ||
        g.teacher_correct.empty())
      throw ConfigError("reward group " + g.query_id + " has an empty category");
    if (g.student_correct.size() != g.student_incorrect.size())
      throw ConfigError("reward group " + g.query_id +
                        " has unbalanced student categories");
    if (teacher_share_ratio == 1.0 &&
        g.teacher_correct.size() > g.student_correct.size())
      throw ConfigError("reward group " + g.query_id +
                        " has oversized teacher share at ratio 1");
  }
}

void save_reward_groups(const std::filesystem::path& path,
                        const std::vector<RewardGroup>& groups) {
  std::string body;
  for (const auto& g : groups) {
    json j;
    j["v"] = corpus::kSchemaVersion;
    j["kind"] = "reward_group";
    j["query_id"] = g.query_id;
    j["query_text"] = g.query_text;
    j["student_correct"] = g.student_correct;
    j["student_incorrect"] = g.student_incorrect;
    j["teacher_correct"] = g.teacher_correct;
    body += j.dump();
    body += '\n';
  }
  corpus::atomic_write(path, body);
}

std::vector<RewardGroup> load_reward_groups(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<RewardGroup> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || j.value("kind", "") != "reward_group")
      throw IoError(path.string() + ":" + std::to_string(lineno) +
                    ": not a reward_group line");
    RewardGroup g;
    g.query_id = j.at("query_id").get<std::string>();
    g.query_text = j.at("query_text").get<std::string>();
    g.student_correct = j.at("student_correct").get<std::vector<std::string>>();
    g.student_incorrect = j.at("student_incorrect").get<std::vector<std::string>>();
    g.teacher_correct = j.at("teacher_correct").get<std::vector<std::string>>();
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<std::string> rl_query_pool(const std::vector<std::string>& group_query_ids,
                                       const std::vector<std::string>& failed_query_ids,
                                       std::uint64_t seed) {
  std::set<std::string> uniq(group_query_ids.begin(), group_query_ids.end());
  uniq.insert(failed_query_ids.begin(), failed_query_ids.end());
  std::vector<std::string> pool(uniq.begin(), uniq.end());
  Rng rng(derive_seed(seed, "rl-query-pool"));
  rng.shuffle(pool);
  return pool;
}

// ---------------------------------------------------------------------------
// Stats

std::string DistillStats::to_json() const {
  json j;
  j["query_count"] = query_count;
  j["teacher_records"] = teacher_records;
  j["labeled_queries"] = labeled_queries;
  j["failed_queries"] = failed_queries;
  j["sft_pairs"] = sft_pairs;
  j["mean_support_fraction"] = mean_support_fraction;
  if (pseudo_label_error_rate.has_value())
    j["pseudo_label_error_rate"] = *pseudo_label_error_rate;
  return j.dump(2);
}

DistillStats compute_distill_stats(
    const std::vector<corpus::Query>& queries,
    const std::vector<corpus::GenerationRecord>& teacher_records,
    const std::vector<corpus::PseudoLabelRecord>& pseudo,
    const std::vector<SftPair>& sft_pairs) {
  DistillStats stats;
  stats.query_count = static_cast<int>(queries.size());
  stats.teacher_records = static_cast<int>(teacher_records.size());
  stats.sft_pairs = static_cast<int>(sft_pairs.size());

  auto by_id = index_queries(queries);
  double support_sum = 0.0;
  int oracle_checked = 0, oracle_wrong = 0;
  for (const auto& p : pseudo) {
    if (!p.labeled) {
      ++stats.failed_queries;
      continue;
    }
    ++stats.labeled_queries;
    support_sum += p.support;
    auto it = by_id.find(p.query_id);
    if (it != by_id.end() && it->second->oracle_answer.has_value()) {
      ++oracle_checked;
      if (!extraction::answers_equal(p.answer, *it->second->oracle_answer))
        ++oracle_wrong;
    }
  }
  if (stats.labeled_queries > 0)
    stats.mean_support_fraction = support_sum / stats.labeled_queries;
  if (oracle_checked > 0)
    stats.pseudo_label_error_rate =
        static_cast<double>(oracle_wrong) / oracle_checked;
  return stats;
}

}  // namespace drd::distill
