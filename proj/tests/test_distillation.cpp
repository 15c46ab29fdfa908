#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "drd/backend.hpp"
#include "drd/distillation.hpp"
#include "drd/error.hpp"
#include "drd/extraction.hpp"
#include "drd/rng.hpp"
#include "drd/synthtask.hpp"
#include "testutil.hpp"

using namespace drd;
using namespace drd::distill;
using corpus::GenerationRecord;
using corpus::Label;
using corpus::PseudoLabelRecord;
using corpus::Query;
using corpus::Source;

namespace {

// Brute-force vote oracle over already-canonical extractions: tally by
// case-folded key, absent answers only enlarge the denominator, winner needs
// count/total strictly above threshold with count ties broken toward the
// smallest key.
VoteOutcome oracle_vote(const std::vector<std::optional<std::string>>& extracted,
                        double threshold) {
  VoteOutcome out;
  out.total = static_cast<int>(extracted.size());
  std::map<std::string, std::pair<int, std::string>> bins;  // key -> count, display
  for (const auto& e : extracted) {
    if (!e) {
      out.absent++;
      continue;
    }
    std::string key = *e;
    for (auto& ch : key) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    auto it = bins.find(key);
    if (it == bins.end())
      bins.emplace(key, std::make_pair(1, *e));
    else
      it->second.first++;
  }
  for (const auto& [key, v] : bins) out.histogram[v.second] = v.first;
  int best = 0;
  std::string best_key;
  for (const auto& [key, v] : bins) {
    if (v.first > best) {
      best = v.first;
      best_key = key;
    }
  }
  if (best > 0) out.support = best;
  if (best > 0 &&
      extraction::exceeds_strict(static_cast<std::uint64_t>(best),
                                 static_cast<std::uint64_t>(out.total), threshold)) {
    out.labeled = true;
    out.answer = bins.at(best_key).second;
  }
  return out;
}

GenerationRecord rec(const std::string& qid, double temp, int idx,
                     const std::string& text, Source src = Source::kTeacher) {
  GenerationRecord r;
  r.query_id = qid;
  r.source = src;
  r.temperature = temp;
  r.sample_index = idx;
  r.text = text;
  r.extracted_answer =
      [&]() -> std::optional<std::string> {
    auto a = extraction::extract_final_answer(text);
    if (!a) return std::nullopt;
    return a->canonical;
  }();
  return r;
}

Query make_query(const std::string& id, const std::string& oracle = "") {
  Query q;
  q.id = id;
  q.text = "Q: " + id + "?\nA: ";
  if (!oracle.empty()) q.oracle_answer = oracle;
  return q;
}

}  // namespace

TEST_CASE("standard schedule shape") {
  auto s = TemperatureSchedule::standard();
  CHECK(s.vote_temperatures == std::vector<double>{0.0, 0.1, 0.2, 0.3});
  REQUIRE(s.extra_temperatures.size() == 7);
  CHECK(s.extra_temperatures.front() == doctest::Approx(0.4));
  CHECK(s.extra_temperatures.back() == doctest::Approx(1.0));
  CHECK(s.samples_per_temperature == 5);
  CHECK(s.vote_count() == 20);
  CHECK(s.is_vote_temperature(0.2));
  CHECK_FALSE(s.is_vote_temperature(0.7));
  s.validate();  // must not throw
}

TEST_CASE("schedule validation rejects inverted tiers") {
  TemperatureSchedule s;
  s.vote_temperatures = {0.0, 0.5};
  s.extra_temperatures = {0.4};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.vote_temperatures = {};
  s.extra_temperatures = {0.4};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.vote_temperatures = {0.0};
  s.extra_temperatures = {};
  s.samples_per_temperature = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.samples_per_temperature = 1;
  s.vote_temperatures = {-0.1};
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("vote matches the brute-force oracle on random multisets") {
  // the acceptance gate runs 1000 of these; keep a smaller smoke version in
  // the unit suite
  Rng rng(171);
  const std::vector<std::string> pool = {"1", "2", "3", "01", "B", "b", ""};
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::optional<std::string>> extracted;
    const int n = 1 + static_cast<int>(rng.below(24));
    for (int i = 0; i < n; ++i) {
      const auto pick = rng.below(pool.size() + 2);
      if (pick >= pool.size())
        extracted.push_back(std::nullopt);
      else if (pool[pick].empty())
        extracted.push_back(std::string("  "));  // normalizes to nothing
      else
        extracted.push_back(pool[pick]);
    }
    const double threshold = trial % 3 == 0 ? 0.5 : (trial % 3 == 1 ? 0.7 : 0.9);
    VoteOutcome got = vote(extracted, threshold);
    VoteOutcome want = oracle_vote(extracted, threshold);
    CAPTURE(trial);
    CHECK(got.labeled == want.labeled);
    CHECK(got.answer == want.answer);
    CHECK(got.support == want.support);
    CHECK(got.absent == want.absent);
    CHECK(got.total == want.total);
    CHECK(got.histogram == want.histogram);
  }
}

TEST_CASE("extraction canonicalizes spellings before the vote sees them") {
  // raw responses spell the same answer three ways; extraction canonicalizes,
  // so the vote bins them together
  std::vector<std::optional<std::string>> extracted;
  for (const char* text : {"The answer is 7.", "The answer is 7.0.",
                           "The answer is $7.", "The answer is 8."}) {
    auto a = extraction::extract_final_answer(text);
    REQUIRE(a);
    extracted.push_back(a->canonical);
  }
  VoteOutcome v = vote(extracted, 0.7);
  CHECK(v.labeled);
  CHECK(v.answer == "7");
  CHECK(v.support == 3);
  CHECK(v.total == 4);
}

TEST_CASE("vote folds answer casing into one bin") {
  std::vector<std::optional<std::string>> e = {"B", "b", "B", "c"};
  VoteOutcome v = vote(e, 0.7);
  CHECK(v.labeled);
  CHECK(v.answer == "B");  // first-seen display form
  CHECK(v.support == 3);
}

TEST_CASE("absent answers dilute support but never win") {
  std::vector<std::optional<std::string>> e = {"4", "4", std::nullopt, std::nullopt};
  // 2/4 = 0.5 is not strictly above 0.5
  VoteOutcome half = vote(e, 0.5);
  CHECK_FALSE(half.labeled);
  CHECK(half.absent == 2);
  // but is strictly above 0.4
  VoteOutcome pass = vote(e, 0.4);
  CHECK(pass.labeled);
  CHECK(pass.answer == "4");
  // all-absent can never label
  std::vector<std::optional<std::string>> none = {std::nullopt, std::nullopt};
  CHECK_FALSE(vote(none, 0.0).labeled);
}

TEST_CASE("count ties break toward the smallest bin key") {
  std::vector<std::optional<std::string>> e = {"b", "a", "b", "a", "a", "b"};
  VoteOutcome v = vote(e, 0.4);
  CHECK(v.labeled);
  CHECK(v.answer == "a");
}

TEST_CASE("exact threshold boundary uses strict comparison") {
  // 14 of 20 at threshold 0.7 is equality, which must not adopt
  std::vector<std::optional<std::string>> e;
  for (int i = 0; i < 14; ++i) e.push_back(std::string("9"));
  for (int i = 0; i < 6; ++i) e.push_back(std::string("8"));
  CHECK_FALSE(vote(e, 0.7).labeled);
  e[14] = "9";  // 15 of 20
  CHECK(vote(e, 0.7).labeled);
}

TEST_CASE("vote_pseudo_labels only counts vote-tier records") {
  TemperatureSchedule s;
  s.vote_temperatures = {0.0, 0.1};
  s.extra_temperatures = {0.9};
  s.samples_per_temperature = 1;
  std::vector<Query> qs = {make_query("q1")};
  std::vector<GenerationRecord> records = {
      rec("q1", 0.0, 0, "The answer is 5."),
      rec("q1", 0.1, 0, "The answer is 5."),
      // high-temperature record disagrees but must not vote
      rec("q1", 0.9, 0, "The answer is 6."),
  };
  auto pseudo = vote_pseudo_labels(qs, records, s, 0.7);
  REQUIRE(pseudo.size() == 1);
  CHECK(pseudo[0].labeled);
  CHECK(pseudo[0].answer == "5");
  CHECK(pseudo[0].total_votes == 2);
  CHECK(pseudo[0].support == doctest::Approx(1.0));
}

TEST_CASE("support is recorded as a fraction of all votes") {
  TemperatureSchedule s;
  s.vote_temperatures = {0.0};
  s.extra_temperatures = {};
  s.samples_per_temperature = 5;
  std::vector<Query> qs = {make_query("q1")};
  std::vector<GenerationRecord> records = {
      rec("q1", 0.0, 0, "The answer is 5."),
      rec("q1", 0.0, 1, "The answer is 5."),
      rec("q1", 0.0, 2, "The answer is 5."),
      rec("q1", 0.0, 3, "The answer is 5."),
      rec("q1", 0.0, 4, "no marker"),
  };
  auto pseudo = vote_pseudo_labels(qs, records, s, 0.7);
  REQUIRE(pseudo.size() == 1);
  CHECK(pseudo[0].labeled);
  CHECK(pseudo[0].support == doctest::Approx(0.8));
  CHECK(pseudo[0].absent_count == 1);
  CHECK(pseudo[0].total_votes == 5);
  CHECK(pseudo[0].vote_histogram.at("5") == 4);
}

TEST_CASE("propagate_labels marks every record of labeled queries") {
  std::vector<Query> qs = {make_query("q1"), make_query("q2")};
  TemperatureSchedule s;
  s.vote_temperatures = {0.0};
  s.extra_temperatures = {0.9};
  s.samples_per_temperature = 2;
  std::vector<GenerationRecord> records = {
      rec("q1", 0.0, 0, "The answer is 5."),
      rec("q1", 0.0, 1, "The answer is 5."),
      rec("q1", 0.9, 0, "The answer is 6."),   // labeled incorrect
      rec("q1", 0.9, 1, "no marker at all"),   // absent -> incorrect
      rec("q2", 0.0, 0, "The answer is 1."),
      rec("q2", 0.0, 1, "The answer is 2."),   // 1/2 not > 0.7: q2 unlabeled
  };
  auto pseudo = vote_pseudo_labels(qs, records, s, 0.7);
  propagate_labels(records, pseudo);
  CHECK(records[0].label == Label::kCorrect);
  CHECK(records[1].label == Label::kCorrect);
  CHECK(records[2].label == Label::kIncorrect);
  CHECK(records[3].label == Label::kIncorrect);
  CHECK(records[4].label == Label::kUnlabeled);
  CHECK(records[5].label == Label::kUnlabeled);
}

TEST_CASE("sft dataset keeps correct records from both tiers") {
  std::vector<Query> qs = {make_query("q1")};
  TemperatureSchedule s;
  s.vote_temperatures = {0.0};
  s.extra_temperatures = {0.9};
  s.samples_per_temperature = 2;
  std::vector<GenerationRecord> records = {
      rec("q1", 0.0, 0, "The answer is 5."),
      rec("q1", 0.0, 1, "The answer is 5."),
      rec("q1", 0.9, 0, "Step 1: filler. The answer is 5."),  // extra tier, correct
      rec("q1", 0.9, 1, "The answer is 6."),
  };
  auto pseudo = vote_pseudo_labels(qs, records, s, 0.7);
  propagate_labels(records, pseudo);
  auto sft = build_sft_dataset(qs, records);
  REQUIRE(sft.size() == 3);
  std::set<std::string> texts;
  for (const auto& p : sft) {
    texts.insert(p.response_text);
    CHECK(p.query_id == "q1");
    CHECK(p.query_text == qs[0].text);
  }
  CHECK(texts.count("Step 1: filler. The answer is 5."));

  auto unfiltered = build_unfiltered_sft_dataset(qs, records);
  CHECK(unfiltered.size() == 4);  // everything with an extractable answer
}

TEST_CASE("sft pairs round trip through jsonl") {
  testutil::TempDir dir("sft");
  std::vector<SftPair> pairs = {{"q1", "prompt text", "response text"},
                                {"q2", "p2", "r2"}};
  const auto path = dir.path() / "pairs.jsonl";
  save_sft_pairs(path, pairs);
  auto back = load_sft_pairs(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].query_id == pairs[0].query_id);
  CHECK(back[0].query_text == pairs[0].query_text);
  CHECK(back[0].response_text == pairs[0].response_text);
}

TEST_CASE("student set needs a pseudo-label and at least one wrong sample") {
  std::vector<Query> qs = {make_query("q1"), make_query("q2"), make_query("q3")};
  TemperatureSchedule s;
  s.vote_temperatures = {0.0};
  s.extra_temperatures = {};
  s.samples_per_temperature = 1;
  std::vector<GenerationRecord> teacher = {
      rec("q1", 0.0, 0, "The answer is 5."),
      rec("q2", 0.0, 0, "The answer is 6."),
      // q3 fails the vote
      rec("q3", 0.0, 0, "no answer marker"),
  };
  auto pseudo = vote_pseudo_labels(qs, teacher, s, 0.5);
  std::vector<GenerationRecord> student = {
      // q1: one right, one wrong -> in the set
      rec("q1", 0.7, 0, "The answer is 5.", Source::kStudentWarmup),
      rec("q1", 0.7, 1, "The answer is 9.", Source::kStudentWarmup),
      // q2: always right -> excluded
      rec("q2", 0.7, 0, "The answer is 6.", Source::kStudentWarmup),
      rec("q2", 0.7, 1, "The answer is 6.", Source::kStudentWarmup),
      // q3: wrong but unlabeled -> excluded
      rec("q3", 0.7, 0, "The answer is 1.", Source::kStudentWarmup),
  };
  auto set = build_student_set(student, pseudo);
  CHECK(set == std::vector<std::string>{"q1"});
}

TEST_CASE("missing student extraction counts as a wrong sample") {
  std::vector<Query> qs = {make_query("q1")};
  TemperatureSchedule s;
  s.vote_temperatures = {0.0};
  s.extra_temperatures = {};
  s.samples_per_temperature = 1;
  std::vector<GenerationRecord> teacher = {rec("q1", 0.0, 0, "The answer is 5.")};
  auto pseudo = vote_pseudo_labels(qs, teacher, s, 0.5);
  std::vector<GenerationRecord> student = {
      rec("q1", 0.7, 0, "The answer is 5.", Source::kStudentWarmup),
      rec("q1", 0.7, 1, "rambling with no marker", Source::kStudentWarmup),
  };
  CHECK(build_student_set(student, pseudo) == std::vector<std::string>{"q1"});
}

TEST_CASE("reward groups are balanced and keyed to the pseudo-label") {
  std::vector<Query> qs = {make_query("q1")};
  TemperatureSchedule s;
  s.vote_temperatures = {0.0};
  s.extra_temperatures = {};
  s.samples_per_temperature = 3;
  std::vector<GenerationRecord> teacher = {
      rec("q1", 0.0, 0, "The answer is 5."),
      rec("q1", 0.0, 1, "The answer is 5."),
      rec("q1", 0.0, 2, "The answer is 5."),
  };
  auto pseudo = vote_pseudo_labels(qs, teacher, s, 0.7);
  propagate_labels(teacher, pseudo);
  std::vector<GenerationRecord> student;
  for (int i = 0; i < 4; ++i)
    student.push_back(rec("q1", 0.7, i, "The answer is 5.", Source::kStudentWarmup));
  for (int i = 4; i < 6; ++i)
    student.push_back(rec("q1", 0.7, i, "The answer is 7.", Source::kStudentWarmup));
  propagate_labels(student, pseudo);
  auto set = build_student_set(student, pseudo);
  Rng rng(5);
  auto built = build_reward_groups(qs, set, student, teacher, 1.0, rng);
  REQUIRE(built.groups.size() == 1);
  const auto& g = built.groups[0];
  // n = min(4 correct, 2 incorrect, 3 teacher) = 2
  CHECK(g.student_correct.size() == 2);
  CHECK(g.student_incorrect.size() == 2);
  CHECK(g.teacher_correct.size() == 2);
  CHECK(built.skipped.empty());
  validate_reward_groups(built.groups, 1.0);
}

TEST_CASE("teacher share ratio resizes only the teacher slice") {
  std::vector<Query> qs = {make_query("q1")};
  TemperatureSchedule s;
  s.vote_temperatures = {0.0};
  s.extra_temperatures = {};
  s.samples_per_temperature = 6;
  std::vector<GenerationRecord> teacher;
  for (int i = 0; i < 6; ++i)
    teacher.push_back(rec("q1", 0.0, i, "The answer is 5."));
  auto pseudo = vote_pseudo_labels(qs, teacher, s, 0.7);
  propagate_labels(teacher, pseudo);
  std::vector<GenerationRecord> student;
  for (int i = 0; i < 3; ++i)
    student.push_back(rec("q1", 0.7, i, "The answer is 5.", Source::kStudentWarmup));
  for (int i = 3; i < 6; ++i)
    student.push_back(rec("q1", 0.7, i, "The answer is 8.", Source::kStudentWarmup));
  propagate_labels(student, pseudo);
  auto set = build_student_set(student, pseudo);

  Rng r1(5);
  auto half = build_reward_groups(qs, set, student, teacher, 0.5, r1);
  REQUIRE(half.groups.size() == 1);
  CHECK(half.groups[0].student_correct.size() == 3);
  CHECK(half.groups[0].teacher_correct.size() == 2);  // round(0.5*3)

  Rng r2(5);
  auto twice = build_reward_groups(qs, set, student, teacher, 2.0, r2);
  CHECK(twice.groups[0].teacher_correct.size() == 6);  // clamped to available

  Rng r3(5);
  auto tiny = build_reward_groups(qs, set, student, teacher, 0.01, r3);
  CHECK(tiny.groups[0].teacher_correct.size() == 1);  // floor of one
  validate_reward_groups(tiny.groups, 0.01);
}

TEST_CASE("queries with no usable contrast are skipped with a reason") {
  std::vector<Query> qs = {make_query("q1")};
  TemperatureSchedule s;
  s.vote_temperatures = {0.0};
  s.extra_temperatures = {};
  s.samples_per_temperature = 1;
  std::vector<GenerationRecord> teacher = {rec("q1", 0.0, 0, "The answer is 5.")};
  auto pseudo = vote_pseudo_labels(qs, teacher, s, 0.5);
  propagate_labels(teacher, pseudo);
  // student never matches the label: no correct side, so no group
  std::vector<GenerationRecord> student = {
      rec("q1", 0.7, 0, "The answer is 8.", Source::kStudentWarmup),
  };
  propagate_labels(student, pseudo);
  auto set = build_student_set(student, pseudo);
  REQUIRE(set == std::vector<std::string>{"q1"});
  Rng rng(5);
  auto built = build_reward_groups(qs, set, student, teacher, 1.0, rng);
  CHECK(built.groups.empty());
  REQUIRE(built.skipped.size() == 1);
  CHECK(built.skipped[0].query_id == "q1");
  CHECK_FALSE(built.skipped[0].reason.empty());
}

TEST_CASE("reward groups round trip through jsonl") {
  testutil::TempDir dir("groups");
  RewardGroup g;
  g.query_id = "q1";
  g.query_text = "text";
  g.student_correct = {"a", "b"};
  g.student_incorrect = {"c", "d"};
  g.teacher_correct = {"e", "f"};
  const auto path = dir.path() / "groups.jsonl";
  save_reward_groups(path, {g});
  auto back = load_reward_groups(path);
  REQUIRE(back.size() == 1);
  CHECK(back[0].student_correct == g.student_correct);
  CHECK(back[0].teacher_correct == g.teacher_correct);
}

TEST_CASE("rl pool unions and dedups group and failed queries") {
  auto pool = rl_query_pool({"a", "b", "c"}, {"b", "d"}, 9);
  std::set<std::string> s(pool.begin(), pool.end());
  CHECK(s == std::set<std::string>{"a", "b", "c", "d"});
  CHECK(pool.size() == 4);
  // deterministic order for a fixed seed
  CHECK(pool == rl_query_pool({"a", "b", "c"}, {"b", "d"}, 9));
  // seed changes the order but not the membership
  auto other = rl_query_pool({"a", "b", "c"}, {"b", "d"}, 10);
  std::set<std::string> s2(other.begin(), other.end());
  CHECK(s2 == s);
}

TEST_CASE("collect_generations records cover the full schedule in order") {
  synthtask::SynthConfig sc;
  sc.query_count = 3;
  sc.seed = 77;
  auto qs = synthtask::generate_queries(sc);
  synthtask::TeacherErrorModel m;
  backend::SimulatedTeacherBackend be(m, 21);
  TemperatureSchedule s;
  s.vote_temperatures = {0.0, 0.1};
  s.extra_temperatures = {0.8};
  s.samples_per_temperature = 2;
  auto prompt_fn = [](const Query& q) { return q.text; };
  auto records = collect_generations(be, qs, prompt_fn, s, Source::kTeacher, 96);
  REQUIRE(records.size() == qs.size() * 6);
  // per query: vote temps first, then extras; sample indices restart per temp
  for (std::size_t qi = 0; qi < qs.size(); ++qi) {
    const auto* base = &records[qi * 6];
    CHECK(base[0].temperature == 0.0);
    CHECK(base[1].temperature == 0.0);
    CHECK(base[2].temperature == 0.1);
    CHECK(base[3].temperature == 0.1);
    CHECK(base[4].temperature == 0.8);
    CHECK(base[5].temperature == 0.8);
    CHECK(base[0].sample_index == 0);
    CHECK(base[1].sample_index == 1);
    for (int k = 0; k < 6; ++k) {
      CHECK(base[k].query_id == qs[qi].id);
      CHECK(base[k].source == Source::kTeacher);
      // simulated teacher always ends with an extractable marker
      CHECK(base[k].extracted_answer.has_value());
    }
  }
  // rerunning reproduces identical records (pure backend)
  auto again = collect_generations(be, qs, prompt_fn, s, Source::kTeacher, 96);
  CHECK(again == records);
}

TEST_CASE("single-temperature collection matches the student sampling shape") {
  synthtask::SynthConfig sc;
  sc.query_count = 2;
  sc.seed = 78;
  auto qs = synthtask::generate_queries(sc);
  synthtask::TeacherErrorModel m;
  backend::SimulatedTeacherBackend be(m, 22);
  auto prompt_fn = [](const Query& q) { return q.text; };
  auto records =
      collect_generations(be, qs, prompt_fn, 0.7, 4, Source::kStudentWarmup, 96);
  REQUIRE(records.size() == 8);
  for (const auto& r : records) {
    CHECK(r.temperature == 0.7);
    CHECK(r.source == Source::kStudentWarmup);
  }
}

TEST_CASE("distill stats aggregate the corpus") {
  std::vector<Query> qs = {make_query("q1", "5"), make_query("q2", "7")};
  TemperatureSchedule s;
  s.vote_temperatures = {0.0};
  s.extra_temperatures = {};
  s.samples_per_temperature = 2;
  std::vector<GenerationRecord> teacher = {
      rec("q1", 0.0, 0, "The answer is 5."),
      rec("q1", 0.0, 1, "The answer is 5."),
      rec("q2", 0.0, 0, "The answer is 6."),  // wrong answer adopted
      rec("q2", 0.0, 1, "The answer is 6."),
  };
  auto pseudo = vote_pseudo_labels(qs, teacher, s, 0.7);
  propagate_labels(teacher, pseudo);
  auto sft = build_sft_dataset(qs, teacher);
  auto stats = compute_distill_stats(qs, teacher, pseudo, sft);
  CHECK(stats.query_count == 2);
  CHECK(stats.teacher_records == 4);
  CHECK(stats.labeled_queries == 2);
  CHECK(stats.failed_queries == 0);
  CHECK(stats.sft_pairs == 4);
  CHECK(stats.mean_support_fraction == doctest::Approx(1.0));
  REQUIRE(stats.pseudo_label_error_rate.has_value());
  CHECK(*stats.pseudo_label_error_rate == doctest::Approx(0.5));
  // serializes to json
  CHECK(stats.to_json().find("pseudo_label_error_rate") != std::string::npos);
}
