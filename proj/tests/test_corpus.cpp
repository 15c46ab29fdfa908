#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "drd/corpus.hpp"
#include "drd/error.hpp"
#include "testutil.hpp"

using namespace drd::corpus;

namespace {

std::vector<Query> make_queries(int n) {
  std::vector<Query> qs;
  for (int i = 0; i < n; ++i) {
    Query q;
    q.id = "q-" + std::to_string(i);
    q.text = "what is " + std::to_string(i) + "?";
    if (i % 2 == 0) q.oracle_answer = std::to_string(i);
    if (i % 5 == 0) q.options = "A) 1 B) 2";
    qs.push_back(q);
  }
  return qs;
}

}  // namespace

TEST_CASE("enum names round trip") {
  for (Split s : {Split::kTrain, Split::kValidation, Split::kTest})
    CHECK(split_from_name(split_name(s)) == s);
  for (Source s : {Source::kTeacher, Source::kStudentWarmup, Source::kStudentRl})
    CHECK(source_from_name(source_name(s)) == s);
  for (Label l : {Label::kUnlabeled, Label::kCorrect, Label::kIncorrect})
    CHECK(label_from_name(label_name(l)) == l);
  CHECK_THROWS_AS(split_from_name("bogus"), drd::ConfigError);
}

TEST_CASE("split_queries partitions exactly and ignores insertion order") {
  auto qs = make_queries(100);
  SplitResult a = split_queries(qs, 0.6, 0.2, 99);
  CHECK(a.train.size() == 60);
  CHECK(a.validation.size() == 20);
  CHECK(a.test.size() == 20);

  // no duplicates, no losses
  std::set<std::string> ids;
  for (const auto& part : {a.train, a.validation, a.test})
    for (const auto& q : part) ids.insert(q.id);
  CHECK(ids.size() == 100);

  // shuffled input produces the same partition
  auto shuffled = qs;
  std::reverse(shuffled.begin(), shuffled.end());
  SplitResult b = split_queries(shuffled, 0.6, 0.2, 99);
  auto id_of = [](const std::vector<Query>& v) {
    std::set<std::string> s;
    for (const auto& q : v) s.insert(q.id);
    return s;
  };
  CHECK(id_of(a.train) == id_of(b.train));
  CHECK(id_of(a.validation) == id_of(b.validation));
  CHECK(id_of(a.test) == id_of(b.test));

  // a different seed moves queries between splits
  SplitResult c = split_queries(qs, 0.6, 0.2, 100);
  CHECK(id_of(a.train) != id_of(c.train));
}

TEST_CASE("split_queries validates ratios") {
  auto qs = make_queries(10);
  CHECK_THROWS_AS(split_queries(qs, 0.8, 0.4, 1), drd::ConfigError);
  CHECK_THROWS_AS(split_queries(qs, -0.1, 0.4, 1), drd::ConfigError);
  SplitResult all_train = split_queries(qs, 1.0, 0.0, 1);
  CHECK(all_train.train.size() == 10);
  CHECK(all_train.test.empty());
}

TEST_CASE("queries round trip through jsonl including optional fields") {
  testutil::TempDir dir("corpus");
  auto qs = make_queries(7);
  const auto path = dir.path() / "queries.jsonl";
  save_queries(path, qs);
  auto back = load_queries(path);
  CHECK(back == qs);
}

TEST_CASE("generation records round trip") {
  testutil::TempDir dir("corpus");
  std::vector<GenerationRecord> recs;
  GenerationRecord r;
  r.query_id = "q-1";
  r.source = Source::kStudentWarmup;
  r.temperature = 0.7;
  r.sample_index = 3;
  r.text = "Step 1: 1 + 1 = 2. The answer is 2.";
  r.extracted_answer = "2";
  r.label = Label::kCorrect;
  recs.push_back(r);
  GenerationRecord bare;
  bare.query_id = "q-2";
  bare.text = "no answer here";
  recs.push_back(bare);

  const auto path = dir.path() / "records.jsonl";
  save_records(path, recs);
  CHECK(load_records(path) == recs);
}

TEST_CASE("pseudo labels round trip with histogram and fraction support") {
  testutil::TempDir dir("corpus");
  std::vector<PseudoLabelRecord> labels;
  PseudoLabelRecord p;
  p.query_id = "q-1";
  p.labeled = true;
  p.answer = "12";
  p.support = 0.75;
  p.vote_histogram = {{"12", 6}, {"13", 1}};
  p.absent_count = 1;
  p.total_votes = 8;
  labels.push_back(p);
  PseudoLabelRecord failed;
  failed.query_id = "q-2";
  labels.push_back(failed);

  const auto path = dir.path() / "labels.jsonl";
  save_pseudo_labels(path, labels);
  CHECK(load_pseudo_labels(path) == labels);
}

TEST_CASE("manifest round trips") {
  testutil::TempDir dir("corpus");
  RunManifest m;
  m.tool_version = "0.1.0";
  m.stage = "distill";
  m.config_digest = "abc123";
  m.master_seed = 7;
  m.stream_seeds = {{"synth", 1}, {"split", 2}};
  m.input_digests = {{"queries.jsonl", "d1"}};
  m.output_digests = {{"pseudo_labels.jsonl", "d2"}};
  const auto path = dir.path() / "manifest.json";
  save_manifest(path, m);
  CHECK(load_manifest(path) == m);
}

TEST_CASE("malformed jsonl reports the line number") {
  testutil::TempDir dir("corpus");
  const auto path = dir.path() / "bad.jsonl";
  {
    std::ofstream out(path);
    out << R"({"kind":"query","v":1,"id":"a","text":"t","split":"train"})" << "\n";
    out << "{not json\n";
  }
  try {
    load_queries(path);
    FAIL("expected IoError");
  } catch (const drd::IoError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
}

TEST_CASE("loader rejects the wrong record kind") {
  testutil::TempDir dir("corpus");
  const auto path = dir.path() / "mismatch.jsonl";
  {
    std::ofstream out(path);
    out << R"({"kind":"query","v":1,"id":"a","text":"t","split":"train"})" << "\n";
  }
  CHECK_THROWS_AS(load_records(path), drd::IoError);
}

TEST_CASE("atomic_write leaves no temp files and replaces content") {
  testutil::TempDir dir("corpus");
  const auto path = dir.path() / "out.txt";
  atomic_write(path, "first");
  atomic_write(path, "second");
  std::ifstream in(path);
  std::string content((std::istreambuf_iterator<char>(in)), {});
  CHECK(content == "second");
  int entries = 0;
  for (auto& it : std::filesystem::directory_iterator(dir.path())) {
    (void)it;
    ++entries;
  }
  CHECK(entries == 1);
}

TEST_CASE("missing file raises IoError") {
  CHECK_THROWS_AS(load_queries("/nonexistent/nowhere.jsonl"), drd::IoError);
}
