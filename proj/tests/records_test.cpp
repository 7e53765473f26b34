#include <doctest.h>

#include <set>
#include <sstream>

#include "ebench/error.hpp"
#include "ebench/records.hpp"

using namespace ebench;

namespace {

Dataset ingest_str(const std::string& text,
                   MetricKind kind = MetricKind::BinaryAccuracy) {
  std::istringstream in(text);
  return ingest_records(in, kind);
}

}  // namespace

TEST_CASE("ingest: empty stream gives empty dataset") {
  const Dataset d = ingest_str("");
  CHECK(d.records.empty());
  CHECK_FALSE(d.embedding_dim.has_value());
}

TEST_CASE("ingest: three valid lines, two groups") {
  const std::string text =
      R"({"example_id":"e1","model_id":"m","task_id":"t","group":"a","score":1})"
      "\n"
      R"({"example_id":"e2","model_id":"m","task_id":"t","group":"a","score":0})"
      "\n"
      R"({"example_id":"e3","model_id":"m","task_id":"t","group":"b","score":1})"
      "\n";
  const Dataset d = ingest_str(text);
  REQUIRE(d.records.size() == 3);
  const auto groups = partition_by_group(d, GroupingSpec{});
  CHECK(groups.size() == 2);
  CHECK(groups[0].group_key == "a");
  CHECK(groups[1].group_key == "b");
}

TEST_CASE("ingest: embedding dimension mismatch is a schema error") {
  const std::string text =
      R"({"example_id":"e1","model_id":"m","task_id":"t","score":1,"embedding":[1,2,3,4,5,6,7,8]})"
      "\n"
      R"({"example_id":"e2","model_id":"m","task_id":"t","score":0,"embedding":[1,2,3,4]})"
      "\n";
  CHECK_THROWS_AS(ingest_str(text), SchemaError);
}

TEST_CASE("ingest: malformed line names the line number") {
  const std::string text =
      R"({"example_id":"e1","model_id":"m","task_id":"t","score":1})"
      "\nnot json\n";
  try {
    ingest_str(text);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("ingest: unknown key rejected") {
  CHECK_THROWS_AS(
      ingest_str(
          R"({"example_id":"e1","model_id":"m","task_id":"t","score":1,"bogus":2})"
          "\n"),
      ParseError);
}

TEST_CASE("ingest: binary score outside {0,1} is a domain error") {
  CHECK_THROWS_AS(
      ingest_str(
          R"({"example_id":"e1","model_id":"m","task_id":"t","score":0.5})"
          "\n",
          MetricKind::BinaryAccuracy),
      DomainError);
  // same line is fine as a bounded score
  CHECK_NOTHROW(ingest_str(
      R"({"example_id":"e1","model_id":"m","task_id":"t","score":0.5})"
      "\n",
      MetricKind::BoundedScore));
}

TEST_CASE("ingest: duplicate example per (model,task) rejected") {
  const std::string text =
      R"({"example_id":"e1","model_id":"m","task_id":"t","score":1})"
      "\n"
      R"({"example_id":"e1","model_id":"m","task_id":"t","score":0})"
      "\n";
  CHECK_THROWS_AS(ingest_str(text), SchemaError);
  // same example under a different model is allowed
  const std::string ok =
      R"({"example_id":"e1","model_id":"m1","task_id":"t","score":1})"
      "\n"
      R"({"example_id":"e1","model_id":"m2","task_id":"t","score":0})"
      "\n";
  CHECK(ingest_str(ok).records.size() == 2);
}

TEST_CASE("ingest is deterministic: same bytes, same dataset") {
  const std::string text =
      R"({"example_id":"e1","model_id":"m","task_id":"t","group":"a","score":1,"confidence":0.25,"embedding":[0.5,-1]})"
      "\n";
  const Dataset a = ingest_str(text);
  const Dataset b = ingest_str(text);
  REQUIRE(a.records.size() == b.records.size());
  CHECK(record_to_line(a.records[0]) == record_to_line(b.records[0]));
  CHECK(a.embedding_dim == b.embedding_dim);
}

namespace {

EvalRecord make_rec(const std::string& id, const std::string& model,
                    const std::string& group, double score) {
  EvalRecord r;
  r.example_id = id;
  r.model_id = model;
  r.task_id = "t";
  r.group_key = group;
  r.score = score;
  return r;
}

}  // namespace

TEST_CASE("partition: keys {a,a,b,b} give two groups of two") {
  Dataset d;
  d.records = {make_rec("e1", "m", "a", 1), make_rec("e2", "m", "a", 0),
               make_rec("e3", "m", "b", 1), make_rec("e4", "m", "b", 0)};
  const auto groups = partition_by_group(d, GroupingSpec{});
  REQUIRE(groups.size() == 2);
  CHECK(groups[0].records.size() == 2);
  CHECK(groups[1].records.size() == 2);
}

TEST_CASE("partition: single record forms its own group") {
  Dataset d;
  d.records = {make_rec("e1", "m", "x", 1)};
  const auto groups = partition_by_group(d, GroupingSpec{});
  REQUIRE(groups.size() == 1);
  CHECK(groups[0].group_key == "x");
  CHECK(groups[0].records.size() == 1);
}

TEST_CASE("partition: missing key under given-keys names the example") {
  Dataset d;
  d.records = {make_rec("e1", "m", "a", 1)};
  d.records.push_back(EvalRecord{"e2", "m", "t", std::nullopt, 1.0, {}, {}});
  try {
    partition_by_group(d, GroupingSpec{});
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find("e2") != std::string::npos);
  }
}

TEST_CASE("partition: external assignment must cover all records") {
  Dataset d;
  d.records = {make_rec("e1", "m", "a", 1), make_rec("e2", "m", "a", 0)};
  GroupingSpec g;
  g.mode = GroupingSpec::Mode::ExternalAssignment;
  g.assignment = {{"e1", "c0"}};
  CHECK_THROWS_AS(partition_by_group(d, g), SchemaError);
  g.assignment["e2"] = "c1";
  const auto groups = partition_by_group(d, g);
  CHECK(groups.size() == 2);
}

TEST_CASE("partition then flatten recovers the record multiset") {
  Dataset d;
  for (int i = 0; i < 20; ++i) {
    d.records.push_back(make_rec("e" + std::to_string(i), "m" + std::to_string(i % 2),
                                 "g" + std::to_string(i % 3), i % 2));
  }
  const auto groups = partition_by_group(d, GroupingSpec{});
  std::multiset<std::string> before, after;
  for (const auto& r : d.records) before.insert(record_to_line(r));
  std::size_t total = 0;
  for (const auto& g : groups) {
    total += g.records.size();
    for (const auto& r : g.records) after.insert(record_to_line(r));
  }
  CHECK(total == d.records.size());
  CHECK(before == after);
}

TEST_CASE("split_by_model yields model-pure units ordered by (group, model)") {
  Dataset d;
  d.records = {make_rec("e1", "m2", "b", 1), make_rec("e1", "m1", "b", 0),
               make_rec("e2", "m1", "a", 1)};
  const auto groups = partition_by_group(d, GroupingSpec{});
  const auto units = split_by_model(groups);
  REQUIRE(units.size() == 3);
  CHECK(units[0].group_key == "a");
  CHECK(unit_model(units[0]) == "m1");
  CHECK(units[1].group_key == "b");
  CHECK(unit_model(units[1]) == "m1");
  CHECK(unit_model(units[2]) == "m2");
}

TEST_CASE("unit_task returns the modal task") {
  SubgroupData u;
  u.group_key = "g";
  for (int i = 0; i < 3; ++i) {
    EvalRecord r = make_rec("e" + std::to_string(i), "m", "g", 1);
    r.task_id = i < 2 ? "t2" : "t1";
    u.records.push_back(r);
  }
  CHECK(unit_task(u) == "t2");
}
