#include "ebench/records.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ebench/error.hpp"

namespace ebench {

using nlohmann::json;

std::string metric_kind_name(MetricKind kind) {
  switch (kind) {
    case MetricKind::BinaryAccuracy:
      return "binary";
    case MetricKind::BoundedScore:
      return "bounded";
    case MetricKind::Unbounded:
      return "unbounded";
  }
  return "unknown";
}

MetricKind metric_kind_from_name(const std::string& name) {
  if (name == "binary") return MetricKind::BinaryAccuracy;
  if (name == "bounded") return MetricKind::BoundedScore;
  if (name == "unbounded") return MetricKind::Unbounded;
  throw ArgumentError("unknown metric kind: " + name);
}

bool metric_is_bounded(MetricKind kind) {
  return kind != MetricKind::Unbounded;
}

namespace {

const std::set<std::string> kAllowedKeys = {
    "example_id", "model_id", "task_id", "group",
    "score",      "confidence", "embedding"};

[[noreturn]] void parse_fail(std::size_t line_no, const std::string& what) {
  throw ParseError("line " + std::to_string(line_no) + ": " + what);
}

EvalRecord parse_record(const json& j, std::size_t line_no) {
  if (!j.is_object()) parse_fail(line_no, "record is not an object");
  for (const auto& item : j.items()) {
    if (!kAllowedKeys.count(item.key())) {
      parse_fail(line_no, "unknown key '" + item.key() + "'");
    }
  }
  EvalRecord rec;
  auto require_string = [&](const char* key) {
    if (!j.contains(key) || !j.at(key).is_string()) {
      parse_fail(line_no, std::string("missing or non-string '") + key + "'");
    }
    return j.at(key).get<std::string>();
  };
  rec.example_id = require_string("example_id");
  rec.model_id = require_string("model_id");
  rec.task_id = require_string("task_id");
  if (j.contains("group")) {
    if (!j.at("group").is_string()) parse_fail(line_no, "non-string 'group'");
    rec.group_key = j.at("group").get<std::string>();
  }
  if (!j.contains("score") || !j.at("score").is_number()) {
    parse_fail(line_no, "missing or non-numeric 'score'");
  }
  rec.score = j.at("score").get<double>();
  if (j.contains("confidence")) {
    if (!j.at("confidence").is_number()) {
      parse_fail(line_no, "non-numeric 'confidence'");
    }
    rec.confidence = j.at("confidence").get<double>();
  }
  if (j.contains("embedding")) {
    const auto& e = j.at("embedding");
    if (!e.is_array() || e.empty()) {
      parse_fail(line_no, "'embedding' must be a nonempty array");
    }
    std::vector<double> emb;
    emb.reserve(e.size());
    for (const auto& v : e) {
      if (!v.is_number()) parse_fail(line_no, "non-numeric embedding entry");
      emb.push_back(v.get<double>());
    }
    rec.embedding = std::move(emb);
  }
  return rec;
}

void validate_record(const EvalRecord& rec, MetricKind kind,
                     std::size_t line_no) {
  if (!std::isfinite(rec.score)) {
    throw DomainError("line " + std::to_string(line_no) +
                      ": score is not finite (example_id=" + rec.example_id +
                      ")");
  }
  if (kind == MetricKind::BinaryAccuracy && rec.score != 0.0 &&
      rec.score != 1.0) {
    throw DomainError("line " + std::to_string(line_no) +
                      ": binary metric requires score in {0,1}, got " +
                      std::to_string(rec.score) +
                      " (example_id=" + rec.example_id + ")");
  }
  if (kind == MetricKind::BoundedScore &&
      (rec.score < 0.0 || rec.score > 1.0)) {
    throw DomainError("line " + std::to_string(line_no) +
                      ": bounded metric requires score in [0,1] (example_id=" +
                      rec.example_id + ")");
  }
  if (rec.confidence &&
      (!std::isfinite(*rec.confidence) || *rec.confidence < 0.0 ||
       *rec.confidence > 1.0)) {
    throw DomainError("line " + std::to_string(line_no) +
                      ": confidence must lie in [0,1] (example_id=" +
                      rec.example_id + ")");
  }
  if (rec.embedding) {
    for (double v : *rec.embedding) {
      if (!std::isfinite(v)) {
        throw DomainError("line " + std::to_string(line_no) +
                          ": embedding has non-finite entry (example_id=" +
                          rec.example_id + ")");
      }
    }
  }
}

}  // namespace

Dataset ingest_records(std::istream& in, MetricKind kind) {
  Dataset out;
  out.metric_kind = kind;
  std::string line;
  std::size_t line_no = 0;
  std::set<std::tuple<std::string, std::string, std::string>> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      parse_fail(line_no, std::string("invalid JSON: ") + e.what());
    }
    EvalRecord rec = parse_record(j, line_no);
    validate_record(rec, kind, line_no);
    if (rec.embedding) {
      if (!out.embedding_dim) {
        out.embedding_dim = rec.embedding->size();
      } else if (*out.embedding_dim != rec.embedding->size()) {
        throw SchemaError(
            "line " + std::to_string(line_no) + ": embedding length " +
            std::to_string(rec.embedding->size()) +
            " differs from established dimension " +
            std::to_string(*out.embedding_dim));
      }
    }
    auto key = std::make_tuple(rec.model_id, rec.task_id, rec.example_id);
    if (!seen.insert(key).second) {
      throw SchemaError("line " + std::to_string(line_no) +
                        ": duplicate example_id '" + rec.example_id +
                        "' for model '" + rec.model_id + "', task '" +
                        rec.task_id + "'");
    }
    out.records.push_back(std::move(rec));
  }
  return out;
}

Dataset ingest_file(const std::string& path, MetricKind kind) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open input file: " + path);
  return ingest_records(in, kind);
}

std::string record_to_line(const EvalRecord& rec) {
  json j;
  j["example_id"] = rec.example_id;
  j["model_id"] = rec.model_id;
  j["task_id"] = rec.task_id;
  if (rec.group_key) j["group"] = *rec.group_key;
  j["score"] = rec.score;
  if (rec.confidence) j["confidence"] = *rec.confidence;
  if (rec.embedding) j["embedding"] = *rec.embedding;
  return j.dump();
}

std::vector<SubgroupData> partition_by_group(const Dataset& data,
                                             const GroupingSpec& grouping) {
  std::map<std::string, std::vector<EvalRecord>> buckets;
  for (const auto& rec : data.records) {
    std::string label;
    if (grouping.mode == GroupingSpec::Mode::GivenKeys) {
      if (!rec.group_key) {
        throw SchemaError("record lacks group key under given-keys grouping: "
                          "example_id=" +
                          rec.example_id);
      }
      label = *rec.group_key;
    } else {
      auto it = grouping.assignment.find(rec.example_id);
      if (it == grouping.assignment.end()) {
        throw SchemaError(
            "external assignment does not cover record: example_id=" +
            rec.example_id);
      }
      label = it->second;
    }
    buckets[label].push_back(rec);
  }
  std::vector<SubgroupData> out;
  out.reserve(buckets.size());
  for (auto& [key, recs] : buckets) {
    out.push_back(SubgroupData{key, std::move(recs)});
  }
  return out;
}

std::vector<SubgroupData> split_by_model(std::span<const SubgroupData> groups) {
  std::vector<SubgroupData> out;
  for (const auto& group : groups) {
    std::map<std::string, std::vector<EvalRecord>> by_model;
    for (const auto& rec : group.records) {
      by_model[rec.model_id].push_back(rec);
    }
    for (auto& [model, recs] : by_model) {
      out.push_back(SubgroupData{group.group_key, std::move(recs)});
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const SubgroupData& a, const SubgroupData& b) {
                     if (a.group_key != b.group_key) {
                       return a.group_key < b.group_key;
                     }
                     return a.records.front().model_id <
                            b.records.front().model_id;
                   });
  return out;
}

std::string unit_model(const SubgroupData& unit) {
  if (unit.records.empty()) throw ArgumentError("unit_model: empty subgroup");
  const std::string& model = unit.records.front().model_id;
  for (const auto& rec : unit.records) {
    if (rec.model_id != model) {
      throw ArgumentError("unit_model: subgroup '" + unit.group_key +
                          "' spans several models");
    }
  }
  return model;
}

std::string unit_task(const SubgroupData& unit) {
  if (unit.records.empty()) throw ArgumentError("unit_task: empty subgroup");
  std::map<std::string, std::size_t> counts;
  for (const auto& rec : unit.records) ++counts[rec.task_id];
  auto best = counts.begin();
  for (auto it = counts.begin(); it != counts.end(); ++it) {
    if (it->second > best->second) best = it;
  }
  return best->first;
}

std::size_t distinct_example_count(const SubgroupData& group) {
  std::set<std::pair<std::string, std::string>> ids;
  for (const auto& rec : group.records) {
    ids.emplace(rec.task_id, rec.example_id);
  }
  return ids.size();
}

}  // namespace ebench
