#include "ebench/features.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "ebench/error.hpp"

namespace ebench {

bool FeatureMatrix::has_block(const std::string& name) const {
  for (const auto& b : schema) {
    if (b.name == name) return true;
  }
  return false;
}

std::pair<std::size_t, std::size_t> FeatureMatrix::block_span(
    const std::string& name) const {
  std::size_t off = 0;
  for (const auto& b : schema) {
    if (b.name == name) return {off, b.width};
    off += b.width;
  }
  throw ArgumentError("feature block not found: " + name);
}

std::string unit_key(const SubgroupData& unit) {
  return unit.group_key + "|" + unit_model(unit);
}

bool schema_equal(const std::vector<FeatureBlock>& a,
                  const std::vector<FeatureBlock>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].width != b[i].width) return false;
  }
  return true;
}

FeatureMatrix append_unit_block(const FeatureMatrix& base) {
  if (base.has_block("unit")) {
    throw ArgumentError("append_unit_block: block already present");
  }
  const Eigen::Index n = base.X.rows();
  FeatureMatrix out;
  out.schema = base.schema;
  out.schema.push_back({"unit", static_cast<std::size_t>(n), false});
  out.group_keys = base.group_keys;
  out.X = Eigen::MatrixXd::Zero(n, base.X.cols() + n);
  out.X.leftCols(base.X.cols()) = base.X;
  for (Eigen::Index i = 0; i < n; ++i) out.X(i, base.X.cols() + i) = 1.0;
  return out;
}

FeatureMatrix build_features(std::span<const SubgroupData> units,
                             const FeatureConfig& config) {
  if (units.empty()) throw ArgumentError("build_features: no units");

  const std::size_t n = units.size();
  std::size_t emb_dim = 0;
  if (config.embedding) {
    for (const auto& u : units) {
      for (const auto& rec : u.records) {
        if (!rec.embedding) {
          throw DomainError("missing field 'embedding' in subgroup '" +
                            u.group_key + "' (example_id=" + rec.example_id +
                            ")");
        }
        if (emb_dim == 0) emb_dim = rec.embedding->size();
      }
    }
  }
  if (config.confidence) {
    for (const auto& u : units) {
      for (const auto& rec : u.records) {
        if (!rec.confidence) {
          throw DomainError("missing field 'confidence' in subgroup '" +
                            u.group_key + "' (example_id=" + rec.example_id +
                            ")");
        }
      }
    }
  }

  std::set<std::string> model_set;
  std::set<std::string> task_set;
  std::vector<std::string> unit_models(n);
  std::vector<std::string> unit_tasks(n);
  for (std::size_t i = 0; i < n; ++i) {
    unit_models[i] = unit_model(units[i]);
    unit_tasks[i] = unit_task(units[i]);
    model_set.insert(unit_models[i]);
    task_set.insert(unit_tasks[i]);
  }
  std::vector<std::string> models(model_set.begin(), model_set.end());
  std::vector<std::string> tasks(task_set.begin(), task_set.end());

  FeatureMatrix fm;
  if (config.embedding) fm.schema.push_back({"embedding", emb_dim, true});
  if (config.confidence) fm.schema.push_back({"confidence", 1, true});
  if (config.model_intercept) {
    fm.schema.push_back({"model", models.size(), false});
  }
  if (config.task_intercept) fm.schema.push_back({"task", tasks.size(), false});
  if (config.unit_intercept) fm.schema.push_back({"unit", n, false});

  std::size_t width = 0;
  for (const auto& b : fm.schema) width += b.width;
  fm.X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n),
                               static_cast<Eigen::Index>(width));
  fm.group_keys.reserve(n);

  for (std::size_t i = 0; i < n; ++i) {
    const auto& u = units[i];
    fm.group_keys.push_back(unit_key(u));
    std::size_t off = 0;
    if (config.embedding) {
      for (const auto& rec : u.records) {
        if (rec.embedding->size() != emb_dim) {
          throw SchemaError("inconsistent embedding dimension in subgroup '" +
                            u.group_key + "'");
        }
        for (std::size_t d = 0; d < emb_dim; ++d) {
          fm.X(i, off + d) += (*rec.embedding)[d];
        }
      }
      for (std::size_t d = 0; d < emb_dim; ++d) {
        fm.X(i, off + d) /= static_cast<double>(u.records.size());
      }
      off += emb_dim;
    }
    if (config.confidence) {
      double sum = 0.0;
      for (const auto& rec : u.records) sum += *rec.confidence;
      fm.X(i, off) = sum / static_cast<double>(u.records.size());
      off += 1;
    }
    if (config.model_intercept) {
      const auto it =
          std::lower_bound(models.begin(), models.end(), unit_models[i]);
      fm.X(i, off + static_cast<std::size_t>(it - models.begin())) = 1.0;
      off += models.size();
    }
    if (config.task_intercept) {
      const auto it =
          std::lower_bound(tasks.begin(), tasks.end(), unit_tasks[i]);
      fm.X(i, off + static_cast<std::size_t>(it - tasks.begin())) = 1.0;
      off += tasks.size();
    }
    if (config.unit_intercept) {
      fm.X(i, off + i) = 1.0;
      off += n;
    }
  }
  return fm;
}

}  // namespace ebench
