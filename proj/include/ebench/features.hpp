#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ebench/records.hpp"

namespace ebench {

struct FeatureBlock {
  std::string name;
  std::size_t width = 0;
  bool continuous = false;  // continuous blocks are standardized before fits
};

struct FeatureMatrix {
  Eigen::MatrixXd X;  // one row per subgroup unit
  std::vector<FeatureBlock> schema;
  std::vector<std::string> group_keys;  // "<group>|<model>" per row

  std::size_t rows() const { return static_cast<std::size_t>(X.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(X.cols()); }
  bool has_block(const std::string& name) const;
  // Column offset and width of a named block.
  std::pair<std::size_t, std::size_t> block_span(const std::string& name) const;
};

// Block toggles; order in the row is embedding, confidence, model, task,
// unit. The unit block (one indicator per subgroup unit) is what structured
// regression adds on top of the SR features.
struct FeatureConfig {
  bool embedding = true;
  bool confidence = true;
  bool model_intercept = true;
  bool task_intercept = true;
  bool unit_intercept = false;
};

// Per unit: mean embedding, mean confidence, one-hot model and task
// indicators. Units must be model-pure (see split_by_model). Throws a named
// missing-field error when an enabled block lacks data.
FeatureMatrix build_features(std::span<const SubgroupData> units,
                             const FeatureConfig& config);

std::string unit_key(const SubgroupData& unit);

bool schema_equal(const std::vector<FeatureBlock>& a,
                  const std::vector<FeatureBlock>& b);

// Copy of `base` with a per-unit indicator block appended (what structured
// regression adds on top of the SR features).
FeatureMatrix append_unit_block(const FeatureMatrix& base);

}  // namespace ebench
