#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ebench/estimators.hpp"
#include "ebench/records.hpp"
#include "ebench/rng.hpp"

namespace ebench {

// ---------------------------------------------------------------------------
// Sampling schemes
// ---------------------------------------------------------------------------

// Proportional: pick the scale s so the smallest group with at least
// qualifier_size distinct examples draws exactly min_target of them; every
// group then draws round(s * N_g) examples, floored at one. Groups below the
// qualifier are sampled too but flagged.
struct ProportionalScheme {
  long min_target = 10;
  long qualifier_size = 50;
};

// EqualSize: drop groups with fewer than drop_factor * n examples, sample
// exactly n from the rest.
struct EqualSizeScheme {
  long n_per_group = 10;
  long drop_factor = 4;
};

struct SamplingScheme {
  std::variant<ProportionalScheme, EqualSizeScheme> mode = ProportionalScheme{};
  std::uint64_t seed = 0;
};

struct SampleResult {
  Dataset data;
  std::vector<std::string> flagged_groups;  // below the qualifier size
};

// Samples distinct examples (task_id/example_id pairs) within each group;
// a sampled example contributes the records of every model that scored it.
SampleResult sample_eval(const Dataset& data, const GroupingSpec& grouping,
                         const SamplingScheme& scheme);

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

// Prior mean f per unit: lookup wins when present, otherwise
//   base + emb_coefs . x_g + model_offsets[model(g)] + task_offsets[task(g)].
struct PriorMeanSpec {
  double base = 0.5;
  std::vector<double> emb_coefs;
  std::vector<double> model_offsets;
  std::vector<double> task_offsets;
  std::vector<double> lookup;  // optional per-unit values
};

enum class OutcomeModel { Gaussian, Binomial };

struct SynthSpec {
  int G = 100;
  int n_models = 1;
  int n_tasks = 1;
  int embedding_dim = 3;
  PriorMeanSpec f;
  double A = 0.01;
  std::vector<double> sigma2_grid = {0.01};  // cycled over units (Gaussian)
  int n_per_group = 20;                      // Binomial mode
  OutcomeModel outcome = OutcomeModel::Gaussian;
  bool confidence_signal = false;
  double clamp_warn_fraction = 0.05;  // Binomial: flag when exceeded
  std::uint64_t seed = 0;
};

// Unit-level constants: identities, features, prior means, noise scales.
// Fixed across trials; only mu and the outcomes are redrawn.
struct SynthDesign {
  std::vector<std::string> group_keys;
  std::vector<std::string> model_ids;
  std::vector<std::string> task_ids;
  std::vector<std::vector<double>> embeddings;
  std::vector<double> confidences;
  std::vector<double> f_values;
  std::vector<double> sigma2;  // Gaussian mode noise variances
};

SynthDesign make_synth_design(const SynthSpec& spec);

struct SynthDraw {
  Dataset data;
  std::vector<double> mu;               // ground truth per unit
  std::vector<std::string> group_keys;  // aligned with mu
  std::vector<double> sigma2_known;     // Gaussian mode
  long clamped_units = 0;               // Binomial mode mu clamps
  bool clamp_flagged = false;
};

SynthDraw synth_generate(const SynthSpec& spec);

// ---------------------------------------------------------------------------
// Benchmark driver
// ---------------------------------------------------------------------------

struct BenchmarkConfig {
  std::vector<Method> methods = {Method::DT, Method::EB};
  SamplingScheme scheme;  // real-data mode only
  long T = 1000;
  std::uint64_t seed = 0;
  int workers = 1;
  double alpha = 0.05;
  bool compute_intervals = true;
  bool use_kappa_constraint = false;
  RegressorSpec regressor;
  PoolScope pool_scope = PoolScope::All;
  FeatureConfig features;
  double failure_threshold = 0.01;  // run fails beyond this excluded share
  // Keep per-trial average squared errors in the report (paired
  // method-comparison statistics need them).
  bool keep_trial_traces = false;
};

struct GroupReport {
  std::string group_key;
  std::string model_id;
  long n = 0;       // per-trial subgroup size
  long trials = 0;  // trials contributing to this cell
  double mse = 0.0;
  double bias2 = 0.0;
  double variance = 0.0;
  double coverage = std::numeric_limits<double>::quiet_NaN();
  double mean_width = std::numeric_limits<double>::quiet_NaN();
};

struct MethodReport {
  Method method = Method::DT;
  std::string label;  // method name, or a custom estimator's name
  double avg_mse = 0.0;
  double rel_efficiency = std::numeric_limits<double>::quiet_NaN();  // vs DT
  double avg_coverage = std::numeric_limits<double>::quiet_NaN();
  double avg_width = std::numeric_limits<double>::quiet_NaN();
  std::vector<GroupReport> groups;
  // Per included trial, the average over units of the squared error;
  // filled only when BenchmarkConfig::keep_trial_traces is set.
  std::vector<double> trial_avg_sqerr;
};

struct TrialReport {
  std::vector<MethodReport> methods;
  long T = 0;
  long excluded_trials = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> flagged_groups;
  std::vector<std::string> trial_errors;
  long clamp_warnings = 0;
};

// Real-data mode: ground truth is the full-dataset Z per unit; each trial
// resamples per the scheme. Determinism: identical (inputs, seed, T) give a
// bit-identical report for any worker count.
TrialReport run_benchmark(const Dataset& data, const GroupingSpec& grouping,
                          const BenchmarkConfig& config);

// Synthetic mode: each trial redraws mu and the outcomes from the
// generative model; ground truth is that trial's mu.
TrialReport run_benchmark(const SynthSpec& spec, const BenchmarkConfig& config);

// Test hook: estimators supplied as callables, run under the same trial
// loop. Standard methods are expressed through this internally.
struct TrialContext {
  const std::vector<GroupInput>& inputs;
  const FeatureMatrix& features;
  std::span<const double> truth;
  std::uint64_t trial_seed = 0;
  double alpha = 0.05;
  bool compute_intervals = true;
};
using CustomEstimator = std::function<EstimateTable(const TrialContext&)>;

TrialReport run_benchmark_custom(
    const SynthSpec& spec,
    const std::vector<std::pair<std::string, CustomEstimator>>& estimators,
    const BenchmarkConfig& config);

std::string report_groups_csv(const TrialReport& report);
std::string report_methods_csv(const TrialReport& report);
// Plot-ready rows: per method and subgroup-size bucket, average MSE and its
// ratio against DT.
std::string report_plot_csv(const TrialReport& report);

// ---------------------------------------------------------------------------
// LOCO feature importance
// ---------------------------------------------------------------------------

struct LocoEntry {
  std::string method;
  std::string block;
  double avg_mse_full = 0.0;
  double avg_mse_removed = 0.0;
  double delta_mse = 0.0;
};

struct LocoResult {
  std::vector<LocoEntry> entries;
  bool intercept_only_flag = false;  // a removal left no feature blocks
};

// Refits SR/EB with one feature block removed at a time under common random
// numbers and reports the increase in average MSE.
LocoResult loco_importance(const Dataset& data, const GroupingSpec& grouping,
                           std::span<const std::string> blocks,
                           const BenchmarkConfig& config);

std::string loco_csv(const LocoResult& result);

}  // namespace ebench
