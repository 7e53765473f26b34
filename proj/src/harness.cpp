#include "ebench/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "ebench/error.hpp"
#include "ebench/metrics.hpp"

namespace ebench {

namespace {

std::string fmt_double(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

std::string pad_index(long v, int width) {
  std::string s = std::to_string(v);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

std::string record_group_label(const EvalRecord& rec,
                               const GroupingSpec& grouping) {
  if (grouping.mode == GroupingSpec::Mode::GivenKeys) {
    if (!rec.group_key) {
      throw SchemaError("record lacks group key under given-keys grouping: "
                        "example_id=" +
                        rec.example_id);
    }
    return *rec.group_key;
  }
  const auto it = grouping.assignment.find(rec.example_id);
  if (it == grouping.assignment.end()) {
    throw SchemaError(
        "external assignment does not cover record: example_id=" +
        rec.example_id);
  }
  return it->second;
}

using ExampleKey = std::pair<std::string, std::string>;  // (task, example)

// Distinct examples per group, in first-appearance order so that sampling
// consumes randomness deterministically.
std::map<std::string, std::vector<ExampleKey>> group_examples(
    const Dataset& data, const GroupingSpec& grouping) {
  std::map<std::string, std::vector<ExampleKey>> out;
  std::set<std::tuple<std::string, std::string, std::string>> seen;
  for (const auto& rec : data.records) {
    const std::string label = record_group_label(rec, grouping);
    if (seen.insert({label, rec.task_id, rec.example_id}).second) {
      out[label].push_back({rec.task_id, rec.example_id});
    }
  }
  return out;
}

struct GroupQuota {
  std::map<std::string, long> take;  // group -> examples to draw
  std::vector<std::string> flagged;  // below the proportional qualifier
};

GroupQuota compute_quotas(
    const std::map<std::string, std::vector<ExampleKey>>& groups,
    const SamplingScheme& scheme) {
  if (groups.empty()) throw ArgumentError("sample_eval: empty partition");
  GroupQuota quota;
  if (std::holds_alternative<ProportionalScheme>(scheme.mode)) {
    const auto& p = std::get<ProportionalScheme>(scheme.mode);
    if (p.min_target < 1 || p.qualifier_size < 1) {
      throw ArgumentError("sample_eval: min_target and qualifier_size must "
                          "be >= 1");
    }
    long min_qualifying = -1;
    for (const auto& [label, examples] : groups) {
      const long n = static_cast<long>(examples.size());
      if (n >= p.qualifier_size &&
          (min_qualifying < 0 || n < min_qualifying)) {
        min_qualifying = n;
      }
    }
    if (min_qualifying < 0) {
      throw DomainError("sample_eval: no group reaches the qualifier size " +
                        std::to_string(p.qualifier_size));
    }
    const double s =
        static_cast<double>(p.min_target) / static_cast<double>(min_qualifying);
    for (const auto& [label, examples] : groups) {
      const long n = static_cast<long>(examples.size());
      long m = std::llround(s * static_cast<double>(n));
      m = std::clamp(m, 1L, n);
      quota.take[label] = m;
      if (n < p.qualifier_size) quota.flagged.push_back(label);
    }
  } else {
    const auto& e = std::get<EqualSizeScheme>(scheme.mode);
    if (e.n_per_group < 1) {
      throw ArgumentError("sample_eval: n_per_group must be >= 1");
    }
    if (e.drop_factor < 1) {
      throw ArgumentError("sample_eval: drop_factor must be >= 1");
    }
    for (const auto& [label, examples] : groups) {
      const long n = static_cast<long>(examples.size());
      if (n >= e.drop_factor * e.n_per_group) {
        quota.take[label] = e.n_per_group;
      }
    }
    if (quota.take.empty()) {
      throw DomainError(
          "sample_eval: every group falls below drop_factor * n");
    }
  }
  return quota;
}

Dataset sample_with_quota(
    const Dataset& data, const GroupingSpec& grouping,
    const std::map<std::string, std::vector<ExampleKey>>& groups,
    const GroupQuota& quota, Rng& rng) {
  std::set<std::tuple<std::string, std::string, std::string>> selected;
  for (const auto& [label, m] : quota.take) {
    const auto& examples = groups.at(label);
    const auto idx = rng.sample_without_replacement(examples.size(),
                                                    static_cast<std::size_t>(m));
    for (std::size_t i : idx) {
      selected.insert({label, examples[i].first, examples[i].second});
    }
  }
  Dataset out;
  out.metric_kind = data.metric_kind;
  out.embedding_dim = data.embedding_dim;
  for (const auto& rec : data.records) {
    const std::string label = record_group_label(rec, grouping);
    if (selected.count({label, rec.task_id, rec.example_id})) {
      out.records.push_back(rec);
    }
  }
  return out;
}

}  // namespace

SampleResult sample_eval(const Dataset& data, const GroupingSpec& grouping,
                         const SamplingScheme& scheme) {
  const auto groups = group_examples(data, grouping);
  const GroupQuota quota = compute_quotas(groups, scheme);
  Rng rng = Rng::derive(scheme.seed, 0x5A17ULL);
  SampleResult out;
  out.data = sample_with_quota(data, grouping, groups, quota, rng);
  out.flagged_groups = quota.flagged;
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

namespace {

void validate_synth(const SynthSpec& spec) {
  if (spec.G < 1) throw ArgumentError("synth: G must be >= 1");
  if (spec.n_models < 1 || spec.n_tasks < 1) {
    throw ArgumentError("synth: n_models and n_tasks must be >= 1");
  }
  if (spec.embedding_dim < 0) throw ArgumentError("synth: bad embedding dim");
  if (spec.A < 0.0) throw ArgumentError("synth: A must be >= 0");
  if (spec.sigma2_grid.empty()) {
    throw ArgumentError("synth: sigma2 grid must be nonempty");
  }
  for (double s : spec.sigma2_grid) {
    if (!(s > 0.0)) throw ArgumentError("synth: sigma2 values must be > 0");
  }
  if (spec.outcome == OutcomeModel::Binomial && spec.n_per_group < 1) {
    throw ArgumentError("synth: n_per_group must be >= 1 in binomial mode");
  }
  if (!spec.f.lookup.empty() &&
      spec.f.lookup.size() != static_cast<std::size_t>(spec.G)) {
    throw ArgumentError("synth: lookup size must equal G");
  }
  if (!spec.f.model_offsets.empty() &&
      spec.f.model_offsets.size() != static_cast<std::size_t>(spec.n_models)) {
    throw ArgumentError("synth: model_offsets size must equal n_models");
  }
  if (!spec.f.task_offsets.empty() &&
      spec.f.task_offsets.size() != static_cast<std::size_t>(spec.n_tasks)) {
    throw ArgumentError("synth: task_offsets size must equal n_tasks");
  }
  if (!spec.f.emb_coefs.empty() &&
      spec.f.emb_coefs.size() != static_cast<std::size_t>(spec.embedding_dim)) {
    throw ArgumentError("synth: emb_coefs size must equal embedding_dim");
  }
}

}  // namespace

SynthDesign make_synth_design(const SynthSpec& spec) {
  validate_synth(spec);
  Rng rng = Rng::derive(spec.seed, 0xDE5160ULL);
  SynthDesign d;
  for (int g = 0; g < spec.G; ++g) {
    d.group_keys.push_back("g" + pad_index(g, 5));
    const int model = g % spec.n_models;
    const int task = (g / spec.n_models) % spec.n_tasks;
    d.model_ids.push_back("m" + pad_index(model, 3));
    d.task_ids.push_back("t" + pad_index(task, 3));
    std::vector<double> x(spec.embedding_dim);
    for (double& v : x) v = rng.normal();
    double f = spec.f.base;
    for (std::size_t j = 0; j < spec.f.emb_coefs.size(); ++j) {
      f += spec.f.emb_coefs[j] * x[j];
    }
    if (!spec.f.model_offsets.empty()) f += spec.f.model_offsets[model];
    if (!spec.f.task_offsets.empty()) f += spec.f.task_offsets[task];
    if (!spec.f.lookup.empty()) f = spec.f.lookup[g];
    d.embeddings.push_back(std::move(x));
    const double conf = spec.confidence_signal
                            ? std::clamp(f + 0.05 * rng.normal(), 0.0, 1.0)
                            : rng.uniform();
    d.confidences.push_back(conf);
    d.f_values.push_back(f);
    d.sigma2.push_back(spec.sigma2_grid[g % spec.sigma2_grid.size()]);
  }
  return d;
}

namespace {

struct Outcome {
  std::vector<double> mu;
  std::vector<double> Z;                       // Gaussian mode
  std::vector<std::vector<double>> scores;     // Binomial mode
  long clamped = 0;
};

Outcome draw_outcome(const SynthDesign& d, const SynthSpec& spec, Rng& rng) {
  const std::size_t G = d.group_keys.size();
  Outcome out;
  out.mu.resize(G);
  const double sd_prior = std::sqrt(spec.A);
  for (std::size_t g = 0; g < G; ++g) {
    double mu = d.f_values[g];
    if (spec.A > 0.0) mu += sd_prior * rng.normal();
    if (spec.outcome == OutcomeModel::Binomial) {
      const double clamped = std::clamp(mu, 0.0, 1.0);
      if (clamped != mu) ++out.clamped;
      mu = clamped;
    }
    out.mu[g] = mu;
  }
  if (spec.outcome == OutcomeModel::Gaussian) {
    out.Z.resize(G);
    for (std::size_t g = 0; g < G; ++g) {
      out.Z[g] = out.mu[g] + std::sqrt(d.sigma2[g]) * rng.normal();
    }
  } else {
    out.scores.resize(G);
    for (std::size_t g = 0; g < G; ++g) {
      out.scores[g].resize(spec.n_per_group);
      for (int i = 0; i < spec.n_per_group; ++i) {
        out.scores[g][i] = rng.bernoulli(out.mu[g]) ? 1.0 : 0.0;
      }
    }
  }
  return out;
}

std::vector<GroupInput> synth_inputs(const SynthDesign& d,
                                     const SynthSpec& spec,
                                     const Outcome& outcome) {
  const std::size_t G = d.group_keys.size();
  std::vector<GroupInput> inputs(G);
  for (std::size_t g = 0; g < G; ++g) {
    GroupInput& in = inputs[g];
    in.group_key = d.group_keys[g];
    in.model_id = d.model_ids[g];
    in.task_id = d.task_ids[g];
    if (spec.outcome == OutcomeModel::Gaussian) {
      in.summary.group_key = in.group_key;
      in.summary.metric_kind = MetricKind::Unbounded;
      in.summary.Z = outcome.Z[g];
      in.summary.n = 1;
      in.summary.var_hat = d.sigma2[g];
      in.var_known = true;
    } else {
      const auto& scores = outcome.scores[g];
      in.summary.group_key = in.group_key;
      in.summary.metric_kind = MetricKind::BinaryAccuracy;
      in.summary.n = static_cast<long>(scores.size());
      double k = 0.0;
      for (double s : scores) k += s;
      in.summary.Z = k / static_cast<double>(scores.size());
      in.summary.success_count = static_cast<long>(k);
      in.summary.var_hat = variance_of(scores, MetricKind::BinaryAccuracy);
    }
  }
  return inputs;
}

// Feature matrix straight from the design (synthetic rows are constant
// across trials).
FeatureMatrix synth_features(const SynthDesign& d, const FeatureConfig& cfg) {
  const std::size_t G = d.group_keys.size();
  std::set<std::string> model_set(d.model_ids.begin(), d.model_ids.end());
  std::set<std::string> task_set(d.task_ids.begin(), d.task_ids.end());
  std::vector<std::string> models(model_set.begin(), model_set.end());
  std::vector<std::string> tasks(task_set.begin(), task_set.end());
  const std::size_t emb_dim = d.embeddings.empty() ? 0 : d.embeddings[0].size();

  FeatureMatrix fm;
  if (cfg.embedding && emb_dim > 0) {
    fm.schema.push_back({"embedding", emb_dim, true});
  }
  if (cfg.confidence) fm.schema.push_back({"confidence", 1, true});
  if (cfg.model_intercept) fm.schema.push_back({"model", models.size(), false});
  if (cfg.task_intercept) fm.schema.push_back({"task", tasks.size(), false});
  std::size_t width = 0;
  for (const auto& b : fm.schema) width += b.width;
  fm.X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(G),
                               static_cast<Eigen::Index>(width));
  for (std::size_t g = 0; g < G; ++g) {
    fm.group_keys.push_back(d.group_keys[g] + "|" + d.model_ids[g]);
    std::size_t off = 0;
    if (cfg.embedding && emb_dim > 0) {
      for (std::size_t j = 0; j < emb_dim; ++j) {
        fm.X(g, off + j) = d.embeddings[g][j];
      }
      off += emb_dim;
    }
    if (cfg.confidence) {
      fm.X(g, off) = d.confidences[g];
      off += 1;
    }
    if (cfg.model_intercept) {
      const auto it =
          std::lower_bound(models.begin(), models.end(), d.model_ids[g]);
      fm.X(g, off + static_cast<std::size_t>(it - models.begin())) = 1.0;
      off += models.size();
    }
    if (cfg.task_intercept) {
      const auto it =
          std::lower_bound(tasks.begin(), tasks.end(), d.task_ids[g]);
      fm.X(g, off + static_cast<std::size_t>(it - tasks.begin())) = 1.0;
      off += tasks.size();
    }
  }
  return fm;
}

}  // namespace

SynthDraw synth_generate(const SynthSpec& spec) {
  const SynthDesign d = make_synth_design(spec);
  Rng rng = Rng::derive(spec.seed, 0x0DULL);
  const Outcome outcome = draw_outcome(d, spec, rng);
  SynthDraw draw;
  draw.mu = outcome.mu;
  draw.group_keys = d.group_keys;
  draw.sigma2_known = d.sigma2;
  draw.clamped_units = outcome.clamped;
  draw.clamp_flagged =
      outcome.clamped >
      spec.clamp_warn_fraction * static_cast<double>(spec.G);
  draw.data.metric_kind = spec.outcome == OutcomeModel::Gaussian
                              ? MetricKind::Unbounded
                              : MetricKind::BinaryAccuracy;
  if (spec.embedding_dim > 0) draw.data.embedding_dim = spec.embedding_dim;
  for (int g = 0; g < spec.G; ++g) {
    if (spec.outcome == OutcomeModel::Gaussian) {
      EvalRecord rec;
      rec.example_id = "e" + pad_index(g, 5) + "_0";
      rec.model_id = d.model_ids[g];
      rec.task_id = d.task_ids[g];
      rec.group_key = d.group_keys[g];
      rec.score = outcome.Z[g];
      rec.confidence = d.confidences[g];
      if (spec.embedding_dim > 0) rec.embedding = d.embeddings[g];
      draw.data.records.push_back(std::move(rec));
    } else {
      for (int i = 0; i < spec.n_per_group; ++i) {
        EvalRecord rec;
        rec.example_id = "e" + pad_index(g, 5) + "_" + std::to_string(i);
        rec.model_id = d.model_ids[g];
        rec.task_id = d.task_ids[g];
        rec.group_key = d.group_keys[g];
        rec.score = outcome.scores[g][i];
        rec.confidence = d.confidences[g];
        if (spec.embedding_dim > 0) rec.embedding = d.embeddings[g];
        draw.data.records.push_back(std::move(rec));
      }
    }
  }
  return draw;
}

// ---------------------------------------------------------------------------
// Benchmark driver
// ---------------------------------------------------------------------------

namespace {

struct TrialSlot {
  bool ok = false;
  std::string error;
  std::vector<double> truth;            // per canonical unit
  std::vector<long> unit_n;             // per canonical unit
  // per estimator, per canonical unit
  std::vector<std::vector<double>> estimate;
  std::vector<std::vector<double>> ci_lo;
  std::vector<std::vector<double>> ci_hi;
  long clamped = 0;
};

struct NamedEstimator {
  std::string label;
  Method method = Method::DT;
  bool standard = false;
  CustomEstimator fn;
};

std::vector<NamedEstimator> standard_estimators(const BenchmarkConfig& cfg) {
  std::vector<NamedEstimator> out;
  for (Method m : cfg.methods) {
    NamedEstimator e;
    e.label = method_name(m);
    e.method = m;
    e.standard = true;
    const RegressorSpec reg = cfg.regressor;
    const PoolScope pool = cfg.pool_scope;
    const bool use_kappa = cfg.use_kappa_constraint;
    switch (m) {
      case Method::DT:
        e.fn = [](const TrialContext& ctx) {
          EstimateTable t = direct_table(ctx.inputs);
          if (ctx.compute_intervals) {
            attach_dt_intervals(t, ctx.inputs, ctx.alpha);
          }
          return t;
        };
        break;
      case Method::SR:
        e.fn = [reg](const TrialContext& ctx) {
          return sr_table(ctx.inputs, ctx.features, reg, ctx.trial_seed);
        };
        break;
      case Method::EB:
        e.fn = [reg, pool, use_kappa](const TrialContext& ctx) {
          EbResult r = eb_cross_fit(ctx.inputs, ctx.features, reg,
                                    ctx.trial_seed, pool);
          if (ctx.compute_intervals) {
            attach_robust_intervals(r.table, ctx.inputs, r.fits, ctx.alpha,
                                    use_kappa);
          }
          return r.table;
        };
        break;
      case Method::JS:
        e.fn = [use_kappa](const TrialContext& ctx) {
          EbResult r = james_stein(ctx.inputs);
          if (ctx.compute_intervals) {
            attach_robust_intervals(r.table, ctx.inputs, r.fits, ctx.alpha,
                                    use_kappa);
          }
          return r.table;
        };
        break;
      case Method::StructReg:
        e.fn = [reg](const TrialContext& ctx) {
          const FeatureMatrix streg = append_unit_block(ctx.features);
          return structured_regression(ctx.inputs, streg, reg.lambda_grid,
                                       ctx.trial_seed);
        };
        break;
    }
    out.push_back(std::move(e));
  }
  return out;
}

// One trial's data, produced by a source.
struct TrialData {
  std::vector<GroupInput> inputs;
  FeatureMatrix features;
  std::vector<double> truth;  // aligned with inputs
  long clamped = 0;
};

class TrialSource {
 public:
  virtual ~TrialSource() = default;
  // Canonical unit keys (group|model), fixed across trials.
  virtual const std::vector<std::string>& canonical_keys() const = 0;
  virtual TrialData make_trial(std::uint64_t master_seed, long trial) const = 0;
  virtual std::vector<std::string> flagged_groups() const { return {}; }
};

class RealSource : public TrialSource {
 public:
  RealSource(const Dataset& data, const GroupingSpec& grouping,
             const BenchmarkConfig& cfg)
      : data_(data), grouping_(grouping), cfg_(cfg) {
    examples_ = group_examples(data, grouping);
    quota_ = compute_quotas(examples_, cfg.scheme);
    // Canonical units: those of the full dataset whose group survives the
    // scheme; ground truth is the full-data mean per unit.
    const auto groups = partition_by_group(data, grouping);
    std::vector<SubgroupData> kept;
    for (const auto& g : groups) {
      if (quota_.take.count(g.group_key)) kept.push_back(g);
    }
    const auto units = split_by_model(kept);
    for (const auto& u : units) {
      keys_.push_back(u.group_key + "|" + unit_model(u));
      double sum = 0.0;
      for (const auto& rec : u.records) sum += rec.score;
      truth_.push_back(sum / static_cast<double>(u.records.size()));
    }
  }

  const std::vector<std::string>& canonical_keys() const override {
    return keys_;
  }

  std::vector<std::string> flagged_groups() const override {
    return quota_.flagged;
  }

  TrialData make_trial(std::uint64_t master_seed, long trial) const override {
    Rng rng = Rng::derive(master_seed, static_cast<std::uint64_t>(trial));
    const Dataset sample =
        sample_with_quota(data_, grouping_, examples_, quota_, rng);
    const auto groups = partition_by_group(sample, grouping_);
    const auto units = split_by_model(groups);
    TrialData t;
    t.inputs = make_group_inputs(units, data_.metric_kind);
    t.features = build_features(units, cfg_.features);
    // Align ground truth with this trial's units.
    std::map<std::string, double> truth_by_key;
    for (std::size_t i = 0; i < keys_.size(); ++i) {
      truth_by_key[keys_[i]] = truth_[i];
    }
    t.truth.reserve(t.inputs.size());
    for (const auto& in : t.inputs) {
      t.truth.push_back(truth_by_key.at(in.group_key + "|" + in.model_id));
    }
    return t;
  }

 private:
  const Dataset& data_;
  const GroupingSpec& grouping_;
  const BenchmarkConfig& cfg_;
  std::map<std::string, std::vector<ExampleKey>> examples_;
  GroupQuota quota_;
  std::vector<std::string> keys_;
  std::vector<double> truth_;
};

class SynthSource : public TrialSource {
 public:
  SynthSource(const SynthSpec& spec, const BenchmarkConfig& cfg)
      : spec_(spec), design_(make_synth_design(spec)) {
    features_ = synth_features(design_, cfg.features);
    for (std::size_t g = 0; g < design_.group_keys.size(); ++g) {
      keys_.push_back(design_.group_keys[g] + "|" + design_.model_ids[g]);
    }
  }

  const std::vector<std::string>& canonical_keys() const override {
    return keys_;
  }

  TrialData make_trial(std::uint64_t master_seed, long trial) const override {
    Rng rng = Rng::derive(master_seed, static_cast<std::uint64_t>(trial));
    const Outcome outcome = draw_outcome(design_, spec_, rng);
    TrialData t;
    t.inputs = synth_inputs(design_, spec_, outcome);
    t.features = features_;
    t.truth = outcome.mu;
    t.clamped = outcome.clamped;
    return t;
  }

  const SynthDesign& design() const { return design_; }

 private:
  SynthSpec spec_;
  SynthDesign design_;
  FeatureMatrix features_;
  std::vector<std::string> keys_;
};

TrialSlot run_one_trial(const TrialSource& source,
                        const std::vector<NamedEstimator>& estimators,
                        const BenchmarkConfig& cfg, long trial) {
  const auto& keys = source.canonical_keys();
  TrialSlot slot;
  slot.estimate.assign(estimators.size(),
                       std::vector<double>(keys.size(), std::nan("")));
  slot.ci_lo.assign(estimators.size(),
                    std::vector<double>(keys.size(), std::nan("")));
  slot.ci_hi.assign(estimators.size(),
                    std::vector<double>(keys.size(), std::nan("")));
  slot.truth.assign(keys.size(), std::nan(""));
  slot.unit_n.assign(keys.size(), 0);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < keys.size(); ++i) index[keys[i]] = i;
  try {
    TrialData data = source.make_trial(cfg.seed, trial);
    slot.clamped = data.clamped;
    for (std::size_t i = 0; i < data.inputs.size(); ++i) {
      const auto it =
          index.find(data.inputs[i].group_key + "|" + data.inputs[i].model_id);
      if (it == index.end()) continue;
      slot.truth[it->second] = data.truth[i];
      slot.unit_n[it->second] = data.inputs[i].summary.n;
    }
    TrialContext ctx{data.inputs,
                     data.features,
                     data.truth,
                     splitmix64(cfg.seed ^ (0xA5A5ULL + static_cast<std::uint64_t>(trial))),
                     cfg.alpha,
                     cfg.compute_intervals};
    for (std::size_t e = 0; e < estimators.size(); ++e) {
      const EstimateTable table = estimators[e].fn(ctx);
      for (const auto& row : table.rows) {
        const auto it = index.find(row.group_key + "|" + row.model_id);
        if (it == index.end()) continue;
        slot.estimate[e][it->second] = row.estimate;
        if (row.ci) {
          slot.ci_lo[e][it->second] = row.ci->lo;
          slot.ci_hi[e][it->second] = row.ci->hi;
        }
      }
    }
    slot.ok = true;
  } catch (const std::exception& ex) {
    slot.ok = false;
    slot.error = ex.what();
  }
  return slot;
}

TrialReport aggregate(const TrialSource& source,
                      const std::vector<NamedEstimator>& estimators,
                      const BenchmarkConfig& cfg,
                      const std::vector<TrialSlot>& slots) {
  const auto& keys = source.canonical_keys();
  const std::size_t U = keys.size();
  TrialReport report;
  report.T = cfg.T;
  report.seed = cfg.seed;
  report.flagged_groups = source.flagged_groups();

  std::vector<long> ok_trials;
  for (long t = 0; t < cfg.T; ++t) {
    if (slots[t].ok) {
      ok_trials.push_back(t);
      report.clamp_warnings += slots[t].clamped;
    } else {
      report.trial_errors.push_back("trial " + std::to_string(t) + ": " +
                                    slots[t].error);
    }
  }
  report.excluded_trials = cfg.T - static_cast<long>(ok_trials.size());
  if (static_cast<double>(report.excluded_trials) >
      cfg.failure_threshold * static_cast<double>(cfg.T)) {
    std::string detail = report.trial_errors.empty()
                             ? std::string("")
                             : ("; first: " + report.trial_errors.front());
    throw Error("benchmark: " + std::to_string(report.excluded_trials) +
                " of " + std::to_string(cfg.T) + " trials failed" + detail);
  }

  // Unit identities from the canonical key strings.
  std::vector<std::string> unit_group(U), unit_model_id(U);
  for (std::size_t u = 0; u < U; ++u) {
    const auto pos = keys[u].rfind('|');
    unit_group[u] = keys[u].substr(0, pos);
    unit_model_id[u] = keys[u].substr(pos + 1);
  }

  double dt_avg_mse = std::nan("");
  for (std::size_t e = 0; e < estimators.size(); ++e) {
    MethodReport mr;
    mr.method = estimators[e].method;
    mr.label = estimators[e].label;
    double mse_sum = 0.0;
    std::size_t mse_units = 0;
    double cov_sum = 0.0, width_sum = 0.0;
    std::size_t cov_units = 0;
    for (std::size_t u = 0; u < U; ++u) {
      GroupReport gr;
      gr.group_key = unit_group[u];
      gr.model_id = unit_model_id[u];
      long n_trials = 0;
      double sum_e = 0.0, sum_e2 = 0.0;
      long cov_count = 0, cov_hits = 0;
      double width_acc = 0.0;
      for (long t : ok_trials) {
        const double est = slots[t].estimate[e][u];
        const double tr = slots[t].truth[u];
        if (std::isnan(est) || std::isnan(tr)) continue;
        const double err = est - tr;
        sum_e += err;
        sum_e2 += err * err;
        ++n_trials;
        if (gr.n == 0) gr.n = slots[t].unit_n[u];
        const double lo = slots[t].ci_lo[e][u];
        const double hi = slots[t].ci_hi[e][u];
        if (!std::isnan(lo) && !std::isnan(hi)) {
          ++cov_count;
          if (tr >= lo && tr <= hi) ++cov_hits;
          width_acc += hi - lo;
        }
      }
      gr.trials = n_trials;
      if (n_trials > 0) {
        const double bias = sum_e / static_cast<double>(n_trials);
        gr.mse = sum_e2 / static_cast<double>(n_trials);
        gr.bias2 = bias * bias;
        // Two-pass variance so mse = bias^2 + variance holds to rounding.
        double ss = 0.0;
        for (long t : ok_trials) {
          const double est = slots[t].estimate[e][u];
          const double tr = slots[t].truth[u];
          if (std::isnan(est) || std::isnan(tr)) continue;
          const double dev = est - tr - bias;
          ss += dev * dev;
        }
        gr.variance = ss / static_cast<double>(n_trials);
        mse_sum += gr.mse;
        ++mse_units;
      }
      if (cov_count > 0) {
        gr.coverage =
            static_cast<double>(cov_hits) / static_cast<double>(cov_count);
        gr.mean_width = width_acc / static_cast<double>(cov_count);
        cov_sum += gr.coverage;
        width_sum += gr.mean_width;
        ++cov_units;
      }
      mr.groups.push_back(std::move(gr));
    }
    mr.avg_mse = mse_units > 0 ? mse_sum / static_cast<double>(mse_units)
                               : std::nan("");
    if (cov_units > 0) {
      mr.avg_coverage = cov_sum / static_cast<double>(cov_units);
      mr.avg_width = width_sum / static_cast<double>(cov_units);
    }
    if (cfg.keep_trial_traces) {
      mr.trial_avg_sqerr.reserve(ok_trials.size());
      for (long t : ok_trials) {
        double sum = 0.0;
        std::size_t cnt = 0;
        for (std::size_t u = 0; u < U; ++u) {
          const double est = slots[t].estimate[e][u];
          const double tr = slots[t].truth[u];
          if (std::isnan(est) || std::isnan(tr)) continue;
          sum += (est - tr) * (est - tr);
          ++cnt;
        }
        mr.trial_avg_sqerr.push_back(
            cnt > 0 ? sum / static_cast<double>(cnt) : std::nan(""));
      }
    }
    if (estimators[e].standard && estimators[e].method == Method::DT) {
      dt_avg_mse = mr.avg_mse;
    }
    report.methods.push_back(std::move(mr));
  }
  for (auto& mr : report.methods) {
    if (!std::isnan(dt_avg_mse) && dt_avg_mse > 0.0) {
      mr.rel_efficiency = mr.avg_mse / dt_avg_mse;
    }
  }
  return report;
}

TrialReport run_trials(const TrialSource& source,
                       const std::vector<NamedEstimator>& estimators,
                       const BenchmarkConfig& cfg) {
  if (cfg.T < 1) throw ArgumentError("benchmark: T must be >= 1");
  if (estimators.empty()) throw ArgumentError("benchmark: no methods");
  std::vector<TrialSlot> slots(cfg.T);
  const int workers = std::max(1, cfg.workers);
  if (workers == 1) {
    for (long t = 0; t < cfg.T; ++t) {
      slots[t] = run_one_trial(source, estimators, cfg, t);
    }
  } else {
    std::atomic<long> next{0};
    auto worker = [&]() {
      for (;;) {
        const long t = next.fetch_add(1);
        if (t >= cfg.T) return;
        slots[t] = run_one_trial(source, estimators, cfg, t);
      }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return aggregate(source, estimators, cfg, slots);
}

}  // namespace

TrialReport run_benchmark(const Dataset& data, const GroupingSpec& grouping,
                          const BenchmarkConfig& config) {
  RealSource source(data, grouping, config);
  return run_trials(source, standard_estimators(config), config);
}

TrialReport run_benchmark(const SynthSpec& spec,
                          const BenchmarkConfig& config) {
  SynthSource source(spec, config);
  return run_trials(source, standard_estimators(config), config);
}

TrialReport run_benchmark_custom(
    const SynthSpec& spec,
    const std::vector<std::pair<std::string, CustomEstimator>>& estimators,
    const BenchmarkConfig& config) {
  SynthSource source(spec, config);
  std::vector<NamedEstimator> named;
  for (const auto& [label, fn] : estimators) {
    NamedEstimator e;
    e.label = label;
    e.standard = (label == "DT");
    e.method = e.standard ? Method::DT : Method::EB;
    e.fn = fn;
    named.push_back(std::move(e));
  }
  return run_trials(source, named, config);
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

std::string report_groups_csv(const TrialReport& report) {
  std::ostringstream out;
  out << "method,group_key,model_id,n,trials,mse,bias2,variance,coverage,"
         "mean_width\n";
  for (const auto& mr : report.methods) {
    for (const auto& gr : mr.groups) {
      out << csv_escape(mr.label) << ',' << csv_escape(gr.group_key) << ','
          << csv_escape(gr.model_id) << ',' << gr.n << ',' << gr.trials << ','
          << fmt_double(gr.mse) << ',' << fmt_double(gr.bias2) << ','
          << fmt_double(gr.variance) << ',' << fmt_double(gr.coverage) << ','
          << fmt_double(gr.mean_width) << "\n";
    }
  }
  return out.str();
}

std::string report_methods_csv(const TrialReport& report) {
  std::ostringstream out;
  out << "method,avg_mse,rel_efficiency_vs_dt,avg_coverage,avg_width,T,"
         "excluded_trials,seed\n";
  for (const auto& mr : report.methods) {
    out << csv_escape(mr.label) << ',' << fmt_double(mr.avg_mse) << ','
        << fmt_double(mr.rel_efficiency) << ',' << fmt_double(mr.avg_coverage)
        << ',' << fmt_double(mr.avg_width) << ',' << report.T << ','
        << report.excluded_trials << ',' << report.seed << "\n";
  }
  return out.str();
}

std::string report_plot_csv(const TrialReport& report) {
  struct Bucket {
    std::string name;
    std::function<bool(long)> member;
  };
  const std::vector<Bucket> buckets = {
      {"all", [](long) { return true; }},
      {"n<=15", [](long n) { return n <= 15; }},
      {"n>15", [](long n) { return n > 15; }},
  };
  // Bucket-average MSE per method, then the ratio against DT.
  std::ostringstream out;
  out << "method,bucket,avg_mse,mse_ratio_vs_dt\n";
  for (const auto& bucket : buckets) {
    double dt_mse = std::nan("");
    for (const auto& mr : report.methods) {
      if (mr.label != "DT") continue;
      double sum = 0.0;
      std::size_t cnt = 0;
      for (const auto& gr : mr.groups) {
        if (gr.trials > 0 && bucket.member(gr.n)) {
          sum += gr.mse;
          ++cnt;
        }
      }
      if (cnt > 0) dt_mse = sum / static_cast<double>(cnt);
    }
    for (const auto& mr : report.methods) {
      double sum = 0.0;
      std::size_t cnt = 0;
      for (const auto& gr : mr.groups) {
        if (gr.trials > 0 && bucket.member(gr.n)) {
          sum += gr.mse;
          ++cnt;
        }
      }
      if (cnt == 0) continue;
      const double mse = sum / static_cast<double>(cnt);
      const double ratio =
          (!std::isnan(dt_mse) && dt_mse > 0.0) ? mse / dt_mse : std::nan("");
      out << csv_escape(mr.label) << ',' << bucket.name << ','
          << fmt_double(mse) << ',' << fmt_double(ratio) << "\n";
    }
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// LOCO
// ---------------------------------------------------------------------------

namespace {

bool block_enabled(const FeatureConfig& cfg, const std::string& block) {
  if (block == "embedding") return cfg.embedding;
  if (block == "confidence") return cfg.confidence;
  if (block == "model") return cfg.model_intercept;
  if (block == "task") return cfg.task_intercept;
  throw ArgumentError("loco: unknown feature block '" + block + "'");
}

FeatureConfig without_block(FeatureConfig cfg, const std::string& block) {
  if (block == "embedding") cfg.embedding = false;
  else if (block == "confidence") cfg.confidence = false;
  else if (block == "model") cfg.model_intercept = false;
  else if (block == "task") cfg.task_intercept = false;
  return cfg;
}

bool any_block(const FeatureConfig& cfg) {
  return cfg.embedding || cfg.confidence || cfg.model_intercept ||
         cfg.task_intercept;
}

}  // namespace

LocoResult loco_importance(const Dataset& data, const GroupingSpec& grouping,
                           std::span<const std::string> blocks,
                           const BenchmarkConfig& config) {
  if (blocks.empty()) throw ArgumentError("loco: no blocks to remove");
  for (const auto& b : blocks) {
    if (!block_enabled(config.features, b)) {
      throw ArgumentError("loco: block '" + b + "' is not enabled");
    }
  }
  BenchmarkConfig base_cfg = config;
  base_cfg.compute_intervals = false;
  const TrialReport base = run_benchmark(data, grouping, base_cfg);

  LocoResult result;
  for (const auto& block : blocks) {
    BenchmarkConfig cfg = base_cfg;
    cfg.features = without_block(cfg.features, block);
    if (!any_block(cfg.features)) result.intercept_only_flag = true;
    const TrialReport removed = run_benchmark(data, grouping, cfg);
    for (std::size_t m = 0; m < base.methods.size(); ++m) {
      const Method method = base.methods[m].method;
      if (method == Method::DT || method == Method::JS) continue;
      LocoEntry e;
      e.method = base.methods[m].label;
      e.block = block;
      e.avg_mse_full = base.methods[m].avg_mse;
      e.avg_mse_removed = removed.methods[m].avg_mse;
      e.delta_mse = e.avg_mse_removed - e.avg_mse_full;
      result.entries.push_back(std::move(e));
    }
  }
  return result;
}

std::string loco_csv(const LocoResult& result) {
  std::ostringstream out;
  out << "method,block,avg_mse_full,avg_mse_removed,delta_mse\n";
  for (const auto& e : result.entries) {
    out << csv_escape(e.method) << ',' << csv_escape(e.block) << ','
        << fmt_double(e.avg_mse_full) << ',' << fmt_double(e.avg_mse_removed)
        << ',' << fmt_double(e.delta_mse) << "\n";
  }
  return out.str();
}

}  // namespace ebench
