#include "ebench/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ebench/error.hpp"
#include "ebench/grouping.hpp"
#include "ebench/harness.hpp"

namespace ebench::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Write to a temp file in the same directory, then rename: no partial
// outputs on failure.
void atomic_write(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write file: " + tmp.string());
    out << content;
    if (!out.good()) throw Error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

void ensure_outdir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory: " + dir.string());
}

Dataset load_input(const std::string& path, MetricKind kind) {
  if (!fs::exists(path)) throw Error("input file not found: " + path);
  return ingest_file(path, kind);
}

GroupingSpec load_grouping(const std::string& assignment_path) {
  GroupingSpec g;
  if (assignment_path.empty()) {
    g.mode = GroupingSpec::Mode::GivenKeys;
    return g;
  }
  if (!fs::exists(assignment_path)) {
    throw Error("assignment file not found: " + assignment_path);
  }
  g.mode = GroupingSpec::Mode::ExternalAssignment;
  std::ifstream in(assignment_path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("assignment line " + std::to_string(line_no) + ": " +
                       e.what());
    }
    if (!j.contains("example_id") || !j.contains("group")) {
      throw ParseError("assignment line " + std::to_string(line_no) +
                       ": needs example_id and group");
    }
    g.assignment[j.at("example_id").get<std::string>()] =
        j.at("group").get<std::string>();
  }
  return g;
}

std::vector<Method> parse_methods(const std::string& csv) {
  std::vector<Method> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(method_from_name(tok));
  }
  if (out.empty()) throw ArgumentError("no methods given");
  return out;
}

// Blocks that every unit in the data can actually fill.
FeatureConfig detect_features(const Dataset& data) {
  FeatureConfig cfg;
  cfg.embedding = !data.records.empty();
  cfg.confidence = !data.records.empty();
  for (const auto& rec : data.records) {
    if (!rec.embedding) cfg.embedding = false;
    if (!rec.confidence) cfg.confidence = false;
  }
  return cfg;
}

struct CommonOptions {
  std::string input;
  std::string output_dir = "out";
  std::string metric = "binary";
  std::string assignment;
  std::uint64_t seed = 0;
  double alpha = 0.05;
  std::string methods = "dt,eb";
  std::string regressor = "ridge";
  std::string pool_scope = "all";
  int workers = 1;
  long T = 1000;
  bool use_kappa = false;
};

void add_regressor_flags(CLI::App* cmd, CommonOptions& opt) {
  cmd->add_option("--regressor", opt.regressor,
                  "Prior-mean regressor family: ridge|lasso|stumps");
  cmd->add_option("--pool-scope", opt.pool_scope,
                  "Pool A_hat across subgroups: all|per-model");
  cmd->add_flag("--kappa-intervals", opt.use_kappa,
                "Use the kappa-constrained critical value in EB intervals");
}

RegressorSpec make_regressor_spec(const CommonOptions& opt) {
  RegressorSpec spec;
  spec.family = regressor_family_from_name(opt.regressor);
  return spec;
}

PoolScope make_pool_scope(const CommonOptions& opt) {
  if (opt.pool_scope == "all") return PoolScope::All;
  if (opt.pool_scope == "per-model") return PoolScope::PerModel;
  throw ArgumentError("pool-scope must be all or per-model");
}

void write_config_echo(const fs::path& outdir, const CLI::App& app) {
  atomic_write(outdir / "config.toml",
               app.config_to_str(true, true));
}

void report_warnings(const TrialReport& report) {
  for (const auto& g : report.flagged_groups) {
    std::cerr << "note: group '" << g
              << "' is below the qualifier size; sampled with floor 1\n";
  }
  for (const auto& e : report.trial_errors) {
    std::cerr << "warning: excluded " << e << "\n";
  }
  if (report.clamp_warnings > 0) {
    std::cerr << "note: " << report.clamp_warnings
              << " synthetic mu draws clamped to [0,1]\n";
  }
}

void write_reports(const fs::path& outdir, const TrialReport& report) {
  atomic_write(outdir / "report_groups.csv", report_groups_csv(report));
  atomic_write(outdir / "report_methods.csv", report_methods_csv(report));
  atomic_write(outdir / "report_plot.csv", report_plot_csv(report));
}

int cmd_group(const CommonOptions& opt, int k_min, int k_max, long min_size) {
  const Dataset data = load_input(opt.input, metric_kind_from_name(opt.metric));
  if (!data.embedding_dim) {
    throw DomainError("group: records carry no embeddings");
  }
  // Cluster distinct examples; identical example_ids must agree on the
  // embedding or the assignment would be ambiguous.
  std::vector<std::string> ids;
  std::vector<Point> points;
  std::map<std::string, std::size_t> index;
  for (const auto& rec : data.records) {
    if (!rec.embedding) {
      throw DomainError("group: record lacks embedding: example_id=" +
                        rec.example_id);
    }
    auto [it, inserted] = index.emplace(rec.example_id, points.size());
    if (inserted) {
      ids.push_back(rec.example_id);
      points.push_back(*rec.embedding);
    } else if (points[it->second] != *rec.embedding) {
      throw SchemaError("group: example_id '" + rec.example_id +
                        "' appears with different embeddings");
    }
  }
  std::vector<int> k_range;
  for (int k = k_min; k <= k_max; ++k) k_range.push_back(k);
  ClusterAssignment assign = cluster_embeddings(points, k_range, opt.seed);
  assign = merge_small_groups(points, assign,
                              static_cast<std::size_t>(min_size));
  std::ostringstream lines;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    json j;
    j["example_id"] = ids[i];
    j["group"] = "c" + std::to_string(assign.labels[i]);
    lines << j.dump() << "\n";
  }
  const fs::path outdir(opt.output_dir);
  ensure_outdir(outdir);
  atomic_write(outdir / "assignment.jsonl", lines.str());
  std::cout << "wrote " << (outdir / "assignment.jsonl").string() << " ("
            << assign.k << " groups)\n";
  return 0;
}

int cmd_estimate(const CommonOptions& opt, const CLI::App& app) {
  const MetricKind kind = metric_kind_from_name(opt.metric);
  const Dataset data = load_input(opt.input, kind);
  const GroupingSpec grouping = load_grouping(opt.assignment);
  const auto groups = partition_by_group(data, grouping);
  const auto units = split_by_model(groups);
  const auto inputs = make_group_inputs(units, kind);
  for (const auto& in : inputs) {
    if (in.summary.var_pooled_fallback) {
      std::cerr << "note: subgroup '" << in.group_key << "' (model "
                << in.model_id
                << ") has one observation; variance uses the pooled "
                   "fallback\n";
    }
  }
  const std::vector<Method> methods = parse_methods(opt.methods);

  FeatureConfig fcfg = detect_features(data);
  const bool needs_features =
      std::any_of(methods.begin(), methods.end(), [](Method m) {
        return m == Method::SR || m == Method::EB || m == Method::StructReg;
      });
  FeatureMatrix features;
  if (needs_features) features = build_features(units, fcfg);

  const RegressorSpec reg = make_regressor_spec(opt);
  const PoolScope pool = make_pool_scope(opt);

  std::ostringstream all_csv;
  all_csv << estimate_table_csv_header() << "\n";
  for (Method m : methods) {
    EstimateTable table;
    switch (m) {
      case Method::DT:
        table = direct_table(inputs);
        attach_dt_intervals(table, inputs, opt.alpha);
        break;
      case Method::SR:
        table = sr_table(inputs, features, reg, opt.seed);
        break;
      case Method::EB: {
        EbResult r = eb_cross_fit(inputs, features, reg, opt.seed, pool);
        attach_robust_intervals(r.table, inputs, r.fits, opt.alpha,
                                opt.use_kappa);
        table = std::move(r.table);
        break;
      }
      case Method::JS: {
        EbResult r = james_stein(inputs);
        attach_robust_intervals(r.table, inputs, r.fits, opt.alpha,
                                opt.use_kappa);
        table = std::move(r.table);
        break;
      }
      case Method::StructReg: {
        const FeatureMatrix streg = append_unit_block(features);
        table = structured_regression(inputs, streg, reg.lambda_grid, opt.seed);
        break;
      }
    }
    table.seed = opt.seed;
    all_csv << estimate_table_to_csv(table, /*with_header=*/false);
  }
  const fs::path outdir(opt.output_dir);
  ensure_outdir(outdir);
  atomic_write(outdir / "estimates.csv", all_csv.str());
  write_config_echo(outdir, app);
  std::cout << "wrote " << (outdir / "estimates.csv").string() << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Subgroup model-performance estimation with shrinkage"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read options from a TOML/INI config file");
  app.allow_config_extras(false);

  CommonOptions opt;

  // group
  auto* group_cmd =
      app.add_subcommand("group", "Cluster embeddings into subgroups");
  int k_min = 2, k_max = 8;
  long min_size = 50;
  group_cmd->add_option("--input", opt.input, "Record lines (JSONL)")
      ->required();
  group_cmd->add_option("--output-dir", opt.output_dir, "Output directory");
  group_cmd->add_option("--metric", opt.metric, "binary|bounded|unbounded");
  group_cmd->add_option("--k-min", k_min, "Smallest k to try");
  group_cmd->add_option("--k-max", k_max, "Largest k to try");
  group_cmd->add_option("--min-size", min_size,
                        "Aggregate clusters smaller than this");
  group_cmd->add_option("--seed", opt.seed, "RNG seed")->required();

  // estimate
  auto* est_cmd = app.add_subcommand(
      "estimate", "Per-subgroup estimates with confidence intervals");
  est_cmd->add_option("--input", opt.input, "Record lines (JSONL)")
      ->required();
  est_cmd->add_option("--output-dir", opt.output_dir, "Output directory");
  est_cmd->add_option("--metric", opt.metric, "binary|bounded|unbounded");
  est_cmd->add_option("--assignment", opt.assignment,
                      "External group assignment (JSONL)");
  est_cmd->add_option("--methods,--method", opt.methods,
                      "Comma-separated: dt,sr,eb,js,streg");
  est_cmd->add_option("--alpha", opt.alpha, "1 - confidence level");
  est_cmd->add_option("--seed", opt.seed, "RNG seed")->required();
  add_regressor_flags(est_cmd, opt);

  // benchmark
  auto* bench_cmd = app.add_subcommand(
      "benchmark", "Repeated-sampling evaluation against full-data truth");
  std::string scheme_name = "proportional";
  long min_target = 10, qualifier = 50, n_per_group = 20, drop_factor = 4;
  bench_cmd->add_option("--input", opt.input, "Record lines (JSONL)")
      ->required();
  bench_cmd->add_option("--output-dir", opt.output_dir, "Output directory");
  bench_cmd->add_option("--metric", opt.metric, "binary|bounded|unbounded");
  bench_cmd->add_option("--assignment", opt.assignment,
                        "External group assignment (JSONL)");
  bench_cmd->add_option("--methods", opt.methods, "dt,sr,eb,js,streg");
  bench_cmd->add_option("--scheme", scheme_name, "proportional|equal");
  bench_cmd->add_option("--min-target", min_target,
                        "Proportional: draws for the smallest qualifier");
  bench_cmd->add_option("--qualifier", qualifier,
                        "Proportional: qualifying group size");
  bench_cmd->add_option("--n-per-group", n_per_group, "Equal: sample size");
  bench_cmd->add_option("--drop-factor", drop_factor,
                        "Equal: drop groups below factor*n");
  bench_cmd->add_option("--trials,-T", opt.T, "Monte-Carlo repetitions");
  bench_cmd->add_option("--alpha", opt.alpha, "1 - confidence level");
  bench_cmd->add_option("--workers", opt.workers, "Worker threads");
  bench_cmd->add_option("--seed", opt.seed, "RNG seed")->required();
  add_regressor_flags(bench_cmd, opt);

  // simulate
  auto* sim_cmd = app.add_subcommand(
      "simulate", "Synthetic-data benchmark from the generative model");
  int G = 200;
  double A = 0.01;
  double sigma2_min = 0.005, sigma2_max = 0.05;
  int sigma2_steps = 5;
  int n_models = 1, n_tasks = 1, emb_dim = 3;
  double f_base = 0.5;
  std::string mode = "gaussian";
  long sim_n = 20;
  sim_cmd->add_option("--output-dir", opt.output_dir, "Output directory");
  sim_cmd->add_option("--methods", opt.methods, "dt,sr,eb,js,streg");
  sim_cmd->add_option("--G", G, "Number of subgroups");
  sim_cmd->add_option("--A", A, "Prior variance around f");
  sim_cmd->add_option("--sigma2-min", sigma2_min, "Noise grid lower end");
  sim_cmd->add_option("--sigma2-max", sigma2_max, "Noise grid upper end");
  sim_cmd->add_option("--sigma2-steps", sigma2_steps, "Noise grid size");
  sim_cmd->add_option("--n-models", n_models, "Synthetic model count");
  sim_cmd->add_option("--n-tasks", n_tasks, "Synthetic task count");
  sim_cmd->add_option("--embedding-dim", emb_dim, "Synthetic embedding dim");
  sim_cmd->add_option("--f-base", f_base, "Prior mean baseline");
  sim_cmd->add_option("--mode", mode, "gaussian|binomial");
  sim_cmd->add_option("--n-per-group", sim_n, "Binomial: examples per group");
  sim_cmd->add_option("--trials,-T", opt.T, "Monte-Carlo repetitions");
  sim_cmd->add_option("--alpha", opt.alpha, "1 - confidence level");
  sim_cmd->add_option("--workers", opt.workers, "Worker threads");
  sim_cmd->add_option("--seed", opt.seed, "RNG seed")->required();
  bool dump_sample = false;
  sim_cmd->add_flag("--dump-sample", dump_sample,
                    "Also write one generated dataset draw");
  add_regressor_flags(sim_cmd, opt);

  // loco
  auto* loco_cmd = app.add_subcommand(
      "loco", "Leave-out-covariates feature-block importance");
  std::string blocks_csv = "embedding,confidence,model,task";
  std::string loco_scheme = "proportional";
  long loco_min_target = 10, loco_qualifier = 50, loco_n = 20,
       loco_drop_factor = 4;
  loco_cmd->add_option("--input", opt.input, "Record lines (JSONL)")
      ->required();
  loco_cmd->add_option("--output-dir", opt.output_dir, "Output directory");
  loco_cmd->add_option("--metric", opt.metric, "binary|bounded|unbounded");
  loco_cmd->add_option("--assignment", opt.assignment,
                       "External group assignment (JSONL)");
  loco_cmd->add_option("--methods", opt.methods, "sr,eb (feature users)");
  loco_cmd->add_option("--blocks", blocks_csv, "Blocks to remove in turn");
  loco_cmd->add_option("--scheme", loco_scheme, "proportional|equal");
  loco_cmd->add_option("--min-target", loco_min_target,
                       "Proportional: draws for the smallest qualifier");
  loco_cmd->add_option("--qualifier", loco_qualifier,
                       "Proportional: qualifying group size");
  loco_cmd->add_option("--n-per-group", loco_n, "Equal: sample size");
  loco_cmd->add_option("--drop-factor", loco_drop_factor,
                       "Equal: drop groups below factor*n");
  loco_cmd->add_option("--trials,-T", opt.T, "Monte-Carlo repetitions");
  loco_cmd->add_option("--workers", opt.workers, "Worker threads");
  loco_cmd->add_option("--seed", opt.seed, "RNG seed")->required();
  add_regressor_flags(loco_cmd, opt);

  std::vector<std::string> argv_copy = args;
  try {
    // CLI11 consumes arguments in reverse order.
    std::reverse(argv_copy.begin(), argv_copy.end());
    app.parse(argv_copy);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help() << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::cerr << "run with --help for usage\n";
    return 2;
  }

  try {
    if (app.got_subcommand(group_cmd)) {
      return cmd_group(opt, k_min, k_max, min_size);
    }
    if (app.got_subcommand(est_cmd)) {
      return cmd_estimate(opt, app);
    }
    if (app.got_subcommand(bench_cmd)) {
      const MetricKind kind = metric_kind_from_name(opt.metric);
      const Dataset data = load_input(opt.input, kind);
      const GroupingSpec grouping = load_grouping(opt.assignment);
      BenchmarkConfig cfg;
      cfg.methods = parse_methods(opt.methods);
      if (scheme_name == "proportional") {
        cfg.scheme.mode = ProportionalScheme{min_target, qualifier};
      } else if (scheme_name == "equal") {
        cfg.scheme.mode = EqualSizeScheme{n_per_group, drop_factor};
      } else {
        throw ArgumentError("scheme must be proportional or equal");
      }
      cfg.T = opt.T;
      cfg.seed = opt.seed;
      cfg.workers = opt.workers;
      cfg.alpha = opt.alpha;
      cfg.regressor = make_regressor_spec(opt);
      cfg.pool_scope = make_pool_scope(opt);
      cfg.use_kappa_constraint = opt.use_kappa;
      cfg.features = detect_features(data);
      const TrialReport report = run_benchmark(data, grouping, cfg);
      report_warnings(report);
      const fs::path outdir(opt.output_dir);
      ensure_outdir(outdir);
      write_reports(outdir, report);
      write_config_echo(outdir, app);
      std::cout << "wrote reports to " << outdir.string() << "\n";
      return 0;
    }
    if (app.got_subcommand(sim_cmd)) {
      SynthSpec spec;
      spec.G = G;
      spec.A = A;
      spec.n_models = n_models;
      spec.n_tasks = n_tasks;
      spec.embedding_dim = emb_dim;
      spec.f.base = f_base;
      spec.f.emb_coefs.assign(static_cast<std::size_t>(emb_dim), 0.0);
      spec.seed = opt.seed;
      spec.sigma2_grid.clear();
      const int steps = std::max(1, sigma2_steps);
      for (int i = 0; i < steps; ++i) {
        const double frac = steps == 1 ? 0.0
                                       : static_cast<double>(i) /
                                             static_cast<double>(steps - 1);
        spec.sigma2_grid.push_back(sigma2_min +
                                   frac * (sigma2_max - sigma2_min));
      }
      if (mode == "gaussian") {
        spec.outcome = OutcomeModel::Gaussian;
      } else if (mode == "binomial") {
        spec.outcome = OutcomeModel::Binomial;
        spec.n_per_group = static_cast<int>(sim_n);
      } else {
        throw ArgumentError("mode must be gaussian or binomial");
      }
      BenchmarkConfig cfg;
      cfg.methods = parse_methods(opt.methods);
      cfg.T = opt.T;
      cfg.seed = opt.seed;
      cfg.workers = opt.workers;
      cfg.alpha = opt.alpha;
      cfg.regressor = make_regressor_spec(opt);
      cfg.pool_scope = make_pool_scope(opt);
      cfg.use_kappa_constraint = opt.use_kappa;
      const TrialReport report = run_benchmark(spec, cfg);
      report_warnings(report);
      const fs::path outdir(opt.output_dir);
      ensure_outdir(outdir);
      write_reports(outdir, report);
      if (dump_sample) {
        const SynthDraw draw = synth_generate(spec);
        std::ostringstream lines;
        for (const auto& rec : draw.data.records) {
          lines << record_to_line(rec) << "\n";
        }
        atomic_write(outdir / "sample.jsonl", lines.str());
      }
      write_config_echo(outdir, app);
      std::cout << "wrote reports to " << outdir.string() << "\n";
      return 0;
    }
    if (app.got_subcommand(loco_cmd)) {
      const MetricKind kind = metric_kind_from_name(opt.metric);
      const Dataset data = load_input(opt.input, kind);
      const GroupingSpec grouping = load_grouping(opt.assignment);
      BenchmarkConfig cfg;
      cfg.methods = parse_methods(opt.methods);
      if (loco_scheme == "proportional") {
        cfg.scheme.mode = ProportionalScheme{loco_min_target, loco_qualifier};
      } else if (loco_scheme == "equal") {
        cfg.scheme.mode = EqualSizeScheme{loco_n, loco_drop_factor};
      } else {
        throw ArgumentError("scheme must be proportional or equal");
      }
      cfg.T = opt.T;
      cfg.seed = opt.seed;
      cfg.workers = opt.workers;
      cfg.regressor = make_regressor_spec(opt);
      cfg.pool_scope = make_pool_scope(opt);
      cfg.features = detect_features(data);
      std::vector<std::string> blocks;
      std::stringstream ss(blocks_csv);
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) blocks.push_back(tok);
      }
      const LocoResult result = loco_importance(data, grouping, blocks, cfg);
      if (result.intercept_only_flag) {
        std::cerr << "note: a removal left an intercept-only model\n";
      }
      const fs::path outdir(opt.output_dir);
      ensure_outdir(outdir);
      atomic_write(outdir / "loco.csv", loco_csv(result));
      write_config_echo(outdir, app);
      std::cout << "wrote " << (outdir / "loco.csv").string() << "\n";
      return 0;
    }
    throw ArgumentError("no subcommand selected");
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::cerr << "run with --help for usage\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace ebench::cli
