// crowdfair command-line front end: one subcommand per analysis, plus a
// pipeline command that chains them through on-disk intermediates.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "crowdfair/crowdfair.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

using namespace crowdfair;

// ---------------------------------------------------------------------------
// small shared helpers
// ---------------------------------------------------------------------------

struct StageClock {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  std::int64_t elapsed_ms() const {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now() - start)
        .count();
  }
};

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory: " + dir + " (" + ec.message() + ")");
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hash_hex(const std::string& s) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(s)));
  return buf;
}

ordered_json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open file: " + path);
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw IngestError(path + ": invalid JSON (" + e.what() + ")");
  }
  return j;
}

[[noreturn]] void fail_validation(const std::vector<std::string>& problems) {
  std::string msg = "configuration invalid:";
  for (const auto& p : problems) msg += "\n  - " + p;
  throw ValidationError(msg);
}

std::vector<double> parse_grid(const std::string& csv, const std::string& flag) {
  std::vector<double> grid;
  std::string cur;
  std::stringstream ss(csv);
  while (std::getline(ss, cur, ',')) {
    try {
      grid.push_back(std::stod(cur));
    } catch (...) {
      throw ValidationError(flag + ": cannot parse '" + cur + "' as a number");
    }
  }
  if (grid.empty()) throw ValidationError(flag + ": empty grid");
  return grid;
}

FairnessKind parse_kind(const std::string& s) {
  if (s == "dp") return FairnessKind::DemographicParity;
  if (s == "eo") return FairnessKind::EqualizedOdds;
  throw ValidationError("--fairness must be dp or eo");
}

// ---------------------------------------------------------------------------
// sim config parsing (documented key names; see README)
// ---------------------------------------------------------------------------

SimConfig parse_sim_config(const ordered_json& j) {
  std::vector<std::string> problems;
  auto require_int = [&](const char* key, std::int64_t lo) -> std::int64_t {
    if (!j.contains(key) || !j[key].is_number_integer()) {
      problems.push_back(std::string(key) + " (integer) is required");
      return lo;
    }
    return j[key].get<std::int64_t>();
  };

  SimConfig cfg;
  cfg.n_tasks = static_cast<std::int32_t>(require_int("n_tasks", 1));
  cfg.n_workers = static_cast<std::int32_t>(require_int("n_workers", 1));
  cfg.labels_per_task = static_cast<std::int32_t>(require_int("labels_per_task", 1));
  cfg.seed = j.value("seed", std::uint64_t{0});
  cfg.feature_dim = j.value("feature_dim", 0);
  cfg.feature_shift = j.value("feature_shift", 1.0);
  cfg.block_size = j.value("block_size", 0);

  if (!j.contains("groups") || !j["groups"].is_array() || j["groups"].empty()) {
    problems.push_back("groups (non-empty array) is required");
  } else {
    for (const auto& g : j["groups"]) {
      GroupSpec gs;
      if (!g.contains("name") || !g["name"].is_string())
        problems.push_back("every group needs a string name");
      else
        gs.name = g["name"].get<std::string>();
      if (!g.contains("proportion") || !g["proportion"].is_number())
        problems.push_back("group '" + gs.name + "' needs a numeric proportion");
      else
        gs.proportion = g["proportion"].get<double>();
      if (!g.contains("base_rate") || !g["base_rate"].is_number())
        problems.push_back("group '" + gs.name + "' needs a numeric base_rate");
      else
        gs.base_rate = g["base_rate"].get<double>();
      cfg.groups.push_back(gs);
    }
  }

  auto parse_coins = [&](const ordered_json& spec, const char* key) {
    std::vector<double> coins(cfg.groups.size(), 0.5);
    if (!spec.contains(key) || !spec[key].is_object()) {
      problems.push_back(std::string("worker entry needs a ") + key + " object keyed by group name");
      return coins;
    }
    for (std::size_t gi = 0; gi < cfg.groups.size(); ++gi) {
      const auto& name = cfg.groups[gi].name;
      if (!spec[key].contains(name) || !spec[key][name].is_number())
        problems.push_back(std::string(key) + " missing numeric entry for group '" + name + "'");
      else
        coins[gi] = spec[key][name].get<double>();
    }
    return coins;
  };

  const bool has_workers = j.contains("workers") && j["workers"].is_array();
  const bool has_blueprints = j.contains("worker_blueprints") && j["worker_blueprints"].is_array();
  if (has_workers == has_blueprints) {
    problems.push_back("exactly one of workers / worker_blueprints is required");
  } else if (has_workers) {
    for (const auto& w : j["workers"])
      cfg.workers.push_back({parse_coins(w, "sensitivity"), parse_coins(w, "specificity")});
  } else {
    for (const auto& b : j["worker_blueprints"]) {
      const auto count = b.value("count", 0);
      if (count < 1) problems.push_back("every worker blueprint needs count >= 1");
      WorkerSpec ws{parse_coins(b, "sensitivity"), parse_coins(b, "specificity")};
      for (int i = 0; i < count; ++i) cfg.workers.push_back(ws);
    }
  }

  if (!problems.empty()) fail_validation(problems);
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// labels.csv ingestion (downstream consumes aggregate output)
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> load_td_labels(const std::string& path, const std::vector<RawId>& task_ids) {
  const auto lines = detail_io::read_lines(path);
  if (lines.empty()) throw IngestError(path + ": empty file");
  const auto header = detail_io::split_csv(lines[0]);
  if (header.size() < 3 || header[0] != "task_id" || header[2] != "hard_label")
    throw IngestError(path + ":1: header must be task_id,posterior,hard_label");
  std::map<RawId, std::uint8_t> by_id;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    const auto f = detail_io::split_csv(lines[ln]);
    if (f.size() != header.size())
      throw IngestError(path + ":" + std::to_string(ln + 1) + ": wrong field count");
    const auto id = detail_io::parse_id(f[0], path, ln + 1, "task_id");
    const auto label = detail_io::parse_binary(f[2], path, ln + 1, "hard_label");
    by_id[id] = static_cast<std::uint8_t>(label);
  }
  std::vector<std::uint8_t> labels;
  labels.reserve(task_ids.size());
  for (const auto id : task_ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end())
      throw IngestError(path + ": no label for task_id " + std::to_string(id));
    labels.push_back(it->second);
  }
  return labels;
}

// ---------------------------------------------------------------------------
// stage implementations (shared between individual commands and pipeline)
// ---------------------------------------------------------------------------

struct EmFlags {
  int max_iter = 100;
  double tol = 1e-6;
  double smoothing = 0.01;
  std::uint64_t seed = 0;
  int threads = 1;

  EMConfig to_config() const {
    if (max_iter < 1) throw ValidationError("--max-iter must be >= 1");
    EMConfig cfg{max_iter, tol, smoothing, seed, threads};
    cfg.validate();
    return cfg;
  }
};

std::vector<std::string> run_simulate_stage(const SimConfig& cfg, const std::string& out_dir) {
  ensure_dir(out_dir);
  const auto data = generate(cfg);
  const auto ann = out_dir + "/annotations.csv";
  const auto tsk = out_dir + "/tasks.csv";
  write_dataset(data.matrix, data.tasks, ann, tsk);
  std::cerr << "simulate: " << data.matrix.n_tasks() << " tasks, " << data.matrix.n_workers()
            << " workers, " << data.matrix.n_entries() << " labels -> " << out_dir << "\n";
  return {ann, tsk};
}

std::vector<std::string> run_audit_stage(const DatasetBundle& bundle, const std::string& out_dir,
                                         int threads) {
  ensure_dir(out_dir);
  const auto reports = audit_workers(bundle.matrix, bundle.tasks, threads);
  write_workers_csv(reports, out_dir + "/workers.csv");
  write_histograms_json(metric_histograms(reports), out_dir + "/histograms.json");
  write_bucket_csv(bucket_table(bundle.matrix, bundle.tasks, reports), out_dir + "/bucket_table.csv");
  std::vector<std::pair<SweepMetric, std::vector<SweepRow>>> dom, rem;
  for (const auto metric : {SweepMetric::DpDiff, SweepMetric::EoDiff}) {
    dom.emplace_back(metric, domination_sweep(bundle.matrix, reports, metric));
    rem.emplace_back(metric, removal_impact(bundle.matrix, bundle.tasks, reports, metric));
  }
  write_domination_csv(dom, out_dir + "/sweep_domination.csv");
  write_removal_csv(rem, out_dir + "/sweep_removal.csv");
  std::cerr << "audit: " << reports.size() << " workers -> " << out_dir << "\n";
  return {out_dir + "/workers.csv", out_dir + "/histograms.json", out_dir + "/bucket_table.csv",
          out_dir + "/sweep_domination.csv", out_dir + "/sweep_removal.csv"};
}

TDResult run_algorithm(const DatasetBundle& bundle, const std::string& algorithm,
                       const std::string& base, const EMConfig& em,
                       const FairnessConstraint& constraint, bool use_features) {
  const auto& m = bundle.matrix;
  if (algorithm == "mv") return majority_vote(m);
  if (algorithm == "ds") return dawid_skene(m, em).result;
  if (algorithm == "lfc") {
    if (use_features) {
      if (!bundle.tasks.has_features())
        throw ComputeError("lfc with features requested but the dataset has none");
      return learning_from_crowds(m, bundle.tasks.features, em).result;
    }
    return learning_from_crowds(m, em).result;
  }
  if (algorithm == "fair-td-pre") return fair_td_pre(m, bundle.tasks.group, constraint, em);
  if (algorithm == "fair-td-in") return fair_td_in(m, bundle.tasks.group, constraint, em);
  if (algorithm == "fair-td-post") {
    TDResult base_result = run_algorithm(bundle, base, "", em, constraint, use_features);
    return fair_td_post(base_result, bundle.tasks.group, constraint, bundle.tasks.truth);
  }
  throw ValidationError("unknown algorithm '" + algorithm + "'");
}

std::vector<std::string> run_aggregate_stage(const DatasetBundle& bundle,
                                             const std::string& algorithm, const std::string& base,
                                             const EMConfig& em, const FairnessConstraint& constraint,
                                             bool use_features, const std::string& out_dir) {
  ensure_dir(out_dir);
  const auto td = run_algorithm(bundle, algorithm, base, em, constraint, use_features);
  write_labels_csv(td, bundle.matrix.task_ids(), out_dir + "/labels.csv");

  ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["algorithm"] = td.algorithm;
  j["iterations"] = td.iterations;
  j["final_loglik"] = round_g6(td.final_loglik);
  j["converged"] = td.converged;
  j["diagnostic"] = td.diagnostic;
  j["achieved_violation"] = json_number(td.achieved_violation);
  j["fallback_tasks"] = td.fallback_tasks;
  if (bundle.tasks.has_full_truth()) {
    j["evaluation"] = to_json(fairness_report(td.hard_label, bundle.tasks.truth, bundle.tasks.group));
  } else {
    j["evaluation"] = nullptr;
  }
  detail_io::write_text(out_dir + "/report.json", j.dump(2) + "\n");
  std::cerr << "aggregate[" << algorithm << "]: " << td.iterations << " iteration(s), converged="
            << (td.converged ? "yes" : "no") << " -> " << out_dir << "\n";
  return {out_dir + "/labels.csv", out_dir + "/report.json"};
}

std::vector<std::string> run_downstream_stage(const DatasetBundle& bundle,
                                              const std::vector<std::uint8_t>& td_labels,
                                              const DeltaConfig& cfg, const std::string& out_dir) {
  ensure_dir(out_dir);
  if (!bundle.tasks.has_features())
    throw ComputeError("downstream delta experiment requires task features");
  bundle.tasks.require_truth("downstream delta experiment");
  const auto report =
      delta_experiment(bundle.tasks.features, bundle.tasks.truth, td_labels, bundle.tasks.group, cfg);
  detail_io::write_text(out_dir + "/delta_report.json", to_json(report).dump(2) + "\n");
  std::cerr << "downstream: delta_accuracy=" << format_g6(report.delta_accuracy) << "pp -> "
            << out_dir << "\n";
  return {out_dir + "/delta_report.json"};
}

struct FairCompareOpts {
  std::vector<double> epsilon_grid{0.0, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0};
  std::vector<double> eta_grid{0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 100.0};
  FairnessKind kind = FairnessKind::DemographicParity;
  double split_fraction = 0.5;
  std::uint64_t seed = 0;
  int threads = 1;
};

std::vector<std::string> run_fair_compare_stage(const DatasetBundle& bundle, const EMConfig& em,
                                                const FairCompareOpts& opts,
                                                const std::string& out_dir) {
  ensure_dir(out_dir);
  bundle.tasks.require_truth("fair-compare");
  if (!bundle.tasks.has_features())
    throw ComputeError("fair-compare requires task features for the fair-ML baselines");

  const auto& tasks = bundle.tasks;
  const auto n = static_cast<std::size_t>(bundle.matrix.n_tasks());
  std::vector<FrontierRow> rows;

  auto eval_labels = [&](std::span<const std::uint8_t> labels) {
    return fairness_report(labels, tasks.truth, tasks.group);
  };
  auto push_label_row = [&](const std::string& method, const std::string& td_alg, double eps,
                            const FairnessReport& rep) {
    rows.push_back({method, td_alg, format_g6(eps), "full", rep.accuracy, rep.dp_diff, rep.eo_diff});
  };

  // Consensus-level mitigations, swept over the budget.
  const auto ds_base = dawid_skene(bundle.matrix, em).result;
  for (const double eps : opts.epsilon_grid) {
    const FairnessConstraint c{opts.kind, eps};
    push_label_row("fair-td-pre", "mv", eps,
                   eval_labels(fair_td_pre(bundle.matrix, tasks.group, c, em).hard_label));
    if (opts.kind == FairnessKind::DemographicParity) {
      push_label_row("fair-td-in", "ds", eps,
                     eval_labels(fair_td_in(bundle.matrix, tasks.group, c, em).hard_label));
    }
    push_label_row("fair-td-post", "ds", eps,
                   eval_labels(fair_td_post(ds_base, tasks.group, c, tasks.truth).hard_label));
  }

  // Model-level baselines trained on consensus labels, one shared split.
  detail::Rng rng(opts.seed);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  const auto n_train = static_cast<std::size_t>(static_cast<double>(n) * opts.split_fraction);
  if (n_train < 1 || n_train >= n) throw ValidationError("--split leaves an empty fold");

  struct Fold {
    std::vector<std::vector<double>> x;
    std::vector<std::int8_t> truth;
    std::vector<std::string> group;
  };
  Fold train, test;
  for (std::size_t i = 0; i < n; ++i) {
    auto& fold = i < n_train ? train : test;
    fold.x.push_back(tasks.features[perm[i]]);
    fold.truth.push_back(tasks.truth[perm[i]]);
    fold.group.push_back(tasks.group[perm[i]]);
  }

  const auto mv_labels = majority_vote(bundle.matrix).hard_label;
  const std::vector<std::pair<std::string, const std::vector<std::uint8_t>*>> sources = {
      {"mv", &mv_labels}, {"ds", &ds_base.hard_label}};
  for (const auto& [td_alg, labels] : sources) {
    std::vector<std::uint8_t> y_train;
    y_train.reserve(n_train);
    for (std::size_t i = 0; i < n_train; ++i) y_train.push_back((*labels)[perm[i]]);

    for (const double eps : opts.epsilon_grid) {
      ExpGradConfig eg;
      eg.train.seed = opts.seed;
      const auto mix =
          exponentiated_gradient(train.x, y_train, train.group, {opts.kind, eps}, eg);
      const auto rep_tr = evaluate_randomized(mix, train.x, train.truth, train.group);
      const auto rep_te = evaluate_randomized(mix, test.x, test.truth, test.group);
      rows.push_back({"expgrad", td_alg, format_g6(eps), "train", rep_tr.accuracy, rep_tr.dp_diff,
                      rep_tr.eo_diff});
      rows.push_back({"expgrad", td_alg, format_g6(eps), "test", rep_te.accuracy, rep_te.dp_diff,
                      rep_te.eo_diff});
    }
    for (const double eta : opts.eta_grid) {
      TrainConfig tc;
      tc.seed = opts.seed;
      const auto model = prejudice_remover(train.x, y_train, train.group, eta, tc);
      const auto rep_tr = evaluate_model(model, train.x, train.truth, train.group);
      const auto rep_te = evaluate_model(model, test.x, test.truth, test.group);
      const std::string cv = eta > 0 ? format_g6(1.0 / eta) : std::string("inf");
      rows.push_back(
          {"prejudice-remover", td_alg, cv, "train", rep_tr.accuracy, rep_tr.dp_diff, rep_tr.eo_diff});
      rows.push_back(
          {"prejudice-remover", td_alg, cv, "test", rep_te.accuracy, rep_te.dp_diff, rep_te.eo_diff});
    }
  }

  write_frontier_csv(rows, out_dir + "/frontier.csv");
  std::cerr << "fair-compare: " << rows.size() << " frontier rows -> " << out_dir << "\n";
  return {out_dir + "/frontier.csv"};
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

void run_pipeline(const std::string& config_path, const std::string& out_override) {
  const auto j = read_json_file(config_path);
  std::vector<std::string> problems;

  std::string out_dir = out_override;
  if (out_dir.empty()) out_dir = j.value("out", "");
  if (out_dir.empty()) problems.push_back("out directory required (config key 'out' or --out)");

  const bool has_dataset = j.contains("dataset");
  const bool has_sim = j.contains("simulate");
  if (has_dataset == has_sim)
    problems.push_back("exactly one of 'dataset' and 'simulate' is required");
  if (has_dataset &&
      (!j["dataset"].is_object() || !j["dataset"].contains("annotations") ||
       !j["dataset"].contains("tasks")))
    problems.push_back("'dataset' needs 'annotations' and 'tasks' paths");

  std::vector<std::string> algorithms{"mv", "ds", "lfc"};
  if (j.contains("algorithms")) {
    if (!j["algorithms"].is_array() || j["algorithms"].empty()) {
      problems.push_back("'algorithms' must be a non-empty array");
    } else {
      algorithms.clear();
      for (const auto& a : j["algorithms"]) {
        const auto name = a.get<std::string>();
        if (name != "mv" && name != "ds" && name != "lfc" && name != "fair-td-pre" &&
            name != "fair-td-in" && name != "fair-td-post")
          problems.push_back("unknown algorithm '" + name + "' in 'algorithms'");
        algorithms.push_back(name);
      }
    }
  }

  EmFlags em_flags;
  if (j.contains("em")) {
    em_flags.max_iter = j["em"].value("max_iter", 100);
    em_flags.tol = j["em"].value("tol", 1e-6);
    em_flags.smoothing = j["em"].value("smoothing", 0.01);
  }
  em_flags.seed = j.value("seed", std::uint64_t{0});
  em_flags.threads = j.value("threads", 1);
  if (em_flags.max_iter < 1) problems.push_back("em.max_iter must be >= 1");
  if (!(em_flags.tol > 0)) problems.push_back("em.tol must be > 0");
  if (em_flags.smoothing < 0) problems.push_back("em.smoothing must be >= 0");
  if (em_flags.threads < 1) problems.push_back("threads must be >= 1");

  FairCompareOpts fc;
  fc.seed = j.value("seed", std::uint64_t{0});
  fc.threads = em_flags.threads;
  if (j.contains("fairness")) {
    const auto f = j["fairness"].get<std::string>();
    if (f != "dp" && f != "eo") problems.push_back("fairness must be dp or eo");
    else fc.kind = parse_kind(f);
  }
  if (j.contains("epsilon_grid")) fc.epsilon_grid = j["epsilon_grid"].get<std::vector<double>>();
  if (j.contains("eta_grid")) fc.eta_grid = j["eta_grid"].get<std::vector<double>>();
  const double epsilon = j.value("epsilon", 0.1);
  if (!(epsilon >= 0)) problems.push_back("epsilon must be >= 0");

  const int repeats = j.value("repeats", 10);
  if (repeats < 1) problems.push_back("repeats must be >= 1");

  SimConfig sim_cfg;
  if (has_sim) {
    try {
      sim_cfg = parse_sim_config(j["simulate"]);
    } catch (const ValidationError& e) {
      problems.push_back(std::string("simulate: ") + e.what());
    }
  }
  if (!problems.empty()) fail_validation(problems);

  ensure_dir(out_dir);
  const auto em = em_flags.to_config();

  ordered_json manifest;
  manifest["schema_version"] = kReportSchemaVersion;
  manifest["tool_version"] = kVersion;
  manifest["config_hash"] = hash_hex(j.dump());
  manifest["stages"] = ordered_json::array();
  auto record = [&](const std::string& name, const std::vector<std::string>& outputs,
                    std::int64_t ms) {
    ordered_json s;
    s["name"] = name;
    s["outputs"] = outputs;
    s["wall_ms"] = ms;
    manifest["stages"].push_back(s);
  };

  std::string ann_path, tasks_path;
  if (has_sim) {
    StageClock clock;
    const auto files = run_simulate_stage(sim_cfg, out_dir + "/dataset");
    record("simulate", files, clock.elapsed_ms());
    ann_path = files[0];
    tasks_path = files[1];
  } else {
    ann_path = j["dataset"]["annotations"].get<std::string>();
    tasks_path = j["dataset"]["tasks"].get<std::string>();
  }

  const auto bundle = load_dataset(ann_path, tasks_path);
  std::cerr << "pipeline: dataset has " << bundle.matrix.n_tasks() << " tasks, "
            << bundle.matrix.n_workers() << " workers\n";

  if (bundle.tasks.has_full_truth()) {
    StageClock clock;
    const auto files = run_audit_stage(bundle, out_dir + "/audit", em_flags.threads);
    record("audit", files, clock.elapsed_ms());
  } else {
    std::cerr << "pipeline: no ground truth; audit skipped\n";
  }

  std::map<std::string, std::vector<std::uint8_t>> labels_by_alg;
  for (const auto& alg : algorithms) {
    StageClock clock;
    const FairnessConstraint constraint{fc.kind, epsilon};
    const auto dir = out_dir + "/aggregate/" + alg;
    const auto files = run_aggregate_stage(bundle, alg, "ds", em, constraint, false, dir);
    record("aggregate:" + alg, files, clock.elapsed_ms());
    labels_by_alg[alg] = load_td_labels(dir + "/labels.csv", bundle.matrix.task_ids());
  }

  if (bundle.tasks.has_features() && bundle.tasks.has_full_truth()) {
    for (const auto& alg : algorithms) {
      StageClock clock;
      DeltaConfig dc;
      dc.repeats = repeats;
      dc.seed = em_flags.seed;
      dc.threads = em_flags.threads;
      const auto files =
          run_downstream_stage(bundle, labels_by_alg.at(alg), dc, out_dir + "/downstream/" + alg);
      record("downstream:" + alg, files, clock.elapsed_ms());
    }
    StageClock clock;
    const auto files = run_fair_compare_stage(bundle, em, fc, out_dir + "/fair_compare");
    record("fair_compare", files, clock.elapsed_ms());
  } else {
    std::cerr << "pipeline: features or truth missing; downstream and fair-compare skipped\n";
  }

  detail_io::write_text(out_dir + "/manifest.json", manifest.dump(2) + "\n");
  std::cerr << "pipeline: manifest -> " << out_dir << "/manifest.json\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"truth discovery and fairness auditing for crowd-labeled binary datasets"};
  app.require_subcommand(1);

  // --- simulate ---
  std::string sim_config, sim_out;
  auto* cmd_sim = app.add_subcommand("simulate", "generate a synthetic crowd-labeled dataset");
  cmd_sim->add_option("--config", sim_config, "sim config JSON")->required();
  cmd_sim->add_option("--out", sim_out, "output directory")->required();

  // --- audit ---
  std::string audit_ann, audit_tasks, audit_out;
  int audit_threads = 1;
  auto* cmd_audit = app.add_subcommand("audit", "per-worker accuracy/fairness audit and sweeps");
  cmd_audit->add_option("--annotations", audit_ann, "annotations CSV")->required();
  cmd_audit->add_option("--tasks", audit_tasks, "tasks CSV")->required();
  cmd_audit->add_option("--out", audit_out, "output directory")->required();
  cmd_audit->add_option("--threads", audit_threads, "parallelism degree");

  // --- aggregate ---
  std::string agg_ann, agg_tasks, agg_out, agg_alg = "mv", agg_base = "ds", agg_fairness = "dp";
  EmFlags agg_em;
  double agg_epsilon = 0.1;
  bool agg_features = false;
  auto* cmd_agg = app.add_subcommand("aggregate", "run one truth-discovery algorithm");
  cmd_agg->add_option("--annotations", agg_ann, "annotations CSV")->required();
  cmd_agg->add_option("--tasks", agg_tasks, "tasks CSV")->required();
  cmd_agg->add_option("--out", agg_out, "output directory")->required();
  cmd_agg->add_option("--algorithm", agg_alg,
                      "mv | ds | lfc | fair-td-pre | fair-td-in | fair-td-post");
  cmd_agg->add_option("--base", agg_base, "base algorithm for fair-td-post");
  cmd_agg->add_option("--max-iter", agg_em.max_iter, "EM iteration cap");
  cmd_agg->add_option("--tol", agg_em.tol, "EM posterior-change tolerance");
  cmd_agg->add_option("--smoothing", agg_em.smoothing, "Laplace pseudo-count");
  cmd_agg->add_option("--seed", agg_em.seed, "seed");
  cmd_agg->add_option("--threads", agg_em.threads, "parallelism degree");
  cmd_agg->add_option("--fairness", agg_fairness, "dp | eo");
  cmd_agg->add_option("--epsilon", agg_epsilon, "fairness budget for fair-td variants");
  cmd_agg->add_flag("--use-features", agg_features, "lfc: use task features for the prior model");

  // --- downstream ---
  std::string ds_ann, ds_tasks, ds_labels, ds_out;
  int ds_repeats = 10, ds_threads = 1;
  double ds_split = 0.5;
  std::uint64_t ds_seed = 0;
  auto* cmd_ds = app.add_subcommand("downstream", "train-on-consensus vs train-on-truth deltas");
  cmd_ds->add_option("--annotations", ds_ann, "annotations CSV")->required();
  cmd_ds->add_option("--tasks", ds_tasks, "tasks CSV")->required();
  cmd_ds->add_option("--td-labels", ds_labels, "labels.csv from aggregate")->required();
  cmd_ds->add_option("--out", ds_out, "output directory")->required();
  cmd_ds->add_option("--repeats", ds_repeats, "experiment repeats");
  cmd_ds->add_option("--split", ds_split, "train fraction");
  cmd_ds->add_option("--seed", ds_seed, "seed");
  cmd_ds->add_option("--threads", ds_threads, "parallelism degree");

  // --- fair-compare ---
  std::string fcmp_ann, fcmp_tasks, fcmp_out, fcmp_fairness = "dp";
  std::string fcmp_eps_grid = "0,0.02,0.05,0.1,0.2,0.5,1";
  std::string fcmp_eta_grid = "0,0.5,1,2,5,10,100";
  EmFlags fcmp_em;
  double fcmp_split = 0.5;
  auto* cmd_fcmp = app.add_subcommand("fair-compare",
                                      "fairness-aware aggregation vs fair-ML baselines");
  cmd_fcmp->add_option("--annotations", fcmp_ann, "annotations CSV")->required();
  cmd_fcmp->add_option("--tasks", fcmp_tasks, "tasks CSV")->required();
  cmd_fcmp->add_option("--out", fcmp_out, "output directory")->required();
  cmd_fcmp->add_option("--fairness", fcmp_fairness, "dp | eo");
  cmd_fcmp->add_option("--epsilon-grid", fcmp_eps_grid, "comma-separated budgets");
  cmd_fcmp->add_option("--eta-grid", fcmp_eta_grid, "comma-separated regularizer strengths");
  cmd_fcmp->add_option("--split", fcmp_split, "train fraction");
  cmd_fcmp->add_option("--seed", fcmp_em.seed, "seed");
  cmd_fcmp->add_option("--threads", fcmp_em.threads, "parallelism degree");
  cmd_fcmp->add_option("--max-iter", fcmp_em.max_iter, "EM iteration cap");
  cmd_fcmp->add_option("--tol", fcmp_em.tol, "EM posterior-change tolerance");
  cmd_fcmp->add_option("--smoothing", fcmp_em.smoothing, "Laplace pseudo-count");

  // --- pipeline ---
  std::string pipe_config, pipe_out;
  auto* cmd_pipe = app.add_subcommand("pipeline", "run every stage from one config");
  cmd_pipe->add_option("--config", pipe_config, "pipeline config JSON")->required();
  cmd_pipe->add_option("--out", pipe_out, "output directory (overrides config)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_sim->parsed()) {
      run_simulate_stage(parse_sim_config(read_json_file(sim_config)), sim_out);
    } else if (cmd_audit->parsed()) {
      if (audit_threads < 1) throw ValidationError("--threads must be >= 1");
      run_audit_stage(load_dataset(audit_ann, audit_tasks), audit_out, audit_threads);
    } else if (cmd_agg->parsed()) {
      const auto bundle = load_dataset(agg_ann, agg_tasks);
      const FairnessConstraint constraint{parse_kind(agg_fairness), agg_epsilon};
      constraint.validate();
      run_aggregate_stage(bundle, agg_alg, agg_base, agg_em.to_config(), constraint, agg_features,
                          agg_out);
    } else if (cmd_ds->parsed()) {
      const auto bundle = load_dataset(ds_ann, ds_tasks);
      DeltaConfig cfg;
      cfg.repeats = ds_repeats;
      cfg.split_fraction = ds_split;
      cfg.seed = ds_seed;
      cfg.threads = ds_threads;
      run_downstream_stage(bundle, load_td_labels(ds_labels, bundle.matrix.task_ids()), cfg, ds_out);
    } else if (cmd_fcmp->parsed()) {
      const auto bundle = load_dataset(fcmp_ann, fcmp_tasks);
      FairCompareOpts opts;
      opts.epsilon_grid = parse_grid(fcmp_eps_grid, "--epsilon-grid");
      opts.eta_grid = parse_grid(fcmp_eta_grid, "--eta-grid");
      opts.kind = parse_kind(fcmp_fairness);
      opts.split_fraction = fcmp_split;
      opts.seed = fcmp_em.seed;
      opts.threads = fcmp_em.threads;
      run_fair_compare_stage(bundle, fcmp_em.to_config(), opts, fcmp_out);
    } else if (cmd_pipe->parsed()) {
      run_pipeline(pipe_config, pipe_out);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error (config): " << e.what() << "\n";
    return 2;
  } catch (const IngestError& e) {
    std::cerr << "error (ingest): " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "error (io): " << e.what() << "\n";
    return 3;
  } catch (const ComputeError& e) {
    std::cerr << "error (compute): " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
