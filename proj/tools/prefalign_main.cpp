#include "prefalign/bench.hpp"
#include "prefalign/parallel.hpp"
#include "prefalign/oracle.hpp"
#include "prefalign/rng.hpp"
#include "prefalign/semipar.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace prefalign;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> reps;
  std::optional<int> jobs;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required = true) {
  auto* opt = cmd->add_option("--config", args.config_path, "key = value config file");
  if (config_required) opt->required();
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seed, "override the experiment seed");
  cmd->add_option("--reps", args.reps, "override the replication count");
  cmd->add_option("--jobs", args.jobs, "worker threads (0: hardware)");
}

ExperimentConfig load_config(const CommonArgs& args) {
  KeyValueConfig kv = args.config_path.empty() ? KeyValueConfig()
                                               : KeyValueConfig::parse_file(args.config_path);
  if (args.seed) kv.set_int("seed", static_cast<long long>(*args.seed));
  if (args.reps) kv.set_int("replications", *args.reps);
  if (args.jobs) kv.set_int("jobs", *args.jobs);
  return experiment_config_from(kv);
}

fs::path ensure_out(const CommonArgs& args, const char* fallback) {
  const fs::path dir = args.out_dir.empty() ? fs::path(fallback) : fs::path(args.out_dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

json estimator_report_json(const char* method, const EstimatorReport& report,
                           std::uint64_t seed, const std::string& digest) {
  json doc;
  doc["schema_version"] = 1;
  doc["method"] = method;
  doc["estimate"] = report.estimate;
  doc["direct_term"] = report.direct_term;
  doc["bias_term"] = report.bias_term;
  doc["n_used"] = report.n_used;
  doc["N_used"] = report.N_used;
  doc["clipped_fraction"] = report.clipped_fraction;
  doc["seed"] = seed;
  doc["config_digest"] = digest;
  return doc;
}

int cmd_simulate(const CommonArgs& args) {
  const ExperimentConfig cfg = load_config(args);
  const World world = make_world(cfg.world);
  const DatasetPair data = sample_protocol_dataset(world, cfg.protocol, cfg.seed);
  const fs::path dir = ensure_out(args, "simulate_out");

  std::ostringstream buf;
  write_dataset(buf, data);
  write_file(dir / "dataset.csv", buf.str());

  std::ostringstream gen;
  write_policy_table(gen, world.gen_ai);
  write_file(dir / "gen_ai.csv", gen.str());
  std::ostringstream hum;
  write_policy_table(hum, world.gen_hum);
  write_file(dir / "gen_hum.csv", hum.str());

  json doc;
  doc["schema_version"] = 1;
  doc["human_records"] = data.human.size();
  doc["ai_records"] = data.ai.size();
  doc["config_digest"] = cfg.digest;
  doc["mean_abs_judge_deviation"] = mean_abs_judge_deviation(world);
  write_file(dir / "summary.json", doc.dump(2) + "\n");
  std::cout << doc.dump(2) << '\n';
  return 0;
}

int cmd_train_ddpo(const CommonArgs& args) {
  const ExperimentConfig cfg = load_config(args);
  const World world = make_world(cfg.world);
  const PolicyTable ref = world.gen_ai;
  const auto features = std::make_shared<const FeatureMap>(
      FeatureMap::one_hot(world.responses_per_prompt()));
  const DatasetPair data = sample_protocol_dataset(world, cfg.protocol, cfg.seed);

  std::vector<double> weights;
  if (cfg.protocol.mode == ProtocolMode::Split) {
    if (cfg.protocol.estimate_weights) {
      const auto est =
          estimate_gen_hum(data.human, cfg.protocol.folds, world.responses_per_prompt());
      weights = estimated_density_ratios(world, data.human, est);
    } else {
      weights = exact_density_ratios(world, data.human);
    }
  }
  TrainConfig train = cfg.train;
  train.seed = derive_seed(cfg.seed, 1);
  const TrainResult result = train_ddpo(data, ref, features, weights, train);
  const PolicyTable policy = policy_table(result.policy);
  const RegretReport regret = exact_regret_dpo(policy, world, cfg.train.beta, ref);

  const fs::path dir = ensure_out(args, "train_ddpo_out");
  std::ostringstream trace;
  write_trace_csv(trace, result.trace);
  write_file(dir / "trace.csv", trace.str());
  std::ostringstream table;
  write_policy_table(table, policy);
  write_file(dir / "policy.csv", table.str());
  std::ostringstream theta;
  write_theta(theta, result.policy.theta);
  write_file(dir / "theta.txt", theta.str());

  json doc;
  doc["schema_version"] = 1;
  doc["final_loss"] = result.trace.empty() ? 0.0 : result.trace.back().total;
  doc["regret"] = regret.regret;
  doc["value_opt"] = regret.value_opt;
  doc["value_hat"] = regret.value_hat;
  doc["clipped_fraction"] = result.clipped_fraction;
  doc["config_digest"] = cfg.digest;
  write_file(dir / "summary.json", doc.dump(2) + "\n");
  std::cout << doc.dump(2) << '\n';
  return 0;
}

int cmd_train_dipo(const CommonArgs& args) {
  const ExperimentConfig cfg = load_config(args);
  const World world = make_world(cfg.world);
  const PolicyTable ref = world.gen_ai;
  const auto features = std::make_shared<const FeatureMap>(
      FeatureMap::one_hot(world.responses_per_prompt()));
  const DatasetPair data = sample_protocol_dataset(world, cfg.protocol, cfg.seed);
  const bool shared = cfg.protocol.mode == ProtocolMode::Shared;

  DipoTrainConfig dcfg;
  dcfg.base = cfg.train;
  dcfg.base.seed = derive_seed(cfg.seed, 1);
  dcfg.backend = cfg.backend;
  dcfg.m = cfg.m;
  dcfg.exact_expectation = cfg.exact_expectation;
  dcfg.eval_every = cfg.eval_every;
  const DipoTrainResult result = train_dipo(world, ref, data.human,
                                            shared ? world.gen_ai : world.gen_hum, features, dcfg);
  const PolicyTable policy = policy_table(result.policy);
  const RegretReport regret = exact_regret_ipo(policy, world, ref, cfg.train.beta);

  const fs::path dir = ensure_out(args, "train_dipo_out");
  std::ostringstream trace;
  trace << "step,objective,direct_term,bias_term,kl_term\n";
  for (const auto& row : result.trace) {
    trace << row.step << ',' << format_double(row.objective) << ','
          << format_double(row.direct_term) << ',' << format_double(row.bias_term) << ','
          << format_double(row.kl_term) << '\n';
  }
  write_file(dir / "trace.csv", trace.str());
  std::ostringstream table;
  write_policy_table(table, policy);
  write_file(dir / "policy.csv", table.str());
  std::ostringstream theta;
  write_theta(theta, result.policy.theta);
  write_file(dir / "theta.txt", theta.str());

  json doc;
  doc["schema_version"] = 1;
  doc["final_objective"] = result.trace.empty() ? 0.0 : result.trace.back().objective;
  doc["regret"] = regret.regret;
  doc["value_opt"] = regret.value_opt;
  doc["value_hat"] = regret.value_hat;
  doc["clipped_fraction"] = result.clipped_fraction;
  doc["config_digest"] = cfg.digest;
  write_file(dir / "summary.json", doc.dump(2) + "\n");
  std::cout << doc.dump(2) << '\n';
  return 0;
}

int cmd_estimate(const CommonArgs& args, const std::string& method, int N_direct) {
  const ExperimentConfig cfg = load_config(args);
  const World world = make_world(cfg.world);
  const PolicyTable ref = world.gen_ai;
  const bool shared = cfg.protocol.mode == ProtocolMode::Shared;
  const PolicyTable& gen_hum = shared ? world.gen_ai : world.gen_hum;
  const DatasetPair data = sample_protocol_dataset(world, cfg.protocol, cfg.seed);

  // The evaluated policy: the exact KL-regularized optimum, a fixed
  // deterministic target distinct from the reference.
  const PolicyTable pi = closed_form_dpo_opt(world, ref, cfg.train.beta);

  EvalConfig eval;
  eval.backend = cfg.backend;
  eval.m = cfg.m;
  eval.clip = cfg.train.clip;
  const int N = N_direct > 0 ? N_direct : cfg.protocol.N;
  const std::uint64_t seed = derive_seed(cfg.seed, 2);

  EstimatorReport report;
  if (method == "dm") {
    report = p_dm(pi, ref, world, eval, N, seed);
  } else if (method == "dipo") {
    report = p_dipo(pi, ref, world, gen_hum, data.human, eval, N, seed);
  } else if (method == "dipo+") {
    report = p_dipo_plus(pi, ref, world, gen_hum, data.human, eval, N, seed, cfg.lambda);
  } else if (method == "hum") {
    report.estimate = p_hum(pi, ref, data.human, gen_hum, human_pref_model(world));
    report.direct_term = report.estimate;
    report.n_used = static_cast<int>(data.human.size());
  } else {
    throw std::invalid_argument("unknown estimator: " + method);
  }

  json doc = estimator_report_json(method.c_str(), report, cfg.seed, cfg.digest);
  doc["true_pref_prob"] = exact_pref_prob(pi, ref, world);
  if (!args.out_dir.empty()) {
    const fs::path dir = ensure_out(args, "estimate_out");
    write_file(dir / ("estimate_" + std::string(method == "dipo+" ? "dipo_plus" : method) +
                      ".json"),
               doc.dump(2) + "\n");
  }
  std::cout << doc.dump(2) << '\n';
  return 0;
}

int cmd_compare_efficiency(const CommonArgs& args, int n, int N, const std::string& judge) {
  ExperimentConfig cfg = load_config(args);
  // MSE comparisons default to 500 replications unless set explicitly.
  if (!args.reps && !KeyValueConfig::parse_file(args.config_path).has("replications")) {
    cfg.replications = 500;
  }
  if (judge == "flip") {
    cfg.world.judge_kind = JudgeKind::FlipChannel;
  } else if (judge == "misaligned") {
    cfg.world.judge_kind = JudgeKind::MisalignedReward;
  } else if (!judge.empty()) {
    throw std::invalid_argument("--judge must be flip or misaligned");
  }
  const World world = make_world(cfg.world);
  const PolicyTable ref = world.gen_ai;
  const PolicyTable pi = closed_form_dpo_opt(world, ref, cfg.train.beta);
  EvalConfig eval;
  eval.backend = cfg.backend;
  eval.m = cfg.m;
  eval.clip = cfg.train.clip;
  const int jobs = cfg.jobs > 0 ? cfg.jobs : default_jobs();
  const EfficiencyReport report = efficiency_compare(
      pi, ref, world, n > 0 ? n : cfg.protocol.n, N > 0 ? N : cfg.protocol.N,
      cfg.replications, eval, cfg.seed, jobs);

  json doc;
  doc["schema_version"] = 1;
  doc["truth"] = report.truth;
  doc["mse_dipo"] = report.mse_dipo;
  doc["mse_human_only"] = report.mse_hum;
  doc["diff_mean"] = report.diff_mean;
  doc["ci_low"] = report.ci_low;
  doc["ci_high"] = report.ci_high;
  doc["replications"] = report.replications;
  doc["preconditions_met"] = report.preconditions_met;
  doc["ci_reliable"] = report.ci_reliable;
  doc["config_digest"] = cfg.digest;
  if (!args.out_dir.empty()) {
    write_file(ensure_out(args, "efficiency_out") / "efficiency.json", doc.dump(2) + "\n");
  }
  std::cout << doc.dump(2) << '\n';
  return 0;
}

int cmd_oracle(const CommonArgs& args, const std::string& kind, const std::string& policy_path) {
  const ExperimentConfig cfg = load_config(args);
  const World world = make_world(cfg.world);
  const PolicyTable ref = world.gen_ai;
  PolicyTable policy = ref;
  if (!policy_path.empty()) {
    std::ifstream in(policy_path);
    if (!in) throw std::runtime_error("cannot open policy file: " + policy_path);
    policy = read_policy_table(in);
  }
  const RegretReport report = kind == "ipo"
                                  ? exact_regret_ipo(policy, world, ref, cfg.train.beta)
                                  : exact_regret_dpo(policy, world, cfg.train.beta, ref);
  json doc;
  doc["schema_version"] = 1;
  doc["kind"] = kind;
  doc["value_opt"] = report.value_opt;
  doc["value_hat"] = report.value_hat;
  doc["regret"] = report.regret;
  doc["value_opt_unregularized"] = report.value_opt_unregularized;
  std::cout << doc.dump(2) << '\n';
  return 0;
}

int cmd_run(const CommonArgs& args) {
  const ExperimentConfig cfg = load_config(args);
  const auto records = run_experiment(cfg);
  const fs::path dir = ensure_out(args, "run_out");
  std::ostringstream buf;
  write_records_csv(buf, records);
  write_file(dir / "records.csv", buf.str());
  std::ostringstream csv, js;
  write_summary_csv(csv, records);
  write_summary_json(js, records);
  write_file(dir / "summary.csv", csv.str());
  write_file(dir / "summary.json", js.str());
  std::cout << js.str();
  return 0;
}

int cmd_sweep(const CommonArgs& args, const std::string& axis, const std::string& values_csv) {
  const ExperimentConfig cfg = load_config(args);
  std::vector<double> values;
  std::istringstream in(values_csv);
  std::string field;
  while (std::getline(in, field, ',')) {
    if (!field.empty()) values.push_back(std::stod(field));
  }
  const auto rows = sweep(cfg, sweep_axis_from_name(axis), values);
  const fs::path dir = ensure_out(args, "sweep_out");
  std::ostringstream buf;
  write_sweep_csv(buf, rows);
  write_file(dir / "sweep.csv", buf.str());
  std::cout << buf.str();
  return 0;
}

int cmd_report(const CommonArgs& args, const std::string& records_path) {
  std::ifstream in(records_path);
  if (!in) throw std::runtime_error("cannot open records file: " + records_path);
  const auto records = read_records_csv(in);
  const fs::path dir = ensure_out(args, "report_out");
  std::ostringstream csv, js;
  write_summary_csv(csv, records);
  write_summary_json(js, records);
  write_file(dir / "summary.csv", csv.str());
  write_file(dir / "summary.json", js.str());
  std::cout << js.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prefalign: debiased preference-alignment estimators and trainers on finite synthetic worlds"};
  app.require_subcommand(1);

  CommonArgs sim_args;
  auto* sim = app.add_subcommand("simulate", "sample a dataset under the configured protocol");
  add_common(sim, sim_args);

  CommonArgs ddpo_args;
  auto* ddpo_cmd = app.add_subcommand("train-ddpo", "run the debiased DPO trainer");
  add_common(ddpo_cmd, ddpo_args);

  CommonArgs dipo_args;
  auto* dipo_cmd = app.add_subcommand("train-dipo", "run the debiased IPO trainer");
  add_common(dipo_cmd, dipo_args);

  CommonArgs est_args;
  std::string est_method = "dipo";
  int est_N = 0;
  auto* est = app.add_subcommand("estimate", "evaluate a preference estimator");
  add_common(est, est_args);
  est->add_option("--method", est_method, "dm, dipo, dipo+, or hum")
      ->check(CLI::IsMember({"dm", "dipo", "dipo+", "hum"}));
  est->add_option("--N", est_N, "direct-estimator draws (default protocol.N)");

  CommonArgs eff_args;
  int eff_n = 0, eff_N = 0;
  std::string eff_judge;
  auto* eff = app.add_subcommand("compare-efficiency",
                                 "replicated MSE comparison of DIPO vs the human-only estimator");
  add_common(eff, eff_args);
  eff->add_option("--n", eff_n, "human sample size");
  eff->add_option("--N", eff_N, "direct-estimator draws");
  eff->add_option("--judge", eff_judge, "flip or misaligned");

  CommonArgs oracle_args;
  std::string oracle_kind = "dpo";
  std::string oracle_policy;
  auto* orc = app.add_subcommand("oracle", "exact enumeration values and regret");
  add_common(orc, oracle_args);
  orc->add_option("--kind", oracle_kind, "dpo (reward regret) or ipo (preference regret)")
      ->check(CLI::IsMember({"dpo", "ipo"}));
  orc->add_option("--policy", oracle_policy, "policy table CSV (default: the reference)");

  CommonArgs run_args;
  auto* run = app.add_subcommand("run", "replicated experiment for the configured method");
  add_common(run, run_args);

  CommonArgs sweep_args;
  std::string sweep_axis;
  std::string sweep_values;
  auto* swp = app.add_subcommand("sweep", "run the experiment across an axis of values");
  add_common(swp, sweep_args);
  swp->add_option("--axis", sweep_axis, "n, N, rho, beta, or shift")->required();
  swp->add_option("--values", sweep_values, "comma-separated, sorted")->required();

  CommonArgs report_args;
  std::string report_records;
  auto* rep = app.add_subcommand("report", "aggregate a records.csv into summaries");
  add_common(rep, report_args, /*config_required=*/false);
  rep->add_option("--records", report_records, "records.csv from a run")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate(sim_args);
    if (ddpo_cmd->parsed()) return cmd_train_ddpo(ddpo_args);
    if (dipo_cmd->parsed()) return cmd_train_dipo(dipo_args);
    if (est->parsed()) return cmd_estimate(est_args, est_method, est_N);
    if (eff->parsed()) return cmd_compare_efficiency(eff_args, eff_n, eff_N, eff_judge);
    if (orc->parsed()) return cmd_oracle(oracle_args, oracle_kind, oracle_policy);
    if (run->parsed()) return cmd_run(run_args);
    if (swp->parsed()) return cmd_sweep(sweep_args, sweep_axis, sweep_values);
    if (rep->parsed()) return cmd_report(report_args, report_records);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
