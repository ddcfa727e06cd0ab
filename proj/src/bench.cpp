#include "prefalign/bench.hpp"

#include "prefalign/oracle.hpp"
#include "prefalign/parallel.hpp"
#include "prefalign/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace prefalign {

using json = nlohmann::json;

std::string method_name(Method m) {
  switch (m) {
    case Method::DpoNaive: return "dpo_naive";
    case Method::DpoOracleLabels: return "dpo_oracle_labels";
    case Method::Ddpo: return "ddpo";
    case Method::IpoNaive: return "ipo_naive";
    case Method::IpoOracleLabels: return "ipo_oracle_labels";
    case Method::Dipo: return "dipo";
    case Method::DipoPlus: return "dipo_plus";
    case Method::SampledIpo: return "sampled_ipo";
  }
  throw std::logic_error("method_name: unreachable");
}

Method method_from_name(const std::string& name) {
  for (const Method m : {Method::DpoNaive, Method::DpoOracleLabels, Method::Ddpo,
                         Method::IpoNaive, Method::IpoOracleLabels, Method::Dipo,
                         Method::DipoPlus, Method::SampledIpo}) {
    if (method_name(m) == name) return m;
  }
  throw std::invalid_argument("unknown method: " + name);
}

void ProtocolConfig::validate() const {
  if (N < 1) throw std::invalid_argument("protocol: N must be >= 1");
  if (mode == ProtocolMode::Split && n < 1) {
    throw std::invalid_argument("protocol: n must be >= 1 in split mode");
  }
  if (human_fraction < 0.0 || human_fraction > 1.0) {
    throw std::invalid_argument("protocol: human_fraction must lie in [0,1]");
  }
  if (folds < 2) throw std::invalid_argument("protocol: folds must be >= 2");
}

void ExperimentConfig::validate() const {
  protocol.validate();
  train.validate();
  if (m < 1) throw std::invalid_argument("experiment: m must be >= 1");
  if (lambda < 0.0) throw std::invalid_argument("experiment: lambda must be >= 0");
  if (replications < 1) throw std::invalid_argument("experiment: replications must be >= 1");
  if (jobs < 0) throw std::invalid_argument("experiment: jobs must be >= 0");
}

std::vector<std::string> experiment_config_keys() {
  std::vector<std::string> keys = world_config_keys();
  for (const char* k :
       {"protocol.mode", "protocol.n", "protocol.N", "protocol.human_fraction",
        "protocol.flip_rate", "protocol.estimate_weights", "protocol.folds", "train.beta",
        "train.lr", "train.steps", "train.batch", "train.ridge", "train.clip_min",
        "train.clip_max", "train.clip_weights", "train.seed", "dipo.backend", "dipo.m",
        "dipo.exact_expectation", "dipo.lambda", "dipo.eval_every", "method", "replications",
        "seed", "jobs"}) {
    keys.emplace_back(k);
  }
  return keys;
}

ExperimentConfig experiment_config_from(const KeyValueConfig& kv) {
  kv.require_known_keys(experiment_config_keys());
  ExperimentConfig cfg;
  cfg.world = world_config_from(kv);
  // protocol.flip_rate is the corruption-protocol name for the flip judge's rho.
  if (kv.has("protocol.flip_rate")) {
    cfg.world.judge_rho = kv.get_double("protocol.flip_rate", cfg.world.judge_rho);
  }
  cfg.method = method_from_name(kv.get_string("method", "ddpo"));
  const std::string mode = kv.get_string("protocol.mode", "shared");
  if (mode == "shared") {
    cfg.protocol.mode = ProtocolMode::Shared;
  } else if (mode == "split") {
    cfg.protocol.mode = ProtocolMode::Split;
  } else {
    throw std::invalid_argument("protocol.mode must be 'shared' or 'split'");
  }
  cfg.protocol.n = kv.get_int("protocol.n", cfg.protocol.n);
  cfg.protocol.N = kv.get_int("protocol.N", cfg.protocol.N);
  cfg.protocol.human_fraction = kv.get_double("protocol.human_fraction", cfg.protocol.human_fraction);
  cfg.protocol.estimate_weights = kv.get_bool("protocol.estimate_weights", false);
  cfg.protocol.folds = kv.get_int("protocol.folds", cfg.protocol.folds);
  cfg.train.beta = kv.get_double("train.beta", cfg.train.beta);
  cfg.train.lr = kv.get_double("train.lr", cfg.train.lr);
  cfg.train.steps = kv.get_int("train.steps", cfg.train.steps);
  cfg.train.batch = kv.get_int("train.batch", cfg.train.batch);
  cfg.train.ridge = kv.get_double("train.ridge", cfg.train.ridge);
  cfg.train.clip.c_min = kv.get_double("train.clip_min", cfg.train.clip.c_min);
  cfg.train.clip.c_max = kv.get_double("train.clip_max", cfg.train.clip.c_max);
  cfg.train.clip_weights = kv.get_bool("train.clip_weights", false);
  cfg.train.seed = kv.get_u64("train.seed", cfg.train.seed);
  const std::string backend = kv.get_string("dipo.backend", "scores");
  if (backend == "scores") {
    cfg.backend = JudgeBackend::ExactScores;
  } else if (backend == "mc") {
    cfg.backend = JudgeBackend::MonteCarlo;
  } else {
    throw std::invalid_argument("dipo.backend must be 'scores' or 'mc'");
  }
  cfg.m = kv.get_int("dipo.m", cfg.m);
  cfg.exact_expectation = kv.get_bool("dipo.exact_expectation", false);
  cfg.lambda = kv.get_double("dipo.lambda", cfg.lambda);
  cfg.eval_every = kv.get_int("dipo.eval_every", cfg.eval_every);
  cfg.replications = kv.get_int("replications", cfg.replications);
  cfg.seed = kv.get_u64("seed", cfg.seed);
  cfg.jobs = kv.get_int("jobs", cfg.jobs);
  cfg.digest = kv.digest();
  cfg.validate();
  return cfg;
}

DatasetPair sample_protocol_dataset(const World& world, const ProtocolConfig& protocol,
                                    std::uint64_t seed) {
  protocol.validate();
  if (protocol.mode == ProtocolMode::Split) {
    return sample_dataset(world, protocol.n, protocol.N, seed);
  }
  // Shared: N pairs from gen_ai with full labels, then re-annotate a random
  // human_fraction subset. The re-annotated records keep both labels; the AI
  // set is the full draw.
  Rng rng(seed);
  DatasetPair data;
  data.ai.reserve(static_cast<size_t>(protocol.N));
  for (int i = 0; i < protocol.N; ++i) {
    PreferencePair rec;
    rec.source = PairSource::AI;
    rec.x = rng.categorical(world.prompt_weights);
    rec.y1 = rng.categorical(world.gen_ai.row(rec.x));
    rec.y2 = rng.categorical(world.gen_ai.row(rec.x));
    const double g = human_pref_prob(world, rec.x, rec.y1, rec.y2);
    const int z = rng.bernoulli(g) ? 1 : 0;
    rec.z = z;
    if (world.judge.kind == JudgeKind::FlipChannel) {
      rec.z_hat = rng.bernoulli(world.judge.rho) ? 1 - z : z;
    } else {
      rec.z_hat = rng.bernoulli(judge_pref_prob(world, rec.x, rec.y1, rec.y2)) ? 1 : 0;
    }
    data.ai.push_back(rec);
  }
  const int n = static_cast<int>(std::llround(protocol.human_fraction * protocol.N));
  std::vector<int> order(static_cast<size_t>(protocol.N));
  for (int i = 0; i < protocol.N; ++i) order[static_cast<size_t>(i)] = i;
  for (int i = protocol.N - 1; i > 0; --i) {
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.uniform_int(i + 1))]);
  }
  data.human.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    PreferencePair rec = data.ai[static_cast<size_t>(order[static_cast<size_t>(i)])];
    rec.source = PairSource::Human;
    data.human.push_back(rec);
  }
  return data;
}

namespace {

struct MethodOutput {
  PolicyTable policy;
  bool has_estimate = false;
  double estimate = 0.0;
  double direct_term = 0.0;
  double bias_term = 0.0;
  bool ipo_family = false;
};

std::vector<PreferencePair> combined_records(const DatasetPair& data) {
  // Naive mixture: every AI record with its AI label, plus the re-annotated
  // records again with their human label (written into the label slot the
  // DPO trainer reads).
  std::vector<PreferencePair> records = data.ai;
  for (PreferencePair rec : data.human) {
    rec.z_hat = rec.z;
    records.push_back(rec);
  }
  return records;
}

std::vector<PreferencePair> oracle_records(const DatasetPair& data) {
  std::vector<PreferencePair> records = data.ai;
  for (auto& rec : records) {
    if (!rec.z) throw std::invalid_argument("oracle labels unavailable on AI records");
    rec.z_hat = rec.z;
  }
  return records;
}

// Offline squared-margin trainer used for the sampled-IPO baseline.
LogLinearPolicy train_sampled_ipo(const std::vector<PreferencePair>& records,
                                  const PolicyTable& ref,
                                  std::shared_ptr<const FeatureMap> features,
                                  const TrainConfig& cfg) {
  cfg.validate();
  if (records.empty()) throw std::invalid_argument("train_sampled_ipo: empty dataset");
  LogLinearPolicy policy =
      features->is_one_hot ? policy_from_table(features, ref) : make_policy(features);
  Rng rng(cfg.seed);
  const double target = 1.0 / cfg.beta;
  Vector grad(policy.features->dim);
  for (int step = 0; step < cfg.steps; ++step) {
    grad.setZero();
    const int batch = cfg.batch > 0 ? cfg.batch : static_cast<int>(records.size());
    for (int b = 0; b < batch; ++b) {
      const size_t i = cfg.batch > 0
                           ? static_cast<size_t>(rng.uniform_int(static_cast<int>(records.size())))
                           : static_cast<size_t>(b);
      const auto& rec = records[i];
      const double sign = 2.0 * *rec.z_hat - 1.0;
      const double margin =
          delta_pi(policy, rec.x, rec.y1, rec.y2) - delta_pi(ref, rec.x, rec.y1, rec.y2);
      const Matrix& phi = policy.features->phi[static_cast<size_t>(rec.x)];
      grad.noalias() += (2.0 * (sign * margin - target) * sign / static_cast<double>(batch)) *
                        (phi.row(rec.y1) - phi.row(rec.y2)).transpose();
    }
    if (cfg.ridge > 0.0) grad += 2.0 * cfg.ridge * policy.theta;
    if (!grad.allFinite()) {
      throw std::runtime_error("train_sampled_ipo: non-finite gradient at step " +
                               std::to_string(step));
    }
    policy.theta -= cfg.lr * grad;
  }
  return policy;
}

MethodOutput run_method(const ExperimentConfig& cfg, const World& world, const PolicyTable& ref,
                        const std::shared_ptr<const FeatureMap>& features,
                        const DatasetPair& data, std::uint64_t rep_seed) {
  MethodOutput out;
  TrainConfig train = cfg.train;
  train.seed = derive_seed(rep_seed, 1);

  // Generation nuisance behind the human records.
  const bool shared = cfg.protocol.mode == ProtocolMode::Shared;
  const PolicyTable& gen_hum = shared ? world.gen_ai : world.gen_hum;

  const auto weights = [&]() -> std::vector<double> {
    if (shared) return {};  // identical generators, w == 1
    if (!cfg.protocol.estimate_weights) return exact_density_ratios(world, data.human);
    const auto est = estimate_gen_hum(data.human, cfg.protocol.folds,
                                      world.responses_per_prompt());
    return estimated_density_ratios(world, data.human, est);
  };

  switch (cfg.method) {
    case Method::DpoNaive: {
      DatasetPair naive;
      naive.ai = combined_records(data);
      const TrainResult r = train_ddpo(naive, ref, features, {}, train);
      out.policy = policy_table(r.policy);
      if (!r.trace.empty()) {
        out.has_estimate = true;
        out.estimate = r.trace.back().total;
        out.direct_term = r.trace.back().ai_term;
        out.bias_term = r.trace.back().bias_term;
      }
      return out;
    }
    case Method::DpoOracleLabels: {
      DatasetPair oracle;
      oracle.ai = oracle_records(data);
      const TrainResult r = train_ddpo(oracle, ref, features, {}, train);
      out.policy = policy_table(r.policy);
      return out;
    }
    case Method::Ddpo: {
      const auto w = weights();
      const TrainResult r = train_ddpo(data, ref, features, w, train);
      out.policy = policy_table(r.policy);
      if (!r.trace.empty()) {
        out.has_estimate = true;
        out.estimate = r.trace.back().total;
        out.direct_term = r.trace.back().ai_term;
        out.bias_term = r.trace.back().bias_term;
      }
      return out;
    }
    case Method::SampledIpo: {
      out.policy = policy_table(train_sampled_ipo(combined_records(data), ref, features, train));
      out.ipo_family = true;
      return out;
    }
    case Method::IpoNaive:
    case Method::IpoOracleLabels:
    case Method::Dipo:
    case Method::DipoPlus: {
      DipoTrainConfig dcfg;
      dcfg.base = train;
      dcfg.backend = cfg.backend;
      dcfg.m = cfg.m;
      dcfg.exact_expectation = cfg.exact_expectation;
      dcfg.eval_every = cfg.eval_every;
      std::span<const PreferencePair> human;
      if (cfg.method == Method::IpoNaive) {
        dcfg.debias = false;
        // The naive mixture treats every label in D_AI u D_Hum as reliable:
        // its effective preference oracle is the (N, n)-weighted mixture of
        // the judge and the human mechanism.
        const double wn = static_cast<double>(data.human.size());
        const double wN = static_cast<double>(data.ai.size());
        dcfg.pref_override = [&world, wn, wN](int x, int y1, int y2) {
          return (wN * judge_pref_prob(world, x, y1, y2) +
                  wn * human_pref_prob(world, x, y1, y2)) /
                 (wN + wn);
        };
      } else if (cfg.method == Method::IpoOracleLabels) {
        dcfg.debias = false;
        dcfg.pref_override = human_pref_model(world);
      } else {
        dcfg.debias = true;
        human = data.human;
        if (cfg.method == Method::DipoPlus) dcfg.lambda_hum = cfg.lambda;
      }
      const DipoTrainResult r = train_dipo(world, ref, human, gen_hum, features, dcfg);
      out.policy = policy_table(r.policy);
      out.ipo_family = true;
      if (!r.trace.empty()) {
        out.has_estimate = true;
        out.direct_term = r.trace.back().direct_term;
        out.bias_term = r.trace.back().bias_term;
        out.estimate = out.direct_term - out.bias_term;
      }
      return out;
    }
  }
  throw std::logic_error("run_method: unreachable");
}

}  // namespace

std::vector<RunRecord> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const World world = make_world(cfg.world);
  const PolicyTable ref = world.gen_ai;  // policies are aligned away from the generator
  const auto features = std::make_shared<const FeatureMap>(
      FeatureMap::one_hot(world.responses_per_prompt()));

  std::vector<RunRecord> records(static_cast<size_t>(cfg.replications));
  const int jobs = cfg.jobs > 0 ? cfg.jobs : default_jobs();
  parallel_for(jobs, cfg.replications, [&](int rep) {
    RunRecord& rec = records[static_cast<size_t>(rep)];
    rec.method = cfg.method;
    rec.replicate = rep;
    rec.config_digest = cfg.digest;
    const auto start = std::chrono::steady_clock::now();
    try {
      const std::uint64_t rep_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(rep));
      const DatasetPair data = sample_protocol_dataset(world, cfg.protocol, rep_seed);
      const MethodOutput out = run_method(cfg, world, ref, features, data, rep_seed);
      const RegretReport regret =
          out.ipo_family ? exact_regret_ipo(out.policy, world, ref, cfg.train.beta)
                         : exact_regret_dpo(out.policy, world, cfg.train.beta, ref);
      rec.regret = regret.regret;
      rec.value_opt = regret.value_opt;
      rec.value_hat = regret.value_hat;
      rec.has_estimate = out.has_estimate;
      rec.estimate = out.estimate;
      rec.direct_term = out.direct_term;
      rec.bias_term = out.bias_term;
    } catch (const std::exception& e) {
      rec.failed = true;
      rec.error = e.what();
    }
    rec.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  });
  return records;
}

SweepAxis sweep_axis_from_name(const std::string& name) {
  if (name == "n") return SweepAxis::HumanCount;
  if (name == "N") return SweepAxis::AiCount;
  if (name == "rho") return SweepAxis::Rho;
  if (name == "beta") return SweepAxis::Beta;
  if (name == "shift") return SweepAxis::Shift;
  throw std::invalid_argument("unknown sweep axis: " + name + " (want n, N, rho, beta, shift)");
}

std::vector<SweepRow> sweep(const ExperimentConfig& base, SweepAxis axis,
                            const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("sweep: values must be nonempty");
  if (!std::is_sorted(values.begin(), values.end())) {
    throw std::invalid_argument("sweep: values must be sorted");
  }
  std::vector<SweepRow> rows;
  for (const double v : values) {
    ExperimentConfig cfg = base;
    switch (axis) {
      case SweepAxis::HumanCount:
        cfg.protocol.n = static_cast<int>(v);
        if (cfg.protocol.mode == ProtocolMode::Shared) {
          cfg.protocol.human_fraction = v / static_cast<double>(cfg.protocol.N);
        }
        break;
      case SweepAxis::AiCount:
        cfg.protocol.N = static_cast<int>(v);
        break;
      case SweepAxis::Rho:
        cfg.world.judge_rho = v;
        break;
      case SweepAxis::Beta:
        cfg.train.beta = v;
        break;
      case SweepAxis::Shift:
        cfg.world.shift_temperature = v;
        break;
    }
    const std::vector<RunRecord> records = run_experiment(cfg);
    SweepRow row;
    row.axis_value = v;
    row.method = method_name(cfg.method);

    // Estimator bias compares the trainer's preference estimate with the
    // exact preference value of the policy it returned.
    double acc = 0.0, acc2 = 0.0, bacc = 0.0, bacc2 = 0.0;
    int ok = 0, bok = 0;
    for (const auto& rec : records) {
      if (rec.failed) continue;
      acc += rec.regret;
      acc2 += rec.regret * rec.regret;
      ++ok;
      if (rec.has_estimate) {
        const double bias = rec.estimate - rec.value_hat;
        bacc += bias;
        bacc2 += bias * bias;
        ++bok;
      }
    }
    row.reps = ok;
    if (ok > 0) {
      row.mean_regret = acc / ok;
      if (ok > 1) {
        const double var = (acc2 - ok * row.mean_regret * row.mean_regret) / (ok - 1);
        row.se_regret = std::sqrt(std::max(0.0, var) / ok);
      }
    }
    if (bok > 0) {
      row.has_estimator_bias = true;
      row.mean_estimator_bias = bacc / bok;
      if (bok > 1) {
        const double var = (bacc2 - bok * row.mean_estimator_bias * row.mean_estimator_bias) /
                           (bok - 1);
        row.se_estimator_bias = std::sqrt(std::max(0.0, var) / bok);
      }
    }
    rows.push_back(row);
  }
  return rows;
}

void write_records_csv(std::ostream& out, const std::vector<RunRecord>& records) {
  out << "method,replicate,regret,value_opt,value_hat,estimate,direct_term,bias_term,"
         "wall_time_s,config_digest,failed,error\n";
  for (const auto& r : records) {
    out << method_name(r.method) << ',' << r.replicate << ',';
    if (!r.failed) {
      out << format_double(r.regret) << ',' << format_double(r.value_opt) << ','
          << format_double(r.value_hat) << ',';
    } else {
      out << ",,,";
    }
    if (r.has_estimate) {
      out << format_double(r.estimate) << ',' << format_double(r.direct_term) << ','
          << format_double(r.bias_term) << ',';
    } else {
      out << ",,,";
    }
    std::string error = r.error;
    for (char& c : error) {
      if (c == ',' || c == '\n') c = ';';
    }
    out << format_double(r.wall_time_s) << ',' << r.config_digest << ','
        << (r.failed ? "1" : "0") << ',' << error << '\n';
  }
}

std::vector<RunRecord> read_records_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("read_records_csv: empty input");
  std::vector<RunRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string f;
    RunRecord r;
    std::getline(row, f, ',');
    r.method = method_from_name(f);
    std::getline(row, f, ',');
    r.replicate = std::stoi(f);
    std::getline(row, f, ',');
    if (!f.empty()) r.regret = std::stod(f);
    std::getline(row, f, ',');
    if (!f.empty()) r.value_opt = std::stod(f);
    std::getline(row, f, ',');
    if (!f.empty()) r.value_hat = std::stod(f);
    std::getline(row, f, ',');
    if (!f.empty()) {
      r.has_estimate = true;
      r.estimate = std::stod(f);
    }
    std::getline(row, f, ',');
    if (!f.empty()) r.direct_term = std::stod(f);
    std::getline(row, f, ',');
    if (!f.empty()) r.bias_term = std::stod(f);
    std::getline(row, f, ',');
    r.wall_time_s = std::stod(f);
    std::getline(row, f, ',');
    r.config_digest = f;
    std::getline(row, f, ',');
    r.failed = f == "1";
    std::getline(row, f);
    r.error = f;
    records.push_back(r);
  }
  return records;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "axis_value,method,mean_regret,se_regret,mean_estimator_bias,se_estimator_bias,reps\n";
  for (const auto& r : rows) {
    out << format_double(r.axis_value) << ',' << r.method << ',' << format_double(r.mean_regret)
        << ',' << (r.reps > 1 ? format_double(r.se_regret) : std::string()) << ',';
    if (r.has_estimator_bias) {
      out << format_double(r.mean_estimator_bias) << ','
          << (r.reps > 1 ? format_double(r.se_estimator_bias) : std::string());
    } else {
      out << ',';
    }
    out << ',' << r.reps << '\n';
  }
}

namespace {

struct MethodStats {
  std::vector<double> regrets;  // by replicate order
  double mean = 0.0, se = 0.0, min = 0.0, max = 0.0;
  int count = 0;
  bool se_defined = false;
};

std::map<std::string, MethodStats> collect_stats(const std::vector<RunRecord>& records) {
  std::map<std::string, MethodStats> stats;
  for (const auto& r : records) {
    if (r.failed) continue;
    stats[method_name(r.method)].regrets.push_back(r.regret);
  }
  for (auto& [name, s] : stats) {
    (void)name;
    s.count = static_cast<int>(s.regrets.size());
    double acc = 0.0;
    s.min = std::numeric_limits<double>::infinity();
    s.max = -std::numeric_limits<double>::infinity();
    for (const double v : s.regrets) {
      acc += v;
      s.min = std::min(s.min, v);
      s.max = std::max(s.max, v);
    }
    s.mean = acc / s.count;
    if (s.count > 1) {
      double ss = 0.0;
      for (const double v : s.regrets) ss += (v - s.mean) * (v - s.mean);
      s.se = std::sqrt(ss / (s.count - 1) / s.count);
      s.se_defined = true;
    }
  }
  return stats;
}

}  // namespace

void write_summary_csv(std::ostream& out, const std::vector<RunRecord>& records) {
  if (records.empty()) throw std::invalid_argument("write_summary_csv: no records");
  const auto stats = collect_stats(records);
  out << "method,reps,mean_regret,se_regret,min_regret,max_regret\n";
  for (const auto& [name, s] : stats) {
    out << name << ',' << s.count << ',' << format_double(s.mean) << ','
        << (s.se_defined ? format_double(s.se) : std::string()) << ',' << format_double(s.min)
        << ',' << format_double(s.max) << '\n';
  }
}

void write_summary_json(std::ostream& out, const std::vector<RunRecord>& records) {
  if (records.empty()) throw std::invalid_argument("write_summary_json: no records");
  const auto stats = collect_stats(records);
  json doc;
  doc["schema_version"] = 1;
  json methods = json::object();
  for (const auto& [name, s] : stats) {
    json m;
    m["reps"] = s.count;
    m["mean_regret"] = s.mean;
    if (s.se_defined) {
      m["se_regret"] = s.se;
    } else {
      m["se_regret"] = nullptr;  // undefined for a single record
    }
    m["min_regret"] = s.min;
    m["max_regret"] = s.max;
    methods[name] = m;
  }
  doc["methods"] = methods;

  // Paired win rates over common replicate prefixes; ties count 0.5, so a
  // method against itself scores exactly 0.5.
  json wins = json::object();
  for (const auto& [a, sa] : stats) {
    json row = json::object();
    for (const auto& [b, sb] : stats) {
      const size_t k = std::min(sa.regrets.size(), sb.regrets.size());
      double acc = 0.0;
      for (size_t i = 0; i < k; ++i) {
        if (sa.regrets[i] < sb.regrets[i]) {
          acc += 1.0;
        } else if (sa.regrets[i] == sb.regrets[i]) {
          acc += 0.5;
        }
      }
      row[b] = k > 0 ? acc / static_cast<double>(k) : 0.5;
    }
    wins[a] = row;
  }
  doc["paired_win_rate"] = wins;
  out << doc.dump(2) << '\n';
}

}  // namespace prefalign
