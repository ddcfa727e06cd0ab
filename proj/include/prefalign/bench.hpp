#pragma once

#include "prefalign/config.hpp"
#include "prefalign/ddpo.hpp"
#include "prefalign/dipo.hpp"
#include "prefalign/world.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace prefalign {

enum class Method {
  DpoNaive,
  DpoOracleLabels,
  Ddpo,
  IpoNaive,
  IpoOracleLabels,
  Dipo,
  DipoPlus,
  SampledIpo,
};

std::string method_name(Method m);
Method method_from_name(const std::string& name);

// Shared: the corruption protocol — N pairs from gen_ai with true labels,
// AI labels from the judge channel, and a human_fraction subset re-annotated
// with the true label (dual-labeled). Both generators coincide, so density
// ratios are 1. Split: heterogeneous generators — n human pairs from
// gen_hum, N AI pairs from gen_ai, ratios active.
enum class ProtocolMode { Shared, Split };

struct ProtocolConfig {
  ProtocolMode mode = ProtocolMode::Shared;
  int n = 2000;  // Split-mode human count; Shared mode derives it
  int N = 10000;
  double human_fraction = 0.2;
  bool estimate_weights = false;  // Split mode: cross-fitted gen_hum
  int folds = 2;

  void validate() const;
};

struct ExperimentConfig {
  WorldConfig world;
  Method method = Method::Ddpo;
  ProtocolConfig protocol;
  TrainConfig train;
  JudgeBackend backend = JudgeBackend::ExactScores;
  int m = 8;
  bool exact_expectation = false;
  double lambda = 1.0;  // DIPO+ human-estimator weight
  int eval_every = 0;
  int replications = 200;
  std::uint64_t seed = 1;
  int jobs = 0;  // 0: hardware concurrency
  std::string digest;

  void validate() const;
};

ExperimentConfig experiment_config_from(const KeyValueConfig& kv);
std::vector<std::string> experiment_config_keys();

struct RunRecord {
  Method method = Method::Ddpo;
  int replicate = 0;
  double regret = 0.0;
  double value_opt = 0.0;
  double value_hat = 0.0;
  bool has_estimate = false;
  double estimate = 0.0;     // trainer-side preference estimate at the policy
  double direct_term = 0.0;
  double bias_term = 0.0;
  double wall_time_s = 0.0;
  std::string config_digest;
  bool failed = false;
  std::string error;
};

DatasetPair sample_protocol_dataset(const World& world, const ProtocolConfig& protocol,
                                    std::uint64_t seed);

// Replications with seeds derived from seed and the replicate id; failed
// runs are recorded with their diagnostic and the remaining runs continue.
// Output order equals replicate order regardless of scheduling.
std::vector<RunRecord> run_experiment(const ExperimentConfig& cfg);

enum class SweepAxis { HumanCount, AiCount, Rho, Beta, Shift };

SweepAxis sweep_axis_from_name(const std::string& name);

struct SweepRow {
  double axis_value = 0.0;
  std::string method;
  double mean_regret = 0.0;
  double se_regret = 0.0;
  bool has_estimator_bias = false;
  double mean_estimator_bias = 0.0;
  double se_estimator_bias = 0.0;
  int reps = 0;
};

std::vector<SweepRow> sweep(const ExperimentConfig& base, SweepAxis axis,
                            const std::vector<double>& values);

void write_records_csv(std::ostream& out, const std::vector<RunRecord>& records);
std::vector<RunRecord> read_records_csv(std::istream& in);
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

// Summary CSV (per-method mean/SE/min/max; SE empty for a single record) and
// JSON (adds paired win rates with ties counting 0.5). Deterministic output.
void write_summary_csv(std::ostream& out, const std::vector<RunRecord>& records);
void write_summary_json(std::ostream& out, const std::vector<RunRecord>& records);

}  // namespace prefalign
