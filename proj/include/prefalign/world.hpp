#pragma once

#include "prefalign/config.hpp"
#include "prefalign/numeric.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace prefalign {

// Latent rewards r(x, y), one row per prompt.
struct RewardTable {
  std::vector<Vector> r;
  double r_max = 16.0;  // absolute bound every entry must respect

  int prompt_count() const { return static_cast<int>(r.size()); }
  double at(int x, int y) const { return r[static_cast<size_t>(x)][y]; }
};

// Per-prompt probability vectors. Used both for generation policies
// (entries must be strictly positive, overlap) and for evaluated policies
// (entries may be zero).
struct PolicyTable {
  std::vector<Vector> probs;

  int prompt_count() const { return static_cast<int>(probs.size()); }
  int response_count(int x) const { return static_cast<int>(probs[static_cast<size_t>(x)].size()); }
  double at(int x, int y) const { return probs[static_cast<size_t>(x)][y]; }
  const Vector& row(int x) const { return probs[static_cast<size_t>(x)]; }

  // Rows sum to 1 within tol; entries >= floor (pass floor > 0 for
  // generation policies).
  void validate(double floor, double tol = 1e-12) const;
};

// Renormalized p^exponent per prompt. exponent < 1 flattens, > 1 sharpens.
PolicyTable tempered(const PolicyTable& table, double exponent);
PolicyTable uniform_table(const std::vector<int>& responses_per_prompt);

enum class JudgeKind { FlipChannel, MisalignedReward };

struct JudgeSpec {
  JudgeKind kind = JudgeKind::FlipChannel;
  double rho = 0.0;          // FlipChannel: label flip probability
  RewardTable misaligned;    // MisalignedReward: score table behind g~
  int mc_comparisons = 8;    // m, draws per Monte Carlo judge evaluation

  void validate() const;
};

struct World {
  Vector prompt_weights;  // sampling distribution over prompts
  RewardTable reward;
  JudgeSpec judge;
  PolicyTable gen_ai;   // response generator behind the AI-labeled data
  PolicyTable gen_hum;  // response generator behind the human-labeled data

  int prompt_count() const { return static_cast<int>(prompt_weights.size()); }
  int response_count(int x) const { return gen_ai.response_count(x); }
  std::vector<int> responses_per_prompt() const;

  void validate() const;
};

enum class PairSource { Human, AI };

// One comparison record. Human records always carry both the human label z
// and the AI label z_hat evaluated on the same triple; AI records always
// carry z_hat, and the simulator also retains the realized true label z so
// oracle-labeled baselines can be run on the same draws.
struct PreferencePair {
  int x = 0;
  int y1 = 0;
  int y2 = 0;
  std::optional<int> z;
  std::optional<int> z_hat;
  PairSource source = PairSource::AI;
};

struct DatasetPair {
  std::vector<PreferencePair> human;
  std::vector<PreferencePair> ai;
};

// sigma(r(x,y1) - r(x,y2)), the Bradley-Terry preference probability.
double human_pref_prob(const World& world, int x, int y1, int y2);

// FlipChannel: (1-rho) g + rho (1-g). MisalignedReward: sigma of the
// misaligned score difference.
double judge_pref_prob(const World& world, int x, int y1, int y2);

// Heterogeneous-generator sampler: human pairs from gen_hum, AI pairs from
// gen_ai. Human records carry Z ~ Bernoulli(g) plus the AI label on the same
// triple; under FlipChannel the AI label is the realized Z flipped with
// probability rho, under MisalignedReward it is an independent
// Bernoulli(g~) draw. Deterministic given seed.
DatasetPair sample_dataset(const World& world, int n, int N, std::uint64_t seed);

// Human records only (gen_hum pairs, dual labels), same mechanism as
// sample_dataset.
std::vector<PreferencePair> sample_human_records(const World& world, int n, std::uint64_t seed);

// Empirical mean of m Bernoulli(g~) draws.
double mc_judge_label(const World& world, int x, int y1, int y2, int m, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Construction from configuration.

struct WorldConfig {
  int prompt_count = 8;
  int responses_per_prompt = 6;
  double reward_range = 2.0;       // rewards i.i.d. uniform on [-range, range]
  double gen_strength = 0.3;       // gen_ai = softmax(gen_strength * reward)
  double shift_temperature = 0.7;  // gen_hum = tempered(gen_ai, exponent)
  JudgeKind judge_kind = JudgeKind::FlipChannel;
  double judge_rho = 0.0;
  int judge_m = 8;
  double judge_misalign_scale = 1.0;  // MisalignedReward: r~ = scale * r
  std::uint64_t seed = 1;
};

World make_world(const WorldConfig& cfg);
WorldConfig world_config_from(const KeyValueConfig& kv);
std::vector<std::string> world_config_keys();

// Smallest scale >= 1 such that the mean |g~ - g| over prompts and
// gen_ai x gen_ai response pairs hits `target`. Used to pin a judge with a
// stated average miscalibration.
double misaligned_scale_for_deviation(const World& world, double target);
double mean_abs_judge_deviation(const World& world);

// Replaces the judge by MisalignedReward with r~ = scale * r.
World with_misaligned_judge(const World& world, double scale, int mc_comparisons);

// ---------------------------------------------------------------------------
// Serialization: line-delimited records `source,x,y1,y2,z,z_hat` with a
// header row; absent labels are empty fields. Round-trips exactly.

void write_dataset(std::ostream& out, const DatasetPair& data);
DatasetPair read_dataset(std::istream& in);

}  // namespace prefalign
