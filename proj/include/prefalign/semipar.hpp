#pragma once

#include "prefalign/dipo.hpp"
#include "prefalign/policy.hpp"
#include "prefalign/world.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace prefalign {

struct InfluenceValue {
  double psi = 0.0;
  double plug_in = 0.0;       // E_{Y~pi, Y'~ref} g(Y,Y'|x), exact enumeration
  double augmentation = 0.0;  // weighted residual term
};

// Influence value of one human record under nuisances (g, gen_hum):
//   plug_in + 0.5 (z - g(y1,y2|x)) [pi(y1)ref(y2) - pi(y2)ref(y1)]
//                                  / [gen_hum(y1) gen_hum(y2)].
InfluenceValue influence_psi(const PolicyTable& pi, const PolicyTable& ref,
                             const PolicyTable& gen_hum, const PrefModel& g,
                             const PreferencePair& rec);

// Misspecified preference model: g shifted by magnitude in a fixed
// direction that flips sign under response swap, then re-clipped to
// [0.01, 0.99]. Both steps commute with complementation, so the corrupted
// model still satisfies h(y1,y2) + h(y2,y1) = 1.
PrefModel corrupt_pref_model(const World& world, double magnitude);

enum class Perturbation { CorruptG, CorruptGen, CorruptBoth };

// Replicated mean-psi experiment with explicit nuisances; each replication
// draws a fresh human sample of size n.
struct PsiExperiment {
  double mean = 0.0;
  double se = 0.0;  // sd of replication means / sqrt(reps)
  double truth = 0.0;
  int replications = 0;
};

PsiExperiment psi_mean_experiment(const PolicyTable& pi, const PolicyTable& ref,
                                  const World& world, const PrefModel& g_model,
                                  const PolicyTable& gen_hum_model, int n, int replications,
                                  std::uint64_t seed, int jobs = 1);

struct RobustnessReport {
  Perturbation which = Perturbation::CorruptG;
  double magnitude = 0.0;
  double mean = 0.0;
  double se = 0.0;
  double truth = 0.0;
  double abs_bias = 0.0;
  double bias_in_ses = 0.0;
  int replications = 0;
};

// Runs psi_mean_experiment with exactly one corrupted nuisance (the g shift
// or the gen_hum tempering by exponent 1 + magnitude). CorruptBoth is
// rejected: that configuration tests nothing about double robustness.
RobustnessReport double_robustness_check(const PolicyTable& pi, const PolicyTable& ref,
                                         const World& world, Perturbation which,
                                         double magnitude, int n, int replications,
                                         std::uint64_t seed, int jobs = 1);

struct EfficiencyReport {
  double truth = 0.0;
  double mse_dipo = 0.0;
  double mse_hum = 0.0;
  double diff_mean = 0.0;  // mean over replications of sqerr(dipo) - sqerr(hum)
  double ci_low = 0.0;     // paired bootstrap 95% CI for diff_mean
  double ci_high = 0.0;
  int replications = 0;
  bool preconditions_met = false;  // N > n
  bool ci_reliable = false;        // replications >= 100
};

// Paired replications of p_dipo and the human-only influence estimator on
// shared human samples, scored against the enumerated truth.
EfficiencyReport efficiency_compare(const PolicyTable& pi, const PolicyTable& ref,
                                    const World& world, int n, int N, int replications,
                                    const EvalConfig& eval, std::uint64_t seed, int jobs = 1);

struct ExpansionDiagnostic {
  double direct_sum = 0.0;          // direct draws scored with the true g
  double human_residual_sum = 0.0;  // (1/2n) sum ratio (z - g), true nuisances
  double ai_residual_sum = 0.0;     // (1/2n) sum ratio (z_hat_used - g~)
  double p_dipo = 0.0;
  double remainder = 0.0;  // p_dipo - (direct + human - ai), by construction
  // Nuisance errors behind the remainder bound, in both plausible norms:
  // sup over the whole world and empirical L2 over the human sample.
  double g_error_sup = 0.0;          // |g~ - g|
  double g_error_l2 = 0.0;
  double gen_ratio_error_sup = 0.0;  // |gen_hum / gen_hum_estimator - 1|
  double gen_ratio_error_l2 = 0.0;
};

// Three leading expansion terms (always with the true g and true gen_hum in
// the weights) against the estimator value computed with the supplied
// (possibly corrupted or fitted) generation nuisance. `direct_value` and
// `draws` must come from the same p_dm evaluation.
ExpansionDiagnostic expansion_diagnostic(const PolicyTable& pi, const PolicyTable& ref,
                                         const World& world, double direct_value,
                                         const std::vector<DirectSample>& draws,
                                         std::span<const PreferencePair> human,
                                         const PolicyTable& gen_hum_estimator,
                                         const EvalConfig& eval);

}  // namespace prefalign
