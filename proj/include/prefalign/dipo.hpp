#pragma once

#include "prefalign/ddpo.hpp"
#include "prefalign/policy.hpp"
#include "prefalign/world.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <utility>
#include <vector>

namespace prefalign {

// How the AI evaluator is queried: exact preference probabilities (score
// path) or m Bernoulli comparisons per evaluation. The backend applies both
// to the direct term and to the correction residual: with exact scores the
// residual uses the judge probability in place of the binary label, which is
// its conditional expectation.
enum class JudgeBackend { ExactScores, MonteCarlo };

struct EvalConfig {
  JudgeBackend backend = JudgeBackend::ExactScores;
  int m = 8;
  ClipBounds clip{0.1, 10.0};
};

// One direct-estimator draw: Y ~ pi(.|X), Y1, Y2 ~ ref(.|X).
struct DirectSample {
  int x, y, y1, y2;
};

struct EstimatorReport {
  double estimate = 0.0;
  double direct_term = 0.0;
  double bias_term = 0.0;
  int n_used = 0;
  int N_used = 0;
  double clipped_fraction = 0.0;
};

double clip_ratio(double value, const ClipBounds& bounds);

// Direct estimator: (1/2N) sum_i [g~(Y_i, Y_i^1 | X_i) + g~(Y_i, Y_i^2 | X_i)]
// over fresh draws. Pass `draws` to retain the sampled tuples (used by the
// expansion diagnostics).
EstimatorReport p_dm(const PolicyTable& pi, const PolicyTable& ref, const World& world,
                     const EvalConfig& eval, int N, std::uint64_t seed,
                     std::vector<DirectSample>* draws = nullptr);

// Symmetrized correction from dual-labeled human records:
//   (1/2n) sum (z_hat - z) clip(w1) + (1/2n) sum (z - z_hat) clip(w2),
//   w1 = pi(y1) ref(y2) / (gh(y1) gh(y2)),  w2 = pi(y2) ref(y1) / (gh(y1) gh(y2)).
double bias_hat(const PolicyTable& pi, const PolicyTable& ref, const PolicyTable& gen_hum,
                std::span<const PreferencePair> human, const ClipBounds& clip,
                double* clipped_fraction = nullptr);
// Score-path variant: the binary z_hat is replaced by the judge probability.
double bias_hat_scores(const PolicyTable& pi, const PolicyTable& ref, const PolicyTable& gen_hum,
                       std::span<const PreferencePair> human, const World& world,
                       const ClipBounds& clip, double* clipped_fraction = nullptr);

// Debiased estimator: estimate = direct - bias.
EstimatorReport p_dipo(const PolicyTable& pi, const PolicyTable& ref, const World& world,
                       const PolicyTable& gen_hum, std::span<const PreferencePair> human,
                       const EvalConfig& eval, int N, std::uint64_t seed,
                       std::vector<DirectSample>* draws = nullptr);

// Human-only estimator: mean influence value over the records, with the
// preference model g and generation policy supplied as nuisances.
double p_hum(const PolicyTable& pi, const PolicyTable& ref,
             std::span<const PreferencePair> human, const PolicyTable& gen_hum,
             const PrefModel& g);

// estimate = p_dipo + lambda * p_hum, with p_hum's preference nuisance taken
// from the judge (its generation nuisance is gen_hum as given).
EstimatorReport p_dipo_plus(const PolicyTable& pi, const PolicyTable& ref, const World& world,
                            const PolicyTable& gen_hum, std::span<const PreferencePair> human,
                            const EvalConfig& eval, int N, std::uint64_t seed, double lambda);

// Offline squared-margin loss:
//   mean [ (2Z-1) log( pi(y1) ref(y2) / (pi(y2) ref(y1)) ) - 1/beta ]^2.
double sampled_ipo_loss(const LogLinearPolicy& policy, const PolicyTable& ref,
                        std::span<const PreferencePair> pairs, LabelField field, double beta);
Vector sampled_ipo_loss_grad(const LogLinearPolicy& policy, const PolicyTable& ref,
                             std::span<const PreferencePair> pairs, LabelField field,
                             double beta);

// ---------------------------------------------------------------------------
// Algorithm-2 trainer.

struct DipoTrainConfig {
  TrainConfig base{.lr = 0.05, .steps = 3000};
  JudgeBackend backend = JudgeBackend::ExactScores;
  int m = 8;
  bool exact_expectation = false;  // enumerate direct term and KL instead of sampling
  bool debias = true;              // false: plain (naive) IPO ascent
  double lambda_hum = 0.0;         // weight on the human-only estimator (DIPO+)
  int eval_every = 0;              // record the exact objective every k steps
  PrefModel pref_override;         // replaces the judge (oracle labels, mixtures)
};

struct DipoTraceRow {
  int step = 0;
  double objective = 0.0;
  double direct_term = 0.0;
  double bias_term = 0.0;
  double kl_term = 0.0;
};

struct DipoTrainResult {
  LogLinearPolicy policy;
  std::vector<DipoTraceRow> trace;
  std::vector<std::pair<int, double>> exact_objective;  // (step, value)
  double clipped_fraction = 0.0;  // correction clipping at the final policy
};

struct DipoObjective {
  double value = 0.0;  // direct - bias - beta KL + lambda p_hum (no ridge)
  double direct_term = 0.0;
  double bias_term = 0.0;
  double kl_term = 0.0;
};

// Exact-enumeration objective and its analytic gradient in theta; the
// correction and human-only terms are sample averages over `human`, whose
// ratios are explicit functions of pi_theta.
DipoObjective dipo_exact_objective(const LogLinearPolicy& policy, const PolicyTable& ref,
                                   const World& world, const PolicyTable& gen_hum,
                                   std::span<const PreferencePair> human,
                                   const DipoTrainConfig& cfg);
Vector dipo_exact_objective_grad(const LogLinearPolicy& policy, const PolicyTable& ref,
                                 const World& world, const PolicyTable& gen_hum,
                                 std::span<const PreferencePair> human,
                                 const DipoTrainConfig& cfg);

// Gradient ascent on P_DIPO(pi) - beta KL(pi || ref) (plus optional terms).
// Sampled mode draws a prompt batch per step, uses the score-function
// estimator for the direct term and analytic gradients for the correction;
// exact mode ascends dipo_exact_objective. Starts from pi = ref for one-hot
// feature maps.
DipoTrainResult train_dipo(const World& world, const PolicyTable& ref,
                           std::span<const PreferencePair> human, const PolicyTable& gen_hum,
                           std::shared_ptr<const FeatureMap> features,
                           const DipoTrainConfig& cfg);

}  // namespace prefalign
