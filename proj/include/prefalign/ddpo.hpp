#pragma once

#include "prefalign/policy.hpp"
#include "prefalign/world.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

namespace prefalign {

// Density-ratio weight for one comparison record.
struct RatioWeight {
  double value = 1.0;
  bool clipped = false;
};

struct ClipBounds {
  double c_min = 0.1;
  double c_max = 10.0;

  void validate() const;
};

struct TrainConfig {
  double beta = 0.1;   // KL weight
  double lr = 0.1;
  int steps = 2000;
  int batch = 256;     // 0 selects deterministic full-batch descent
  double ridge = 1e-8; // trainer-only penalty; never part of reported losses
  ClipBounds clip{0.1, 10.0};
  bool clip_weights = false;  // correction-weight clipping; off by default
  std::uint64_t seed = 0;

  void validate() const;
};

// Eq.-(8)-shaped report: total = ai_term - bias_term.
struct LossReport {
  double total = 0.0;
  double ai_term = 0.0;
  double bias_term = 0.0;
};

struct TraceRow {
  int step = 0;
  double total = 0.0;
  double ai_term = 0.0;
  double bias_term = 0.0;
  double grad_norm = 0.0;
};

struct TrainResult {
  LogLinearPolicy policy;
  std::vector<TraceRow> trace;
  double clipped_fraction = 0.0;  // fraction of correction weights clipped
};

enum class LabelField { Z, ZHat };

// -log sigma(beta (2 label - 1) (Delta_pi - Delta_ref)), as a softplus of the
// negated argument. Always >= 0.
double dpo_example_loss(const LogLinearPolicy& policy, const PolicyTable& ref,
                        const PreferencePair& pair, int label, double beta);
double dpo_example_loss(const PolicyTable& policy, const PolicyTable& ref,
                        const PreferencePair& pair, int label, double beta);
Vector dpo_example_loss_grad(const LogLinearPolicy& policy, const PolicyTable& ref,
                             const PreferencePair& pair, int label, double beta);

// Mean example loss over records using the requested label field.
double empirical_dpo_loss(const LogLinearPolicy& policy, const PolicyTable& ref,
                          std::span<const PreferencePair> data, LabelField field, double beta);

// w(y1, y2 | x) = [gen_ai(y1)/gen_hum(y1)] [gen_ai(y2)/gen_hum(y2)].
RatioWeight density_ratio(const World& world, int x, int y1, int y2);

// Cross-fitted generation-policy estimate: record i is assigned fold i % K
// and is weighted with the table fitted on the other folds, so the weight is
// independent of the record it corrects. Counts are add-one smoothed, which
// keeps every estimated probability strictly positive; a prompt never seen
// in the training folds therefore falls back to the uniform row (counted in
// uniform_fallbacks).
struct GenHumEstimate {
  std::vector<PolicyTable> per_fold;
  std::vector<int> fold_of;
  int folds = 0;
  int uniform_fallbacks = 0;

  const PolicyTable& table_for(size_t record) const {
    return per_fold[static_cast<size_t>(fold_of[record])];
  }
};

GenHumEstimate estimate_gen_hum(std::span<const PreferencePair> human, int folds,
                                const std::vector<int>& responses_per_prompt);

// Per-record weights for the correction term: exact from the world's
// generators, or cross-fitted.
std::vector<double> exact_density_ratios(const World& world,
                                         std::span<const PreferencePair> human);
std::vector<double> estimated_density_ratios(const World& world,
                                             std::span<const PreferencePair> human,
                                             const GenHumEstimate& estimate);

// (1/n) sum_i w_i [loss(z_hat_i) - loss(z_i)].
double ddpo_bias_term(const LogLinearPolicy& policy, const PolicyTable& ref,
                      std::span<const PreferencePair> human, std::span<const double> weights,
                      double beta);

// total = empirical DPO loss on the AI set with AI labels, minus the
// weighted human correction term.
LossReport ddpo_loss(const LogLinearPolicy& policy, const PolicyTable& ref,
                     const DatasetPair& data, std::span<const double> weights, double beta);
Vector ddpo_loss_grad(const LogLinearPolicy& policy, const PolicyTable& ref,
                      const DatasetPair& data, std::span<const double> weights, double beta);

// Algorithm-1 trainer: (mini-batch or full-batch) gradient descent on the
// debiased loss plus ridge * ||theta||^2. Weights must align with
// data.human; an empty span means w == 1. One-hot feature maps start at
// theta = log ref, so lr = 0 returns the reference policy.
TrainResult train_ddpo(const DatasetPair& data, const PolicyTable& ref,
                       std::shared_ptr<const FeatureMap> features,
                       std::span<const double> weights, const TrainConfig& cfg);

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace);

}  // namespace prefalign
