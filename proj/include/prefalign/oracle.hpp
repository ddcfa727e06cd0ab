#pragma once

#include "prefalign/policy.hpp"
#include "prefalign/world.hpp"

namespace prefalign {

// Oracles are exact: they enumerate the finite world and refuse anything
// larger than this many (x, y, y') triples rather than fall back to sampling.
inline constexpr long kEnumerationBudget = 1'000'000;

enum class RegretKind { DpoReward, IpoPref };

struct RegretReport {
  double value_opt = 0.0;
  double value_hat = 0.0;
  double regret = 0.0;  // value_opt - value_hat
  RegretKind kind = RegretKind::DpoReward;
  // For the preference kind: value of the unregularized per-prompt maximizer
  // of the total preference, so the beta-induced gap is visible.
  double value_opt_unregularized = 0.0;
};

// P(pi beats ref) = sum_x p(x) sum_{y,y'} pi(y|x) ref(y'|x) g(y,y'|x) by full
// enumeration, with g the human preference model. g(y,y|x) = 0.5 since the
// Bradley-Terry margin of a response against itself is zero.
double exact_pref_prob(const PolicyTable& pi, const PolicyTable& ref, const World& world,
                       long budget = kEnumerationBudget);
double exact_pref_prob(const PolicyTable& pi, const PolicyTable& ref, const World& world,
                       const PrefModel& pref, long budget = kEnumerationBudget);

// Expectation of the per-example DPO loss over x ~ D_X, (y1,y2) ~ gen_ai x
// gen_ai and Z ~ Bernoulli(g), enumerating both label values.
double exact_population_dpo_loss(const PolicyTable& pi, const PolicyTable& ref,
                                 const World& world, double beta,
                                 long budget = kEnumerationBudget);

// E_{x, y ~ pi} r(x, y).
double exact_reward_value(const PolicyTable& pi, const World& world);

// Reward regret against the KL-regularized optimum pi* = closed_form_dpo_opt.
RegretReport exact_regret_dpo(const PolicyTable& policy, const World& world, double beta,
                              const PolicyTable& ref);

// Preference regret against the regularized total-preference optimum
// pi* = closed_form_ipo_opt, evaluated with the human preference model.
RegretReport exact_regret_ipo(const PolicyTable& policy, const World& world,
                              const PolicyTable& ref, double beta);

}  // namespace prefalign
