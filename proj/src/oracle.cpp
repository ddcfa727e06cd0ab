#include "prefalign/oracle.hpp"

#include <cmath>
#include <stdexcept>

namespace prefalign {

namespace {

long triple_count(const World& world) {
  long total = 0;
  for (int x = 0; x < world.prompt_count(); ++x) {
    const long k = world.response_count(x);
    total += k * k;
  }
  return total;
}

void check_budget(const World& world, long budget, const char* op) {
  if (triple_count(world) > budget) {
    throw std::invalid_argument(std::string(op) +
                                ": world exceeds the exact-enumeration budget of " +
                                std::to_string(budget) + " triples");
  }
}

void check_shapes(const PolicyTable& pi, const PolicyTable& ref, const World& world,
                  const char* op) {
  if (pi.prompt_count() != world.prompt_count() || ref.prompt_count() != world.prompt_count()) {
    throw std::invalid_argument(std::string(op) + ": policy/world prompt count mismatch");
  }
}

}  // namespace

double exact_pref_prob(const PolicyTable& pi, const PolicyTable& ref, const World& world,
                       const PrefModel& pref, long budget) {
  check_budget(world, budget, "exact_pref_prob");
  check_shapes(pi, ref, world, "exact_pref_prob");
  double value = 0.0;
  for (int x = 0; x < world.prompt_count(); ++x) {
    const Vector& p = pi.row(x);
    const Vector& q = ref.row(x);
    double mass = 0.0;  // internal check: enumerated weights form a distribution
    double prompt_value = 0.0;
    for (int y = 0; y < p.size(); ++y) {
      for (int yp = 0; yp < q.size(); ++yp) {
        const double w = p[y] * q[yp];
        mass += w;
        if (w != 0.0) prompt_value += w * pref(x, y, yp);
      }
    }
    if (std::abs(mass - 1.0) > 1e-12) {
      throw std::domain_error("exact_pref_prob: enumeration weights sum to " +
                              std::to_string(mass));
    }
    value += world.prompt_weights[x] * prompt_value;
  }
  return value;
}

double exact_pref_prob(const PolicyTable& pi, const PolicyTable& ref, const World& world,
                       long budget) {
  return exact_pref_prob(pi, ref, world, human_pref_model(world), budget);
}

double exact_population_dpo_loss(const PolicyTable& pi, const PolicyTable& ref,
                                 const World& world, double beta, long budget) {
  if (beta <= 0.0) throw std::invalid_argument("exact_population_dpo_loss: beta must be > 0");
  check_budget(world, budget, "exact_population_dpo_loss");
  check_shapes(pi, ref, world, "exact_population_dpo_loss");
  double value = 0.0;
  for (int x = 0; x < world.prompt_count(); ++x) {
    const Vector& gen = world.gen_ai.row(x);
    double prompt_value = 0.0;
    for (int y1 = 0; y1 < gen.size(); ++y1) {
      for (int y2 = 0; y2 < gen.size(); ++y2) {
        const double w = gen[y1] * gen[y2];
        if (w == 0.0) continue;
        const double margin = delta_pi(pi, x, y1, y2) - delta_pi(ref, x, y1, y2);
        const double g = human_pref_prob(world, x, y1, y2);
        prompt_value += w * (g * softplus(-beta * margin) + (1.0 - g) * softplus(beta * margin));
      }
    }
    value += world.prompt_weights[x] * prompt_value;
  }
  return value;
}

double exact_reward_value(const PolicyTable& pi, const World& world) {
  if (pi.prompt_count() != world.prompt_count()) {
    throw std::invalid_argument("exact_reward_value: prompt count mismatch");
  }
  double value = 0.0;
  for (int x = 0; x < world.prompt_count(); ++x) {
    value += world.prompt_weights[x] * pi.row(x).dot(world.reward.r[static_cast<size_t>(x)]);
  }
  return value;
}

RegretReport exact_regret_dpo(const PolicyTable& policy, const World& world, double beta,
                              const PolicyTable& ref) {
  const PolicyTable opt = closed_form_dpo_opt(world, ref, beta);
  RegretReport report;
  report.kind = RegretKind::DpoReward;
  report.value_opt = exact_reward_value(opt, world);
  report.value_hat = exact_reward_value(policy, world);
  report.regret = report.value_opt - report.value_hat;
  double unreg = 0.0;
  for (int x = 0; x < world.prompt_count(); ++x) {
    unreg += world.prompt_weights[x] * world.reward.r[static_cast<size_t>(x)].maxCoeff();
  }
  report.value_opt_unregularized = unreg;
  return report;
}

RegretReport exact_regret_ipo(const PolicyTable& policy, const World& world,
                              const PolicyTable& ref, double beta) {
  const PrefModel g = human_pref_model(world);
  const PolicyTable opt = closed_form_ipo_opt(world, ref, beta, g);
  RegretReport report;
  report.kind = RegretKind::IpoPref;
  report.value_opt = exact_pref_prob(opt, ref, world, g);
  report.value_hat = exact_pref_prob(policy, ref, world, g);
  report.regret = report.value_opt - report.value_hat;
  // Unregularized maximizer: the total preference is linear in pi per prompt,
  // so the optimum is a point mass on argmax_y E_{y'~ref} g(y,y'|x).
  double unreg = 0.0;
  for (int x = 0; x < world.prompt_count(); ++x) {
    const Vector& q = ref.row(x);
    double best = -1.0;
    for (int y = 0; y < q.size(); ++y) {
      double total = 0.0;
      for (int yp = 0; yp < q.size(); ++yp) total += q[yp] * g(x, y, yp);
      best = std::max(best, total);
    }
    unreg += world.prompt_weights[x] * best;
  }
  report.value_opt_unregularized = unreg;
  return report;
}

}  // namespace prefalign
