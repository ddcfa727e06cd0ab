#pragma once

#include "prefalign/numeric.hpp"
#include "prefalign/world.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <vector>

namespace prefalign {

// phi(x, y) rows stacked per prompt. The one-hot map saturates the policy
// class: every per-prompt distribution is realizable.
struct FeatureMap {
  int dim = 0;
  bool is_one_hot = false;
  std::vector<Matrix> phi;  // phi[x]: responses(x) x dim
  std::vector<int> offsets;  // one-hot maps: theta index of (x, 0)

  static FeatureMap one_hot(const std::vector<int>& responses_per_prompt);
  // Shared random features with d < total pairs, for misspecification studies.
  static FeatureMap random_low_rank(const std::vector<int>& responses_per_prompt, int dim,
                                    std::uint64_t seed);

  int prompt_count() const { return static_cast<int>(phi.size()); }
  int response_count(int x) const { return static_cast<int>(phi[static_cast<size_t>(x)].rows()); }
  Vector vec(int x, int y) const { return phi[static_cast<size_t>(x)].row(y); }
};

// pi_theta(y|x) = softmax over phi(x, .) . theta, normalized per prompt.
struct LogLinearPolicy {
  Vector theta;
  std::shared_ptr<const FeatureMap> features;

  Vector logits(int x) const { return features->phi[static_cast<size_t>(x)] * theta; }
  int prompt_count() const { return features->prompt_count(); }
  int response_count(int x) const { return features->response_count(x); }
};

LogLinearPolicy make_policy(std::shared_ptr<const FeatureMap> features);
// One-hot theta chosen so that pi_theta == table (logits = log table).
LogLinearPolicy policy_from_table(std::shared_ptr<const FeatureMap> one_hot_features,
                                  const PolicyTable& table);

double log_prob(const LogLinearPolicy& policy, int x, int y);
double log_prob(const PolicyTable& table, int x, int y);

// Delta_pi(x; y1, y2) = log pi(y1|x) - log pi(y2|x). For log-linear policies
// this equals theta . (phi(y1) - phi(y2)); the normalizer cancels exactly.
double delta_pi(const LogLinearPolicy& policy, int x, int y1, int y2);
double delta_pi(const PolicyTable& table, int x, int y1, int y2);

// KL(pi(.|x) || ref(.|x)) in nats by enumeration.
double kl_to_ref(const LogLinearPolicy& policy, const PolicyTable& ref, int x);
double kl_to_ref(const PolicyTable& policy, const PolicyTable& ref, int x);

// phi(x,y) - E_{y' ~ pi(.|x)} phi(x,y'), the score function.
Vector grad_log_prob(const LogLinearPolicy& policy, int x, int y);

PolicyTable policy_table(const LogLinearPolicy& policy);

// Per-prompt preference oracle g(y1, y2 | x).
using PrefModel = std::function<double(int x, int y1, int y2)>;

PrefModel human_pref_model(const World& world);
PrefModel judge_pref_model(const World& world);

// pi*(y|x) proportional to ref(y|x) exp(r(x,y)/beta), Eq.-style closed form
// of the KL-regularized reward maximizer.
PolicyTable closed_form_dpo_opt(const World& world, const PolicyTable& ref, double beta);

// pi*(y|x) proportional to ref(y|x) exp(beta^-1 E_{y'~ref} g(y,y'|x)); the
// per-prompt objective is linear in pi plus the KL term, so this is the
// exact argmax over the simplex.
PolicyTable closed_form_ipo_opt(const World& world, const PolicyTable& ref, double beta,
                                const PrefModel& pref);

// Max per-prompt total-variation distance between two tables.
double max_tv_distance(const PolicyTable& a, const PolicyTable& b);

// ---------------------------------------------------------------------------
// Serialization. Tables as `prompt,response,prob` records, theta as one
// value per line. Values use %.17g and round-trip exactly.

void write_policy_table(std::ostream& out, const PolicyTable& table);
PolicyTable read_policy_table(std::istream& in);
void write_theta(std::ostream& out, const Vector& theta);
Vector read_theta(std::istream& in);

}  // namespace prefalign
