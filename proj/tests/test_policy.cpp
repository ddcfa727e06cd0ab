#include "doctest.h"

#include "prefalign/oracle.hpp"
#include "prefalign/policy.hpp"
#include "prefalign/rng.hpp"
#include "support.hpp"

#include <cmath>
#include <memory>
#include <sstream>
#include <stdexcept>

using namespace prefalign;
using namespace prefalign::test;

namespace {

std::shared_ptr<const FeatureMap> one_hot(std::vector<int> shape) {
  return std::make_shared<const FeatureMap>(FeatureMap::one_hot(shape));
}

LogLinearPolicy random_policy(std::shared_ptr<const FeatureMap> features, Rng& rng,
                              double scale = 1.0) {
  LogLinearPolicy p = make_policy(std::move(features));
  for (int i = 0; i < p.theta.size(); ++i) p.theta[i] = scale * (2.0 * rng.uniform01() - 1.0);
  return p;
}

}  // namespace

TEST_CASE("log_prob is uniform at zero parameters and normalized everywhere") {
  const auto features = one_hot({4, 6});
  LogLinearPolicy policy = make_policy(features);
  CHECK(log_prob(policy, 0, 1) == doctest::Approx(std::log(0.25)).epsilon(1e-14));
  CHECK(log_prob(policy, 1, 5) == doctest::Approx(std::log(1.0 / 6.0)).epsilon(1e-14));

  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const LogLinearPolicy p = random_policy(features, rng, 3.0);
    for (int x = 0; x < 2; ++x) {
      double sum = 0.0;
      for (int y = 0; y < p.response_count(x); ++y) sum += std::exp(log_prob(p, x, y));
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
  CHECK_THROWS_AS(log_prob(policy, 2, 0), std::invalid_argument);
  CHECK_THROWS_AS(log_prob(policy, 0, 4), std::invalid_argument);
}

TEST_CASE("raising a one-hot component raises that response only") {
  const auto features = one_hot({3});
  LogLinearPolicy policy = make_policy(features);
  const double before_target = log_prob(policy, 0, 1);
  const double before_other = log_prob(policy, 0, 0);
  policy.theta[1] += 0.7;
  CHECK(log_prob(policy, 0, 1) > before_target);
  CHECK(log_prob(policy, 0, 0) < before_other);
  double sum = 0.0;
  for (int y = 0; y < 3; ++y) sum += std::exp(log_prob(policy, 0, y));
  CHECK(std::abs(sum - 1.0) < 1e-12);
}

TEST_CASE("delta_pi identities") {
  const auto features = one_hot({5});
  Rng rng(3);
  const LogLinearPolicy p = random_policy(features, rng, 2.0);
  CHECK(delta_pi(p, 0, 2, 2) == 0.0);
  CHECK(delta_pi(p, 0, 1, 3) == -delta_pi(p, 0, 3, 1));  // exact for dot products
  const LogLinearPolicy uniform = make_policy(features);
  CHECK(delta_pi(uniform, 0, 0, 4) == 0.0);
  // Table overload agrees with the log-linear one.
  const PolicyTable t = policy_table(p);
  CHECK(delta_pi(t, 0, 1, 3) == doctest::Approx(delta_pi(p, 0, 1, 3)).epsilon(1e-12));
}

TEST_CASE("kl_to_ref matches a hand-computed value and is nonnegative") {
  const PolicyTable pi = table({{0.5, 0.5}});
  const PolicyTable ref = table({{0.25, 0.75}});
  // 0.5 log 2 + 0.5 log(2/3), evaluated independently to high precision.
  CHECK(kl_to_ref(pi, ref, 0) == doctest::Approx(0.14384103622589046).epsilon(1e-12));
  CHECK(kl_to_ref(pi, pi, 0) == 0.0);

  const auto features = one_hot({4});
  Rng rng(17);
  for (int rep = 0; rep < 100; ++rep) {
    const LogLinearPolicy p = random_policy(features, rng, 2.0);
    const LogLinearPolicy q = random_policy(features, rng, 2.0);
    CHECK(kl_to_ref(p, policy_table(q), 0) >= 0.0);
  }
}

TEST_CASE("kl_to_ref rejects zero reference mass on a supported response") {
  const PolicyTable pi = table({{0.5, 0.5}});
  const PolicyTable degenerate = table({{1.0, 0.0}});
  CHECK_THROWS_AS(kl_to_ref(pi, degenerate, 0), std::domain_error);
  // No mass on the missing response: allowed.
  const PolicyTable point = table({{1.0, 0.0}});
  CHECK(kl_to_ref(point, degenerate, 0) == 0.0);
}

TEST_CASE("grad_log_prob is the centered feature map") {
  const auto features = one_hot({6});
  Rng rng(29);
  const LogLinearPolicy p = random_policy(features, rng, 1.5);

  // Score function has mean zero under the policy.
  Vector mean = Vector::Zero(features->dim);
  const PolicyTable t = policy_table(p);
  for (int y = 0; y < 6; ++y) mean += t.at(0, y) * grad_log_prob(p, 0, y);
  CHECK(mean.norm() < 1e-10);

  // Single-response prompt: the simplex is a point, the score vanishes.
  const auto single = one_hot({1});
  const LogLinearPolicy sp = make_policy(single);
  CHECK(grad_log_prob(sp, 0, 0).norm() == 0.0);
}

TEST_CASE("grad_log_prob matches central finite differences") {
  const auto features = std::make_shared<const FeatureMap>(
      FeatureMap::random_low_rank({4, 5}, 7, 99));  // low-rank map: nontrivial jacobian
  Rng rng(31);
  const double h = 1e-5;
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    LogLinearPolicy p = make_policy(features);
    for (int i = 0; i < p.theta.size(); ++i) p.theta[i] = 2.0 * rng.uniform01() - 1.0;
    const int x = rep % 2;
    const int y = rep % p.response_count(x);
    const Vector grad = grad_log_prob(p, x, y);
    for (int j = 0; j < p.theta.size(); ++j) {
      LogLinearPolicy plus = p;
      plus.theta[j] += h;
      LogLinearPolicy minus = p;
      minus.theta[j] -= h;
      const double fd = (log_prob(plus, x, y) - log_prob(minus, x, y)) / (2.0 * h);
      const double denom = std::max(1.0, std::abs(grad[j]));
      worst = std::max(worst, std::abs(fd - grad[j]) / denom);
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("closed_form_dpo_opt") {
  // Constant reward: the normalizer absorbs it, pi* = ref.
  World w = small_world({vec({1.3, 1.3, 1.3})});
  const PolicyTable ref = table({{0.2, 0.5, 0.3}});
  CHECK(max_tv_distance(closed_form_dpo_opt(w, ref, 0.5), ref) < 1e-14);

  // Large beta: regularization dominates.
  World w2 = small_world({vec({2.0, -1.0, 0.5})});
  CHECK(max_tv_distance(closed_form_dpo_opt(w2, ref, 1e6), ref) < 1e-4);

  // Two responses, uniform ref, r = (1, 0), beta = 1: pi*(y1) = sigma(1).
  World w3 = small_world({vec({1.0, 0.0})});
  const PolicyTable opt = closed_form_dpo_opt(w3, table({{0.5, 0.5}}), 1.0);
  CHECK(opt.at(0, 0) == doctest::Approx(0.73105857863000488).epsilon(1e-12));

  CHECK_THROWS_AS(closed_form_dpo_opt(w3, ref, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(closed_form_dpo_opt(w3, ref, -1.0), std::invalid_argument);

  // Adding a per-prompt constant to rewards cancels, mirroring W(X).
  World shifted = w2;
  shifted.reward.r[0].array() += 5.5;
  CHECK(max_tv_distance(closed_form_dpo_opt(shifted, ref, 0.3),
                        closed_form_dpo_opt(w2, ref, 0.3)) < 1e-12);
}

TEST_CASE("closed_form_ipo_opt") {
  World w = small_world({vec({1.5, 0.0, -1.0})});
  const PolicyTable ref = table({{0.3, 0.4, 0.3}});

  // Uninformative preferences: pi* = ref.
  const PrefModel coin = [](int, int, int) { return 0.5; };
  CHECK(max_tv_distance(closed_form_ipo_opt(w, ref, 0.4, coin), ref) < 1e-14);

  // Large beta: back to ref.
  CHECK(max_tv_distance(closed_form_ipo_opt(w, ref, 1e6, human_pref_model(w)), ref) < 1e-4);

  CHECK_THROWS_AS(closed_form_ipo_opt(w, ref, 0.0, coin), std::invalid_argument);
}

TEST_CASE("closed_form_ipo_opt maximizes the regularized total preference") {
  // Grid search over the 3-response simplex (step 0.001) must not find a
  // better policy than the closed form.
  World w = small_world({vec({1.0, 0.2, -0.8})});
  const PolicyTable ref = table({{0.3, 0.4, 0.3}});
  const double beta = 0.3;
  const PrefModel g = human_pref_model(w);

  Vector total_pref(3);
  for (int y = 0; y < 3; ++y) {
    total_pref[y] = 0.0;
    for (int yp = 0; yp < 3; ++yp) total_pref[y] += ref.at(0, yp) * g(0, y, yp);
  }
  const auto objective = [&](double q0, double q1, double q2) {
    const Vector q = vec({q0, q1, q2});
    double value = q.dot(total_pref);
    for (int y = 0; y < 3; ++y) {
      if (q[y] > 0.0) value -= beta * q[y] * std::log(q[y] / ref.at(0, y));
    }
    return value;
  };

  const PolicyTable opt = closed_form_ipo_opt(w, ref, beta, g);
  const double opt_value = objective(opt.at(0, 0), opt.at(0, 1), opt.at(0, 2));

  double best_grid = -1e9;
  const int steps = 1000;
  for (int i = 0; i <= steps; ++i) {
    for (int j = 0; j <= steps - i; ++j) {
      const double q0 = static_cast<double>(i) / steps;
      const double q1 = static_cast<double>(j) / steps;
      best_grid = std::max(best_grid, objective(q0, q1, 1.0 - q0 - q1));
    }
  }
  CHECK(opt_value >= best_grid - 1e-9);
}

TEST_CASE("policy serialization round-trips exactly") {
  const auto features = one_hot({3, 2});
  Rng rng(123);
  const LogLinearPolicy p = random_policy(features, rng, 4.0);
  const PolicyTable t = policy_table(p);

  std::stringstream tbuf;
  write_policy_table(tbuf, t);
  const PolicyTable t2 = read_policy_table(tbuf);
  REQUIRE(t2.prompt_count() == t.prompt_count());
  for (int x = 0; x < t.prompt_count(); ++x) {
    for (int y = 0; y < t.response_count(x); ++y) {
      CHECK(t2.at(x, y) == t.at(x, y));  // bitwise
    }
  }

  std::stringstream vbuf;
  write_theta(vbuf, p.theta);
  const Vector theta2 = read_theta(vbuf);
  REQUIRE(theta2.size() == p.theta.size());
  for (int i = 0; i < p.theta.size(); ++i) CHECK(theta2[i] == p.theta[i]);
}

TEST_CASE("policy_from_table inverts policy_table") {
  const PolicyTable t = table({{0.2, 0.3, 0.5}, {0.6, 0.4}});
  const auto features = one_hot({3, 2});
  const PolicyTable back = policy_table(policy_from_table(features, t));
  CHECK(max_tv_distance(back, t) < 1e-14);
  CHECK_THROWS_AS(
      policy_from_table(std::make_shared<const FeatureMap>(FeatureMap::random_low_rank({3, 2}, 2, 1)), t),
      std::invalid_argument);
}
