#include "doctest.h"

#include "prefalign/dipo.hpp"
#include "prefalign/oracle.hpp"
#include "prefalign/semipar.hpp"
#include "prefalign/rng.hpp"
#include "support.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

using namespace prefalign;
using namespace prefalign::test;

namespace {

PreferencePair pair_of(int x, int y1, int y2, int z, int z_hat) {
  PreferencePair rec;
  rec.x = x;
  rec.y1 = y1;
  rec.y2 = y2;
  rec.z = z;
  rec.z_hat = z_hat;
  rec.source = PairSource::Human;
  return rec;
}

const ClipBounds kWide{1e-6, 1e6};

}  // namespace

TEST_CASE("clip_ratio") {
  const ClipBounds bounds{0.1, 10.0};
  CHECK(clip_ratio(0.7, bounds) == 0.7);
  CHECK(clip_ratio(25.0, bounds) == 10.0);
  CHECK(clip_ratio(0.01, bounds) == 0.1);
  CHECK_THROWS_AS(clip_ratio(0.0, bounds), std::invalid_argument);
  CHECK_THROWS_AS(clip_ratio(-2.0, bounds), std::invalid_argument);
  CHECK_THROWS_AS(clip_ratio(1.0, ClipBounds{0.0, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(clip_ratio(1.0, ClipBounds{2.0, 1.0}), std::invalid_argument);
}

TEST_CASE("p_dm with a constant judge is exactly one half") {
  World w = small_world({vec({1.0, -1.0, 0.2})}, 0.3, 0.7, JudgeKind::FlipChannel, 0.5);
  const PolicyTable pi = table({{0.6, 0.2, 0.2}});
  EvalConfig eval;
  const EstimatorReport report = p_dm(pi, w.gen_ai, w, eval, 500, 17);
  CHECK(report.estimate == 0.5);
  CHECK(report.direct_term == 0.5);
  CHECK(report.N_used == 500);
  CHECK_THROWS_AS(p_dm(pi, w.gen_ai, w, eval, 0, 1), std::invalid_argument);
}

TEST_CASE("p_dm at pi = ref concentrates at one half") {
  WorldConfig cfg;
  cfg.prompt_count = 3;
  cfg.responses_per_prompt = 4;
  cfg.seed = 2;
  const World w = make_world(cfg);
  EvalConfig eval;
  const EstimatorReport report = p_dm(w.gen_ai, w.gen_ai, w, eval, 10000, 5);
  CHECK(std::abs(report.estimate - 0.5) < binomial_3se(0.5, 10000));
}

TEST_CASE("p_dm matches the enumeration oracle on a tiny world") {
  WorldConfig cfg;
  cfg.prompt_count = 2;
  cfg.responses_per_prompt = 3;
  cfg.judge_rho = 0.3;
  cfg.seed = 9;
  const World w = make_world(cfg);
  const PolicyTable pi = closed_form_dpo_opt(w, w.gen_ai, 0.8);

  double truth = 0.0;  // sum_x p(x) sum_{y,y'} pi(y) ref(y') g~(y,y')
  for (int x = 0; x < w.prompt_count(); ++x) {
    for (int y = 0; y < w.response_count(x); ++y) {
      for (int yp = 0; yp < w.response_count(x); ++yp) {
        truth += w.prompt_weights[x] * pi.at(x, y) * w.gen_ai.at(x, yp) *
                 judge_pref_prob(w, x, y, yp);
      }
    }
  }
  EvalConfig eval;
  const int N = 100000;
  const EstimatorReport report = p_dm(pi, w.gen_ai, w, eval, N, 11);
  CHECK(std::abs(report.estimate - truth) < binomial_3se(0.5, N));

  // Monte Carlo label backend agrees within its own noise.
  EvalConfig mc;
  mc.backend = JudgeBackend::MonteCarlo;
  mc.m = 8;
  const EstimatorReport mc_report = p_dm(pi, w.gen_ai, w, mc, N, 13);
  CHECK(std::abs(mc_report.estimate - truth) < 2.0 * binomial_3se(0.5, N));
}

TEST_CASE("bias_hat hand cases") {
  const PolicyTable pi = table({{0.5, 0.1, 0.4}});
  const PolicyTable ref = table({{0.2, 0.4, 0.4}});
  const PolicyTable gh = table({{0.5, 0.25, 0.25}});

  // w1 = 0.5*0.4/0.125 = 1.6, w2 = 0.1*0.2/0.125 = 0.16;
  // (z_hat - z) = 1: 0.5*1.6 - 0.5*0.16 = 0.72.
  const std::vector<PreferencePair> one = {pair_of(0, 0, 1, 0, 1)};
  CHECK(bias_hat(pi, ref, gh, one, kWide) == doctest::Approx(0.72).epsilon(1e-13));

  // Agreement cancels exactly.
  const std::vector<PreferencePair> agree = {pair_of(0, 0, 1, 1, 1), pair_of(0, 2, 1, 0, 0)};
  CHECK(bias_hat(pi, ref, gh, agree, kWide) == 0.0);

  CHECK_THROWS_AS(bias_hat(pi, ref, gh, {}, kWide), std::invalid_argument);

  PolicyTable zero_mass = gh;
  zero_mass.probs[0][0] = 0.0;
  CHECK_THROWS_AS(bias_hat(pi, ref, zero_mass, one, kWide), std::domain_error);
}

TEST_CASE("bias_hat is invariant to response swap with label complement") {
  WorldConfig cfg;
  cfg.prompt_count = 2;
  cfg.responses_per_prompt = 4;
  cfg.judge_rho = 0.4;
  cfg.seed = 3;
  const World w = make_world(cfg);
  const PolicyTable pi = closed_form_dpo_opt(w, w.gen_ai, 0.6);
  const auto human = sample_human_records(w, 500, 21);

  std::vector<PreferencePair> swapped = human;
  for (auto& rec : swapped) {
    std::swap(rec.y1, rec.y2);
    rec.z = 1 - *rec.z;
    rec.z_hat = 1 - *rec.z_hat;
  }
  const double a = bias_hat(pi, w.gen_ai, w.gen_hum, human, kWide);
  const double b = bias_hat(pi, w.gen_ai, w.gen_hum, swapped, kWide);
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("clipping inactivity when bounds cover the true ratios") {
  WorldConfig cfg;
  cfg.prompt_count = 2;
  cfg.responses_per_prompt = 3;
  cfg.seed = 4;
  const World w = make_world(cfg);
  const PolicyTable pi = closed_form_dpo_opt(w, w.gen_ai, 1.0);
  const auto human = sample_human_records(w, 300, 8);
  double clipped = -1.0;
  bias_hat(pi, w.gen_ai, w.gen_hum, human, kWide, &clipped);
  CHECK(clipped == 0.0);

  // Tight bounds force clipping and the fraction reports it.
  double tight_clipped = -1.0;
  bias_hat(pi, w.gen_ai, w.gen_hum, human, ClipBounds{0.9, 1.1}, &tight_clipped);
  CHECK(tight_clipped > 0.0);
}

TEST_CASE("p_dipo structure and mean-zero correction under an unbiased judge") {
  WorldConfig cfg;
  cfg.prompt_count = 2;
  cfg.responses_per_prompt = 3;
  cfg.judge_rho = 0.0;
  cfg.seed = 5;
  const World w = make_world(cfg);
  const PolicyTable pi = closed_form_dpo_opt(w, w.gen_ai, 0.7);

  EvalConfig eval;
  eval.clip = ClipBounds{1e-4, 1e4};
  const auto human = sample_human_records(w, 400, 31);
  const EstimatorReport report = p_dipo(pi, w.gen_ai, w, w.gen_hum, human, eval, 2000, 6);
  CHECK(report.estimate == doctest::Approx(report.direct_term - report.bias_term).epsilon(1e-14));
  CHECK(report.n_used == 400);
  CHECK(report.N_used == 2000);

  // Replicated correction terms are mean zero within 3 SEs at rho = 0.
  const int reps = 500;
  std::vector<double> biases;
  for (int r = 0; r < reps; ++r) {
    const auto h = sample_human_records(w, 200, derive_seed(100, r));
    biases.push_back(bias_hat_scores(pi, w.gen_ai, w.gen_hum, h, w, eval.clip, nullptr));
  }
  double mean = 0.0;
  for (const double b : biases) mean += b;
  mean /= reps;
  double ss = 0.0;
  for (const double b : biases) ss += (b - mean) * (b - mean);
  const double se = std::sqrt(ss / (reps - 1) / reps);
  CHECK(std::abs(mean) < 3.0 * se);
}

TEST_CASE("p_hum") {
  WorldConfig cfg;
  cfg.prompt_count = 2;
  cfg.responses_per_prompt = 3;
  cfg.seed = 14;
  const World w = make_world(cfg);
  const PrefModel g = human_pref_model(w);

  CHECK_THROWS_AS(p_hum(w.gen_ai, w.gen_ai, {}, w.gen_hum, g), std::invalid_argument);

  // pi = ref: the augmentation weight vanishes identically and the plug-in
  // term is 0.5 by exchangeability.
  const auto human = sample_human_records(w, 200, 3);
  CHECK(p_hum(w.gen_ai, w.gen_ai, human, w.gen_hum, g) == doctest::Approx(0.5).epsilon(1e-12));

  // Large-sample mean concentrates at the enumerated truth.
  const PolicyTable pi = closed_form_dpo_opt(w, w.gen_ai, 0.5);
  const double truth = exact_pref_prob(pi, w.gen_ai, w);
  const int n = 100000;
  const auto big = sample_human_records(w, n, 19);
  double acc = 0.0, ss = 0.0;
  std::vector<double> values;
  values.reserve(n);
  for (const auto& rec : big) {
    values.push_back(influence_psi(pi, w.gen_ai, w.gen_hum, g, rec).psi);
    acc += values.back();
  }
  const double mean = acc / n;
  for (const double v : values) ss += (v - mean) * (v - mean);
  const double se = std::sqrt(ss / (n - 1) / n);
  CHECK(std::abs(mean - truth) < 3.0 * se);
  CHECK(p_hum(pi, w.gen_ai, big, w.gen_hum, g) == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("p_dipo_plus is affine in lambda") {
  WorldConfig cfg;
  cfg.prompt_count = 2;
  cfg.responses_per_prompt = 3;
  cfg.judge_rho = 0.2;
  cfg.seed = 25;
  const World w = make_world(cfg);
  const PolicyTable pi = closed_form_dpo_opt(w, w.gen_ai, 0.9);
  const auto human = sample_human_records(w, 300, 41);
  EvalConfig eval;
  eval.clip = ClipBounds{1e-4, 1e4};

  const EstimatorReport base = p_dipo(pi, w.gen_ai, w, w.gen_hum, human, eval, 1000, 7);
  const EstimatorReport zero = p_dipo_plus(pi, w.gen_ai, w, w.gen_hum, human, eval, 1000, 7, 0.0);
  CHECK(zero.estimate == base.estimate);

  const EstimatorReport one = p_dipo_plus(pi, w.gen_ai, w, w.gen_hum, human, eval, 1000, 7, 1.0);
  const EstimatorReport two = p_dipo_plus(pi, w.gen_ai, w, w.gen_hum, human, eval, 1000, 7, 2.0);
  const double hum = p_hum(pi, w.gen_ai, human, w.gen_hum, judge_pref_model(w));
  CHECK(two.estimate - one.estimate == doctest::Approx(hum).epsilon(1e-12));
  CHECK(one.estimate == doctest::Approx(base.estimate + hum).epsilon(1e-12));
  CHECK(one.estimate ==
        doctest::Approx(one.direct_term - one.bias_term).epsilon(1e-14));
  CHECK_THROWS_AS(p_dipo_plus(pi, w.gen_ai, w, w.gen_hum, human, eval, 1000, 7, -0.5),
                  std::invalid_argument);
}

TEST_CASE("sampled_ipo_loss values") {
  const auto features = std::make_shared<const FeatureMap>(FeatureMap::one_hot({2}));
  const PolicyTable ref = table({{0.5, 0.5}});

  // pi = ref: every term is (0 - 1/beta)^2.
  const LogLinearPolicy at_ref = policy_from_table(features, ref);
  const std::vector<PreferencePair> pairs = {pair_of(0, 0, 1, 1, 1), pair_of(0, 1, 0, 0, 0)};
  CHECK(sampled_ipo_loss(at_ref, ref, pairs, LabelField::Z, 0.5) ==
        doctest::Approx(4.0).epsilon(1e-14));

  // Z = 1 with log-ratio exactly 1/beta: a perfect fit.
  LogLinearPolicy fitted = policy_from_table(features, ref);
  fitted.theta[0] += 0.5;  // margin 0.5 = 1/beta for beta = 2
  const std::vector<PreferencePair> hit = {pair_of(0, 0, 1, 1, 1)};
  CHECK(sampled_ipo_loss(fitted, ref, hit, LabelField::Z, 2.0) == 0.0);

  // Single pair, Z = 0, log-ratio 1, beta 2: (-1 - 0.5)^2 = 2.25.
  LogLinearPolicy unit = policy_from_table(features, ref);
  unit.theta[0] += 1.0;
  const std::vector<PreferencePair> miss = {pair_of(0, 0, 1, 0, 0)};
  CHECK(sampled_ipo_loss(unit, ref, miss, LabelField::Z, 2.0) ==
        doctest::Approx(2.25).epsilon(1e-14));

  CHECK_THROWS_AS(sampled_ipo_loss(at_ref, ref, {}, LabelField::Z, 2.0), std::invalid_argument);
  CHECK_THROWS_AS(sampled_ipo_loss(at_ref, ref, pairs, LabelField::Z, 0.0),
                  std::invalid_argument);
}

TEST_CASE("sampled_ipo_loss gradient matches finite differences") {
  WorldConfig cfg;
  cfg.prompt_count = 2;
  cfg.responses_per_prompt = 3;
  cfg.seed = 16;
  const World w = make_world(cfg);
  const PolicyTable ref = w.gen_ai;
  const auto features = std::make_shared<const FeatureMap>(
      FeatureMap::one_hot(w.responses_per_prompt()));
  const auto human = sample_human_records(w, 60, 23);

  Rng rng(9);
  for (int rep = 0; rep < 10; ++rep) {
    LogLinearPolicy p = policy_from_table(features, ref);
    for (int i = 0; i < p.theta.size(); ++i) p.theta[i] += 2.0 * rng.uniform01() - 1.0;
    const Vector grad = sampled_ipo_loss_grad(p, ref, human, LabelField::Z, 0.4);
    const double err = fd_rel_error(p.theta, grad, [&](const Vector& theta) {
      LogLinearPolicy probe = p;
      probe.theta = theta;
      return sampled_ipo_loss(probe, ref, human, LabelField::Z, 0.4);
    });
    CHECK(err < 1e-6);
  }
}

TEST_CASE("dipo exact objective gradient matches finite differences") {
  WorldConfig cfg;
  cfg.prompt_count = 2;
  cfg.responses_per_prompt = 3;
  cfg.judge_rho = 0.3;
  cfg.seed = 33;
  const World w = make_world(cfg);
  const PolicyTable ref = w.gen_ai;
  const auto features = std::make_shared<const FeatureMap>(
      FeatureMap::one_hot(w.responses_per_prompt()));
  const auto human = sample_human_records(w, 50, 2);

  DipoTrainConfig dcfg;
  dcfg.base.beta = 0.3;
  dcfg.base.clip = ClipBounds{1e-4, 1e4};  // inactive: the objective stays smooth
  dcfg.lambda_hum = 1.0;

  Rng rng(77);
  for (int rep = 0; rep < 10; ++rep) {
    LogLinearPolicy p = policy_from_table(features, ref);
    for (int i = 0; i < p.theta.size(); ++i) p.theta[i] += 1.5 * (2.0 * rng.uniform01() - 1.0);
    const Vector grad = dipo_exact_objective_grad(p, ref, w, w.gen_hum, human, dcfg);
    const double err = fd_rel_error(p.theta, grad, [&](const Vector& theta) {
      LogLinearPolicy probe = p;
      probe.theta = theta;
      return dipo_exact_objective(probe, ref, w, w.gen_hum, human, dcfg).value;
    });
    CHECK(err < 1e-6);
  }
}

TEST_CASE("train_dipo basics and exact-mode convergence") {
  WorldConfig cfg;
  cfg.prompt_count = 2;
  cfg.responses_per_prompt = 3;
  cfg.judge_rho = 0.0;
  cfg.seed = 50;
  const World w = make_world(cfg);
  const PolicyTable ref = w.gen_ai;
  const auto features = std::make_shared<const FeatureMap>(
      FeatureMap::one_hot(w.responses_per_prompt()));
  const auto human = sample_human_records(w, 100, 4);

  DipoTrainConfig dcfg;
  dcfg.base.beta = 0.5;
  dcfg.base.lr = 0.0;
  dcfg.base.steps = 3;
  dcfg.exact_expectation = true;
  const DipoTrainResult frozen = train_dipo(w, ref, human, w.gen_hum, features, dcfg);
  CHECK(max_tv_distance(policy_table(frozen.policy), ref) < 1e-14);

  dcfg.base.lr = 2.0;
  dcfg.base.steps = 2000;
  dcfg.base.clip = ClipBounds{1e-4, 1e4};
  const DipoTrainResult trained = train_dipo(w, ref, human, w.gen_hum, features, dcfg);
  const PolicyTable opt = closed_form_ipo_opt(w, ref, dcfg.base.beta, human_pref_model(w));
  // rho = 0: the judge is the human model and the correction is mean zero,
  // so the exact-mode optimum sits near the closed form (the finite human
  // sample leaves a small residual through the correction term).
  CHECK(max_tv_distance(policy_table(trained.policy), opt) < 0.05);

  // Determinism.
  const DipoTrainResult again = train_dipo(w, ref, human, w.gen_hum, features, dcfg);
  CHECK((again.policy.theta - trained.policy.theta).norm() == 0.0);

  CHECK_THROWS_AS(train_dipo(w, ref, {}, w.gen_hum, features, dcfg), std::invalid_argument);
}

TEST_CASE("train_dipo sampled mode: objective trace nondecreasing up to noise") {
  WorldConfig cfg;
  cfg.prompt_count = 2;
  cfg.responses_per_prompt = 3;
  cfg.judge_rho = 0.0;
  cfg.seed = 51;
  const World w = make_world(cfg);
  const PolicyTable ref = w.gen_ai;
  const auto features = std::make_shared<const FeatureMap>(
      FeatureMap::one_hot(w.responses_per_prompt()));
  const auto human = sample_human_records(w, 100, 5);

  DipoTrainConfig dcfg;
  dcfg.base.beta = 0.3;
  dcfg.base.lr = 0.2;
  dcfg.base.steps = 3000;
  dcfg.base.batch = 256;
  dcfg.base.seed = 6;
  dcfg.base.clip = ClipBounds{1e-4, 1e4};
  dcfg.eval_every = 100;
  const DipoTrainResult r = train_dipo(w, ref, human, w.gen_hum, features, dcfg);
  REQUIRE(r.exact_objective.size() >= 10);
  CHECK(r.exact_objective.back().second > r.exact_objective.front().second);

  // At least 95% of consecutive exact evaluations move up, within a -0.005
  // Monte Carlo allowance.
  int ok = 0;
  for (size_t i = 1; i < r.exact_objective.size(); ++i) {
    if (r.exact_objective[i].second - r.exact_objective[i - 1].second > -0.005) ++ok;
  }
  const double frac =
      static_cast<double>(ok) / static_cast<double>(r.exact_objective.size() - 1);
  CHECK(frac >= 0.95);
}

TEST_CASE("mini-batch ddpo approaches the full-batch optimum") {
  WorldConfig cfg;
  cfg.prompt_count = 2;
  cfg.responses_per_prompt = 3;
  cfg.judge_rho = 0.0;
  cfg.seed = 52;
  const World w = make_world(cfg);
  const PolicyTable ref = w.gen_ai;
  const auto features = std::make_shared<const FeatureMap>(
      FeatureMap::one_hot(w.responses_per_prompt()));
  const DatasetPair data = sample_dataset(w, 10, 8000, 53);

  TrainConfig full;
  full.beta = 0.5;
  full.lr = 8.0;
  full.steps = 3000;
  full.batch = 0;
  const TrainResult exact = train_ddpo(data, ref, features, {}, full);

  TrainConfig mini = full;
  mini.batch = 256;
  mini.lr = 1.0;
  mini.steps = 6000;
  mini.seed = 9;
  const TrainResult stochastic = train_ddpo(data, ref, features, {}, mini);
  CHECK(max_tv_distance(policy_table(stochastic.policy), policy_table(exact.policy)) < 0.05);
}

TEST_CASE("p_dm direct term is a probability") {
  WorldConfig cfg;
  cfg.prompt_count = 2;
  cfg.responses_per_prompt = 3;
  cfg.judge_rho = 0.3;
  cfg.seed = 54;
  const World w = make_world(cfg);
  EvalConfig eval;
  for (const auto backend : {JudgeBackend::ExactScores, JudgeBackend::MonteCarlo}) {
    eval.backend = backend;
    const EstimatorReport r = p_dm(w.gen_ai, w.gen_ai, w, eval, 500, 3);
    CHECK(r.direct_term >= 0.0);
    CHECK(r.direct_term <= 1.0);
  }
}
