#include "doctest.h"

#include "prefalign/oracle.hpp"
#include "prefalign/semipar.hpp"
#include "prefalign/rng.hpp"
#include "support.hpp"

#include <cmath>
#include <stdexcept>

using namespace prefalign;
using namespace prefalign::test;

namespace {

World study_world(double rho = 0.0, std::uint64_t seed = 61) {
  WorldConfig cfg;
  cfg.prompt_count = 3;
  cfg.responses_per_prompt = 4;
  cfg.judge_rho = rho;
  cfg.seed = seed;
  return make_world(cfg);
}

}  // namespace

TEST_CASE("influence_psi decomposition and degenerate cases") {
  const World w = study_world();
  const PrefModel g = human_pref_model(w);
  const PolicyTable pi = closed_form_dpo_opt(w, w.gen_ai, 0.6);
  const auto human = sample_human_records(w, 50, 12);

  for (const auto& rec : human) {
    const InfluenceValue v = influence_psi(pi, w.gen_ai, w.gen_hum, g, rec);
    CHECK(v.psi == v.plug_in + v.augmentation);  // exact by construction
  }

  // pi = ref: the augmentation weight is identically zero.
  for (const auto& rec : human) {
    const InfluenceValue v = influence_psi(w.gen_ai, w.gen_ai, w.gen_hum, g, rec);
    CHECK(v.augmentation == 0.0);
    CHECK(v.psi == v.plug_in);
  }

  // Zero residual: a deterministic-preference triple with the agreeing label.
  const World sure = small_world({vec({50.0, 0.0})});
  PreferencePair rec;
  rec.x = 0;
  rec.y1 = 0;
  rec.y2 = 1;
  rec.z = 1;  // g = 1.0 exactly at margin 50
  rec.z_hat = 1;
  const PolicyTable spi = table({{0.7, 0.3}});
  const InfluenceValue v = influence_psi(spi, sure.gen_ai, sure.gen_hum, human_pref_model(sure), rec);
  CHECK(v.psi == v.plug_in);

  PreferencePair no_z = rec;
  no_z.z.reset();
  CHECK_THROWS_AS(influence_psi(spi, sure.gen_ai, sure.gen_hum, human_pref_model(sure), no_z),
                  std::invalid_argument);
}

TEST_CASE("psi is invariant under response swap with label complement") {
  // The weight and the residual each negate, so psi of the rewritten record
  // is unchanged (the same observation in the other order).
  const World w = study_world();
  const PrefModel g = human_pref_model(w);
  const PolicyTable pi = closed_form_dpo_opt(w, w.gen_ai, 0.4);
  const auto human = sample_human_records(w, 200, 9);
  for (const auto& rec : human) {
    PreferencePair swapped = rec;
    std::swap(swapped.y1, swapped.y2);
    swapped.z = 1 - *rec.z;
    const InfluenceValue a = influence_psi(pi, w.gen_ai, w.gen_hum, g, rec);
    const InfluenceValue b = influence_psi(pi, w.gen_ai, w.gen_hum, g, swapped);
    CHECK(b.augmentation == doctest::Approx(a.augmentation).epsilon(1e-12));
    CHECK(b.psi == doctest::Approx(a.psi).epsilon(1e-12));
  }
}

TEST_CASE("augmentation factors negate individually under swap") {
  const World w = study_world();
  const PolicyTable pi = closed_form_dpo_opt(w, w.gen_ai, 0.4);
  for (int y1 = 0; y1 < 4; ++y1) {
    for (int y2 = 0; y2 < 4; ++y2) {
      const double weight = pi.at(0, y1) * w.gen_ai.at(0, y2) - pi.at(0, y2) * w.gen_ai.at(0, y1);
      const double swapped = pi.at(0, y2) * w.gen_ai.at(0, y1) - pi.at(0, y1) * w.gen_ai.at(0, y2);
      CHECK(weight == -swapped);  // exact
      // Residual with z = 1 versus the swapped record with z = 0.
      const double res = 1.0 - human_pref_prob(w, 0, y1, y2);
      const double res_swapped = 0.0 - human_pref_prob(w, 0, y2, y1);
      CHECK(res == doctest::Approx(-res_swapped).epsilon(1e-12));
    }
  }
}

TEST_CASE("augmentation is mean zero under the true preference model") {
  const World w = study_world();
  const PrefModel g = human_pref_model(w);
  const PolicyTable pi = closed_form_dpo_opt(w, w.gen_ai, 0.5);
  const int n = 50000;
  const auto human = sample_human_records(w, n, 27);
  double acc = 0.0, ss = 0.0;
  std::vector<double> values;
  values.reserve(n);
  for (const auto& rec : human) {
    values.push_back(influence_psi(pi, w.gen_ai, w.gen_hum, g, rec).augmentation);
    acc += values.back();
  }
  const double mean = acc / n;
  for (const double v : values) ss += (v - mean) * (v - mean);
  const double se = std::sqrt(ss / (n - 1) / n);
  CHECK(std::abs(mean) < 3.0 * se);
}

TEST_CASE("corrupt_pref_model stays a valid preference model") {
  const World w = study_world();
  const PrefModel bad = corrupt_pref_model(w, 0.2);
  for (int x = 0; x < w.prompt_count(); ++x) {
    for (int y1 = 0; y1 < 4; ++y1) {
      for (int y2 = 0; y2 < 4; ++y2) {
        const double sum = bad(x, y1, y2) + bad(x, y2, y1);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(bad(x, y1, y2) >= 0.01);
        CHECK(bad(x, y1, y2) <= 0.99);
      }
    }
  }
  // Rewards within [-2, 2] keep g inside the clip range, so magnitude 0 is
  // the identity.
  const PrefModel zero = corrupt_pref_model(w, 0.0);
  for (int y1 = 0; y1 < 4; ++y1) {
    for (int y2 = 0; y2 < 4; ++y2) {
      CHECK(zero(0, y1, y2) == human_pref_prob(w, 0, y1, y2));
    }
  }
}

TEST_CASE("double robustness: one corrupted nuisance leaves the mean on target") {
  const World w = study_world(0.0, 62);
  const PolicyTable pi = closed_form_dpo_opt(w, w.gen_ai, 0.5);

  const RobustnessReport g_report = double_robustness_check(
      pi, w.gen_ai, w, Perturbation::CorruptG, 0.2, 400, 120, 1001, 2);
  CHECK(g_report.abs_bias < 3.0 * g_report.se);

  const RobustnessReport gen_report = double_robustness_check(
      pi, w.gen_ai, w, Perturbation::CorruptGen, 0.3, 400, 120, 1002, 2);
  CHECK(gen_report.abs_bias < 3.0 * gen_report.se);

  CHECK_THROWS_AS(double_robustness_check(pi, w.gen_ai, w, Perturbation::CorruptBoth, 0.2, 100,
                                          10, 1, 1),
                  std::invalid_argument);

  // Magnitude zero reduces to the unperturbed estimator: identical
  // replication means under the same seed.
  const RobustnessReport a = double_robustness_check(
      pi, w.gen_ai, w, Perturbation::CorruptG, 0.0, 200, 20, 7, 1);
  const RobustnessReport b = double_robustness_check(
      pi, w.gen_ai, w, Perturbation::CorruptGen, 0.0, 200, 20, 7, 1);
  CHECK(a.mean == b.mean);
}

TEST_CASE("efficiency_compare is deterministic and flags its regime") {
  const World w = study_world(0.0, 63);
  const PolicyTable pi = closed_form_dpo_opt(w, w.gen_ai, 0.5);
  EvalConfig eval;
  eval.clip = ClipBounds{1e-4, 1e4};

  const EfficiencyReport a = efficiency_compare(pi, w.gen_ai, w, 100, 1000, 120, eval, 5, 2);
  const EfficiencyReport b = efficiency_compare(pi, w.gen_ai, w, 100, 1000, 120, eval, 5, 1);
  CHECK(a.mse_dipo == b.mse_dipo);  // worker count does not touch the result
  CHECK(a.mse_hum == b.mse_hum);
  CHECK(a.ci_low == b.ci_low);
  CHECK(a.ci_high == b.ci_high);
  CHECK(a.preconditions_met);
  CHECK(a.ci_reliable);
  CHECK(a.ci_low <= a.diff_mean);
  CHECK(a.diff_mean <= a.ci_high);

  World noisy = w;
  noisy.judge.rho = 0.5;
  const EfficiencyReport flagged =
      efficiency_compare(pi, noisy.gen_ai, noisy, 200, 200, 50, eval, 6, 2);
  CHECK_FALSE(flagged.preconditions_met);  // N = n
  CHECK_FALSE(flagged.ci_reliable);        // fewer than 100 replications
}

TEST_CASE("expansion diagnostic remainder identity and scaling") {
  WorldConfig cfg;
  cfg.prompt_count = 3;
  cfg.responses_per_prompt = 4;
  cfg.seed = 64;
  World w = make_world(cfg);
  w = with_misaligned_judge(w, misaligned_scale_for_deviation(w, 0.1), 8);
  const PolicyTable pi = closed_form_dpo_opt(w, w.gen_ai, 0.5);
  EvalConfig eval;
  eval.clip = ClipBounds{1e-4, 1e4};

  const auto human = sample_human_records(w, 1000, 71);
  std::vector<DirectSample> draws;
  const EstimatorReport dm = p_dm(pi, w.gen_ai, w, eval, 5000, 72, &draws);

  const ExpansionDiagnostic diag =
      expansion_diagnostic(pi, w.gen_ai, w, dm.direct_term, draws, human, w.gen_hum, eval);
  CHECK(diag.remainder ==
        diag.p_dipo - (diag.direct_sum + diag.human_residual_sum - diag.ai_residual_sum));
  // Exact scores: the AI residual term vanishes identically.
  CHECK(diag.ai_residual_sum == 0.0);
  // With exact nuisances the remainder is two noisy estimates of the same
  // weighted judge bias; it should be far below the 5/sqrt(n) envelope.
  CHECK(std::abs(diag.remainder) < 5.0 / std::sqrt(1000.0));

  // With exact nuisances both error norms vanish on the generation side and
  // equal the judge deviation on the preference side.
  CHECK(diag.gen_ratio_error_sup == 0.0);
  CHECK(diag.gen_ratio_error_l2 == 0.0);
  CHECK(diag.g_error_sup > 0.0);
  CHECK(diag.g_error_l2 > 0.0);
  CHECK(diag.g_error_l2 <= diag.g_error_sup);

  // A corrupted generation nuisance shifts the estimator but not the
  // leading terms, so the remainder absorbs the difference.
  const PolicyTable corrupted = tempered(w.gen_hum, 1.3);
  const ExpansionDiagnostic shifted =
      expansion_diagnostic(pi, w.gen_ai, w, dm.direct_term, draws, human, corrupted, eval);
  CHECK(shifted.remainder != diag.remainder);
  CHECK(shifted.gen_ratio_error_sup > 0.0);
  CHECK(shifted.gen_ratio_error_l2 > 0.0);
  CHECK(shifted.gen_ratio_error_l2 <= shifted.gen_ratio_error_sup + 1e-15);

  CHECK_THROWS_AS(
      expansion_diagnostic(pi, w.gen_ai, w, dm.direct_term, {}, human, w.gen_hum, eval),
      std::invalid_argument);
}
