#include "prefalign/semipar.hpp"

#include "prefalign/oracle.hpp"
#include "prefalign/parallel.hpp"
#include "prefalign/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace prefalign {

InfluenceValue influence_psi(const PolicyTable& pi, const PolicyTable& ref,
                             const PolicyTable& gen_hum, const PrefModel& g,
                             const PreferencePair& rec) {
  if (!rec.z) throw std::invalid_argument("influence_psi: record is missing z");
  const int x = rec.x;
  const Vector& p = pi.row(x);
  const Vector& q = ref.row(x);

  InfluenceValue value;
  for (int y = 0; y < p.size(); ++y) {
    if (p[y] == 0.0) continue;
    for (int yp = 0; yp < q.size(); ++yp) {
      if (q[yp] == 0.0) continue;
      value.plug_in += p[y] * q[yp] * g(x, y, yp);
    }
  }

  const double h1 = gen_hum.at(x, rec.y1);
  const double h2 = gen_hum.at(x, rec.y2);
  if (h1 <= 0.0 || h2 <= 0.0) {
    throw std::domain_error("influence_psi: gen_hum has zero mass (overlap violation)");
  }
  const double residual = static_cast<double>(*rec.z) - g(x, rec.y1, rec.y2);
  const double weight =
      (p[rec.y1] * q[rec.y2] - p[rec.y2] * q[rec.y1]) / (h1 * h2);
  value.augmentation = 0.5 * residual * weight;
  value.psi = value.plug_in + value.augmentation;
  return value;
}

PrefModel corrupt_pref_model(const World& world, double magnitude) {
  return [&world, magnitude](int x, int y1, int y2) {
    const double g = human_pref_prob(world, x, y1, y2);
    const double direction = y1 < y2 ? 1.0 : (y1 > y2 ? -1.0 : 0.0);
    return std::clamp(g + magnitude * direction, 0.01, 0.99);
  };
}

PsiExperiment psi_mean_experiment(const PolicyTable& pi, const PolicyTable& ref,
                                  const World& world, const PrefModel& g_model,
                                  const PolicyTable& gen_hum_model, int n, int replications,
                                  std::uint64_t seed, int jobs) {
  if (n < 1) throw std::invalid_argument("psi_mean_experiment: n must be >= 1");
  if (replications < 1) throw std::invalid_argument("psi_mean_experiment: replications >= 1");
  std::vector<double> means(static_cast<size_t>(replications));
  parallel_for(jobs, replications, [&](int r) {
    const auto human = sample_human_records(world, n, derive_seed(seed, static_cast<std::uint64_t>(r)));
    double acc = 0.0;
    for (const auto& rec : human) {
      acc += influence_psi(pi, ref, gen_hum_model, g_model, rec).psi;
    }
    means[static_cast<size_t>(r)] = acc / static_cast<double>(n);
  });
  PsiExperiment out;
  out.replications = replications;
  out.truth = exact_pref_prob(pi, ref, world);
  double sum = 0.0;
  for (const double m : means) sum += m;
  out.mean = sum / static_cast<double>(replications);
  double ss = 0.0;
  for (const double m : means) ss += (m - out.mean) * (m - out.mean);
  const double var = replications > 1 ? ss / static_cast<double>(replications - 1) : 0.0;
  out.se = std::sqrt(var / static_cast<double>(replications));
  return out;
}

RobustnessReport double_robustness_check(const PolicyTable& pi, const PolicyTable& ref,
                                         const World& world, Perturbation which,
                                         double magnitude, int n, int replications,
                                         std::uint64_t seed, int jobs) {
  if (which == Perturbation::CorruptBoth) {
    throw std::invalid_argument(
        "double_robustness_check: corrupting both nuisances tests nothing; corrupt exactly one");
  }
  if (magnitude < 0.0) throw std::invalid_argument("double_robustness_check: magnitude >= 0");

  const PrefModel g_model = which == Perturbation::CorruptG ? corrupt_pref_model(world, magnitude)
                                                            : human_pref_model(world);
  const PolicyTable gen_model = which == Perturbation::CorruptGen
                                    ? tempered(world.gen_hum, 1.0 + magnitude)
                                    : world.gen_hum;

  const PsiExperiment exp =
      psi_mean_experiment(pi, ref, world, g_model, gen_model, n, replications, seed, jobs);
  RobustnessReport report;
  report.which = which;
  report.magnitude = magnitude;
  report.mean = exp.mean;
  report.se = exp.se;
  report.truth = exp.truth;
  report.replications = exp.replications;
  report.abs_bias = std::abs(exp.mean - exp.truth);
  report.bias_in_ses = exp.se > 0.0 ? report.abs_bias / exp.se : 0.0;
  return report;
}

EfficiencyReport efficiency_compare(const PolicyTable& pi, const PolicyTable& ref,
                                    const World& world, int n, int N, int replications,
                                    const EvalConfig& eval, std::uint64_t seed, int jobs) {
  if (n < 1 || N < 1) throw std::invalid_argument("efficiency_compare: n, N must be >= 1");
  if (replications < 2) throw std::invalid_argument("efficiency_compare: replications >= 2");

  EfficiencyReport report;
  report.replications = replications;
  report.preconditions_met = N > n;
  report.ci_reliable = replications >= 100;
  report.truth = exact_pref_prob(pi, ref, world);

  const PrefModel g_true = human_pref_model(world);
  std::vector<double> sq_dipo(static_cast<size_t>(replications));
  std::vector<double> sq_hum(static_cast<size_t>(replications));
  parallel_for(jobs, replications, [&](int r) {
    const std::uint64_t rep_seed = derive_seed(seed, static_cast<std::uint64_t>(r));
    const auto human = sample_human_records(world, n, rep_seed);
    const EstimatorReport dipo =
        p_dipo(pi, ref, world, world.gen_hum, human, eval, N, derive_seed(rep_seed, 1));
    const double hum = p_hum(pi, ref, human, world.gen_hum, g_true);
    const double ed = dipo.estimate - report.truth;
    const double eh = hum - report.truth;
    sq_dipo[static_cast<size_t>(r)] = ed * ed;
    sq_hum[static_cast<size_t>(r)] = eh * eh;
  });

  double acc_d = 0.0, acc_h = 0.0;
  for (int r = 0; r < replications; ++r) {
    acc_d += sq_dipo[static_cast<size_t>(r)];
    acc_h += sq_hum[static_cast<size_t>(r)];
  }
  report.mse_dipo = acc_d / static_cast<double>(replications);
  report.mse_hum = acc_h / static_cast<double>(replications);
  report.diff_mean = report.mse_dipo - report.mse_hum;

  // Paired percentile bootstrap over replications.
  const int B = 2000;
  std::vector<double> boot(static_cast<size_t>(B));
  Rng rng(derive_seed(seed, 0x626f6f74ull));
  for (int b = 0; b < B; ++b) {
    double acc = 0.0;
    for (int r = 0; r < replications; ++r) {
      const int i = rng.uniform_int(replications);
      acc += sq_dipo[static_cast<size_t>(i)] - sq_hum[static_cast<size_t>(i)];
    }
    boot[static_cast<size_t>(b)] = acc / static_cast<double>(replications);
  }
  std::sort(boot.begin(), boot.end());
  const auto quantile = [&boot, B](double q) {
    const int idx = std::clamp(static_cast<int>(q * (B - 1)), 0, B - 1);
    return boot[static_cast<size_t>(idx)];
  };
  report.ci_low = quantile(0.025);
  report.ci_high = quantile(0.975);
  return report;
}

ExpansionDiagnostic expansion_diagnostic(const PolicyTable& pi, const PolicyTable& ref,
                                         const World& world, double direct_value,
                                         const std::vector<DirectSample>& draws,
                                         std::span<const PreferencePair> human,
                                         const PolicyTable& gen_hum_estimator,
                                         const EvalConfig& eval) {
  if (draws.empty()) throw std::invalid_argument("expansion_diagnostic: no direct draws");
  if (human.empty()) throw std::invalid_argument("expansion_diagnostic: no human records");

  ExpansionDiagnostic diag;
  for (const auto& s : draws) {
    diag.direct_sum += 0.5 * (human_pref_prob(world, s.x, s.y, s.y1) +
                              human_pref_prob(world, s.x, s.y, s.y2));
  }
  diag.direct_sum /= static_cast<double>(draws.size());

  const double n = static_cast<double>(human.size());
  for (const auto& rec : human) {
    if (!rec.z || !rec.z_hat) {
      throw std::invalid_argument("expansion_diagnostic: record missing labels");
    }
    const double h1 = world.gen_hum.at(rec.x, rec.y1);
    const double h2 = world.gen_hum.at(rec.x, rec.y2);
    const double ratio = (pi.at(rec.x, rec.y1) * ref.at(rec.x, rec.y2) -
                          pi.at(rec.x, rec.y2) * ref.at(rec.x, rec.y1)) /
                         (h1 * h2);
    const double g = human_pref_prob(world, rec.x, rec.y1, rec.y2);
    const double g_hat = judge_pref_prob(world, rec.x, rec.y1, rec.y2);
    diag.human_residual_sum += ratio * (static_cast<double>(*rec.z) - g) / (2.0 * n);
    const double z_hat_used = eval.backend == JudgeBackend::ExactScores
                                  ? g_hat
                                  : static_cast<double>(*rec.z_hat);
    diag.ai_residual_sum += ratio * (z_hat_used - g_hat) / (2.0 * n);
  }

  const double bias =
      eval.backend == JudgeBackend::ExactScores
          ? bias_hat_scores(pi, ref, gen_hum_estimator, human, world, eval.clip, nullptr)
          : bias_hat(pi, ref, gen_hum_estimator, human, eval.clip, nullptr);
  diag.p_dipo = direct_value - bias;
  diag.remainder =
      diag.p_dipo - (diag.direct_sum + diag.human_residual_sum - diag.ai_residual_sum);

  // Nuisance errors in both norms.
  for (int x = 0; x < world.prompt_count(); ++x) {
    for (int y1 = 0; y1 < world.response_count(x); ++y1) {
      diag.gen_ratio_error_sup =
          std::max(diag.gen_ratio_error_sup,
                   std::abs(world.gen_hum.at(x, y1) / gen_hum_estimator.at(x, y1) - 1.0));
      for (int y2 = 0; y2 < world.response_count(x); ++y2) {
        diag.g_error_sup =
            std::max(diag.g_error_sup, std::abs(judge_pref_prob(world, x, y1, y2) -
                                                human_pref_prob(world, x, y1, y2)));
      }
    }
  }
  double g_sq = 0.0, gen_sq = 0.0;
  for (const auto& rec : human) {
    const double dg =
        judge_pref_prob(world, rec.x, rec.y1, rec.y2) - human_pref_prob(world, rec.x, rec.y1, rec.y2);
    g_sq += dg * dg;
    for (const int y : {rec.y1, rec.y2}) {
      const double dr = world.gen_hum.at(rec.x, y) / gen_hum_estimator.at(rec.x, y) - 1.0;
      gen_sq += 0.5 * dr * dr;
    }
  }
  diag.g_error_l2 = std::sqrt(g_sq / n);
  diag.gen_ratio_error_l2 = std::sqrt(gen_sq / n);
  return diag;
}

}  // namespace prefalign
