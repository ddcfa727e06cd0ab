#include "prefalign/dipo.hpp"

#include "prefalign/rng.hpp"
#include "prefalign/semipar.hpp"

#include <cmath>
#include <stdexcept>

namespace prefalign {

double clip_ratio(double value, const ClipBounds& bounds) {
  bounds.validate();
  if (!(value > 0.0)) {
    throw std::invalid_argument("clip_ratio: importance ratio must be positive");
  }
  return std::min(std::max(value, bounds.c_min), bounds.c_max);
}

namespace {

PrefModel effective_judge(const World& world, const PrefModel& override_model) {
  if (override_model) return override_model;
  return judge_pref_model(world);
}

double judge_value(const PrefModel& judge, JudgeBackend backend, int m, int x, int y, int yp,
                   Rng& rng) {
  const double g = judge(x, y, yp);
  if (backend == JudgeBackend::ExactScores) return g;
  int successes = 0;
  for (int j = 0; j < m; ++j) {
    if (rng.bernoulli(g)) ++successes;
  }
  return static_cast<double>(successes) / static_cast<double>(m);
}

struct CrossRatios {
  double w1, w2;
};

// Algorithm-2 importance ratios, before clipping.
CrossRatios cross_ratios(const PolicyTable& pi, const PolicyTable& ref,
                         const PolicyTable& gen_hum, const PreferencePair& rec) {
  const double h1 = gen_hum.at(rec.x, rec.y1);
  const double h2 = gen_hum.at(rec.x, rec.y2);
  if (h1 <= 0.0 || h2 <= 0.0) {
    throw std::domain_error("bias_hat: gen_hum has zero mass (overlap violation)");
  }
  const double denom = h1 * h2;
  return {pi.at(rec.x, rec.y1) * ref.at(rec.x, rec.y2) / denom,
          pi.at(rec.x, rec.y2) * ref.at(rec.x, rec.y1) / denom};
}

template <typename Residual>
double bias_hat_core(const PolicyTable& pi, const PolicyTable& ref, const PolicyTable& gen_hum,
                     std::span<const PreferencePair> human, const ClipBounds& clip,
                     Residual&& residual, double* clipped_fraction) {
  if (human.empty()) throw std::invalid_argument("bias_hat: empty human dataset");
  double acc = 0.0;
  int clipped = 0;
  for (const auto& rec : human) {
    if (!rec.z || !rec.z_hat) {
      throw std::invalid_argument("bias_hat: record is missing z or z_hat");
    }
    const auto [w1_raw, w2_raw] = cross_ratios(pi, ref, gen_hum, rec);
    const double w1 = clip_ratio(w1_raw, clip);
    const double w2 = clip_ratio(w2_raw, clip);
    if (w1 != w1_raw) ++clipped;
    if (w2 != w2_raw) ++clipped;
    const double res = residual(rec);
    acc += res * w1 - res * w2;
  }
  if (clipped_fraction) {
    *clipped_fraction = static_cast<double>(clipped) / (2.0 * static_cast<double>(human.size()));
  }
  return acc / (2.0 * static_cast<double>(human.size()));
}

}  // namespace

EstimatorReport p_dm(const PolicyTable& pi, const PolicyTable& ref, const World& world,
                     const EvalConfig& eval, int N, std::uint64_t seed,
                     std::vector<DirectSample>* draws) {
  if (N < 1) throw std::invalid_argument("p_dm: empty sample");
  if (eval.m < 1) throw std::invalid_argument("p_dm: m must be >= 1");
  const PrefModel judge = judge_pref_model(world);
  Rng rng(seed);
  double acc = 0.0;
  if (draws) draws->reserve(static_cast<size_t>(N));
  for (int i = 0; i < N; ++i) {
    DirectSample s;
    s.x = rng.categorical(world.prompt_weights);
    s.y = rng.categorical(pi.row(s.x));
    s.y1 = rng.categorical(ref.row(s.x));
    s.y2 = rng.categorical(ref.row(s.x));
    acc += 0.5 * (judge_value(judge, eval.backend, eval.m, s.x, s.y, s.y1, rng) +
                  judge_value(judge, eval.backend, eval.m, s.x, s.y, s.y2, rng));
    if (draws) draws->push_back(s);
  }
  EstimatorReport report;
  report.direct_term = acc / static_cast<double>(N);
  report.estimate = report.direct_term;
  report.N_used = N;
  return report;
}

double bias_hat(const PolicyTable& pi, const PolicyTable& ref, const PolicyTable& gen_hum,
                std::span<const PreferencePair> human, const ClipBounds& clip,
                double* clipped_fraction) {
  return bias_hat_core(
      pi, ref, gen_hum, human, clip,
      [](const PreferencePair& rec) { return static_cast<double>(*rec.z_hat - *rec.z); },
      clipped_fraction);
}

double bias_hat_scores(const PolicyTable& pi, const PolicyTable& ref, const PolicyTable& gen_hum,
                       std::span<const PreferencePair> human, const World& world,
                       const ClipBounds& clip, double* clipped_fraction) {
  return bias_hat_core(
      pi, ref, gen_hum, human, clip,
      [&world](const PreferencePair& rec) {
        return judge_pref_prob(world, rec.x, rec.y1, rec.y2) - static_cast<double>(*rec.z);
      },
      clipped_fraction);
}

EstimatorReport p_dipo(const PolicyTable& pi, const PolicyTable& ref, const World& world,
                       const PolicyTable& gen_hum, std::span<const PreferencePair> human,
                       const EvalConfig& eval, int N, std::uint64_t seed,
                       std::vector<DirectSample>* draws) {
  EstimatorReport report = p_dm(pi, ref, world, eval, N, seed, draws);
  double clipped = 0.0;
  report.bias_term = eval.backend == JudgeBackend::ExactScores
                         ? bias_hat_scores(pi, ref, gen_hum, human, world, eval.clip, &clipped)
                         : bias_hat(pi, ref, gen_hum, human, eval.clip, &clipped);
  report.estimate = report.direct_term - report.bias_term;
  report.n_used = static_cast<int>(human.size());
  report.clipped_fraction = clipped;
  return report;
}

double p_hum(const PolicyTable& pi, const PolicyTable& ref,
             std::span<const PreferencePair> human, const PolicyTable& gen_hum,
             const PrefModel& g) {
  if (human.empty()) throw std::invalid_argument("p_hum: empty human dataset");
  double acc = 0.0;
  for (const auto& rec : human) {
    acc += influence_psi(pi, ref, gen_hum, g, rec).psi;
  }
  return acc / static_cast<double>(human.size());
}

EstimatorReport p_dipo_plus(const PolicyTable& pi, const PolicyTable& ref, const World& world,
                            const PolicyTable& gen_hum, std::span<const PreferencePair> human,
                            const EvalConfig& eval, int N, std::uint64_t seed, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("p_dipo_plus: lambda must be >= 0");
  EstimatorReport report = p_dipo(pi, ref, world, gen_hum, human, eval, N, seed);
  if (lambda > 0.0) {
    const double hum = p_hum(pi, ref, human, gen_hum, judge_pref_model(world));
    report.direct_term += lambda * hum;
    report.estimate = report.direct_term - report.bias_term;
  }
  return report;
}

double sampled_ipo_loss(const LogLinearPolicy& policy, const PolicyTable& ref,
                        std::span<const PreferencePair> pairs, LabelField field, double beta) {
  if (beta <= 0.0) throw std::invalid_argument("sampled_ipo_loss: beta must be > 0");
  if (pairs.empty()) throw std::invalid_argument("sampled_ipo_loss: empty dataset");
  const double target = 1.0 / beta;
  double acc = 0.0;
  for (const auto& rec : pairs) {
    const auto& label = field == LabelField::Z ? rec.z : rec.z_hat;
    if (!label) throw std::invalid_argument("sampled_ipo_loss: record missing label");
    const double sign = 2.0 * *label - 1.0;
    const double margin =
        delta_pi(policy, rec.x, rec.y1, rec.y2) - delta_pi(ref, rec.x, rec.y1, rec.y2);
    const double t = sign * margin - target;
    acc += t * t;
  }
  return acc / static_cast<double>(pairs.size());
}

Vector sampled_ipo_loss_grad(const LogLinearPolicy& policy, const PolicyTable& ref,
                             std::span<const PreferencePair> pairs, LabelField field,
                             double beta) {
  if (pairs.empty()) throw std::invalid_argument("sampled_ipo_loss_grad: empty dataset");
  const double target = 1.0 / beta;
  Vector grad = Vector::Zero(policy.features->dim);
  for (const auto& rec : pairs) {
    const auto& label = field == LabelField::Z ? rec.z : rec.z_hat;
    if (!label) throw std::invalid_argument("sampled_ipo_loss_grad: record missing label");
    const double sign = 2.0 * *label - 1.0;
    const double margin =
        delta_pi(policy, rec.x, rec.y1, rec.y2) - delta_pi(ref, rec.x, rec.y1, rec.y2);
    const Matrix& phi = policy.features->phi[static_cast<size_t>(rec.x)];
    grad += 2.0 * (sign * margin - target) * sign *
            (phi.row(rec.y1) - phi.row(rec.y2)).transpose();
  }
  return grad / static_cast<double>(pairs.size());
}

// ---------------------------------------------------------------------------
// Algorithm-2 trainer.

namespace {

struct StepState {
  std::vector<Vector> p;        // pi_theta rows
  std::vector<Vector> log_p;
  std::vector<Vector> phi_bar;  // E_{y ~ pi} phi(x, y)
};

void refresh_state(const LogLinearPolicy& policy, StepState& st) {
  const int prompts = policy.prompt_count();
  st.p.resize(static_cast<size_t>(prompts));
  st.log_p.resize(static_cast<size_t>(prompts));
  st.phi_bar.resize(static_cast<size_t>(prompts));
  for (int x = 0; x < prompts; ++x) {
    const size_t sx = static_cast<size_t>(x);
    const Matrix& phi = policy.features->phi[sx];
    st.log_p[sx] = log_softmax(phi * policy.theta);
    st.p[sx] = st.log_p[sx].array().exp().matrix();
    st.phi_bar[sx] = phi.transpose() * st.p[sx];
  }
}

// Theta-independent tables shared across steps.
struct Tables {
  std::vector<Matrix> judge;  // g_eval(y, y' | x)
  std::vector<Vector> A;      // judge * ref row: total preference per response
  std::vector<Vector> log_ref;
  std::vector<double> res;    // correction residual per human record
  std::vector<double> denom;  // gh(y1) gh(y2) per human record
  std::vector<double> g_rec;  // g_eval(y1, y2 | x) per human record
};

Tables build_tables(const World& world, const PolicyTable& ref, const PolicyTable& gen_hum,
                    std::span<const PreferencePair> human, const DipoTrainConfig& cfg) {
  Tables t;
  const PrefModel judge = effective_judge(world, cfg.pref_override);
  for (int x = 0; x < world.prompt_count(); ++x) {
    const int k = world.response_count(x);
    Matrix J(k, k);
    for (int y = 0; y < k; ++y) {
      for (int yp = 0; yp < k; ++yp) J(y, yp) = judge(x, y, yp);
    }
    const Vector& q = ref.row(x);
    Vector log_q(k);
    for (int y = 0; y < k; ++y) {
      if (q[y] <= 0.0) throw std::domain_error("train_dipo: reference has zero mass");
      log_q[y] = std::log(q[y]);
    }
    t.A.push_back(J * q);
    t.judge.push_back(std::move(J));
    t.log_ref.push_back(std::move(log_q));
  }
  t.res.reserve(human.size());
  t.denom.reserve(human.size());
  t.g_rec.reserve(human.size());
  for (const auto& rec : human) {
    if (!rec.z || !rec.z_hat) throw std::invalid_argument("train_dipo: human record missing label");
    const double h1 = gen_hum.at(rec.x, rec.y1);
    const double h2 = gen_hum.at(rec.x, rec.y2);
    if (h1 <= 0.0 || h2 <= 0.0) throw std::domain_error("train_dipo: gen_hum has zero mass");
    t.denom.push_back(h1 * h2);
    const double g_eval = t.judge[static_cast<size_t>(rec.x)](rec.y1, rec.y2);
    t.g_rec.push_back(g_eval);
    t.res.push_back(cfg.backend == JudgeBackend::ExactScores
                        ? g_eval - static_cast<double>(*rec.z)
                        : static_cast<double>(*rec.z_hat - *rec.z));
  }
  return t;
}

// Adds weight * d/dtheta of sum_y p(y) s(y) for one prompt:
// phi^T (p .* (s - p.s)).
void add_linear_term_grad(const Matrix& phi, const Vector& p, const Vector& s, double weight,
                          Vector& grad) {
  const double mean = p.dot(s);
  grad.noalias() += weight * (phi.transpose() * (p.array() * (s.array() - mean)).matrix());
}

struct DirectKl {
  double direct = 0.0;
  double kl = 0.0;
};

// Exact direct term and KL over all prompts, with gradients if requested.
DirectKl direct_kl_terms(const LogLinearPolicy& policy, const StepState& st, const World& world,
                         const Tables& tables, double beta, Vector* grad) {
  DirectKl out;
  for (int x = 0; x < world.prompt_count(); ++x) {
    const size_t sx = static_cast<size_t>(x);
    const double pw = world.prompt_weights[x];
    const Matrix& phi = policy.features->phi[sx];
    const Vector& p = st.p[sx];
    out.direct += pw * p.dot(tables.A[sx]);
    const Vector u = st.log_p[sx] - tables.log_ref[sx];
    out.kl += pw * p.dot(u);
    if (grad) {
      add_linear_term_grad(phi, p, tables.A[sx], pw, *grad);
      // The +1 in d(p log p) sums to zero against d(p).
      add_linear_term_grad(phi, p, u, -beta * pw, *grad);
    }
  }
  return out;
}

struct Correction {
  double bias = 0.0;
  double hum = 0.0;  // human-only influence estimator (DIPO+)
  double clipped_fraction = 0.0;
};

// Correction and optional human-only terms over the fixed human sample, with
// analytic gradients (ratios are explicit functions of pi_theta; clipped
// ratios are flat).
Correction correction_terms(const LogLinearPolicy& policy, const StepState& st,
                            const PolicyTable& ref, const World& world,
                            std::span<const PreferencePair> human, const Tables& tables,
                            const DipoTrainConfig& cfg, Vector* grad) {
  Correction out;
  if (!cfg.debias && cfg.lambda_hum <= 0.0) return out;
  if (human.empty()) throw std::invalid_argument("train_dipo: debiasing needs human records");
  const double n = static_cast<double>(human.size());
  int clipped = 0;
  std::vector<double> prompt_mass(static_cast<size_t>(world.prompt_count()), 0.0);
  for (size_t i = 0; i < human.size(); ++i) {
    const auto& rec = human[i];
    const size_t sx = static_cast<size_t>(rec.x);
    const Vector& p = st.p[sx];
    const Matrix& phi = policy.features->phi[sx];
    prompt_mass[sx] += 1.0 / n;
    if (cfg.debias) {
      const double w1_raw = p[rec.y1] * ref.at(rec.x, rec.y2) / tables.denom[i];
      const double w2_raw = p[rec.y2] * ref.at(rec.x, rec.y1) / tables.denom[i];
      const double w1 = clip_ratio(w1_raw, cfg.base.clip);
      const double w2 = clip_ratio(w2_raw, cfg.base.clip);
      if (w1 != w1_raw) ++clipped;
      if (w2 != w2_raw) ++clipped;
      const double res = tables.res[i];
      out.bias += (res * w1 - res * w2) / (2.0 * n);
      if (grad) {
        // Objective carries -bias; d w / d theta = w (phi(y) - phi_bar).
        if (w1 == w1_raw && res != 0.0) {
          grad->noalias() +=
              (-res * w1 / (2.0 * n)) * (phi.row(rec.y1).transpose() - st.phi_bar[sx]);
        }
        if (w2 == w2_raw && res != 0.0) {
          grad->noalias() +=
              (res * w2 / (2.0 * n)) * (phi.row(rec.y2).transpose() - st.phi_bar[sx]);
        }
      }
    }
    if (cfg.lambda_hum > 0.0) {
      const double aug_weight =
          (p[rec.y1] * ref.at(rec.x, rec.y2) - p[rec.y2] * ref.at(rec.x, rec.y1)) /
          tables.denom[i];
      const double res_g = static_cast<double>(*rec.z) - tables.g_rec[i];
      out.hum += 0.5 * res_g * aug_weight / n;
      if (grad) {
        const double c = cfg.lambda_hum * 0.5 * res_g / (tables.denom[i] * n);
        grad->noalias() += c * p[rec.y1] * ref.at(rec.x, rec.y2) *
                           (phi.row(rec.y1).transpose() - st.phi_bar[sx]);
        grad->noalias() -= c * p[rec.y2] * ref.at(rec.x, rec.y1) *
                           (phi.row(rec.y2).transpose() - st.phi_bar[sx]);
      }
    }
  }
  if (cfg.lambda_hum > 0.0) {
    // Plug-in part of the influence values, grouped by record prompt.
    for (int x = 0; x < world.prompt_count(); ++x) {
      const size_t sx = static_cast<size_t>(x);
      if (prompt_mass[sx] == 0.0) continue;
      out.hum += prompt_mass[sx] * st.p[sx].dot(tables.A[sx]);
      if (grad) {
        add_linear_term_grad(policy.features->phi[sx], st.p[sx], tables.A[sx],
                             cfg.lambda_hum * prompt_mass[sx], *grad);
      }
    }
  }
  out.clipped_fraction = cfg.debias ? static_cast<double>(clipped) / (2.0 * n) : 0.0;
  return out;
}

double exact_objective_value(const LogLinearPolicy& policy, const StepState& st,
                             const PolicyTable& ref, const World& world,
                             std::span<const PreferencePair> human, const Tables& tables,
                             const DipoTrainConfig& cfg) {
  const DirectKl dk = direct_kl_terms(policy, st, world, tables, cfg.base.beta, nullptr);
  const Correction corr = correction_terms(policy, st, ref, world, human, tables, cfg, nullptr);
  return dk.direct - corr.bias - cfg.base.beta * dk.kl + cfg.lambda_hum * corr.hum;
}

}  // namespace

DipoObjective dipo_exact_objective(const LogLinearPolicy& policy, const PolicyTable& ref,
                                   const World& world, const PolicyTable& gen_hum,
                                   std::span<const PreferencePair> human,
                                   const DipoTrainConfig& cfg) {
  const Tables tables = build_tables(world, ref, gen_hum, human, cfg);
  StepState st;
  refresh_state(policy, st);
  const DirectKl dk = direct_kl_terms(policy, st, world, tables, cfg.base.beta, nullptr);
  const Correction corr = correction_terms(policy, st, ref, world, human, tables, cfg, nullptr);
  DipoObjective obj;
  obj.direct_term = dk.direct;
  obj.bias_term = corr.bias;
  obj.kl_term = dk.kl;
  obj.value = dk.direct - corr.bias - cfg.base.beta * dk.kl + cfg.lambda_hum * corr.hum;
  return obj;
}

Vector dipo_exact_objective_grad(const LogLinearPolicy& policy, const PolicyTable& ref,
                                 const World& world, const PolicyTable& gen_hum,
                                 std::span<const PreferencePair> human,
                                 const DipoTrainConfig& cfg) {
  const Tables tables = build_tables(world, ref, gen_hum, human, cfg);
  StepState st;
  refresh_state(policy, st);
  Vector grad = Vector::Zero(policy.features->dim);
  direct_kl_terms(policy, st, world, tables, cfg.base.beta, &grad);
  correction_terms(policy, st, ref, world, human, tables, cfg, &grad);
  return grad;
}

DipoTrainResult train_dipo(const World& world, const PolicyTable& ref,
                           std::span<const PreferencePair> human, const PolicyTable& gen_hum,
                           std::shared_ptr<const FeatureMap> features,
                           const DipoTrainConfig& cfg) {
  cfg.base.validate();
  if (cfg.m < 1) throw std::invalid_argument("train_dipo: m must be >= 1");
  if (cfg.debias && human.empty()) {
    throw std::invalid_argument("train_dipo: debiasing needs human records");
  }

  DipoTrainResult result;
  result.policy = features->is_one_hot ? policy_from_table(features, ref) : make_policy(features);
  Vector& theta = result.policy.theta;

  const Tables tables = build_tables(world, ref, gen_hum, human, cfg);
  const PrefModel table_judge = [&tables](int x, int a, int b) {
    return tables.judge[static_cast<size_t>(x)](a, b);
  };
  StepState st;
  Rng rng(cfg.base.seed);
  Vector grad(theta.size());
  result.trace.reserve(static_cast<size_t>(cfg.base.steps));

  const int batch = cfg.base.batch > 0 ? cfg.base.batch : 256;

  for (int step = 0; step < cfg.base.steps; ++step) {
    refresh_state(result.policy, st);
    grad.setZero();
    DipoTraceRow row;
    row.step = step;

    Correction corr;
    if (cfg.exact_expectation) {
      const DirectKl dk = direct_kl_terms(result.policy, st, world, tables, cfg.base.beta, &grad);
      corr = correction_terms(result.policy, st, ref, world, human, tables, cfg, &grad);
      row.direct_term = dk.direct;
      row.kl_term = dk.kl;
    } else {
      // Sampled direct term via the score-function estimator, with 0.5 (the
      // tie preference) as baseline; KL exact on the sampled prompts.
      double direct = 0.0;
      double kl = 0.0;
      const double inv_b = 1.0 / static_cast<double>(batch);
      for (int b = 0; b < batch; ++b) {
        const int x = rng.categorical(world.prompt_weights);
        const size_t sx = static_cast<size_t>(x);
        const Matrix& phi = result.policy.features->phi[sx];
        const int y = rng.categorical(st.p[sx]);
        const int y1 = rng.categorical(ref.row(x));
        const int y2 = rng.categorical(ref.row(x));
        const double est = 0.5 * (judge_value(table_judge, cfg.backend, cfg.m, x, y, y1, rng) +
                                  judge_value(table_judge, cfg.backend, cfg.m, x, y, y2, rng));
        direct += inv_b * est;
        grad.noalias() += inv_b * (est - 0.5) * (phi.row(y).transpose() - st.phi_bar[sx]);
        const Vector u = st.log_p[sx] - tables.log_ref[sx];
        kl += inv_b * st.p[sx].dot(u);
        add_linear_term_grad(phi, st.p[sx], u, -cfg.base.beta * inv_b, grad);
      }
      corr = correction_terms(result.policy, st, ref, world, human, tables, cfg, &grad);
      row.direct_term = direct;
      row.kl_term = kl;
    }
    row.bias_term = corr.bias;
    row.objective =
        row.direct_term - corr.bias - cfg.base.beta * row.kl_term + cfg.lambda_hum * corr.hum;

    if (cfg.base.ridge > 0.0) grad -= 2.0 * cfg.base.ridge * theta;
    if (!std::isfinite(row.objective) || !grad.allFinite()) {
      throw std::runtime_error("train_dipo: non-finite objective or gradient at step " +
                               std::to_string(step));
    }
    result.trace.push_back(row);

    if (cfg.eval_every > 0 && step % cfg.eval_every == 0) {
      result.exact_objective.emplace_back(
          step, exact_objective_value(result.policy, st, ref, world, human, tables, cfg) -
                    cfg.base.ridge * theta.squaredNorm());
    }

    theta += cfg.base.lr * grad;
  }

  if (cfg.debias && !human.empty()) {
    refresh_state(result.policy, st);
    result.clipped_fraction =
        correction_terms(result.policy, st, ref, world, human, tables, cfg, nullptr)
            .clipped_fraction;
  }
  return result;
}

}  // namespace prefalign
