#include "prefalign/ddpo.hpp"

#include "prefalign/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <stdexcept>
#include <tuple>

namespace prefalign {

void ClipBounds::validate() const {
  if (!(c_min > 0.0) || !(c_min <= c_max)) {
    throw std::invalid_argument("clip bounds: need 0 < c_min <= c_max");
  }
}

void TrainConfig::validate() const {
  if (beta <= 0.0) throw std::invalid_argument("train config: beta must be > 0");
  if (lr < 0.0) throw std::invalid_argument("train config: lr must be >= 0");
  if (steps < 0) throw std::invalid_argument("train config: steps must be >= 0");
  if (batch < 0) throw std::invalid_argument("train config: batch must be >= 0");
  if (ridge < 0.0) throw std::invalid_argument("train config: ridge must be >= 0");
  clip.validate();
}

namespace {

int require_label(const PreferencePair& pair, LabelField field, const char* op) {
  const auto& value = field == LabelField::Z ? pair.z : pair.z_hat;
  if (!value) {
    throw std::invalid_argument(std::string(op) + ": record is missing the requested label");
  }
  return *value;
}

double example_loss_from_margin(double margin, int label, double beta) {
  return softplus(-beta * (2.0 * label - 1.0) * margin);
}

}  // namespace

double dpo_example_loss(const LogLinearPolicy& policy, const PolicyTable& ref,
                        const PreferencePair& pair, int label, double beta) {
  if (beta <= 0.0) throw std::invalid_argument("dpo_example_loss: beta must be > 0");
  const double margin = delta_pi(policy, pair.x, pair.y1, pair.y2) -
                        delta_pi(ref, pair.x, pair.y1, pair.y2);
  return example_loss_from_margin(margin, label, beta);
}

double dpo_example_loss(const PolicyTable& policy, const PolicyTable& ref,
                        const PreferencePair& pair, int label, double beta) {
  if (beta <= 0.0) throw std::invalid_argument("dpo_example_loss: beta must be > 0");
  const double margin = delta_pi(policy, pair.x, pair.y1, pair.y2) -
                        delta_pi(ref, pair.x, pair.y1, pair.y2);
  return example_loss_from_margin(margin, label, beta);
}

Vector dpo_example_loss_grad(const LogLinearPolicy& policy, const PolicyTable& ref,
                             const PreferencePair& pair, int label, double beta) {
  const double margin = delta_pi(policy, pair.x, pair.y1, pair.y2) -
                        delta_pi(ref, pair.x, pair.y1, pair.y2);
  const double sign = 2.0 * label - 1.0;
  const double coef = -beta * sign * sigmoid(-beta * sign * margin);
  const Matrix& phi = policy.features->phi[static_cast<size_t>(pair.x)];
  return coef * (phi.row(pair.y1) - phi.row(pair.y2)).transpose();
}

double empirical_dpo_loss(const LogLinearPolicy& policy, const PolicyTable& ref,
                          std::span<const PreferencePair> data, LabelField field, double beta) {
  if (data.empty()) throw std::invalid_argument("empirical_dpo_loss: empty dataset");
  double acc = 0.0;
  for (const auto& pair : data) {
    acc += dpo_example_loss(policy, ref, pair, require_label(pair, field, "empirical_dpo_loss"),
                            beta);
  }
  return acc / static_cast<double>(data.size());
}

RatioWeight density_ratio(const World& world, int x, int y1, int y2) {
  const double h1 = world.gen_hum.at(x, y1);
  const double h2 = world.gen_hum.at(x, y2);
  if (h1 <= 0.0 || h2 <= 0.0) {
    throw std::domain_error("density_ratio: gen_hum has zero mass (overlap violation)");
  }
  RatioWeight w;
  w.value = (world.gen_ai.at(x, y1) / h1) * (world.gen_ai.at(x, y2) / h2);
  return w;
}

GenHumEstimate estimate_gen_hum(std::span<const PreferencePair> human, int folds,
                                const std::vector<int>& responses_per_prompt) {
  if (folds < 2) throw std::invalid_argument("estimate_gen_hum: folds must be >= 2");
  if (human.size() < static_cast<size_t>(folds)) {
    throw std::invalid_argument("estimate_gen_hum: fewer records than folds");
  }
  const int prompts = static_cast<int>(responses_per_prompt.size());

  GenHumEstimate est;
  est.folds = folds;
  est.fold_of.resize(human.size());
  for (size_t i = 0; i < human.size(); ++i) {
    est.fold_of[i] = static_cast<int>(i % static_cast<size_t>(folds));
  }

  // counts[k][x][y]: response observations (both members of each pair) from
  // records assigned to fold k.
  std::vector<std::vector<Vector>> counts(static_cast<size_t>(folds));
  for (int k = 0; k < folds; ++k) {
    for (int x = 0; x < prompts; ++x) {
      counts[static_cast<size_t>(k)].push_back(
          Vector::Zero(responses_per_prompt[static_cast<size_t>(x)]));
    }
  }
  for (size_t i = 0; i < human.size(); ++i) {
    const auto& rec = human[i];
    if (rec.x < 0 || rec.x >= prompts) {
      throw std::invalid_argument("estimate_gen_hum: record prompt out of range");
    }
    auto& c = counts[static_cast<size_t>(est.fold_of[i])][static_cast<size_t>(rec.x)];
    c[rec.y1] += 1.0;
    c[rec.y2] += 1.0;
  }

  for (int k = 0; k < folds; ++k) {
    PolicyTable table;
    for (int x = 0; x < prompts; ++x) {
      const int kx = responses_per_prompt[static_cast<size_t>(x)];
      Vector total = Vector::Zero(kx);
      for (int j = 0; j < folds; ++j) {
        if (j == k) continue;
        total += counts[static_cast<size_t>(j)][static_cast<size_t>(x)];
      }
      if (total.sum() == 0.0) ++est.uniform_fallbacks;
      const Vector smoothed = (total.array() + 1.0).matrix();
      table.probs.push_back(smoothed / smoothed.sum());
    }
    est.per_fold.push_back(std::move(table));
  }
  return est;
}

std::vector<double> exact_density_ratios(const World& world,
                                         std::span<const PreferencePair> human) {
  std::vector<double> weights;
  weights.reserve(human.size());
  for (const auto& rec : human) {
    weights.push_back(density_ratio(world, rec.x, rec.y1, rec.y2).value);
  }
  return weights;
}

std::vector<double> estimated_density_ratios(const World& world,
                                             std::span<const PreferencePair> human,
                                             const GenHumEstimate& estimate) {
  if (estimate.fold_of.size() != human.size()) {
    throw std::invalid_argument("estimated_density_ratios: estimate does not match records");
  }
  std::vector<double> weights;
  weights.reserve(human.size());
  for (size_t i = 0; i < human.size(); ++i) {
    const auto& rec = human[i];
    const PolicyTable& gh = estimate.table_for(i);
    weights.push_back((world.gen_ai.at(rec.x, rec.y1) / gh.at(rec.x, rec.y1)) *
                      (world.gen_ai.at(rec.x, rec.y2) / gh.at(rec.x, rec.y2)));
  }
  return weights;
}

double ddpo_bias_term(const LogLinearPolicy& policy, const PolicyTable& ref,
                      std::span<const PreferencePair> human, std::span<const double> weights,
                      double beta) {
  if (human.empty()) return 0.0;
  if (!weights.empty() && weights.size() != human.size()) {
    throw std::invalid_argument("ddpo_bias_term: weights do not align with records");
  }
  double acc = 0.0;
  for (size_t i = 0; i < human.size(); ++i) {
    const auto& rec = human[i];
    const int z = require_label(rec, LabelField::Z, "ddpo_bias_term");
    const int z_hat = require_label(rec, LabelField::ZHat, "ddpo_bias_term");
    const double w = weights.empty() ? 1.0 : weights[i];
    acc += w * (dpo_example_loss(policy, ref, rec, z_hat, beta) -
                dpo_example_loss(policy, ref, rec, z, beta));
  }
  return acc / static_cast<double>(human.size());
}

LossReport ddpo_loss(const LogLinearPolicy& policy, const PolicyTable& ref,
                     const DatasetPair& data, std::span<const double> weights, double beta) {
  LossReport report;
  report.ai_term = empirical_dpo_loss(policy, ref, data.ai, LabelField::ZHat, beta);
  report.bias_term = ddpo_bias_term(policy, ref, data.human, weights, beta);
  report.total = report.ai_term - report.bias_term;
  return report;
}

Vector ddpo_loss_grad(const LogLinearPolicy& policy, const PolicyTable& ref,
                      const DatasetPair& data, std::span<const double> weights, double beta) {
  if (data.ai.empty()) throw std::invalid_argument("ddpo_loss_grad: empty AI dataset");
  Vector grad = Vector::Zero(policy.features->dim);
  for (const auto& rec : data.ai) {
    grad += dpo_example_loss_grad(policy, ref, rec,
                                  require_label(rec, LabelField::ZHat, "ddpo_loss_grad"), beta);
  }
  grad /= static_cast<double>(data.ai.size());
  if (!data.human.empty()) {
    // d/dtheta [loss(z_hat) - loss(z)] = -beta (z_hat - z) (phi1 - phi2):
    // the sigmoid factors cancel between the two labels.
    Vector correction = Vector::Zero(policy.features->dim);
    for (size_t i = 0; i < data.human.size(); ++i) {
      const auto& rec = data.human[i];
      const int z = require_label(rec, LabelField::Z, "ddpo_loss_grad");
      const int z_hat = require_label(rec, LabelField::ZHat, "ddpo_loss_grad");
      if (z == z_hat) continue;
      const double w = weights.empty() ? 1.0 : weights[i];
      const Matrix& phi = policy.features->phi[static_cast<size_t>(rec.x)];
      correction -= beta * w * static_cast<double>(z_hat - z) *
                    (phi.row(rec.y1) - phi.row(rec.y2)).transpose();
    }
    grad -= correction / static_cast<double>(data.human.size());
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Trainer.

namespace {

// Precomputed per-record data: margin = theta.(phi1 - phi2) - dref. One-hot
// maps use the two nonzero indices directly.
struct PairView {
  int x, y1, y2;
  double dref;
  int i1 = -1, i2 = -1;  // one-hot theta indices
  Vector dphi;           // generic maps only
};

struct CompressedCell {
  PairView view;
  double coef1 = 0.0;  // weight on label-1 losses (per mean)
  double coef0 = 0.0;  // weight on label-0 losses
  double swing = 0.0;  // sum of w_i (z_hat_i - z_i) over the cell, / n
};

PairView make_view(const FeatureMap& features, const PolicyTable& ref, int x, int y1, int y2) {
  PairView v;
  v.x = x;
  v.y1 = y1;
  v.y2 = y2;
  v.dref = delta_pi(ref, x, y1, y2);
  if (features.is_one_hot) {
    v.i1 = features.offsets[static_cast<size_t>(x)] + y1;
    v.i2 = features.offsets[static_cast<size_t>(x)] + y2;
  } else {
    const Matrix& phi = features.phi[static_cast<size_t>(x)];
    v.dphi = (phi.row(y1) - phi.row(y2)).transpose();
  }
  return v;
}

double view_margin(const PairView& v, const Vector& theta) {
  if (v.i1 >= 0) return theta[v.i1] - theta[v.i2] - v.dref;
  return theta.dot(v.dphi) - v.dref;
}

void view_axpy(const PairView& v, double coef, Vector& grad) {
  if (v.i1 >= 0) {
    grad[v.i1] += coef;
    grad[v.i2] -= coef;
  } else {
    grad += coef * v.dphi;
  }
}

}  // namespace

TrainResult train_ddpo(const DatasetPair& data, const PolicyTable& ref,
                       std::shared_ptr<const FeatureMap> features,
                       std::span<const double> weights, const TrainConfig& cfg) {
  cfg.validate();
  if (data.ai.empty()) throw std::invalid_argument("train_ddpo: empty AI dataset");
  if (!weights.empty() && weights.size() != data.human.size()) {
    throw std::invalid_argument("train_ddpo: weights do not align with human records");
  }

  TrainResult result;
  result.policy = features->is_one_hot ? policy_from_table(features, ref) : make_policy(features);
  Vector& theta = result.policy.theta;

  const double n_ai = static_cast<double>(data.ai.size());
  const double n_hum = static_cast<double>(data.human.size());

  // Effective correction weights (optionally clipped).
  std::vector<double> w(data.human.size(), 1.0);
  int clipped = 0;
  for (size_t i = 0; i < data.human.size(); ++i) {
    double v = weights.empty() ? 1.0 : weights[i];
    if (cfg.clip_weights) {
      const double c = std::clamp(v, cfg.clip.c_min, cfg.clip.c_max);
      if (c != v) ++clipped;
      v = c;
    }
    w[i] = v;
  }
  result.clipped_fraction = data.human.empty() ? 0.0 : static_cast<double>(clipped) / n_hum;

  std::vector<PairView> ai_views;
  ai_views.reserve(data.ai.size());
  std::vector<int> ai_labels;
  ai_labels.reserve(data.ai.size());
  for (const auto& rec : data.ai) {
    if (!rec.z_hat) throw std::invalid_argument("train_ddpo: AI record without z_hat");
    ai_views.push_back(make_view(*features, ref, rec.x, rec.y1, rec.y2));
    ai_labels.push_back(*rec.z_hat);
  }
  std::vector<PairView> hum_views;
  std::vector<double> hum_swing;  // w_i (z_hat_i - z_i)
  hum_views.reserve(data.human.size());
  hum_swing.reserve(data.human.size());
  for (size_t i = 0; i < data.human.size(); ++i) {
    const auto& rec = data.human[i];
    if (!rec.z || !rec.z_hat) throw std::invalid_argument("train_ddpo: human record missing label");
    hum_views.push_back(make_view(*features, ref, rec.x, rec.y1, rec.y2));
    hum_swing.push_back(w[i] * static_cast<double>(*rec.z_hat - *rec.z));
  }

  const bool full_batch = cfg.batch == 0;

  // Full-batch mode folds identical (x, y1, y2) records into cells, which
  // makes each step O(cells) instead of O(records).
  std::vector<CompressedCell> ai_cells, hum_cells;
  if (full_batch) {
    std::map<std::tuple<int, int, int>, size_t> index;
    for (size_t i = 0; i < ai_views.size(); ++i) {
      const auto key = std::make_tuple(ai_views[i].x, ai_views[i].y1, ai_views[i].y2);
      auto [it, inserted] = index.emplace(key, ai_cells.size());
      if (inserted) {
        CompressedCell cell;
        cell.view = ai_views[i];
        ai_cells.push_back(cell);
      }
      (ai_labels[i] == 1 ? ai_cells[it->second].coef1 : ai_cells[it->second].coef0) += 1.0 / n_ai;
    }
    index.clear();
    for (size_t i = 0; i < hum_views.size(); ++i) {
      if (hum_swing[i] == 0.0) continue;
      const auto key = std::make_tuple(hum_views[i].x, hum_views[i].y1, hum_views[i].y2);
      auto [it, inserted] = index.emplace(key, hum_cells.size());
      if (inserted) {
        CompressedCell cell;
        cell.view = hum_views[i];
        hum_cells.push_back(cell);
      }
      hum_cells[it->second].swing += hum_swing[i] / n_hum;
    }
  }

  Rng rng(cfg.seed);
  Vector grad(theta.size());
  result.trace.reserve(static_cast<size_t>(cfg.steps));

  for (int step = 0; step < cfg.steps; ++step) {
    grad.setZero();
    double ai_term = 0.0;
    double bias_term = 0.0;

    if (full_batch) {
      for (const auto& cell : ai_cells) {
        const double m = view_margin(cell.view, theta);
        ai_term += cell.coef1 * softplus(-cfg.beta * m) + cell.coef0 * softplus(cfg.beta * m);
        const double coef =
            cfg.beta * (-cell.coef1 * sigmoid(-cfg.beta * m) + cell.coef0 * sigmoid(cfg.beta * m));
        view_axpy(cell.view, coef, grad);
      }
      for (const auto& cell : hum_cells) {
        const double m = view_margin(cell.view, theta);
        // loss(z_hat) - loss(z) telescopes to -beta m (z_hat - z).
        bias_term += -cfg.beta * m * cell.swing;
        view_axpy(cell.view, cfg.beta * cell.swing, grad);
      }
    } else {
      const double inv_b = 1.0 / static_cast<double>(cfg.batch);
      for (int b = 0; b < cfg.batch; ++b) {
        const size_t i = static_cast<size_t>(rng.uniform_int(static_cast<int>(ai_views.size())));
        const double m = view_margin(ai_views[i], theta);
        const double sign = 2.0 * ai_labels[i] - 1.0;
        ai_term += inv_b * softplus(-cfg.beta * sign * m);
        view_axpy(ai_views[i], -inv_b * cfg.beta * sign * sigmoid(-cfg.beta * sign * m), grad);
      }
      if (!hum_views.empty()) {
        for (int b = 0; b < cfg.batch; ++b) {
          const size_t i = static_cast<size_t>(rng.uniform_int(static_cast<int>(hum_views.size())));
          const double m = view_margin(hum_views[i], theta);
          bias_term += -inv_b * cfg.beta * m * hum_swing[i];
          view_axpy(hum_views[i], inv_b * cfg.beta * hum_swing[i], grad);
        }
      }
    }

    if (cfg.ridge > 0.0) grad += 2.0 * cfg.ridge * theta;
    const double grad_norm = grad.norm();
    const double total = ai_term - bias_term;
    if (!std::isfinite(total) || !std::isfinite(grad_norm)) {
      throw std::runtime_error("train_ddpo: non-finite loss or gradient at step " +
                               std::to_string(step));
    }
    result.trace.push_back({step, total, ai_term, bias_term, grad_norm});
    theta -= cfg.lr * grad;
  }
  return result;
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace) {
  out << "step,total,ai_term,bias_term,grad_norm\n";
  for (const auto& row : trace) {
    out << row.step << ',' << format_double(row.total) << ',' << format_double(row.ai_term) << ','
        << format_double(row.bias_term) << ',' << format_double(row.grad_norm) << '\n';
  }
}

}  // namespace prefalign
