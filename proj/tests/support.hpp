#pragma once

#include "prefalign/world.hpp"

#include <cmath>
#include <initializer_list>
#include <vector>

namespace prefalign::test {

inline Vector vec(std::initializer_list<double> values) {
  Vector v(static_cast<Eigen::Index>(values.size()));
  int i = 0;
  for (const double x : values) v[i++] = x;
  return v;
}

inline PolicyTable table(std::initializer_list<std::initializer_list<double>> rows) {
  PolicyTable t;
  for (const auto& row : rows) t.probs.push_back(vec(row));
  return t;
}

// Hand-built world: uniform prompt weights, explicit rewards, gen_ai =
// softmax(gen_strength * r), gen_hum tempered.
inline World small_world(std::vector<Vector> rewards, double gen_strength = 0.3,
                         double shift = 0.7, JudgeKind kind = JudgeKind::FlipChannel,
                         double rho = 0.0) {
  World w;
  const int p = static_cast<int>(rewards.size());
  w.prompt_weights = Vector::Constant(p, 1.0 / p);
  w.reward.r = std::move(rewards);
  w.reward.r_max = 100.0;
  for (const Vector& r : w.reward.r) w.gen_ai.probs.push_back(softmax(gen_strength * r));
  w.gen_hum = tempered(w.gen_ai, shift);
  w.judge.kind = kind;
  w.judge.rho = rho;
  if (kind == JudgeKind::MisalignedReward) {
    w.judge.misaligned = w.reward;
  }
  w.validate();
  return w;
}

inline double binomial_3se(double p, double n) { return 3.0 * std::sqrt(p * (1.0 - p) / n); }

// Worst relative error between an analytic gradient and central finite
// differences of `f` at `theta`.
template <typename F>
double fd_rel_error(const Vector& theta, const Vector& grad, F&& f, double h = 1e-5) {
  double worst = 0.0;
  Vector probe = theta;
  for (int j = 0; j < theta.size(); ++j) {
    probe[j] = theta[j] + h;
    const double up = f(probe);
    probe[j] = theta[j] - h;
    const double down = f(probe);
    probe[j] = theta[j];
    const double fd = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(fd - grad[j]) / std::max(1.0, std::abs(grad[j])));
  }
  return worst;
}

}  // namespace prefalign::test
