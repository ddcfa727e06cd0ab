#pragma once

#include <Eigen/Core>

#include <cmath>

namespace prefalign {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Logistic function, evaluated on the side that avoids exp overflow.
inline double sigmoid(double t) {
  if (t >= 0.0) {
    const double e = std::exp(-t);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(t);
  return e / (1.0 + e);
}

// log(1 + exp(t)) in max form. The identity
//   softplus(-t) - softplus(t) == -t
// holds exactly in floating point because the log1p terms are the same
// expression on both sides.
inline double softplus(double t) {
  return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t)));
}

inline double log_sum_exp(const Vector& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

inline Vector softmax(const Vector& v) {
  const double m = v.maxCoeff();
  Eigen::ArrayXd e = (v.array() - m).exp();
  return (e / e.sum()).matrix();
}

inline Vector log_softmax(const Vector& v) {
  return (v.array() - log_sum_exp(v)).matrix();
}

}  // namespace prefalign
