#include "prefalign/policy.hpp"

#include "prefalign/config.hpp"
#include "prefalign/rng.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace prefalign {

namespace {

void check_prompt(int x, int count, const char* op) {
  if (x < 0 || x >= count) {
    throw std::invalid_argument(std::string(op) + ": unknown prompt id " + std::to_string(x));
  }
}

void check_response(int y, int count, const char* op) {
  if (y < 0 || y >= count) {
    throw std::invalid_argument(std::string(op) + ": unknown response id " + std::to_string(y));
  }
}

}  // namespace

FeatureMap FeatureMap::one_hot(const std::vector<int>& responses_per_prompt) {
  FeatureMap map;
  map.is_one_hot = true;
  int total = 0;
  for (const int k : responses_per_prompt) total += k;
  map.dim = total;
  int offset = 0;
  for (const int k : responses_per_prompt) {
    Matrix phi = Matrix::Zero(k, total);
    for (int y = 0; y < k; ++y) phi(y, offset + y) = 1.0;
    map.phi.push_back(std::move(phi));
    map.offsets.push_back(offset);
    offset += k;
  }
  return map;
}

FeatureMap FeatureMap::random_low_rank(const std::vector<int>& responses_per_prompt, int dim,
                                       std::uint64_t seed) {
  if (dim < 1) throw std::invalid_argument("random_low_rank: dim >= 1");
  FeatureMap map;
  map.dim = dim;
  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (const int k : responses_per_prompt) {
    Matrix phi(k, dim);
    for (int y = 0; y < k; ++y) {
      for (int j = 0; j < dim; ++j) phi(y, j) = scale * rng.normal();
    }
    map.phi.push_back(std::move(phi));
  }
  return map;
}

LogLinearPolicy make_policy(std::shared_ptr<const FeatureMap> features) {
  LogLinearPolicy policy;
  policy.theta = Vector::Zero(features->dim);
  policy.features = std::move(features);
  return policy;
}

LogLinearPolicy policy_from_table(std::shared_ptr<const FeatureMap> one_hot_features,
                                  const PolicyTable& table) {
  if (!one_hot_features->is_one_hot) {
    throw std::invalid_argument("policy_from_table: feature map is not the one-hot map");
  }
  LogLinearPolicy policy = make_policy(std::move(one_hot_features));
  int offset = 0;
  for (int x = 0; x < table.prompt_count(); ++x) {
    const Vector& row = table.row(x);
    for (int y = 0; y < row.size(); ++y) {
      const double p = row[y];
      if (p <= 0.0) throw std::invalid_argument("policy_from_table: zero-mass entry");
      policy.theta[offset + y] = std::log(p);
    }
    offset += static_cast<int>(row.size());
  }
  if (offset != policy.features->dim) {
    throw std::invalid_argument("policy_from_table: table shape does not match features");
  }
  return policy;
}

double log_prob(const LogLinearPolicy& policy, int x, int y) {
  check_prompt(x, policy.prompt_count(), "log_prob");
  check_response(y, policy.response_count(x), "log_prob");
  const Vector logits = policy.logits(x);
  return logits[y] - log_sum_exp(logits);
}

double log_prob(const PolicyTable& table, int x, int y) {
  check_prompt(x, table.prompt_count(), "log_prob");
  check_response(y, table.response_count(x), "log_prob");
  const double p = table.at(x, y);
  if (p <= 0.0) throw std::domain_error("log_prob: zero table mass");
  return std::log(p);
}

double delta_pi(const LogLinearPolicy& policy, int x, int y1, int y2) {
  check_prompt(x, policy.prompt_count(), "delta_pi");
  const int k = policy.response_count(x);
  check_response(y1, k, "delta_pi");
  check_response(y2, k, "delta_pi");
  const Matrix& phi = policy.features->phi[static_cast<size_t>(x)];
  return policy.theta.dot(phi.row(y1) - phi.row(y2));
}

double delta_pi(const PolicyTable& table, int x, int y1, int y2) {
  return log_prob(table, x, y1) - log_prob(table, x, y2);
}

namespace {

double kl_rows(const Vector& p, const Vector& log_p, const PolicyTable& ref, int x) {
  const Vector& q = ref.row(x);
  double kl = 0.0;
  for (int y = 0; y < p.size(); ++y) {
    if (p[y] == 0.0) continue;
    if (q[y] <= 0.0) throw std::domain_error("kl_to_ref: reference has zero mass on a supported response");
    kl += p[y] * (log_p[y] - std::log(q[y]));
  }
  return kl;
}

}  // namespace

double kl_to_ref(const LogLinearPolicy& policy, const PolicyTable& ref, int x) {
  check_prompt(x, policy.prompt_count(), "kl_to_ref");
  const Vector logits = policy.logits(x);
  const Vector log_p = log_softmax(logits);
  const Vector p = log_p.array().exp().matrix();
  return kl_rows(p, log_p, ref, x);
}

double kl_to_ref(const PolicyTable& policy, const PolicyTable& ref, int x) {
  check_prompt(x, policy.prompt_count(), "kl_to_ref");
  const Vector& p = policy.row(x);
  Vector log_p(p.size());
  for (int y = 0; y < p.size(); ++y) log_p[y] = p[y] > 0.0 ? std::log(p[y]) : 0.0;
  return kl_rows(p, log_p, ref, x);
}

Vector grad_log_prob(const LogLinearPolicy& policy, int x, int y) {
  check_prompt(x, policy.prompt_count(), "grad_log_prob");
  check_response(y, policy.response_count(x), "grad_log_prob");
  const Matrix& phi = policy.features->phi[static_cast<size_t>(x)];
  const Vector p = softmax(phi * policy.theta);
  return phi.row(y).transpose() - phi.transpose() * p;
}

PolicyTable policy_table(const LogLinearPolicy& policy) {
  PolicyTable table;
  table.probs.reserve(static_cast<size_t>(policy.prompt_count()));
  for (int x = 0; x < policy.prompt_count(); ++x) {
    table.probs.push_back(softmax(policy.logits(x)));
  }
  return table;
}

PrefModel human_pref_model(const World& world) {
  return [&world](int x, int y1, int y2) { return human_pref_prob(world, x, y1, y2); };
}

PrefModel judge_pref_model(const World& world) {
  return [&world](int x, int y1, int y2) { return judge_pref_prob(world, x, y1, y2); };
}

PolicyTable closed_form_dpo_opt(const World& world, const PolicyTable& ref, double beta) {
  if (beta <= 0.0) throw std::invalid_argument("closed_form_dpo_opt: beta must be > 0");
  PolicyTable out;
  out.probs.reserve(static_cast<size_t>(world.prompt_count()));
  for (int x = 0; x < world.prompt_count(); ++x) {
    const Vector& q = ref.row(x);
    Vector logits(q.size());
    for (int y = 0; y < q.size(); ++y) {
      if (q[y] <= 0.0) throw std::domain_error("closed_form_dpo_opt: reference has zero mass");
      logits[y] = std::log(q[y]) + world.reward.at(x, y) / beta;
    }
    out.probs.push_back(softmax(logits));
  }
  return out;
}

PolicyTable closed_form_ipo_opt(const World& world, const PolicyTable& ref, double beta,
                                const PrefModel& pref) {
  if (beta <= 0.0) throw std::invalid_argument("closed_form_ipo_opt: beta must be > 0");
  PolicyTable out;
  out.probs.reserve(static_cast<size_t>(world.prompt_count()));
  for (int x = 0; x < world.prompt_count(); ++x) {
    const Vector& q = ref.row(x);
    Vector logits(q.size());
    for (int y = 0; y < q.size(); ++y) {
      if (q[y] <= 0.0) throw std::domain_error("closed_form_ipo_opt: reference has zero mass");
      double total_pref = 0.0;  // E_{y' ~ ref} g(y, y' | x), exact enumeration
      for (int yp = 0; yp < q.size(); ++yp) total_pref += q[yp] * pref(x, y, yp);
      logits[y] = std::log(q[y]) + total_pref / beta;
    }
    out.probs.push_back(softmax(logits));
  }
  return out;
}

double max_tv_distance(const PolicyTable& a, const PolicyTable& b) {
  if (a.prompt_count() != b.prompt_count()) {
    throw std::invalid_argument("max_tv_distance: prompt count mismatch");
  }
  double worst = 0.0;
  for (int x = 0; x < a.prompt_count(); ++x) {
    worst = std::max(worst, 0.5 * (a.row(x) - b.row(x)).lpNorm<1>());
  }
  return worst;
}

void write_policy_table(std::ostream& out, const PolicyTable& table) {
  out << "prompt,response,prob\n";
  for (int x = 0; x < table.prompt_count(); ++x) {
    for (int y = 0; y < table.response_count(x); ++y) {
      out << x << ',' << y << ',' << format_double(table.at(x, y)) << '\n';
    }
  }
}

PolicyTable read_policy_table(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "prompt,response,prob") {
    throw std::runtime_error("read_policy_table: unexpected header");
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    std::getline(row, field, ',');
    const int x = std::stoi(field);
    std::getline(row, field, ',');
    const int y = std::stoi(field);
    std::getline(row, field);
    const double p = std::stod(field);
    if (x < 0 || y < 0) throw std::runtime_error("read_policy_table: negative id");
    if (static_cast<size_t>(x) >= rows.size()) rows.resize(static_cast<size_t>(x) + 1);
    auto& r = rows[static_cast<size_t>(x)];
    if (static_cast<size_t>(y) != r.size()) {
      throw std::runtime_error("read_policy_table: responses out of order");
    }
    r.push_back(p);
  }
  PolicyTable table;
  for (auto& r : rows) {
    table.probs.push_back(Eigen::Map<const Vector>(r.data(), static_cast<Eigen::Index>(r.size())));
  }
  return table;
}

void write_theta(std::ostream& out, const Vector& theta) {
  for (int i = 0; i < theta.size(); ++i) out << format_double(theta[i]) << '\n';
}

Vector read_theta(std::istream& in) {
  std::vector<double> values;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    values.push_back(std::stod(line));
  }
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace prefalign
