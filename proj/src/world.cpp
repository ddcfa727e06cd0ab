#include "prefalign/world.hpp"

#include "prefalign/rng.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace prefalign {

namespace {

void check_id(const World& world, int x, int y1, int y2, const char* op) {
  if (x < 0 || x >= world.prompt_count()) {
    throw std::invalid_argument(std::string(op) + ": unknown prompt id " + std::to_string(x));
  }
  const int k = world.response_count(x);
  if (y1 < 0 || y1 >= k || y2 < 0 || y2 >= k) {
    throw std::invalid_argument(std::string(op) + ": unknown response id for prompt " +
                                std::to_string(x));
  }
}

}  // namespace

void PolicyTable::validate(double floor, double tol) const {
  for (size_t x = 0; x < probs.size(); ++x) {
    const Vector& row = probs[x];
    if (row.size() == 0) throw std::invalid_argument("policy table: empty row");
    double sum = 0.0;
    for (int y = 0; y < row.size(); ++y) {
      const double p = row[y];
      if (!std::isfinite(p) || p < floor) {
        throw std::invalid_argument("policy table: row " + std::to_string(x) +
                                    " entry below floor");
      }
      sum += p;
    }
    if (std::abs(sum - 1.0) > tol) {
      throw std::invalid_argument("policy table: row " + std::to_string(x) +
                                  " sums to " + format_double(sum));
    }
  }
}

PolicyTable tempered(const PolicyTable& table, double exponent) {
  PolicyTable out;
  out.probs.reserve(table.probs.size());
  for (const Vector& row : table.probs) {
    Vector t = row.array().pow(exponent).matrix();
    out.probs.push_back(t / t.sum());
  }
  return out;
}

PolicyTable uniform_table(const std::vector<int>& responses_per_prompt) {
  PolicyTable out;
  out.probs.reserve(responses_per_prompt.size());
  for (const int k : responses_per_prompt) {
    out.probs.push_back(Vector::Constant(k, 1.0 / static_cast<double>(k)));
  }
  return out;
}

void JudgeSpec::validate() const {
  if (rho < 0.0 || rho > 1.0) throw std::invalid_argument("judge: rho must lie in [0,1]");
  if (mc_comparisons < 1) throw std::invalid_argument("judge: mc_comparisons must be >= 1");
}

std::vector<int> World::responses_per_prompt() const {
  std::vector<int> out(static_cast<size_t>(prompt_count()));
  for (int x = 0; x < prompt_count(); ++x) out[static_cast<size_t>(x)] = response_count(x);
  return out;
}

void World::validate() const {
  const int p = prompt_count();
  if (p < 1) throw std::invalid_argument("world: needs at least one prompt");
  double wsum = 0.0;
  for (int x = 0; x < p; ++x) {
    if (prompt_weights[x] < 0.0) throw std::invalid_argument("world: negative prompt weight");
    wsum += prompt_weights[x];
  }
  if (std::abs(wsum - 1.0) > 1e-12) {
    throw std::invalid_argument("world: prompt weights sum to " + format_double(wsum));
  }
  if (reward.prompt_count() != p || gen_ai.prompt_count() != p || gen_hum.prompt_count() != p) {
    throw std::invalid_argument("world: inconsistent prompt counts across tables");
  }
  for (int x = 0; x < p; ++x) {
    const int k = static_cast<int>(reward.r[static_cast<size_t>(x)].size());
    if (k < 2) throw std::invalid_argument("world: every prompt needs >= 2 responses");
    if (gen_ai.response_count(x) != k || gen_hum.response_count(x) != k) {
      throw std::invalid_argument("world: inconsistent response counts for prompt " +
                                  std::to_string(x));
    }
    for (int y = 0; y < k; ++y) {
      const double r = reward.at(x, y);
      if (!std::isfinite(r) || std::abs(r) > reward.r_max) {
        throw std::invalid_argument("world: reward out of bounds at (" + std::to_string(x) +
                                    "," + std::to_string(y) + ")");
      }
    }
  }
  gen_ai.validate(1e-300);
  gen_hum.validate(1e-300);
  judge.validate();
  if (judge.kind == JudgeKind::MisalignedReward && judge.misaligned.prompt_count() != p) {
    throw std::invalid_argument("world: misaligned judge table has wrong prompt count");
  }
}

double human_pref_prob(const World& world, int x, int y1, int y2) {
  check_id(world, x, y1, y2, "human_pref_prob");
  return sigmoid(world.reward.at(x, y1) - world.reward.at(x, y2));
}

double judge_pref_prob(const World& world, int x, int y1, int y2) {
  check_id(world, x, y1, y2, "judge_pref_prob");
  if (world.judge.kind == JudgeKind::FlipChannel) {
    const double g = sigmoid(world.reward.at(x, y1) - world.reward.at(x, y2));
    return (1.0 - world.judge.rho) * g + world.judge.rho * (1.0 - g);
  }
  return sigmoid(world.judge.misaligned.at(x, y1) - world.judge.misaligned.at(x, y2));
}

namespace {

// Draw order per record is fixed (x, y1, y2, z, judge draw) so that a seed
// pins the dataset byte for byte.
PreferencePair sample_pair(const World& world, const PolicyTable& gen, PairSource source,
                           Rng& rng) {
  PreferencePair rec;
  rec.source = source;
  rec.x = rng.categorical(world.prompt_weights);
  rec.y1 = rng.categorical(gen.row(rec.x));
  rec.y2 = rng.categorical(gen.row(rec.x));
  const double g = human_pref_prob(world, rec.x, rec.y1, rec.y2);
  const int z = rng.bernoulli(g) ? 1 : 0;
  rec.z = z;
  if (world.judge.kind == JudgeKind::FlipChannel) {
    rec.z_hat = rng.bernoulli(world.judge.rho) ? 1 - z : z;
  } else {
    const double gt = judge_pref_prob(world, rec.x, rec.y1, rec.y2);
    rec.z_hat = rng.bernoulli(gt) ? 1 : 0;
  }
  return rec;
}

}  // namespace

DatasetPair sample_dataset(const World& world, int n, int N, std::uint64_t seed) {
  if (n < 1 || N < 1) {
    throw std::invalid_argument("sample_dataset: n and N must be >= 1");
  }
  DatasetPair data;
  data.human.reserve(static_cast<size_t>(n));
  data.ai.reserve(static_cast<size_t>(N));
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    data.human.push_back(sample_pair(world, world.gen_hum, PairSource::Human, rng));
  }
  for (int i = 0; i < N; ++i) {
    data.ai.push_back(sample_pair(world, world.gen_ai, PairSource::AI, rng));
  }
  return data;
}

std::vector<PreferencePair> sample_human_records(const World& world, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_human_records: n must be >= 1");
  std::vector<PreferencePair> records;
  records.reserve(static_cast<size_t>(n));
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    records.push_back(sample_pair(world, world.gen_hum, PairSource::Human, rng));
  }
  return records;
}

double mc_judge_label(const World& world, int x, int y1, int y2, int m, std::uint64_t seed) {
  if (m < 1) throw std::invalid_argument("mc_judge_label: m must be >= 1");
  const double gt = judge_pref_prob(world, x, y1, y2);
  Rng rng(seed);
  int successes = 0;
  for (int j = 0; j < m; ++j) {
    if (rng.bernoulli(gt)) ++successes;
  }
  return static_cast<double>(successes) / static_cast<double>(m);
}

World make_world(const WorldConfig& cfg) {
  if (cfg.prompt_count < 1) throw std::invalid_argument("world config: prompt_count >= 1");
  if (cfg.responses_per_prompt < 2) {
    throw std::invalid_argument("world config: responses_per_prompt >= 2");
  }
  if (cfg.reward_range <= 0.0) throw std::invalid_argument("world config: reward_range > 0");
  if (cfg.shift_temperature <= 0.0) {
    throw std::invalid_argument("world config: shift_temperature > 0");
  }

  World world;
  world.prompt_weights =
      Vector::Constant(cfg.prompt_count, 1.0 / static_cast<double>(cfg.prompt_count));
  world.reward.r_max = cfg.reward_range;
  Rng rng(cfg.seed);
  for (int x = 0; x < cfg.prompt_count; ++x) {
    Vector r(cfg.responses_per_prompt);
    for (int y = 0; y < cfg.responses_per_prompt; ++y) {
      r[y] = cfg.reward_range * (2.0 * rng.uniform01() - 1.0);
    }
    world.reward.r.push_back(r);
    world.gen_ai.probs.push_back(softmax(cfg.gen_strength * r));
  }
  world.gen_hum = tempered(world.gen_ai, cfg.shift_temperature);

  world.judge.kind = cfg.judge_kind;
  world.judge.rho = cfg.judge_rho;
  world.judge.mc_comparisons = cfg.judge_m;
  if (cfg.judge_kind == JudgeKind::MisalignedReward) {
    world.judge.misaligned.r_max = cfg.reward_range * std::abs(cfg.judge_misalign_scale) + 1.0;
    for (const Vector& r : world.reward.r) {
      world.judge.misaligned.r.push_back(cfg.judge_misalign_scale * r);
    }
  }
  world.validate();
  return world;
}

std::vector<std::string> world_config_keys() {
  return {"world.prompt_count",  "world.responses_per_prompt", "world.reward_range",
          "world.gen_strength",  "world.shift_temperature",    "world.seed",
          "judge.kind",          "judge.rho",                  "judge.m",
          "judge.misalign_scale"};
}

WorldConfig world_config_from(const KeyValueConfig& kv) {
  WorldConfig cfg;
  cfg.prompt_count = kv.get_int("world.prompt_count", cfg.prompt_count);
  cfg.responses_per_prompt = kv.get_int("world.responses_per_prompt", cfg.responses_per_prompt);
  cfg.reward_range = kv.get_double("world.reward_range", cfg.reward_range);
  cfg.gen_strength = kv.get_double("world.gen_strength", cfg.gen_strength);
  cfg.shift_temperature = kv.get_double("world.shift_temperature", cfg.shift_temperature);
  cfg.seed = kv.get_u64("world.seed", cfg.seed);
  const std::string kind = kv.get_string("judge.kind", "flip");
  if (kind == "flip") {
    cfg.judge_kind = JudgeKind::FlipChannel;
  } else if (kind == "misaligned") {
    cfg.judge_kind = JudgeKind::MisalignedReward;
  } else {
    throw std::invalid_argument("judge.kind must be 'flip' or 'misaligned', got '" + kind + "'");
  }
  cfg.judge_rho = kv.get_double("judge.rho", cfg.judge_rho);
  cfg.judge_m = kv.get_int("judge.m", cfg.judge_m);
  cfg.judge_misalign_scale = kv.get_double("judge.misalign_scale", cfg.judge_misalign_scale);
  return cfg;
}

World with_misaligned_judge(const World& world, double scale, int mc_comparisons) {
  World out = world;
  out.judge.kind = JudgeKind::MisalignedReward;
  out.judge.mc_comparisons = mc_comparisons;
  out.judge.misaligned.r.clear();
  out.judge.misaligned.r_max = world.reward.r_max * std::abs(scale) + 1.0;
  for (const Vector& r : world.reward.r) {
    out.judge.misaligned.r.push_back(scale * r);
  }
  out.validate();
  return out;
}

double mean_abs_judge_deviation(const World& world) {
  double acc = 0.0;
  for (int x = 0; x < world.prompt_count(); ++x) {
    const Vector& gen = world.gen_ai.row(x);
    double prompt_acc = 0.0;
    for (int y1 = 0; y1 < gen.size(); ++y1) {
      for (int y2 = 0; y2 < gen.size(); ++y2) {
        const double g = human_pref_prob(world, x, y1, y2);
        const double gt = judge_pref_prob(world, x, y1, y2);
        prompt_acc += gen[y1] * gen[y2] * std::abs(gt - g);
      }
    }
    acc += world.prompt_weights[x] * prompt_acc;
  }
  return acc;
}

double misaligned_scale_for_deviation(const World& world, double target) {
  if (target <= 0.0) throw std::invalid_argument("misaligned_scale_for_deviation: target > 0");
  const auto deviation = [&world](double scale) {
    return mean_abs_judge_deviation(with_misaligned_judge(world, scale, 1));
  };
  double lo = 1.0;
  double hi = 2.0;
  while (deviation(hi) < target) {
    hi *= 2.0;
    if (hi > 1e4) throw std::domain_error("misaligned_scale_for_deviation: target unreachable");
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (deviation(mid) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

void write_dataset(std::ostream& out, const DatasetPair& data) {
  out << "source,x,y1,y2,z,z_hat\n";
  const auto emit = [&out](const PreferencePair& rec) {
    out << (rec.source == PairSource::Human ? "human" : "ai") << ',' << rec.x << ',' << rec.y1
        << ',' << rec.y2 << ',';
    if (rec.z) out << *rec.z;
    out << ',';
    if (rec.z_hat) out << *rec.z_hat;
    out << '\n';
  };
  for (const auto& rec : data.human) emit(rec);
  for (const auto& rec : data.ai) emit(rec);
}

DatasetPair read_dataset(std::istream& in) {
  DatasetPair data;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("read_dataset: empty input");
  if (line != "source,x,y1,y2,z,z_hat") {
    throw std::runtime_error("read_dataset: unexpected header: " + line);
  }
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    PreferencePair rec;
    std::getline(row, field, ',');
    if (field == "human") {
      rec.source = PairSource::Human;
    } else if (field == "ai") {
      rec.source = PairSource::AI;
    } else {
      throw std::runtime_error("read_dataset: bad source on line " + std::to_string(line_no));
    }
    std::getline(row, field, ',');
    rec.x = std::stoi(field);
    std::getline(row, field, ',');
    rec.y1 = std::stoi(field);
    std::getline(row, field, ',');
    rec.y2 = std::stoi(field);
    std::getline(row, field, ',');
    if (!field.empty()) rec.z = std::stoi(field);
    std::getline(row, field);
    if (!field.empty()) rec.z_hat = std::stoi(field);
    if (rec.source == PairSource::Human && !rec.z) {
      throw std::runtime_error("read_dataset: human record without z on line " +
                               std::to_string(line_no));
    }
    if (rec.source == PairSource::AI && !rec.z_hat) {
      throw std::runtime_error("read_dataset: ai record without z_hat on line " +
                               std::to_string(line_no));
    }
    (rec.source == PairSource::Human ? data.human : data.ai).push_back(rec);
  }
  return data;
}

}  // namespace prefalign
