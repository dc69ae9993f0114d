#include "tokenguide/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace tokenguide {

namespace {

void check_horizon(int horizon) {
  if (horizon < 1) {
    throw Error(ErrorCode::parameter, "task horizon must be >= 1");
  }
}

void check_quality(const std::vector<double>& quality, const Vocab& vocab, double lo, double hi) {
  if (static_cast<int>(quality.size()) != vocab.size) {
    throw Error(ErrorCode::shape, "quality table must have one entry per token");
  }
  for (double q : quality) {
    if (!(q >= lo && q <= hi)) {
      throw Error(ErrorCode::parameter, "quality value outside its range");
    }
  }
}

std::vector<double> uniform_table(int n, double lo, double hi, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> out(static_cast<std::size_t>(n));
  for (double& v : out) {
    v = dist(rng);
  }
  return out;
}

int lcs_length(std::span<const TokenId> a, std::span<const TokenId> b) {
  std::vector<int> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

// ---------------------------------------------------------------- keyword

KeywordTask::KeywordTask(Vocab vocab, TokenId keyword, std::vector<double> quality, int horizon,
                         double bonus)
    : vocab_(std::move(vocab)),
      keyword_(keyword),
      quality_(std::move(quality)),
      horizon_(horizon),
      bonus_(bonus) {
  check_horizon(horizon_);
  if (!vocab_.valid(keyword_) || vocab_.is_eos(keyword_)) {
    throw Error(ErrorCode::invalid_token, "keyword must be a non-eos vocabulary token");
  }
  check_quality(quality_, vocab_, 0.0, 0.1);
  const auto [lo, hi] = std::minmax_element(quality_.begin(), quality_.end());
  if (!(bonus_ > *hi - *lo)) {
    throw Error(ErrorCode::parameter, "keyword bonus must dominate the quality spread");
  }
}

KeywordTask KeywordTask::generate(int vocab_size, TokenId keyword, int horizon,
                                  std::uint64_t seed, double bonus) {
  return KeywordTask(Vocab(vocab_size), keyword, uniform_table(vocab_size, 0.0, 0.1, seed),
                     horizon, bonus);
}

double KeywordTask::score(const Trajectory& traj, std::optional<int>) const {
  if (traj.tokens.empty()) {
    return 0.0;
  }
  bool has_keyword = false;
  double quality = 0.0;
  for (TokenId token : traj.tokens) {
    has_keyword = has_keyword || token == keyword_;
    quality += quality_.at(static_cast<std::size_t>(token));
  }
  return (has_keyword ? bonus_ : 0.0) + quality / static_cast<double>(traj.tokens.size());
}

double KeywordTask::optimal_score() const {
  // One keyword plus the best token everywhere else, or all keywords.
  const double best = *std::max_element(quality_.begin(), quality_.end());
  const double kq = quality_[static_cast<std::size_t>(keyword_)];
  const double n = horizon_;
  return bonus_ + std::max(kq, (kq + (n - 1.0) * best) / n);
}

// ---------------------------------------------------------------- average quality

AvgQualityTask::AvgQualityTask(Vocab vocab, std::vector<double> quality, int horizon)
    : vocab_(std::move(vocab)), quality_(std::move(quality)), horizon_(horizon) {
  check_horizon(horizon_);
  if (!vocab_.eos_id) {
    throw Error(ErrorCode::parameter, "average-quality task needs an eos token");
  }
  check_quality(quality_, vocab_, 0.0, 1.0);
}

AvgQualityTask AvgQualityTask::generate(int vocab_size, int horizon, std::uint64_t seed) {
  Vocab vocab(vocab_size, TokenId{0});
  auto quality = uniform_table(vocab_size, 0.0, 1.0, seed);
  quality[0] = 0.0;
  return AvgQualityTask(std::move(vocab), std::move(quality), horizon);
}

double AvgQualityTask::score(const Trajectory& traj, std::optional<int>) const {
  double total = 0.0;
  int count = 0;
  for (TokenId token : traj.tokens) {
    if (!vocab_.is_eos(token)) {
      total += quality_.at(static_cast<std::size_t>(token));
      ++count;
    }
  }
  return count > 0 ? total / count : 0.0;
}

// ---------------------------------------------------------------- noisy supervised

NoisySupervisedTask::NoisySupervisedTask(const Options& options) : options_(options) {
  check_horizon(options_.horizon);
  if (options_.num_informative < 1 || options_.num_noise < 1 || options_.num_inputs < 1 ||
      options_.pattern_length < 1 || options_.pattern_length > options_.num_informative ||
      options_.num_records < 1 || !(options_.noise_rate >= 0.0 && options_.noise_rate <= 1.0)) {
    throw Error(ErrorCode::parameter, "invalid noisy supervised task options");
  }
  vocab_ = Vocab(1 + options_.num_informative + options_.num_noise, TokenId{0});

  Rng rng(options_.seed);
  std::vector<TokenId> informative(static_cast<std::size_t>(options_.num_informative));
  std::iota(informative.begin(), informative.end(), TokenId{1});
  for (int x = 0; x < options_.num_inputs; ++x) {
    std::shuffle(informative.begin(), informative.end(), rng);
    patterns_.emplace_back(informative.begin(), informative.begin() + options_.pattern_length);
  }

  std::bernoulli_distribution noisy(options_.noise_rate);
  std::uniform_int_distribution<TokenId> noise_token(
      TokenId{1} + options_.num_informative,
      TokenId{options_.num_informative + options_.num_noise});
  for (int i = 0; i < options_.num_records; ++i) {
    SupervisedRecord record;
    record.input_id = i % options_.num_inputs;
    for (TokenId token : patterns_[static_cast<std::size_t>(record.input_id)]) {
      if (noisy(rng)) {
        record.target_tokens.push_back(noise_token(rng));
      }
      record.target_tokens.push_back(token);
    }
    record.target_tokens.push_back(*vocab_.eos_id);
    records_.push_back(std::move(record));
  }
}

const std::vector<TokenId>& NoisySupervisedTask::clean_pattern(int input_id) const {
  if (input_id < 0 || input_id >= options_.num_inputs) {
    throw Error(ErrorCode::shape, "input id out of range");
  }
  return patterns_[static_cast<std::size_t>(input_id)];
}

double NoisySupervisedTask::score(const Trajectory& traj, std::optional<int>) const {
  std::vector<TokenId> generated;
  for (TokenId token : traj.tokens) {
    if (!vocab_.is_eos(token)) {
      generated.push_back(token);
    }
  }
  return lcs_length(generated, clean_pattern(traj.input_id));
}

// ---------------------------------------------------------------- prompt

PromptTask::PromptTask(const Options& options) : options_(options) {
  check_horizon(options_.horizon);
  if (options_.num_classes < 2 || options_.num_observations < 1) {
    throw Error(ErrorCode::parameter, "prompt task needs >= 2 classes and >= 1 observation");
  }
  vocab_ = Vocab(options_.vocab_size);
  Rng rng(options_.seed);
  std::uniform_real_distribution<double> weight(-3.0, 3.0);
  std::uniform_real_distribution<double> bias(-1.0, 1.0);
  token_weights_.resize(options_.num_classes, options_.vocab_size);
  for (Eigen::Index i = 0; i < token_weights_.size(); ++i) {
    token_weights_.data()[i] = weight(rng);
  }
  obs_bias_.resize(options_.num_classes, options_.num_observations);
  for (Eigen::Index i = 0; i < obs_bias_.size(); ++i) {
    obs_bias_.data()[i] = bias(rng);
  }
  std::uniform_int_distribution<int> label(0, options_.num_classes - 1);
  for (int o = 0; o < options_.num_observations; ++o) {
    labels_.push_back(label(rng));
  }
}

Vector PromptTask::class_probs(const Trajectory& prompt, int obs) const {
  Vector counts = Vector::Zero(options_.vocab_size);
  for (TokenId token : prompt.tokens) {
    counts[token] += 1.0;
  }
  const double n = std::max<std::size_t>(prompt.tokens.size(), 1);
  return softmax(Vector(token_weights_ * counts / n + obs_bias_.col(obs)));
}

double PromptTask::score(const Trajectory& prompt, std::optional<int>) const {
  double total = 0.0;
  for (int o = 0; o < options_.num_observations; ++o) {
    total += step_metric(class_probs(prompt, o), labels_[static_cast<std::size_t>(o)],
                         options_.lambda1, options_.lambda2);
  }
  return total / options_.num_observations;
}

double PromptTask::accuracy(const Trajectory& prompt) const {
  int correct = 0;
  for (int o = 0; o < options_.num_observations; ++o) {
    Eigen::Index best = 0;
    class_probs(prompt, o).maxCoeff(&best);
    correct += best == labels_[static_cast<std::size_t>(o)] ? 1 : 0;
  }
  return static_cast<double>(correct) / options_.num_observations;
}

double step_metric(const Vector& class_probs, int true_class, double lambda1, double lambda2) {
  if (class_probs.size() < 2 || true_class < 0 || true_class >= class_probs.size() ||
      !class_probs.allFinite() || class_probs.minCoeff() < 0.0 ||
      std::abs(class_probs.sum() - 1.0) > 1e-9) {
    throw Error(ErrorCode::parameter, "malformed probability vector");
  }
  double other = -1.0;
  for (Eigen::Index i = 0; i < class_probs.size(); ++i) {
    if (i != true_class) {
      other = std::max(other, class_probs[i]);
    }
  }
  const double gap = class_probs[true_class] - other;
  return (gap > 0.0 ? lambda2 : lambda1) * gap;
}

// ---------------------------------------------------------------- KL baseline

void KLBaselineConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0) || !(c >= 0.0) || batch_size < 1 || budget < 1) {
    throw Error(ErrorCode::parameter, "invalid KL baseline config");
  }
}

Vector KlPrior::probs(const State& s, int vocab_size) const {
  if (snapshot_) {
    return policy_probs(*snapshot_, s);
  }
  return Vector::Constant(vocab_size, 1.0 / vocab_size);
}

double kl_divergence(const Vector& p, const Vector& q) {
  if (p.size() != q.size()) {
    throw Error(ErrorCode::shape, "KL arguments differ in size");
  }
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) {
      continue;
    }
    if (q[i] <= 0.0) {
      throw Error(ErrorCode::infinite_kl, "prior has no mass where the policy does");
    }
    kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return kl;
}

namespace {

double state_kl(const PolicyModel& policy, const KlPrior& prior, const State& s) {
  return kl_divergence(policy_probs(policy, s), prior.probs(s, policy.shape().vocab_size));
}

}  // namespace

double kl_penalized_reward(const PolicyModel& policy, const KlPrior& prior, const State& s,
                           TokenId token, std::optional<double> terminal_reward, double c) {
  if (!(c >= 0.0)) {
    throw Error(ErrorCode::parameter, "KL coefficient must be >= 0");
  }
  if (token < 0 || token >= policy.shape().vocab_size) {
    throw Error(ErrorCode::shape, "token out of range");
  }
  const double penalty = c > 0.0 ? -c * state_kl(policy, prior, s) : 0.0;
  return penalty + terminal_reward.value_or(0.0);
}

double kl_q_value(const PolicyModel& policy, const KlPrior& prior, const State& s, TokenId token,
                  const PreferenceSource& task, const KLBaselineConfig& cfg) {
  cfg.validate();
  const Vocab& vocab = task.vocab();
  const int horizon = task.horizon();
  const int t0 = static_cast<int>(s.prefix.size());
  if (t0 >= horizon || !vocab.valid(token)) {
    throw Error(ErrorCode::shape, "state/token outside the task horizon or vocabulary");
  }
  const double remaining = std::pow(static_cast<double>(vocab.size), horizon - 1 - t0);
  if (remaining > static_cast<double>(cfg.budget)) {
    throw Error(ErrorCode::budget_exceeded, "continuation space too large for kl_q_value");
  }

  Trajectory traj;
  traj.input_id = s.input_id;
  traj.tokens.assign(s.prefix.begin(), s.prefix.end());

  // Q at (prefix of length t, token) with prefix held in traj.tokens.
  std::function<double(TokenId)> q = [&](TokenId a) -> double {
    const int t = traj.length();
    const double kl = cfg.c > 0.0 ? state_kl(policy, prior, state_at(traj, t)) : 0.0;
    traj.tokens.push_back(a);
    double value = -cfg.c * kl;
    if (vocab.is_eos(a) || t + 1 == horizon) {
      value += task.score(traj);
    } else {
      const Vector p = policy_probs(policy, state_at(traj, t + 1));
      double next = 0.0;
      for (TokenId b = 0; b < vocab.size; ++b) {
        if (p[b] > 0.0) {
          next += p[b] * q(b);
        }
      }
      value += cfg.gamma * next;
    }
    traj.tokens.pop_back();
    return value;
  };
  return q(token);
}

GradBuffer sparse_kl_reinforce_term(const PolicyModel& policy, const KlPrior& prior,
                                    const Trajectory& traj, const PreferenceSource& task,
                                    const KLBaselineConfig& cfg) {
  const int T = traj.length();
  std::vector<double> rewards(static_cast<std::size_t>(T));
  std::vector<Vector> probs;
  probs.reserve(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    const State s = state_at(traj, t);
    probs.push_back(policy_probs(policy, s));
    const double kl =
        cfg.c > 0.0 ? kl_divergence(probs.back(), prior.probs(s, policy.shape().vocab_size))
                    : 0.0;
    rewards[static_cast<std::size_t>(t)] = -cfg.c * kl;
  }
  rewards.back() += task.score(traj);

  GradBuffer grad(policy.param_count());
  double ret = 0.0;
  for (int t = T - 1; t >= 0; --t) {
    ret = rewards[static_cast<std::size_t>(t)] + cfg.gamma * ret;
    Vector adj = -ret * probs[static_cast<std::size_t>(t)];
    adj[traj.tokens[static_cast<std::size_t>(t)]] += ret;
    policy.backward(state_at(traj, t), adj, grad);
  }
  return grad;
}

GradBuffer sparse_kl_reinforce_step(const PolicyModel& policy, const PreferenceSource& task,
                                    const KlPrior& prior, const KLBaselineConfig& cfg, Rng& rng) {
  cfg.validate();
  GradBuffer grad(policy.param_count());
  std::uniform_int_distribution<int> pick_input(0, task.num_inputs() - 1);
  for (int i = 0; i < cfg.batch_size; ++i) {
    const Trajectory traj =
        sample_trajectory(policy, task.vocab(), pick_input(rng), task.horizon(), 1.0, rng);
    grad += sparse_kl_reinforce_term(policy, prior, traj, task, cfg);
  }
  grad *= 1.0 / cfg.batch_size;
  return grad;
}

// ---------------------------------------------------------------- factory

std::unique_ptr<PreferenceSource> make_task(const TaskConfig& cfg) {
  if (cfg.kind == "keyword") {
    if (cfg.quality.empty()) {
      return std::make_unique<KeywordTask>(
          KeywordTask::generate(cfg.vocab_size, cfg.keyword, cfg.horizon, cfg.seed, cfg.bonus));
    }
    return std::make_unique<KeywordTask>(Vocab(cfg.vocab_size), cfg.keyword, cfg.quality,
                                         cfg.horizon, cfg.bonus);
  }
  if (cfg.kind == "avg_quality") {
    if (cfg.quality.empty()) {
      return std::make_unique<AvgQualityTask>(
          AvgQualityTask::generate(cfg.vocab_size, cfg.horizon, cfg.seed));
    }
    return std::make_unique<AvgQualityTask>(Vocab(cfg.vocab_size, TokenId{0}), cfg.quality,
                                            cfg.horizon);
  }
  if (cfg.kind == "noisy_supervised") {
    NoisySupervisedTask::Options o;
    o.num_informative = cfg.num_informative;
    o.num_noise = cfg.num_noise;
    o.num_inputs = cfg.num_inputs;
    o.pattern_length = cfg.pattern_length;
    o.noise_rate = cfg.noise_rate;
    o.num_records = cfg.num_records;
    o.horizon = cfg.horizon;
    o.seed = cfg.seed;
    return std::make_unique<NoisySupervisedTask>(o);
  }
  if (cfg.kind == "prompt") {
    PromptTask::Options o;
    o.vocab_size = cfg.vocab_size;
    o.horizon = cfg.horizon;
    o.num_classes = cfg.num_classes;
    o.num_observations = cfg.num_observations;
    o.seed = cfg.seed;
    return std::make_unique<PromptTask>(o);
  }
  throw Error(ErrorCode::config, "unknown task kind '" + cfg.kind + "'");
}

}  // namespace tokenguide
