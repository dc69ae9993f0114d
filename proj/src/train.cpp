#include "tokenguide/train.hpp"

#include <cmath>
#include <limits>

namespace tokenguide {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double batch_weight(std::span<const double> weights, std::size_t i, std::size_t n) {
  if (weights.empty()) {
    return 1.0 / static_cast<double>(n);
  }
  return weights[i];
}

void check_batch(std::size_t n, std::span<const double> weights) {
  if (n == 0) {
    throw Error(ErrorCode::shape, "empty batch");
  }
  if (!weights.empty() && weights.size() != n) {
    throw Error(ErrorCode::shape, "batch weights do not match the batch");
  }
}

void check_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) {
    throw Error(ErrorCode::numeric, std::string("non-finite ") + what);
  }
}

Trajectory as_trajectory(const SupervisedRecord& record) {
  return Trajectory{record.input_id, record.target_tokens};
}

}  // namespace

TrainMode parse_train_mode(std::string_view name) {
  if (name == "reinforce") return TrainMode::reinforce;
  if (name == "weighted_mle") return TrainMode::weighted_mle;
  if (name == "vanilla_mle") return TrainMode::vanilla_mle;
  if (name == "seq_reinforce") return TrainMode::seq_reinforce;
  if (name == "seq_weighted_mle") return TrainMode::seq_weighted_mle;
  throw Error(ErrorCode::config, "unknown training mode '" + std::string(name) + "'");
}

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::reinforce: return "reinforce";
    case TrainMode::weighted_mle: return "weighted_mle";
    case TrainMode::vanilla_mle: return "vanilla_mle";
    case TrainMode::seq_reinforce: return "seq_reinforce";
    case TrainMode::seq_weighted_mle: return "seq_weighted_mle";
  }
  return "?";
}

bool needs_records(TrainMode mode) {
  return mode == TrainMode::weighted_mle || mode == TrainMode::vanilla_mle ||
         mode == TrainMode::seq_weighted_mle;
}

bool is_sequence_level(TrainMode mode) {
  return mode == TrainMode::seq_reinforce || mode == TrainMode::seq_weighted_mle;
}

void PolicyTrainConfig::validate() const {
  if (m_lm < 1 || m_re < 1 || (m_rew_init && *m_rew_init < 1)) {
    throw Error(ErrorCode::parameter, "M_LM, M_re and M_rew_init must be >= 1");
  }
  if (!(alpha >= 0.0)) {
    throw Error(ErrorCode::parameter, "alpha must be >= 0");
  }
  if (batch_size < 1 || eval_interval < 1 || eval_samples < 1 || !(temperature > 0.0) ||
      !(baseline_decay >= 0.0 && baseline_decay < 1.0)) {
    throw Error(ErrorCode::parameter, "invalid policy training settings");
  }
}

// ---------------------------------------------------------------- reinforce

GradBuffer reinforce_entropy_grad(const PolicyModel& policy, const RewardModel& reward,
                                  std::span<const Trajectory> batch, double alpha,
                                  Estimator estimator, std::span<const double> weights,
                                  double baseline) {
  check_batch(batch.size(), weights);
  if (!(alpha >= 0.0)) {
    throw Error(ErrorCode::parameter, "alpha must be >= 0");
  }
  GradBuffer grad(policy.param_count());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Trajectory& traj = batch[i];
    const int T = traj.length();
    if (T < 1) {
      throw Error(ErrorCode::empty_trajectory, "empty trajectory in batch");
    }
    const double w = batch_weight(weights, i, batch.size()) / T;
    for (int t = 0; t < T; ++t) {
      const State s = state_at(traj, t);
      const Vector logits = policy.logits(s);
      check_finite(logits, "logits");
      const Vector p = softmax(logits);
      Vector adj = alpha * entropy_logit_gradient(p);
      if (estimator == Estimator::exact) {
        const Vector r = reward.forward_all(s);
        check_finite(r, "reward");
        adj += p.cwiseProduct(Vector(r.array() - p.dot(r)));
      } else {
        const TokenId a = traj.tokens[static_cast<std::size_t>(t)];
        const double r = reward.forward(s, a) - baseline;
        if (!std::isfinite(r)) {
          throw Error(ErrorCode::numeric, "non-finite reward");
        }
        adj -= r * p;
        adj[a] += r;
      }
      policy.backward(s, Vector(w * adj), grad);
    }
  }
  return grad;
}

double reinforce_entropy_objective(const PolicyModel& policy, const RewardModel& reward,
                                   std::span<const Trajectory> batch, double alpha,
                                   std::span<const double> weights) {
  check_batch(batch.size(), weights);
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Trajectory& traj = batch[i];
    const double w = batch_weight(weights, i, batch.size()) / traj.length();
    for (int t = 0; t < traj.length(); ++t) {
      const State s = state_at(traj, t);
      const Vector p = policy_probs(policy, s);
      total += w * (p.dot(reward.forward_all(s)) + alpha * entropy(p));
    }
  }
  return total;
}

// ---------------------------------------------------------------- weighted mle

Vector self_normalize(const Vector& rewards) {
  if (rewards.size() == 0) {
    throw Error(ErrorCode::empty_trajectory, "no rewards to normalize");
  }
  check_finite(rewards, "reward");
  const double total = rewards.sum();
  if (!(total > 0.0)) {
    throw Error(ErrorCode::numeric, "reward sum must be positive");
  }
  return rewards / total;
}

Vector token_weights(const RewardModel& reward, const SupervisedRecord& record) {
  if (record.target_tokens.empty()) {
    throw Error(ErrorCode::empty_trajectory, "supervised target is empty");
  }
  return self_normalize(reward_trajectory(reward, as_trajectory(record)));
}

namespace {

// -mean_batch sum_t w_t log pi(y_t | s_t) for per-record weights.
LossResult weighted_log_likelihood(const PolicyModel& policy,
                                   std::span<const SupervisedRecord> records,
                                   const std::function<Vector(const SupervisedRecord&)>& weights) {
  if (records.empty()) {
    throw Error(ErrorCode::shape, "empty record batch");
  }
  LossGraph graph;
  std::vector<Trajectory> targets;
  targets.reserve(records.size());
  for (const auto& record : records) {
    targets.push_back(as_trajectory(record));
  }
  const double scale = 1.0 / static_cast<double>(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Trajectory& y = targets[i];
    if (y.tokens.empty()) {
      throw Error(ErrorCode::empty_trajectory, "supervised target is empty");
    }
    const Vector w = weights(records[i]);
    for (int t = 0; t < y.length(); ++t) {
      const State s = state_at(y, t);
      const Vector logits = policy.logits(s);
      check_finite(logits, "logits");
      const TokenId target = y.tokens[static_cast<std::size_t>(t)];
      const Vector logp = log_softmax(logits);
      graph.value -= scale * w[t] * logp[target];
      // d(-w log p_y)/dl = w (p - e_y)
      Vector adj = scale * w[t] * logp.array().exp().matrix();
      adj[target] -= scale * w[t];
      graph.policy_terms.push_back({s, std::move(adj)});
    }
  }
  return {graph.value, backprop_scalar(policy, graph)};
}

}  // namespace

LossResult weighted_mle_loss(const PolicyModel& policy, const RewardModel& reward,
                             std::span<const SupervisedRecord> records) {
  return weighted_log_likelihood(
      policy, records, [&](const SupervisedRecord& r) { return token_weights(reward, r); });
}

LossResult vanilla_mle_loss(const PolicyModel& policy, std::span<const SupervisedRecord> records) {
  return weighted_log_likelihood(policy, records, [](const SupervisedRecord& r) {
    const auto n = static_cast<Eigen::Index>(r.target_tokens.size());
    return Vector(Vector::Constant(n, 1.0 / static_cast<double>(n)));
  });
}

// ---------------------------------------------------------------- sequence-level variants

double sequence_reward(const RewardModel& seq_reward, const Trajectory& traj) {
  if (traj.tokens.empty()) {
    throw Error(ErrorCode::empty_trajectory, "empty trajectory");
  }
  return seq_reward.forward(state_at(traj, traj.length() - 1), traj.tokens.back());
}

GradBuffer seq_reinforce_grad(const PolicyModel& policy, const RewardModel& seq_reward,
                              std::span<const Trajectory> batch, double alpha,
                              std::span<const double> weights, double baseline) {
  check_batch(batch.size(), weights);
  GradBuffer grad(policy.param_count());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Trajectory& traj = batch[i];
    const int T = traj.length();
    const double R = sequence_reward(seq_reward, traj) - baseline;
    const double w = batch_weight(weights, i, batch.size()) / T;
    for (int t = 0; t < T; ++t) {
      const State s = state_at(traj, t);
      const Vector p = policy_probs(policy, s);
      Vector adj = alpha * entropy_logit_gradient(p) - R * p;
      adj[traj.tokens[static_cast<std::size_t>(t)]] += R;
      policy.backward(s, Vector(w * adj), grad);
    }
  }
  return grad;
}

LossResult seq_weighted_mle_loss(const PolicyModel& policy, const RewardModel& seq_reward,
                                 std::span<const SupervisedRecord> records) {
  return weighted_log_likelihood(policy, records, [&](const SupervisedRecord& r) {
    const double R = sequence_reward(seq_reward, as_trajectory(r));
    return Vector(Vector::Constant(static_cast<Eigen::Index>(r.target_tokens.size()), R));
  });
}

GradBuffer seq_variant_grad(const PolicyModel& policy, const RewardModel& seq_reward,
                            TrainMode mode, std::span<const Trajectory> trajectories,
                            std::span<const SupervisedRecord> records, double alpha) {
  switch (mode) {
    case TrainMode::seq_reinforce:
      return seq_reinforce_grad(policy, seq_reward, trajectories, alpha);
    case TrainMode::seq_weighted_mle: {
      GradBuffer grad = seq_weighted_mle_loss(policy, seq_reward, records).grad;
      grad *= -1.0;
      return grad;
    }
    default:
      throw Error(ErrorCode::parameter, "seq_variant_grad needs a sequence-level mode");
  }
}

// ---------------------------------------------------------------- alternation

bool should_retrain(int iter, int m_lm, int m_re) {
  return 2L * iter <= m_lm && iter % m_re == 0;
}

std::vector<int> run_alternation(int m_lm, int m_re, bool retrain_enabled,
                                 const std::function<void(int)>& retrain,
                                 const std::function<void(int)>& policy_step_fn) {
  if (m_lm < 1 || m_re < 1) {
    throw Error(ErrorCode::parameter, "M_LM and M_re must be >= 1");
  }
  std::vector<int> retrained;
  for (int iter = 1; iter <= m_lm; ++iter) {
    if (retrain_enabled && should_retrain(iter, m_lm, m_re)) {
      retrain(iter);
      retrained.push_back(iter);
    }
    policy_step_fn(iter);
  }
  return retrained;
}

double sampled_metric(const PolicyModel& policy, const PreferenceSource& source, int samples,
                      Rng& rng) {
  std::uniform_int_distribution<int> pick_input(0, source.num_inputs() - 1);
  double total = 0.0;
  for (int i = 0; i < samples; ++i) {
    const Trajectory traj =
        sample_trajectory(policy, source.vocab(), pick_input(rng), source.horizon(), 1.0, rng);
    total += source.score(traj);
  }
  return total / samples;
}

double policy_step(PolicyModel& policy, Adam& optimizer, const RewardModel& reward,
                   const PreferenceSource& source, std::span<const SupervisedRecord> records,
                   const PolicyTrainConfig& cfg, Rng& rng, double& baseline) {
  GradBuffer descent;
  double loss = 0.0;
  if (needs_records(cfg.mode)) {
    if (records.empty()) {
      throw Error(ErrorCode::parameter, to_string(cfg.mode) + " needs supervised records");
    }
    std::uniform_int_distribution<std::size_t> pick(0, records.size() - 1);
    std::vector<SupervisedRecord> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int i = 0; i < cfg.batch_size; ++i) {
      batch.push_back(records[pick(rng)]);
    }
    LossResult result = cfg.mode == TrainMode::weighted_mle ? weighted_mle_loss(policy, reward, batch)
                        : cfg.mode == TrainMode::vanilla_mle
                            ? vanilla_mle_loss(policy, batch)
                            : seq_weighted_mle_loss(policy, reward, batch);
    loss = result.loss;
    descent = std::move(result.grad);
  } else {
    std::uniform_int_distribution<int> pick_input(0, source.num_inputs() - 1);
    std::vector<Trajectory> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int i = 0; i < cfg.batch_size; ++i) {
      batch.push_back(sample_trajectory(policy, source.vocab(), pick_input(rng), source.horizon(),
                                        cfg.temperature, rng));
    }
    const bool use_baseline = cfg.baseline && (cfg.mode == TrainMode::seq_reinforce ||
                                               cfg.estimator == Estimator::sampled);
    double mean_reward = 0.0;
    if (cfg.mode == TrainMode::reinforce) {
      descent = reinforce_entropy_grad(policy, reward, batch, cfg.alpha, cfg.estimator, {},
                                       use_baseline ? baseline : 0.0);
      loss = -reinforce_entropy_objective(policy, reward, batch, cfg.alpha);
      if (use_baseline) {
        for (const auto& traj : batch) {
          mean_reward += reward_trajectory(reward, traj).mean() / cfg.batch_size;
        }
      }
    } else {
      descent = seq_reinforce_grad(policy, reward, batch, cfg.alpha, {},
                                   use_baseline ? baseline : 0.0);
      for (const auto& traj : batch) {
        mean_reward += sequence_reward(reward, traj) / cfg.batch_size;
      }
      loss = -mean_reward;
    }
    if (use_baseline) {
      baseline = cfg.baseline_decay * baseline + (1.0 - cfg.baseline_decay) * mean_reward;
    }
    descent *= -1.0;
  }
  if (!std::isfinite(loss)) {
    throw Error(ErrorCode::numeric, "non-finite policy loss");
  }
  optimizer.step(policy.params(), descent);
  return loss;
}

AlternateResult alternate_train(PolicyModel policy, RewardModel reward,
                                const PreferenceSource& source, const RewardTrainConfig& rew_cfg,
                                const PolicyTrainConfig& pol_cfg,
                                std::span<const SupervisedRecord> records) {
  pol_cfg.validate();
  if (needs_records(pol_cfg.mode) && records.empty()) {
    throw Error(ErrorCode::parameter, to_string(pol_cfg.mode) + " needs supervised records");
  }
  RewardTrainConfig learner_cfg = rew_cfg;
  if (is_sequence_level(pol_cfg.mode)) {
    learner_cfg.agg = Aggregation::last();
  }
  const bool uses_reward = pol_cfg.mode != TrainMode::vanilla_mle;
  RewardLearner learner(std::move(reward), learner_cfg);

  AlternateResult out;
  if (uses_reward) {
    learner.config.max_steps = pol_cfg.m_rew_init.value_or(learner_cfg.max_steps);
    out.reward_history = train_reward(learner, policy, source);
    learner.config.max_steps = learner_cfg.max_steps;
  }

  Adam optimizer(policy.param_count(), pol_cfg.adam);
  Rng rng(pol_cfg.seed);
  double baseline = 0.0;
  const bool enumerable =
      oracle::sequence_space_size(source.vocab(), source.horizon()) <=
      static_cast<double>(pol_cfg.eval_budget);
  bool retrained_now = false;

  auto retrain = [&](int) {
    auto rows = train_reward(learner, policy, source);
    out.reward_history.insert(out.reward_history.end(), rows.begin(), rows.end());
    retrained_now = true;
  };
  auto step = [&](int iter) {
    PolicyHistoryRow row;
    row.iter = iter;
    row.mode = pol_cfg.mode;
    row.retrain = retrained_now;
    retrained_now = false;
    row.policy_loss =
        policy_step(policy, optimizer, learner.model, source, records, pol_cfg, rng, baseline);
    row.exact_metric = kNaN;
    row.sampled_metric = kNaN;
    if (iter % pol_cfg.eval_interval == 0 || iter == pol_cfg.m_lm) {
      if (enumerable) {
        row.exact_metric = oracle::exact_expected_metric(
            policy, source, oracle::EnumerationBudget{pol_cfg.eval_budget});
      }
      Rng eval_rng(pol_cfg.seed ^ 0x5eedf00dULL);
      row.sampled_metric = sampled_metric(policy, source, pol_cfg.eval_samples, eval_rng);
    }
    out.history.push_back(row);
  };
  out.retrain_iters =
      run_alternation(pol_cfg.m_lm, pol_cfg.m_re, pol_cfg.retrain && uses_reward, retrain, step);
  out.policy = std::move(policy);
  out.reward = std::move(learner.model);
  return out;
}

}  // namespace tokenguide
