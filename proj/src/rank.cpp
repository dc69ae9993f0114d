#include "tokenguide/rank.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tokenguide {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct GroupForward {
  std::vector<Vector> reward_grads;  // d e_k / d r^k_t
  Vector evals;
};

GroupForward forward_group(const RewardModel& reward, const PreferenceGroup& group,
                           const Aggregation& agg) {
  validate_group(group);
  const double C = mean_length(group);
  GroupForward out;
  out.evals.resize(group.size());
  for (int k = 0; k < group.size(); ++k) {
    const Vector r = reward_trajectory(reward, group.trajectories[static_cast<std::size_t>(k)]);
    auto result = aggregate(r, C, agg);
    out.evals[k] = result.value;
    out.reward_grads.push_back(std::move(result.grad));
  }
  return out;
}

// Pushes adjoint d loss / d e_k through the aggregation onto each reward output.
void add_reward_terms(LossGraph& graph, const PreferenceGroup& group, const GroupForward& fwd,
                      const Vector& eval_adjoint) {
  for (int k = 0; k < group.size(); ++k) {
    const Trajectory& traj = group.trajectories[static_cast<std::size_t>(k)];
    const Vector& de_dr = fwd.reward_grads[static_cast<std::size_t>(k)];
    for (int t = 0; t < traj.length(); ++t) {
      const double adjoint = eval_adjoint[k] * de_dr[t];
      if (adjoint != 0.0) {
        graph.reward_terms.push_back(
            {state_at(traj, t), traj.tokens[static_cast<std::size_t>(t)], adjoint});
      }
    }
  }
}

}  // namespace

Vector group_evaluations(const RewardModel& reward, const PreferenceGroup& group,
                         const Aggregation& agg) {
  return forward_group(reward, group, agg).evals;
}

LossResult listwise_loss(const RewardModel& reward, const PreferenceGroup& group,
                         const Aggregation& agg) {
  const GroupForward fwd = forward_group(reward, group, agg);
  const auto ll = pl_log_likelihood_with_grad(fwd.evals, group.ordering);
  LossGraph graph;
  graph.value = -ll.value;
  add_reward_terms(graph, group, fwd, Vector(-ll.grad));
  return {graph.value, backprop_scalar(reward, graph)};
}

LossResult pairwise_loss(const RewardModel& reward, const Trajectory& preferred,
                         const Trajectory& other) {
  if (preferred.input_id != other.input_id) {
    throw Error(ErrorCode::shape, "pairwise comparison needs a shared input");
  }
  const Vector r_pref = reward_trajectory(reward, preferred);
  const Vector r_other = reward_trajectory(reward, other);
  Eigen::Vector2d sums(r_pref.sum(), r_other.sum());
  if (!sums.allFinite()) {
    throw Error(ErrorCode::numeric, "non-finite reward sum");
  }
  LossGraph graph;
  graph.value = log_sum_exp(sums) - sums[0];
  const Eigen::Vector2d p = softmax(sums);
  const double adj_pref = p[0] - 1.0;
  const double adj_other = p[1];
  for (int t = 0; t < preferred.length(); ++t) {
    graph.reward_terms.push_back(
        {state_at(preferred, t), preferred.tokens[static_cast<std::size_t>(t)], adj_pref});
  }
  for (int t = 0; t < other.length(); ++t) {
    graph.reward_terms.push_back(
        {state_at(other, t), other.tokens[static_cast<std::size_t>(t)], adj_other});
  }
  return {graph.value, backprop_scalar(reward, graph)};
}

LossResult all_pairs_loss(const RewardModel& reward, const PreferenceGroup& group,
                          const Aggregation& agg) {
  const GroupForward fwd = forward_group(reward, group, agg);
  const int K = group.size();
  Vector eval_adjoint = Vector::Zero(K);
  double loss = 0.0;
  for (int p = 0; p < K; ++p) {
    for (int q = p + 1; q < K; ++q) {
      const int i = group.ordering[static_cast<std::size_t>(p)];
      const int j = group.ordering[static_cast<std::size_t>(q)];
      const Eigen::Vector2d pair(fwd.evals[i], fwd.evals[j]);
      loss += log_sum_exp(pair) - pair[0];
      const Eigen::Vector2d s = softmax(pair);
      eval_adjoint[i] += s[0] - 1.0;
      eval_adjoint[j] += s[1];
    }
  }
  LossGraph graph;
  graph.value = loss;
  add_reward_terms(graph, group, fwd, eval_adjoint);
  return {graph.value, backprop_scalar(reward, graph)};
}

double rank_accuracy(const RewardModel& reward, std::span<const PreferenceGroup> groups,
                     const Aggregation& agg) {
  double agree = 0.0;
  long pairs = 0;
  for (const auto& group : groups) {
    const Vector evals = group_evaluations(reward, group, agg);
    const int K = group.size();
    for (int p = 0; p < K; ++p) {
      for (int q = p + 1; q < K; ++q) {
        const int i = group.ordering[static_cast<std::size_t>(p)];
        const int j = group.ordering[static_cast<std::size_t>(q)];
        if (!group.scores.empty() &&
            group.scores[static_cast<std::size_t>(i)] == group.scores[static_cast<std::size_t>(j)]) {
          continue;
        }
        ++pairs;
        if (evals[i] > evals[j]) {
          agree += 1.0;
        } else if (evals[i] == evals[j]) {
          agree += 0.5;
        }
      }
    }
  }
  return pairs > 0 ? agree / static_cast<double>(pairs) : 0.5;
}

// ---------------------------------------------------------------- training

void RewardTrainConfig::validate() const {
  if (k < 2) {
    throw Error(ErrorCode::parameter, "reward training needs K >= 2");
  }
  if (max_steps < 1) {
    throw Error(ErrorCode::parameter, "M_rew must be >= 1");
  }
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw Error(ErrorCode::parameter, "holdout fraction must lie in (0, 1)");
  }
  if (early_stop_patience < 0 || eval_interval < 1 || holdout_max < 1 || group_batch < 1 ||
      !(temperature > 0.0)) {
    throw Error(ErrorCode::parameter, "invalid reward training settings");
  }
  agg.validate();
}

RewardLearner::RewardLearner(RewardModel model_, const RewardTrainConfig& config_)
    : model(std::move(model_)),
      optimizer(model.param_count(), config_.adam),
      rng(config_.seed),
      config(config_) {
  config.validate();
}

PreferenceGroup sample_group(const PolicyModel& policy, const PreferenceSource& source, int k,
                             double temperature, Rng& rng) {
  std::uniform_int_distribution<int> pick_input(0, source.num_inputs() - 1);
  const int input = pick_input(rng);
  std::vector<Trajectory> trajectories;
  std::vector<double> scores;
  for (int i = 0; i < k; ++i) {
    trajectories.push_back(
        sample_trajectory(policy, source.vocab(), input, source.horizon(), temperature, rng));
    scores.push_back(source.score(trajectories.back(), input));
    if (!std::isfinite(scores.back())) {
      throw Error(ErrorCode::numeric, "preference source returned a non-finite score");
    }
  }
  return make_group(input, std::move(trajectories), scores, input);
}

namespace {

LossResult group_loss(const RewardModel& reward, const PreferenceGroup& group,
                      const RewardTrainConfig& cfg) {
  return cfg.loss == RewardTrainConfig::Loss::listwise ? listwise_loss(reward, group, cfg.agg)
                                                       : all_pairs_loss(reward, group, cfg.agg);
}

double mean_loss(const RewardModel& reward, std::span<const PreferenceGroup> groups,
                 const RewardTrainConfig& cfg) {
  double total = 0.0;
  for (const auto& group : groups) {
    total += group_loss(reward, group, cfg).loss;
  }
  return total / static_cast<double>(groups.size());
}

}  // namespace

std::vector<RewardHistoryRow> train_reward(RewardLearner& learner, const PolicyModel& policy,
                                           const PreferenceSource& source) {
  const RewardTrainConfig& cfg = learner.config;
  std::vector<RewardHistoryRow> history;
  if (cfg.early_stop_patience == 0) {
    return history;
  }

  const double ratio = cfg.holdout_fraction / (1.0 - cfg.holdout_fraction);
  const int holdout_size = std::clamp(
      static_cast<int>(std::ceil(ratio * cfg.max_steps * cfg.group_batch)), 1, cfg.holdout_max);
  std::vector<PreferenceGroup> holdout;
  holdout.reserve(static_cast<std::size_t>(holdout_size));
  for (int i = 0; i < holdout_size; ++i) {
    holdout.push_back(sample_group(policy, source, cfg.k, cfg.temperature, learner.rng));
  }

  double best = std::numeric_limits<double>::infinity();
  int stalled = 0;
  for (int step = 1; step <= cfg.max_steps; ++step) {
    GradBuffer grad(learner.model.param_count());
    double loss = 0.0;
    for (int b = 0; b < cfg.group_batch; ++b) {
      const PreferenceGroup group =
          sample_group(policy, source, cfg.k, cfg.temperature, learner.rng);
      LossResult result = group_loss(learner.model, group, cfg);
      if (!std::isfinite(result.loss)) {
        throw Error(ErrorCode::numeric, "non-finite reward loss");
      }
      loss += result.loss;
      grad += result.grad;
    }
    loss /= cfg.group_batch;
    grad *= 1.0 / cfg.group_batch;
    learner.optimizer.step(learner.model.params(), grad);
    ++learner.steps_done;

    RewardHistoryRow row{learner.steps_done, loss, kNaN, kNaN};
    const bool evaluate = step % cfg.eval_interval == 0 || step == cfg.max_steps;
    if (evaluate) {
      row.holdout_loss = mean_loss(learner.model, holdout, cfg);
      row.rank_accuracy = rank_accuracy(learner.model, holdout, cfg.agg);
    }
    history.push_back(row);
    if (evaluate) {
      if (row.holdout_loss < best) {
        best = row.holdout_loss;
        stalled = 0;
      } else if (++stalled >= cfg.early_stop_patience) {
        break;
      }
    }
  }
  return history;
}

RewardTrainResult train_reward(RewardModel reward, const PolicyModel& policy,
                               const PreferenceSource& source, const RewardTrainConfig& cfg) {
  RewardLearner learner(std::move(reward), cfg);
  auto history = train_reward(learner, policy, source);
  return {std::move(learner.model), std::move(history)};
}

}  // namespace tokenguide
