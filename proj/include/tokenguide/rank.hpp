#pragma once

#include "tokenguide/aggregate.hpp"
#include "tokenguide/core.hpp"
#include "tokenguide/models.hpp"
#include "tokenguide/tasks.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace tokenguide {

template <typename Scalar>
struct LogLikelihood {
  Scalar value;
  VectorX<Scalar> grad;  // d value / d evals
};

/// Plackett-Luce log-probability of `ordering` (position 0 = most preferred)
/// under item scores `evals`, one shifted log-sum-exp per selection stage.
template <typename Derived>
LogLikelihood<typename Derived::Scalar> pl_log_likelihood_with_grad(
    const Eigen::MatrixBase<Derived>& evals, std::span<const int> ordering) {
  using Scalar = typename Derived::Scalar;
  const auto K = static_cast<Eigen::Index>(ordering.size());
  if (K < 2 || evals.size() != K) {
    throw Error(ErrorCode::shape, "Plackett-Luce needs K >= 2 evaluations matching the ordering");
  }
  if (!is_permutation_of_range(ordering)) {
    throw Error(ErrorCode::shape, "ordering is not a permutation");
  }
  if (!evals.allFinite()) {
    throw Error(ErrorCode::numeric, "non-finite evaluations");
  }
  // Evaluations arranged from most to least preferred.
  VectorX<Scalar> ranked(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    ranked[k] = evals[ordering[static_cast<std::size_t>(k)]];
  }
  LogLikelihood<Scalar> out{Scalar(0), VectorX<Scalar>::Zero(K)};
  VectorX<Scalar> ranked_grad = VectorX<Scalar>::Zero(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    const auto rest = ranked.tail(K - k);
    out.value += ranked[k] - log_sum_exp(rest);
    ranked_grad[k] += Scalar(1);
    ranked_grad.tail(K - k) -= softmax(rest);
  }
  for (Eigen::Index k = 0; k < K; ++k) {
    out.grad[ordering[static_cast<std::size_t>(k)]] = ranked_grad[k];
  }
  return out;
}

template <typename Derived>
typename Derived::Scalar pl_log_likelihood(const Eigen::MatrixBase<Derived>& evals,
                                           std::span<const int> ordering) {
  return pl_log_likelihood_with_grad(evals, ordering).value;
}

struct LossResult {
  double loss = 0.0;
  GradBuffer grad;  // d loss / d parameters
};

/// Sequence evaluations e(tau^k) of every trajectory in the group.
Vector group_evaluations(const RewardModel& reward, const PreferenceGroup& group,
                         const Aggregation& agg);

/// -log P(ordering | e_phi) with the gradient wrt phi.
LossResult listwise_loss(const RewardModel& reward, const PreferenceGroup& group,
                         const Aggregation& agg);

/// Bradley-Terry loss on summed rewards, `preferred` ranked above `other`.
LossResult pairwise_loss(const RewardModel& reward, const Trajectory& preferred,
                         const Trajectory& other);

/// Bradley-Terry over every ordered pair of the group on aggregated evaluations.
LossResult all_pairs_loss(const RewardModel& reward, const PreferenceGroup& group,
                          const Aggregation& agg);

/// Fraction of within-group pairs whose evaluations agree with the ordering.
/// Ties in evaluation count 1/2; pairs the source itself scored equally are skipped.
double rank_accuracy(const RewardModel& reward, std::span<const PreferenceGroup> groups,
                     const Aggregation& agg);

struct RewardTrainConfig {
  enum class Loss { listwise, pairwise };

  int max_steps = 200;  // M_rew
  int k = 5;
  Aggregation agg = Aggregation::soft_max(2.0);
  Loss loss = Loss::listwise;
  AdamConfig adam{};
  int early_stop_patience = 5;
  int eval_interval = 20;
  double holdout_fraction = 0.2;
  int holdout_max = 64;
  int group_batch = 1;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RewardHistoryRow {
  long step = 0;
  double train_loss = 0.0;
  double holdout_loss = 0.0;   // NaN when not evaluated at this step
  double rank_accuracy = 0.0;  // NaN when not evaluated at this step
};

/// Reward model together with the optimizer and sampling state that persist
/// across retraining rounds.
struct RewardLearner {
  RewardModel model;
  Adam optimizer;
  Rng rng;
  RewardTrainConfig config;
  long steps_done = 0;

  RewardLearner(RewardModel model, const RewardTrainConfig& config);
};

/// K trajectories from the policy for one input, ordered by the source.
PreferenceGroup sample_group(const PolicyModel& policy, const PreferenceSource& source, int k,
                             double temperature, Rng& rng);

/// One round of online reward learning (up to M_rew steps, early stopping on a
/// fresh held-out set of groups). Warm-starts from the learner's state.
std::vector<RewardHistoryRow> train_reward(RewardLearner& learner, const PolicyModel& policy,
                                           const PreferenceSource& source);

struct RewardTrainResult {
  RewardModel model;
  std::vector<RewardHistoryRow> history;
};

RewardTrainResult train_reward(RewardModel reward, const PolicyModel& policy,
                               const PreferenceSource& source, const RewardTrainConfig& cfg);

}  // namespace tokenguide
