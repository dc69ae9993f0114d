#pragma once

#include "tokenguide/core.hpp"
#include "tokenguide/models.hpp"
#include "tokenguide/oracle.hpp"
#include "tokenguide/rank.hpp"
#include "tokenguide/tasks.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tokenguide {

enum class TrainMode { reinforce, weighted_mle, vanilla_mle, seq_reinforce, seq_weighted_mle };

TrainMode parse_train_mode(std::string_view name);
std::string to_string(TrainMode mode);
bool needs_records(TrainMode mode);
bool is_sequence_level(TrainMode mode);

/// How the inner expectation over a_t ~ pi(.|s_t) is realized.
enum class Estimator { exact, sampled };

struct PolicyTrainConfig {
  int m_lm = 500;                 // M_LM
  int m_re = 100;                 // M_re
  std::optional<int> m_rew_init;  // initial reward-training steps; default M_rew
  double alpha = 0.125;
  TrainMode mode = TrainMode::reinforce;
  Estimator estimator = Estimator::exact;
  bool retrain = true;
  bool baseline = false;  // moving-average baseline for sampled/sequence REINFORCE
  double baseline_decay = 0.9;
  int batch_size = 16;
  AdamConfig adam{};
  double temperature = 1.0;
  int eval_interval = 50;
  int eval_samples = 200;
  std::uint64_t eval_budget = 100000;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Ascent direction of the per-step objective
///   sum_tau w_tau (1/T) sum_t [ E_{a~pi(.|s_t)} r(s_t, a) + alpha H(pi(.|s_t)) ]
/// with the visited states held fixed. `weights` defaults to 1/N per trajectory.
/// In sampled mode the inner expectation is replaced by the taken token a_t and
/// `baseline` is subtracted from its reward.
GradBuffer reinforce_entropy_grad(const PolicyModel& policy, const RewardModel& reward,
                                  std::span<const Trajectory> batch, double alpha,
                                  Estimator estimator = Estimator::exact,
                                  std::span<const double> weights = {}, double baseline = 0.0);

/// The objective whose gradient reinforce_entropy_grad computes in exact mode.
double reinforce_entropy_objective(const PolicyModel& policy, const RewardModel& reward,
                                   std::span<const Trajectory> batch, double alpha,
                                   std::span<const double> weights = {});

/// r / sum(r); the sum must be positive.
Vector self_normalize(const Vector& rewards);

/// w_t = r(s_t, y_t) / sum_t' r(s_t', y_t').
Vector token_weights(const RewardModel& reward, const SupervisedRecord& record);

/// -mean_batch sum_t w_t log pi(y_t | s_t); the reward is a constant here.
LossResult weighted_mle_loss(const PolicyModel& policy, const RewardModel& reward,
                             std::span<const SupervisedRecord> records);

/// Same with uniform weights 1/|y|.
LossResult vanilla_mle_loss(const PolicyModel& policy, std::span<const SupervisedRecord> records);

/// Sequence-level reward: the reward model read at the final state only.
double sequence_reward(const RewardModel& seq_reward, const Trajectory& traj);

/// Ascent direction of mean_tau [ R(tau)/T sum_t grad log pi(a_t|s_t) + alpha/T sum_t grad H ].
GradBuffer seq_reinforce_grad(const PolicyModel& policy, const RewardModel& seq_reward,
                              std::span<const Trajectory> batch, double alpha,
                              std::span<const double> weights = {}, double baseline = 0.0);

/// -mean_batch R(y) sum_t log pi(y_t | s_t), no self-normalization.
LossResult seq_weighted_mle_loss(const PolicyModel& policy, const RewardModel& seq_reward,
                                 std::span<const SupervisedRecord> records);

/// Dispatch for the two sequence-level modes; returns an ascent direction.
GradBuffer seq_variant_grad(const PolicyModel& policy, const RewardModel& seq_reward,
                            TrainMode mode, std::span<const Trajectory> trajectories,
                            std::span<const SupervisedRecord> records, double alpha);

/// Retrain condition: iter <= M_LM / 2 and iter % M_re == 0.
bool should_retrain(int iter, int m_lm, int m_re);

/// Drives the alternation schedule; the reward phase and policy phase are callbacks.
/// Returns the iterations at which the reward was retrained.
std::vector<int> run_alternation(int m_lm, int m_re, bool retrain_enabled,
                                 const std::function<void(int)>& retrain,
                                 const std::function<void(int)>& policy_step);

struct PolicyHistoryRow {
  int iter = 0;
  TrainMode mode = TrainMode::reinforce;
  double policy_loss = 0.0;
  double exact_metric = 0.0;    // NaN when not evaluated or not enumerable
  double sampled_metric = 0.0;  // NaN when not evaluated
  bool retrain = false;
};

struct AlternateResult {
  PolicyModel policy;
  RewardModel reward;
  std::vector<PolicyHistoryRow> history;
  std::vector<RewardHistoryRow> reward_history;
  std::vector<int> retrain_iters;
};

/// One policy update with the current guidance; returns the reported loss.
double policy_step(PolicyModel& policy, Adam& optimizer, const RewardModel& reward,
                   const PreferenceSource& source, std::span<const SupervisedRecord> records,
                   const PolicyTrainConfig& cfg, Rng& rng, double& baseline);

/// Fits the reward online, then alternates policy
/// steps with warm-started reward retraining during the first half.
AlternateResult alternate_train(PolicyModel policy, RewardModel reward,
                                const PreferenceSource& source, const RewardTrainConfig& rew_cfg,
                                const PolicyTrainConfig& pol_cfg,
                                std::span<const SupervisedRecord> records = {});

/// Mean source score over `samples` trajectories drawn with `rng`.
double sampled_metric(const PolicyModel& policy, const PreferenceSource& source, int samples,
                      Rng& rng);

}  // namespace tokenguide
