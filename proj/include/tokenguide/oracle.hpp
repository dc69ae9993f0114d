#pragma once

#include "tokenguide/core.hpp"
#include "tokenguide/models.hpp"
#include "tokenguide/tasks.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace tokenguide::oracle {

struct EnumerationBudget {
  std::uint64_t max_states = 100000;
};

/// |V|^T, the size the budget is checked against.
double sequence_space_size(const Vocab& vocab, int horizon);

/// Visits every sequence of length <= horizon; an eos token ends a sequence.
/// Order is lexicographic by token id.
void for_each_token_sequence(const Vocab& vocab, int horizon, EnumerationBudget budget,
                             const std::function<void(const std::vector<TokenId>&)>& visit);

std::vector<std::vector<TokenId>> enumerate_sequences(const Vocab& vocab, int horizon,
                                                      EnumerationBudget budget);

/// Visits every complete sequence for `input_id` with its probability under the policy.
void for_each_sequence(const PolicyModel& policy, const Vocab& vocab, int input_id, int horizon,
                       EnumerationBudget budget,
                       const std::function<void(const Trajectory&, double)>& visit);

/// Total probability of all enumerated sequences for one input (should be 1).
double sequence_probability_mass(const PolicyModel& policy, const Vocab& vocab, int input_id,
                                 int horizon, EnumerationBudget budget);

/// E_tau[score(tau)], averaged uniformly over the task's inputs.
double exact_expected_metric(const PolicyModel& policy, const PreferenceSource& task,
                             EnumerationBudget budget = {});

/// Same, with the source's score replaced by `score`.
double exact_expected_value(const PolicyModel& policy, const Vocab& vocab, int horizon,
                            int num_inputs, EnumerationBudget budget,
                            const std::function<double(const Trajectory&)>& score);

/// Mean over inputs of the best attainable score.
double optimal_expected_metric(const PreferenceSource& task, EnumerationBudget budget = {});

struct WeightedState {
  int input_id = 0;
  std::vector<TokenId> prefix;
  double weight = 0.0;

  State state() const { return {input_id, prefix}; }
};

/// Every reachable non-terminal state with weight E_tau[1{s in tau} / T_tau],
/// averaged over inputs: the state distribution behind the per-step objective.
std::vector<WeightedState> on_policy_state_weights(const PolicyModel& policy, const Vocab& vocab,
                                                   int horizon, int num_inputs,
                                                   EnumerationBudget budget);

/// sum_s w_s [ sum_a pi(a|s) r(s,a) + alpha H(pi(.|s)) ] with the states and
/// weights held fixed; its gradient is the expected per-step policy gradient.
double frozen_state_objective(const PolicyModel& policy, const RewardModel& reward, double alpha,
                              std::span<const WeightedState> states);

/// Expected per-step REINFORCE+entropy gradient by full enumeration.
Vector exact_policy_gradient(const PolicyModel& policy, const RewardModel& reward, double alpha,
                             const Vocab& vocab, int horizon, int num_inputs,
                             EnumerationBudget budget = {});

/// E_tau[R(tau) / T_tau] for the sequence-level reward R(tau) = r(s_{T-1}, a_{T-1}).
double exact_sequence_objective(const PolicyModel& policy, const RewardModel& seq_reward,
                                const Vocab& vocab, int horizon, int num_inputs,
                                EnumerationBudget budget = {});

/// E_tau[ R(tau)/T sum_t grad log pi(a_t|s_t) + alpha/T sum_t grad H(s_t) ].
Vector exact_sequence_gradient(const PolicyModel& policy, const RewardModel& seq_reward,
                               double alpha, const Vocab& vocab, int horizon, int num_inputs,
                               EnumerationBudget budget = {});

/// Expectation of the sparse-reward + KL-penalty REINFORCE estimator.
Vector exact_kl_reinforce_gradient(const PolicyModel& policy, const KlPrior& prior,
                                   const PreferenceSource& task, const KLBaselineConfig& cfg,
                                   EnumerationBudget budget = {});

/// All K! orderings with their Plackett-Luce probabilities (K <= 6).
std::vector<std::pair<std::vector<int>, double>> enumerate_permutation_probs(
    const Vector& evals);

/// Central differences, one coordinate at a time.
Vector finite_diff_grad(const std::function<double(const Vector&)>& loss, const Vector& params,
                        double h = 1e-5);

struct GradientComparison {
  bool ok = true;
  Eigen::Index worst_index = -1;
  double worst_relative_error = 0.0;
  double worst_absolute_error = 0.0;
};

/// Per coordinate: pass if |a - n| <= atol or |a - n| / max(|a|, |n|) <= rtol.
GradientComparison compare_gradients(const Vector& analytic, const Vector& numeric,
                                     double rtol = 1e-4, double atol = 1e-8);

}  // namespace tokenguide::oracle
