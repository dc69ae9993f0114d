#include "tokenguide/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tokenguide::oracle {

namespace {

void check_budget(const Vocab& vocab, int horizon, EnumerationBudget budget) {
  if (horizon < 1) {
    throw Error(ErrorCode::parameter, "horizon must be >= 1");
  }
  if (budget.max_states < 1) {
    throw Error(ErrorCode::parameter, "enumeration budget must be positive");
  }
  if (sequence_space_size(vocab, horizon) > static_cast<double>(budget.max_states)) {
    throw Error(ErrorCode::budget_exceeded,
                std::to_string(vocab.size) + "^" + std::to_string(horizon) +
                    " sequences exceed the budget of " + std::to_string(budget.max_states));
  }
}

// d/dl of (sum_a softmax(l)_a f_a), written with the explicit softmax Jacobian.
Vector softmax_jacobian_times(const Vector& p, const Vector& f) {
  const Matrix jacobian = Matrix(p.asDiagonal()) - p * p.transpose();
  return jacobian * f;
}

Vector log_of(const Vector& p) {
  Vector out(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    out[i] = p[i] > 0.0 ? std::log(p[i]) : 0.0;
  }
  return out;
}

}  // namespace

double sequence_space_size(const Vocab& vocab, int horizon) {
  return std::pow(static_cast<double>(vocab.size), horizon);
}

void for_each_token_sequence(const Vocab& vocab, int horizon, EnumerationBudget budget,
                             const std::function<void(const std::vector<TokenId>&)>& visit) {
  check_budget(vocab, horizon, budget);
  std::vector<TokenId> seq;
  seq.reserve(static_cast<std::size_t>(horizon));
  std::function<void()> descend = [&]() {
    for (TokenId a = 0; a < vocab.size; ++a) {
      seq.push_back(a);
      if (vocab.is_eos(a) || static_cast<int>(seq.size()) == horizon) {
        visit(seq);
      } else {
        descend();
      }
      seq.pop_back();
    }
  };
  descend();
}

std::vector<std::vector<TokenId>> enumerate_sequences(const Vocab& vocab, int horizon,
                                                      EnumerationBudget budget) {
  std::vector<std::vector<TokenId>> out;
  for_each_token_sequence(vocab, horizon, budget,
                          [&](const std::vector<TokenId>& seq) { out.push_back(seq); });
  return out;
}

void for_each_sequence(const PolicyModel& policy, const Vocab& vocab, int input_id, int horizon,
                       EnumerationBudget budget,
                       const std::function<void(const Trajectory&, double)>& visit) {
  check_budget(vocab, horizon, budget);
  Trajectory traj;
  traj.input_id = input_id;
  std::function<void(double)> descend = [&](double prob) {
    const Vector p = policy_probs(policy, state_at(traj, traj.length()));
    for (TokenId a = 0; a < vocab.size; ++a) {
      if (p[a] <= 0.0) {
        continue;
      }
      traj.tokens.push_back(a);
      if (vocab.is_eos(a) || traj.length() == horizon) {
        visit(traj, prob * p[a]);
      } else {
        descend(prob * p[a]);
      }
      traj.tokens.pop_back();
    }
  };
  descend(1.0);
}

double sequence_probability_mass(const PolicyModel& policy, const Vocab& vocab, int input_id,
                                 int horizon, EnumerationBudget budget) {
  double mass = 0.0;
  for_each_sequence(policy, vocab, input_id, horizon, budget,
                    [&](const Trajectory&, double prob) { mass += prob; });
  return mass;
}

double exact_expected_value(const PolicyModel& policy, const Vocab& vocab, int horizon,
                            int num_inputs, EnumerationBudget budget,
                            const std::function<double(const Trajectory&)>& score) {
  double total = 0.0;
  for (int x = 0; x < num_inputs; ++x) {
    for_each_sequence(policy, vocab, x, horizon, budget,
                      [&](const Trajectory& traj, double prob) { total += prob * score(traj); });
  }
  return total / num_inputs;
}

double exact_expected_metric(const PolicyModel& policy, const PreferenceSource& task,
                             EnumerationBudget budget) {
  return exact_expected_value(policy, task.vocab(), task.horizon(), task.num_inputs(), budget,
                              [&](const Trajectory& traj) { return task.score(traj); });
}

double optimal_expected_metric(const PreferenceSource& task, EnumerationBudget budget) {
  double total = 0.0;
  Trajectory traj;
  for (int x = 0; x < task.num_inputs(); ++x) {
    double best = -std::numeric_limits<double>::infinity();
    traj.input_id = x;
    for_each_token_sequence(task.vocab(), task.horizon(), budget,
                            [&](const std::vector<TokenId>& seq) {
                              traj.tokens = seq;
                              best = std::max(best, task.score(traj));
                            });
    total += best;
  }
  return total / task.num_inputs();
}

std::vector<WeightedState> on_policy_state_weights(const PolicyModel& policy, const Vocab& vocab,
                                                   int horizon, int num_inputs,
                                                   EnumerationBudget budget) {
  check_budget(vocab, horizon, budget);
  std::vector<WeightedState> states;
  for (int x = 0; x < num_inputs; ++x) {
    std::vector<TokenId> prefix;
    // Returns E[1 / T | prefix reached]; records the state before returning.
    std::function<double(double)> descend = [&](double reach) -> double {
      const Vector p = policy_probs(policy, State{x, prefix});
      const std::size_t slot = states.size();
      states.push_back({x, prefix, 0.0});
      double inv_len = 0.0;
      for (TokenId a = 0; a < vocab.size; ++a) {
        if (p[a] <= 0.0) {
          continue;
        }
        const int len = static_cast<int>(prefix.size()) + 1;
        if (vocab.is_eos(a) || len == horizon) {
          inv_len += p[a] / len;
        } else {
          prefix.push_back(a);
          inv_len += p[a] * descend(reach * p[a]);
          prefix.pop_back();
        }
      }
      states[slot].weight = reach * inv_len / num_inputs;
      return inv_len;
    };
    descend(1.0);
  }
  return states;
}

double frozen_state_objective(const PolicyModel& policy, const RewardModel& reward, double alpha,
                              std::span<const WeightedState> states) {
  double total = 0.0;
  for (const auto& ws : states) {
    const Vector p = policy_probs(policy, ws.state());
    const Vector r = reward.forward_all(ws.state());
    double h = 0.0;
    for (Eigen::Index a = 0; a < p.size(); ++a) {
      if (p[a] > 0.0) {
        h -= p[a] * std::log(p[a]);
      }
    }
    total += ws.weight * (p.dot(r) + alpha * h);
  }
  return total;
}

Vector exact_policy_gradient(const PolicyModel& policy, const RewardModel& reward, double alpha,
                             const Vocab& vocab, int horizon, int num_inputs,
                             EnumerationBudget budget) {
  const auto states = on_policy_state_weights(policy, vocab, horizon, num_inputs, budget);
  GradBuffer grad(policy.param_count());
  for (const auto& ws : states) {
    const Vector p = policy_probs(policy, ws.state());
    const Vector r = reward.forward_all(ws.state());
    // H = -sum p log p; the "-1" of d(-p log p) is annihilated by the Jacobian.
    const Vector f = r - alpha * log_of(p);
    policy.backward(ws.state(), Vector(ws.weight * softmax_jacobian_times(p, f)), grad);
  }
  return grad.values;
}

double exact_sequence_objective(const PolicyModel& policy, const RewardModel& seq_reward,
                                const Vocab& vocab, int horizon, int num_inputs,
                                EnumerationBudget budget) {
  return exact_expected_value(policy, vocab, horizon, num_inputs, budget,
                              [&](const Trajectory& traj) {
                                const int last = traj.length() - 1;
                                return seq_reward.forward(state_at(traj, last),
                                                          traj.tokens.back()) /
                                       traj.length();
                              });
}

Vector exact_sequence_gradient(const PolicyModel& policy, const RewardModel& seq_reward,
                               double alpha, const Vocab& vocab, int horizon, int num_inputs,
                               EnumerationBudget budget) {
  GradBuffer grad(policy.param_count());
  for (int x = 0; x < num_inputs; ++x) {
    for_each_sequence(policy, vocab, x, horizon, budget, [&](const Trajectory& traj, double prob) {
      const int T = traj.length();
      const double R = seq_reward.forward(state_at(traj, T - 1), traj.tokens.back());
      const double w = prob / (T * static_cast<double>(num_inputs));
      for (int t = 0; t < T; ++t) {
        const State s = state_at(traj, t);
        const Vector p = policy_probs(policy, s);
        Vector score_fn = -p;
        score_fn[traj.tokens[static_cast<std::size_t>(t)]] += 1.0;
        const Vector entropy_grad = softmax_jacobian_times(p, Vector(-log_of(p)));
        policy.backward(s, Vector(w * (R * score_fn + alpha * entropy_grad)), grad);
      }
    });
  }
  return grad.values;
}

Vector exact_kl_reinforce_gradient(const PolicyModel& policy, const KlPrior& prior,
                                   const PreferenceSource& task, const KLBaselineConfig& cfg,
                                   EnumerationBudget budget) {
  cfg.validate();
  const Vocab& vocab = task.vocab();
  GradBuffer grad(policy.param_count());
  for (int x = 0; x < task.num_inputs(); ++x) {
    for_each_sequence(
        policy, vocab, x, task.horizon(), budget, [&](const Trajectory& traj, double prob) {
          const int T = traj.length();
          std::vector<double> reward(static_cast<std::size_t>(T));
          for (int t = 0; t < T; ++t) {
            const State s = state_at(traj, t);
            reward[static_cast<std::size_t>(t)] =
                -cfg.c * kl_divergence(policy_probs(policy, s), prior.probs(s, vocab.size));
          }
          reward.back() += task.score(traj);
          for (int t = 0; t < T; ++t) {
            double ret = 0.0;
            for (int u = t; u < T; ++u) {
              ret += std::pow(cfg.gamma, u - t) * reward[static_cast<std::size_t>(u)];
            }
            const State s = state_at(traj, t);
            Vector score_fn = -policy_probs(policy, s);
            score_fn[traj.tokens[static_cast<std::size_t>(t)]] += 1.0;
            policy.backward(s, Vector(prob / task.num_inputs() * ret * score_fn), grad);
          }
        });
  }
  return grad.values;
}

std::vector<std::pair<std::vector<int>, double>> enumerate_permutation_probs(
    const Vector& evals) {
  const auto K = static_cast<int>(evals.size());
  if (K < 1 || K > 6) {
    throw Error(ErrorCode::parameter, "permutation enumeration supports 1 <= K <= 6");
  }
  if (!evals.allFinite()) {
    throw Error(ErrorCode::numeric, "non-finite evaluations");
  }
  const Vector w = (evals.array() - evals.maxCoeff()).exp().matrix();
  std::vector<int> perm(static_cast<std::size_t>(K));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::pair<std::vector<int>, double>> out;
  do {
    double prob = 1.0;
    for (int k = 0; k < K; ++k) {
      double rest = 0.0;
      for (int i = k; i < K; ++i) {
        rest += w[perm[static_cast<std::size_t>(i)]];
      }
      prob *= w[perm[static_cast<std::size_t>(k)]] / rest;
    }
    out.emplace_back(perm, prob);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return out;
}

Vector finite_diff_grad(const std::function<double(const Vector&)>& loss, const Vector& params,
                        double h) {
  if (!(h > 0.0)) {
    throw Error(ErrorCode::parameter, "finite-difference step must be positive");
  }
  Vector x = params;
  Vector grad(params.size());
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = loss(x);
    x[i] = orig - h;
    const double down = loss(x);
    x[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw Error(ErrorCode::numeric, "non-finite loss during finite differences");
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

GradientComparison compare_gradients(const Vector& analytic, const Vector& numeric, double rtol,
                                     double atol) {
  if (analytic.size() != numeric.size()) {
    throw Error(ErrorCode::shape, "gradients differ in size");
  }
  GradientComparison out;
  double worst_score = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double abs_err = std::abs(analytic[i] - numeric[i]);
    const double scale = std::max(std::abs(analytic[i]), std::abs(numeric[i]));
    const double rel_err = scale > 0.0 ? abs_err / scale : 0.0;
    const bool pass = abs_err <= atol || rel_err <= rtol;
    out.worst_absolute_error = std::max(out.worst_absolute_error, abs_err);
    const double score = abs_err <= atol ? 0.0 : rel_err;
    if (score > worst_score || (!pass && out.ok)) {
      worst_score = score;
      out.worst_index = i;
      out.worst_relative_error = rel_err;
    }
    out.ok = out.ok && pass;
  }
  return out;
}

}  // namespace tokenguide::oracle
