#pragma once

#include "tokenguide/core.hpp"
#include "tokenguide/numeric.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace tokenguide {

using Rng = std::mt19937_64;

/// Dimensions shared by the reward and policy networks.
struct ModelShape {
  int vocab_size = 2;
  int num_inputs = 1;
  int embed_dim = 8;
  int hidden = 32;
  int window = 4;  // number of most recent prefix tokens visible to the model

  void validate() const;
  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

/// s_t = (x, a_<t). The prefix is a non-owning view.
struct State {
  int input_id = 0;
  std::span<const TokenId> prefix;
};

inline State state_at(const Trajectory& traj, int t) { return {traj.input_id, traj.prefix(t)}; }

/// Additive gradient accumulator mirroring a flat parameter vector.
struct GradBuffer {
  Vector values;

  GradBuffer() = default;
  explicit GradBuffer(Eigen::Index n) : values(Vector::Zero(n)) {}

  Eigen::Index size() const noexcept { return values.size(); }
  GradBuffer& operator+=(const GradBuffer& other) {
    values += other.values;
    return *this;
  }
  GradBuffer& operator*=(double s) {
    values *= s;
    return *this;
  }
};

/// r_phi(s, a) = sigmoid(v . tanh(A x + b) + c), x = [emb(a); emb(window); emb(input)].
class RewardModel {
 public:
  RewardModel() = default;
  /// All-zero parameters; every output is sigmoid(0) = 0.5.
  explicit RewardModel(const ModelShape& shape);
  static RewardModel random(const ModelShape& shape, std::uint64_t seed, double scale = 0.1);

  const ModelShape& shape() const noexcept { return shape_; }
  Vector& params() noexcept { return params_; }
  const Vector& params() const noexcept { return params_; }
  Eigen::Index param_count() const noexcept { return params_.size(); }

  double forward(const State& s, TokenId token) const;
  /// r(s, a) for every token a of the vocabulary.
  Vector forward_all(const State& s) const;
  /// grad += adjoint * d r(s, token) / d phi
  void backward(const State& s, TokenId token, double adjoint, GradBuffer& grad) const;

 private:
  struct Layout;
  Layout layout() const;
  Vector context_features(const State& s) const;

  ModelShape shape_;
  Vector params_;
};

/// pi_theta(. | s) = softmax(W tanh(A x + b) + b_out), x = [emb(window); emb(input)].
class PolicyModel {
 public:
  PolicyModel() = default;
  /// All-zero parameters; the distribution is uniform everywhere.
  explicit PolicyModel(const ModelShape& shape);
  static PolicyModel random(const ModelShape& shape, std::uint64_t seed, double scale = 0.1);

  const ModelShape& shape() const noexcept { return shape_; }
  Vector& params() noexcept { return params_; }
  const Vector& params() const noexcept { return params_; }
  Eigen::Index param_count() const noexcept { return params_.size(); }

  Vector logits(const State& s) const;
  /// grad += d (logit_adjoint . logits(s)) / d theta
  void backward(const State& s, const Vector& logit_adjoint, GradBuffer& grad) const;

 private:
  struct Layout;
  Layout layout() const;
  Vector features(const State& s) const;

  ModelShape shape_;
  Vector params_;
};

double reward_step(const RewardModel& model, int input_id, std::span<const TokenId> prefix,
                   TokenId token);
/// Element t is r(s_t, a_t) along the trajectory.
Vector reward_trajectory(const RewardModel& model, const Trajectory& traj);

Vector policy_logits(const PolicyModel& model, int input_id, std::span<const TokenId> prefix);
Vector policy_probs(const PolicyModel& model, const State& s);

/// Autoregressive sampling until eos or `horizon` tokens.
Trajectory sample_trajectory(const PolicyModel& model, const Vocab& vocab, int input_id,
                             int horizon, double temperature, Rng& rng);
Trajectory policy_sample(const PolicyModel& model, const Vocab& vocab, int input_id, int horizon,
                         double temperature, std::uint64_t seed);

/// Index drawn from a probability vector.
int sample_categorical(const Vector& probs, Rng& rng);

/// Recorded sensitivities of a scalar loss to model outputs.
///
/// Each reward term contributes adjoint * d r(s, a) / d phi, each policy term
/// adjoint . d logits(s) / d theta, and direct terms hit single parameters.
/// States are views into trajectories that must outlive the graph.
struct LossGraph {
  struct RewardTerm {
    State state;
    TokenId token;
    double adjoint;
  };
  struct PolicyTerm {
    State state;
    Vector logit_adjoint;
  };

  double value = 0.0;
  std::vector<RewardTerm> reward_terms;
  std::vector<PolicyTerm> policy_terms;
  std::vector<std::pair<Eigen::Index, double>> direct_terms;
};

GradBuffer backprop_scalar(const RewardModel& model, const LossGraph& graph);
GradBuffer backprop_scalar(const PolicyModel& model, const LossGraph& graph);

struct AdamConfig {
  double lr = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // <= 0 disables clipping
};

/// Adam with global gradient-norm clipping. `step` descends the gradient.
class Adam {
 public:
  Adam() = default;
  Adam(Eigen::Index n, AdamConfig config);

  void step(Vector& params, const GradBuffer& grad);
  const AdamConfig& config() const noexcept { return config_; }
  long steps_taken() const noexcept { return t_; }

 private:
  AdamConfig config_;
  Vector m_;
  Vector v_;
  long t_ = 0;
};

// Checkpoint format (text, version 1):
//   tokenguide-checkpoint 1
//   kind <reward|policy>
//   shape <vocab_size> <num_inputs> <embed_dim> <hidden> <window>
//   count <N>
//   N lines, one parameter each, printed with 17 significant digits.
void save_checkpoint(const std::filesystem::path& path, const RewardModel& model);
void save_checkpoint(const std::filesystem::path& path, const PolicyModel& model);
RewardModel load_reward_checkpoint(const std::filesystem::path& path);
PolicyModel load_policy_checkpoint(const std::filesystem::path& path);

}  // namespace tokenguide
