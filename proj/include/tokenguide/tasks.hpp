#pragma once

#include "tokenguide/core.hpp"
#include "tokenguide/models.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace tokenguide {

/// Anything that scores complete sequences. Preference ordering is the
/// descending score, ties broken by generation index.
class PreferenceSource {
 public:
  virtual ~PreferenceSource() = default;

  virtual double score(const Trajectory& traj, std::optional<int> target = std::nullopt) const = 0;
  virtual const Vocab& vocab() const = 0;
  /// Maximum generated length T_max.
  virtual int horizon() const = 0;
  virtual int num_inputs() const { return 1; }
  virtual std::string name() const = 0;
  /// Supervised pairs (x, y) when the task has them.
  virtual const std::vector<SupervisedRecord>* supervised_data() const { return nullptr; }
};

/// score = bonus * 1{keyword in tau} + mean_t q(a_t), with q in [0, 0.1].
class KeywordTask final : public PreferenceSource {
 public:
  KeywordTask(Vocab vocab, TokenId keyword, std::vector<double> quality, int horizon,
              double bonus = 1.0);
  /// Quality table drawn uniformly from [0, 0.1] with `seed`.
  static KeywordTask generate(int vocab_size, TokenId keyword, int horizon, std::uint64_t seed,
                              double bonus = 1.0);

  double score(const Trajectory& traj, std::optional<int> target = std::nullopt) const override;
  const Vocab& vocab() const override { return vocab_; }
  int horizon() const override { return horizon_; }
  std::string name() const override { return "keyword"; }

  TokenId keyword() const noexcept { return keyword_; }
  double bonus() const noexcept { return bonus_; }
  const std::vector<double>& quality() const noexcept { return quality_; }
  /// Best attainable score for a full-length sequence.
  double optimal_score() const;

 private:
  Vocab vocab_;
  TokenId keyword_;
  std::vector<double> quality_;
  int horizon_;
  double bonus_;
};

/// score = mean of q over non-eos tokens; lengths vary through eos.
class AvgQualityTask final : public PreferenceSource {
 public:
  AvgQualityTask(Vocab vocab, std::vector<double> quality, int horizon);
  static AvgQualityTask generate(int vocab_size, int horizon, std::uint64_t seed);

  double score(const Trajectory& traj, std::optional<int> target = std::nullopt) const override;
  const Vocab& vocab() const override { return vocab_; }
  int horizon() const override { return horizon_; }
  std::string name() const override { return "avg_quality"; }

  const std::vector<double>& quality() const noexcept { return quality_; }

 private:
  Vocab vocab_;
  std::vector<double> quality_;
  int horizon_;
};

/// Supervised data whose targets interleave the informative pattern of each
/// input with noise tokens. Token 0 is eos, tokens [1, 1 + n_info) are
/// informative and the rest are noise.
class NoisySupervisedTask final : public PreferenceSource {
 public:
  struct Options {
    int num_informative = 4;
    int num_noise = 3;
    int num_inputs = 3;
    int pattern_length = 3;
    double noise_rate = 0.5;
    int num_records = 64;
    int horizon = 4;
    std::uint64_t seed = 0;
  };

  explicit NoisySupervisedTask(const Options& options);

  /// Longest common subsequence between the generated non-eos tokens and the
  /// clean pattern of the trajectory's input.
  double score(const Trajectory& traj, std::optional<int> target = std::nullopt) const override;
  const Vocab& vocab() const override { return vocab_; }
  int horizon() const override { return options_.horizon; }
  int num_inputs() const override { return options_.num_inputs; }
  std::string name() const override { return "noisy_supervised"; }
  const std::vector<SupervisedRecord>* supervised_data() const override { return &records_; }

  const std::vector<TokenId>& clean_pattern(int input_id) const;
  bool is_informative(TokenId token) const noexcept {
    return token >= 1 && token <= options_.num_informative;
  }
  bool is_noise(TokenId token) const noexcept { return token > options_.num_informative; }
  const Options& options() const noexcept { return options_; }

 private:
  Options options_;
  Vocab vocab_;
  std::vector<std::vector<TokenId>> patterns_;
  std::vector<SupervisedRecord> records_;
};

/// Discrete prompt task: a fixed linear classifier over prompt-token counts
/// stands in for the downstream LM; score is the mean stepwise metric over a
/// small set of labelled observations.
class PromptTask final : public PreferenceSource {
 public:
  struct Options {
    int vocab_size = 12;
    int horizon = 4;
    int num_classes = 2;
    int num_observations = 8;
    double lambda1 = 180.0;
    double lambda2 = 200.0;
    std::uint64_t seed = 0;
  };

  explicit PromptTask(const Options& options);

  double score(const Trajectory& traj, std::optional<int> target = std::nullopt) const override;
  const Vocab& vocab() const override { return vocab_; }
  int horizon() const override { return options_.horizon; }
  std::string name() const override { return "prompt"; }

  /// Class probabilities the classifier assigns to observation `obs` under `prompt`.
  Vector class_probs(const Trajectory& prompt, int obs) const;
  /// Fraction of observations classified correctly.
  double accuracy(const Trajectory& prompt) const;

 private:
  Options options_;
  Vocab vocab_;
  Matrix token_weights_;  // classes x vocab
  Matrix obs_bias_;       // classes x observations
  std::vector<int> labels_;
};

/// lambda1^(1 - Corr) * lambda2^Corr * Gap, Gap = p_true - max_{other} p.
double step_metric(const Vector& class_probs, int true_class, double lambda1 = 180.0,
                   double lambda2 = 200.0);

/// Reference distribution pi_0 for the KL penalty.
class KlPrior {
 public:
  static KlPrior uniform() { return KlPrior{}; }
  static KlPrior snapshot(PolicyModel policy) {
    KlPrior prior;
    prior.snapshot_ = std::move(policy);
    return prior;
  }

  Vector probs(const State& s, int vocab_size) const;
  bool is_uniform() const noexcept { return !snapshot_.has_value(); }

 private:
  std::optional<PolicyModel> snapshot_;
};

struct KLBaselineConfig {
  double gamma = 0.99;
  double c = 0.1;
  enum class PriorKind { uniform, initial_policy } prior = PriorKind::uniform;
  int batch_size = 16;
  std::uint64_t budget = 100000;

  void validate() const;
};

/// KL(p || q) over a finite vocabulary. Throws infinite_kl when q lacks support.
double kl_divergence(const Vector& p, const Vector& q);

/// -c * KL(pi(.|s) || pi_0(.|s)), plus the environment reward at the terminal step.
double kl_penalized_reward(const PolicyModel& policy, const KlPrior& prior, const State& s,
                           TokenId token, std::optional<double> terminal_reward, double c);

/// Exact action value under the KL-stabilized reward by enumerating continuations:
/// E[gamma^(T-1-t) R(s_T) - c * sum_{t'>=t} gamma^(t'-t) KL_t'].
double kl_q_value(const PolicyModel& policy, const KlPrior& prior, const State& s, TokenId token,
                  const PreferenceSource& task, const KLBaselineConfig& cfg);

/// Per-trajectory REINFORCE term sum_t G_t grad log pi(a_t | s_t), where G_t is
/// the discounted sum of KL-penalized rewards from t on. KL values are held fixed.
GradBuffer sparse_kl_reinforce_term(const PolicyModel& policy, const KlPrior& prior,
                                    const Trajectory& traj, const PreferenceSource& task,
                                    const KLBaselineConfig& cfg);

/// Ascent direction for the sparse-reward + KL-penalty baseline, averaged over
/// `cfg.batch_size` sampled trajectories.
GradBuffer sparse_kl_reinforce_step(const PolicyModel& policy, const PreferenceSource& task,
                                    const KlPrior& prior, const KLBaselineConfig& cfg, Rng& rng);

/// Structured description of a task, as read from an experiment config.
struct TaskConfig {
  std::string kind;  // keyword | avg_quality | noisy_supervised | prompt
  int vocab_size = 20;
  int horizon = 5;
  int keyword = 0;
  double bonus = 1.0;
  std::vector<double> quality;  // empty: drawn from `seed`
  double noise_rate = 0.5;
  int num_inputs = 3;
  int num_informative = 4;
  int num_noise = 3;
  int pattern_length = 3;
  int num_records = 64;
  int num_classes = 2;
  int num_observations = 8;
  std::uint64_t seed = 0;
};

std::unique_ptr<PreferenceSource> make_task(const TaskConfig& cfg);

}  // namespace tokenguide
