#pragma once

#include "tokenguide/rank.hpp"
#include "tokenguide/tasks.hpp"
#include "tokenguide/train.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace tokenguide {

inline constexpr int kConfigVersion = 1;

/// Everything one experiment needs, as read from an INI file.
struct ExperimentConfig {
  int version = kConfigVersion;
  TaskConfig task;
  ModelShape model;  // vocab_size and num_inputs come from the task
  double init_scale = 0.1;
  RewardTrainConfig reward;
  PolicyTrainConfig policy;
  bool kl_baseline = false;  // policy mode `kl_baseline`: sparse reward + KL penalty
  KLBaselineConfig kl;
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path out_dir;
  bool save_checkpoints = true;
  std::string sweep_name;
  std::vector<std::string> sweep_values;

  void validate() const;
};

ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Writes the fully resolved config in the same INI format.
void write_config(std::ostream& out, const ExperimentConfig& cfg);

/// Default output root: $TOKENGUIDE_OUT, else "runs".
std::filesystem::path default_output_root();

/// Final numbers of one seed.
struct SeedSummary {
  std::uint64_t seed = 0;
  double exact_metric = 0.0;    // NaN when not enumerable
  double sampled_metric = 0.0;
  double optimal_metric = 0.0;  // NaN when not enumerable
  double policy_loss = 0.0;
  double holdout_loss = 0.0;
  double rank_accuracy = 0.0;
  int retrains = 0;
};

enum class Command { train_reward, train_lm, alternate };

/// Runs one seed and writes its histories (and checkpoints) under `dir`.
SeedSummary run_seed(const ExperimentConfig& cfg, std::uint64_t seed, Command command,
                     const std::filesystem::path& dir);

/// Runs every seed, writes per-seed CSVs, summary.csv and config.ini under cfg.out_dir.
std::vector<SeedSummary> run(const ExperimentConfig& cfg, Command command);

/// Applies one sweep value (K, beta, alpha, agg, retrain, seq_vs_token).
ExperimentConfig apply_sweep(const ExperimentConfig& base, const std::string& sweep,
                             const std::string& value);

/// Default values of a sweep when the config lists none.
std::vector<std::string> default_sweep_values(const std::string& sweep);

struct SweepRow {
  std::string value;
  std::vector<SeedSummary> seeds;
};

/// One run per sweep value; writes summary.csv with per-seed and aggregate rows.
std::vector<SweepRow> ablate(const ExperimentConfig& cfg, const std::string& sweep);

/// Mean and sample standard deviation (0 for a single value); NaNs are skipped.
std::pair<double, double> mean_std(const std::vector<double>& values);

void write_policy_history(std::ostream& out, const std::vector<PolicyHistoryRow>& rows);
void write_reward_history(std::ostream& out, const std::vector<RewardHistoryRow>& rows);

}  // namespace tokenguide
