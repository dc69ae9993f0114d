#include "tokenguide/experiment.hpp"
#include "tokenguide/oracle.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <iomanip>
#include <iostream>
#include <optional>

using namespace tokenguide;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string agg;
  std::optional<double> beta;
  std::optional<double> alpha;
  std::optional<int> k;
  std::string mode;
  std::string sweep;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "experiment config (INI)")->required();
  cmd->add_option("--seed", o.seed, "run a single seed instead of run.seeds");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--agg", o.agg, "aggregation: sum, avg, max, min, last");
  cmd->add_option("--beta", o.beta, "temperature of the soft aggregations");
  cmd->add_option("--alpha", o.alpha, "entropy coefficient");
  cmd->add_option("--k", o.k, "sequences per preference group");
  cmd->add_option("--mode", o.mode,
                  "reinforce, weighted_mle, vanilla_mle, seq_reinforce, seq_weighted_mle, "
                  "kl_baseline");
}

ExperimentConfig resolve(const Overrides& o, const std::string& command) {
  ExperimentConfig cfg = load_config(o.config);
  if (o.seed) cfg.seeds = {*o.seed};
  if (!o.out.empty()) {
    cfg.out_dir = o.out;
  } else if (cfg.out_dir.empty()) {
    cfg.out_dir = default_output_root() / command;
  }
  if (o.beta) cfg.reward.agg.beta = *o.beta;
  if (!o.agg.empty()) cfg.reward.agg = parse_aggregation(o.agg, cfg.reward.agg.beta);
  if (o.alpha) cfg.policy.alpha = *o.alpha;
  if (o.k) cfg.reward.k = *o.k;
  if (o.mode == "kl_baseline") {
    cfg.kl_baseline = true;
  } else if (!o.mode.empty()) {
    cfg.kl_baseline = false;
    cfg.policy.mode = parse_train_mode(o.mode);
  }
  cfg.validate();
  return cfg;
}

void check_finite(const std::vector<SeedSummary>& rows) {
  for (const auto& r : rows) {
    if (!std::isfinite(r.sampled_metric)) {
      throw Error(ErrorCode::numeric, "non-finite metric for seed " + std::to_string(r.seed));
    }
  }
}

void print_summary(const std::vector<SeedSummary>& rows) {
  std::cout << std::setprecision(6);
  for (const auto& r : rows) {
    std::cout << "seed " << r.seed << ": exact " << r.exact_metric << "  sampled "
              << r.sampled_metric << "  optimal " << r.optimal_metric << "  holdout "
              << r.holdout_loss << "  rank_acc " << r.rank_accuracy << "\n";
  }
}

// Compares the exact per-step estimator and the sequence-space oracle on fresh models.
int oracle_check(const ExperimentConfig& cfg) {
  int failures = 0;
  for (auto seed : cfg.seeds) {
    ModelShape shape = cfg.model;
    const auto task = make_task(cfg.task);
    shape.vocab_size = task->vocab().size;
    shape.num_inputs = task->num_inputs();
    const PolicyModel policy = PolicyModel::random(shape, seed, 1.0);
    const RewardModel reward = RewardModel::random(shape, seed + 1, 1.0);
    const oracle::EnumerationBudget budget{cfg.policy.eval_budget};

    std::vector<Trajectory> batch;
    std::vector<double> weights;
    for (int x = 0; x < task->num_inputs(); ++x) {
      oracle::for_each_sequence(policy, task->vocab(), x, task->horizon(), budget,
                                [&](const Trajectory& t, double p) {
                                  batch.push_back(t);
                                  weights.push_back(p / task->num_inputs());
                                });
    }
    const Vector est = reinforce_entropy_grad(policy, reward, batch, cfg.policy.alpha,
                                              Estimator::exact, weights)
                           .values;
    const Vector ref = oracle::exact_policy_gradient(policy, reward, cfg.policy.alpha,
                                                     task->vocab(), task->horizon(),
                                                     task->num_inputs(), budget);
    const double rel = (est - ref).cwiseAbs().maxCoeff() /
                       std::max(1e-12, ref.cwiseAbs().maxCoeff());
    double mass = 0.0;
    for (int x = 0; x < task->num_inputs(); ++x) {
      mass += oracle::sequence_probability_mass(policy, task->vocab(), x, task->horizon(), budget);
    }
    mass /= task->num_inputs();
    const bool ok = rel <= 1e-6 && std::abs(mass - 1.0) <= 1e-9;
    failures += ok ? 0 : 1;
    std::cout << (ok ? "ok  " : "FAIL") << " seed " << seed << ": gradient rel err " << rel
              << ", probability mass " << std::setprecision(12) << mass << std::setprecision(6)
              << ", exact metric " << oracle::exact_expected_metric(policy, *task, budget)
              << ", optimal " << oracle::optimal_expected_metric(*task, budget) << "\n";
  }
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"preference-guided token-level training experiments"};
  app.require_subcommand(1);
  Overrides o;
  auto* train_reward = app.add_subcommand("train-reward", "fit the reward model only");
  auto* train_lm = app.add_subcommand("train-lm", "fit the reward once, then the policy");
  auto* alternate = app.add_subcommand("alternate", "alternate policy and reward training");
  auto* ablate_cmd = app.add_subcommand("ablate", "run a sweep over one setting");
  auto* check = app.add_subcommand("oracle-check", "compare estimators with enumeration");
  for (auto* cmd : {train_reward, train_lm, alternate, ablate_cmd, check}) {
    add_common(cmd, o);
  }
  ablate_cmd->add_option("--sweep", o.sweep, "K, beta, alpha, agg, retrain or seq_vs_token");

  CLI11_PARSE(app, argc, argv);

  try {
    if (check->parsed()) {
      return oracle_check(resolve(o, "oracle-check"));
    }
    if (ablate_cmd->parsed()) {
      ExperimentConfig cfg = resolve(o, "ablate");
      const std::string sweep = o.sweep.empty() ? cfg.sweep_name : o.sweep;
      if (sweep.empty()) {
        throw Error(ErrorCode::config, "no sweep given (--sweep or sweep.name)");
      }
      const auto rows = ablate(cfg, sweep);
      for (const auto& row : rows) {
        check_finite(row.seeds);
        std::cout << sweep << " = " << row.value << "\n";
        print_summary(row.seeds);
      }
      std::cout << "wrote " << (cfg.out_dir / "summary.csv").string() << "\n";
      return 0;
    }
    Command command = Command::alternate;
    std::string name = "alternate";
    if (train_reward->parsed()) {
      command = Command::train_reward;
      name = "train-reward";
    } else if (train_lm->parsed()) {
      command = Command::train_lm;
      name = "train-lm";
    }
    const ExperimentConfig cfg = resolve(o, name);
    const auto rows = run(cfg, command);
    print_summary(rows);
    check_finite(rows);
    std::cout << "wrote " << (cfg.out_dir / "summary.csv").string() << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::numeric ? 3 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
