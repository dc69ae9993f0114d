#include "doctest.h"
#include "tokenguide/experiment.hpp"

#include <fstream>
#include <sstream>

using namespace tokenguide;

namespace {

const char* kTiny = R"(version = 1
[task]
kind = keyword
vocab_size = 5
horizon = 3
keyword = 2
seed = 4
[reward]
steps = 10
k = 3
[policy]
m_lm = 20
m_re = 5
m_rew_init = 20
eval_interval = 5
eval_samples = 50
[run]
seeds = 0, 1, 2
checkpoints = false
)";

ExperimentConfig tiny(const std::string& out) {
  std::istringstream in(kTiny);
  ExperimentConfig cfg = parse_config(in);
  cfg.out_dir = std::filesystem::temp_directory_path() / ("tokenguide_test_" + out);
  std::filesystem::remove_all(cfg.out_dir);
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

std::string error_of(const std::string& text) {
  std::istringstream in(text);
  try {
    parse_config(in);
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("config parsing") {
  const auto cfg = tiny("parse");
  CHECK(cfg.task.kind == "keyword");
  CHECK(cfg.reward.k == 3);
  CHECK(cfg.policy.m_rew_init == 20);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{0, 1, 2});
  CHECK_FALSE(cfg.save_checkpoints);
  CHECK(cfg.reward.agg.kind == Aggregation::Kind::soft_max);
}

TEST_CASE("config errors name the field") {
  CHECK(error_of("version = 1\n[task]\nvocab_size = 5\n").find("task.kind") != std::string::npos);
  CHECK(error_of(std::string(kTiny) + "[model]\ndepth = 3\n").find("model.depth") !=
        std::string::npos);
  CHECK(error_of("version = 2\n[task]\nkind = keyword\n").find("version") != std::string::npos);
  CHECK(error_of("[task]\nkind = keyword\n[reward]\nk = many\n").find("reward.k") !=
        std::string::npos);
  CHECK(error_of("[task]\nkind = keyword\n[run]\nseeds =\n").find("seed") != std::string::npos);
  CHECK(error_of("[task]\nkind = maze\n").find("maze") != std::string::npos);
  CHECK(error_of("[task]\nkind = keyword\n[policy]\nmode = ppo\n").find("ppo") !=
        std::string::npos);
}

TEST_CASE("resolved config round trip") {
  auto cfg = tiny("roundtrip");
  cfg.sweep_name = "alpha";
  cfg.sweep_values = {"0.1", "0.2"};
  std::ostringstream first;
  write_config(first, cfg);
  std::istringstream in(first.str());
  const auto again = parse_config(in);
  std::ostringstream second;
  write_config(second, again);
  CHECK(first.str() == second.str());
}

TEST_CASE("mean and sample standard deviation") {
  auto [m, s] = mean_std({1.0, 2.0, 3.0, 4.0});
  CHECK(m == doctest::Approx(2.5));
  CHECK(s == doctest::Approx(std::sqrt(5.0 / 3.0)));
  std::tie(m, s) = mean_std({2.0, std::nan(""), 4.0});
  CHECK(m == doctest::Approx(3.0));
  CHECK(s == doctest::Approx(std::sqrt(2.0)));
  std::tie(m, s) = mean_std({7.0});
  CHECK(s == 0.0);
}

TEST_CASE("run writes deterministic artifacts") {
  const auto a = tiny("run_a");
  auto b = tiny("run_b");
  const auto rows = run(a, Command::alternate);
  run(b, Command::alternate);
  REQUIRE(rows.size() == 3);
  CHECK(std::filesystem::exists(a.out_dir / "config.ini"));
  CHECK(std::filesystem::exists(a.out_dir / "seed_1" / "policy_history.csv"));
  CHECK(std::filesystem::exists(a.out_dir / "seed_1" / "reward_history.csv"));
  CHECK(slurp(a.out_dir / "summary.csv") == slurp(b.out_dir / "summary.csv"));
  CHECK(slurp(a.out_dir / "seed_2" / "policy_history.csv") ==
        slurp(b.out_dir / "seed_2" / "policy_history.csv"));

  const auto hist = read_csv(a.out_dir / "seed_0" / "policy_history.csv");
  CHECK(hist[0] == std::vector<std::string>{"iter", "mode", "policy_loss", "exact_metric",
                                            "sampled_metric", "retrain_flag"});
  CHECK(hist.size() == 21);

  // summary rows: header, 3 seeds, mean, std
  const auto csv = read_csv(a.out_dir / "summary.csv");
  REQUIRE(csv.size() == 6);
  CHECK(csv[4][0] == "mean");
  CHECK(csv[5][0] == "std");
  for (std::size_t col = 2; col < csv[0].size(); ++col) {
    std::vector<double> values;
    for (int r = 1; r <= 3; ++r) values.push_back(std::stod(csv[r][col]));
    const auto [m, s] = mean_std(values);
    CHECK(std::abs(std::stod(csv[4][col]) - m) <= 1e-9);
    CHECK(std::abs(std::stod(csv[5][col]) - s) <= 1e-9);
  }
}

TEST_CASE("different seeds give different runs") {
  const auto cfg = tiny("seeds");
  const auto rows = run(cfg, Command::alternate);
  CHECK(rows[0].sampled_metric != rows[1].sampled_metric);
}

TEST_CASE("train-reward and train-lm commands") {
  auto cfg = tiny("commands");
  cfg.seeds = {5};
  const auto reward_only = run(cfg, Command::train_reward);
  CHECK(std::filesystem::exists(cfg.out_dir / "seed_5" / "reward_history.csv"));
  CHECK_FALSE(std::filesystem::exists(cfg.out_dir / "seed_5" / "policy_history.csv"));
  CHECK(reward_only[0].rank_accuracy >= 0.0);
  const auto lm = run(cfg, Command::train_lm);
  CHECK(lm[0].retrains == 0);
  const auto alt = run(cfg, Command::alternate);
  CHECK(alt[0].retrains == 2);
}

TEST_CASE("kl baseline mode") {
  auto cfg = tiny("kl");
  cfg.kl_baseline = true;
  cfg.seeds = {0};
  const auto rows = run(cfg, Command::alternate);
  CHECK(std::isfinite(rows[0].exact_metric));
  CHECK(slurp(cfg.out_dir / "seed_0" / "policy_history.csv").find(",kl_baseline,") !=
        std::string::npos);
}

TEST_CASE("sweeps") {
  const auto base = tiny("sweep_values");
  CHECK(default_sweep_values("K") == std::vector<std::string>{"2", "3", "5", "7", "9"});
  CHECK(default_sweep_values("beta").size() == 5);
  CHECK(default_sweep_values("seq_vs_token").size() == 2);
  CHECK_THROWS_AS(default_sweep_values("depth"), Error);
  CHECK(apply_sweep(base, "K", "7").reward.k == 7);
  CHECK(apply_sweep(base, "beta", "0.25").reward.agg.beta == 0.25);
  CHECK(apply_sweep(base, "alpha", "0.5").policy.alpha == 0.5);
  CHECK(apply_sweep(base, "agg", "avg").reward.agg.kind == Aggregation::Kind::average);
  CHECK_FALSE(apply_sweep(base, "retrain", "off").policy.retrain);
  CHECK(apply_sweep(base, "seq_vs_token", "sequence").policy.mode == TrainMode::seq_reinforce);
  CHECK(apply_sweep(base, "seq_vs_token", "token").policy.mode == TrainMode::reinforce);
  auto weighted = base;
  weighted.policy.mode = TrainMode::weighted_mle;
  CHECK(apply_sweep(weighted, "seq_vs_token", "sequence").policy.mode ==
        TrainMode::seq_weighted_mle);
  CHECK_THROWS_AS(apply_sweep(base, "K", "x"), Error);
  CHECK_THROWS_AS(apply_sweep(base, "K", "1"), Error);
}

TEST_CASE("ablate writes one aggregate row per value") {
  auto cfg = tiny("ablate_k");
  cfg.seeds = {0, 1};
  const auto rows = ablate(cfg, "K");
  REQUIRE(rows.size() == 5);
  CHECK(rows[0].seeds.size() == 2);
  const auto csv = read_csv(cfg.out_dir / "summary.csv");
  int means = 0, per_seed = 0;
  for (std::size_t i = 1; i < csv.size(); ++i) {
    if (csv[i][2] == "mean") ++means;
    else if (csv[i][2] != "std") ++per_seed;
  }
  CHECK(means == 5);
  CHECK(per_seed == 10);

  auto seq = tiny("ablate_seq");
  seq.seeds = {0};
  CHECK(ablate(seq, "seq_vs_token").size() == 2);
}
