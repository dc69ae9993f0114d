#include "doctest.h"
#include "tokenguide/oracle.hpp"
#include "tokenguide/rank.hpp"
#include "tokenguide/tasks.hpp"

#include <cmath>
#include <numeric>

using namespace tokenguide;

namespace {

ModelShape shape_for(int vocab) {
  ModelShape s;
  s.vocab_size = vocab;
  s.embed_dim = 4;
  s.hidden = 6;
  s.window = 3;
  return s;
}

Trajectory random_traj(Rng& rng, int vocab, int min_len, int max_len) {
  std::uniform_int_distribution<int> len(min_len, max_len);
  std::uniform_int_distribution<int> tok(0, vocab - 1);
  Trajectory t{0, {}};
  const int n = len(rng);
  for (int i = 0; i < n; ++i) t.tokens.push_back(tok(rng));
  return t;
}

PreferenceGroup random_group(Rng& rng, int vocab, int k) {
  std::vector<Trajectory> trajs;
  std::vector<double> scores;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < k; ++i) {
    trajs.push_back(random_traj(rng, vocab, 1, 6));
    scores.push_back(u(rng));
  }
  return make_group(0, trajs, scores);
}

}  // namespace

TEST_CASE("plackett-luce log-likelihood") {
  Eigen::Vector2d zero(0.0, 0.0);
  const std::vector<int> id2{0, 1};
  CHECK(pl_log_likelihood(zero, id2) == doctest::Approx(-std::log(2.0)).epsilon(1e-15));
  Eigen::Vector3d e(2.0, 1.0, 0.0);
  const std::vector<int> id3{0, 1, 2};
  CHECK(pl_log_likelihood(e, id3) == doctest::Approx(-0.7208676519626032).epsilon(1e-12));
  const auto perms = oracle::enumerate_permutation_probs(e);
  CHECK(std::exp(pl_log_likelihood(e, id3)) == doctest::Approx(perms.front().second));
  CHECK(perms.front().second == doctest::Approx(0.4863301075752072).epsilon(1e-12));
  const Eigen::Vector3d shifted = e.array() + 17.5;
  CHECK(std::abs(pl_log_likelihood(shifted, id3) - pl_log_likelihood(e, id3)) <= 1e-12);
  const std::vector<int> bad{0, 0, 1};
  CHECK_THROWS_AS(pl_log_likelihood(e, bad), Error);
  const Eigen::Vector3d nan_evals(0.0, NAN, 1.0);
  CHECK_THROWS_AS(pl_log_likelihood(nan_evals, id3), Error);
}

TEST_CASE("plackett-luce normalizes over permutations") {
  Rng rng(7);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int k = 2; k <= 4; ++k) {
    for (int rep = 0; rep < 20; ++rep) {
      Vector e(k);
      for (auto& x : e) x = n(rng);
      double total = 0.0;
      std::vector<int> order(static_cast<std::size_t>(k));
      std::iota(order.begin(), order.end(), 0);
      do {
        total += std::exp(pl_log_likelihood(e, order));
      } while (std::next_permutation(order.begin(), order.end()));
      CHECK(std::abs(total - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("plackett-luce gradient") {
  Vector e(4);
  e << 0.3, -1.2, 2.0, 0.7;
  const std::vector<int> ord{2, 0, 3, 1};
  const auto res = pl_log_likelihood_with_grad(e, ord);
  const Vector numeric =
      oracle::finite_diff_grad([&](const Vector& x) { return pl_log_likelihood(x, ord); }, e);
  CHECK(oracle::compare_gradients(res.grad, numeric).ok);
}

TEST_CASE("listwise loss on a fresh model") {
  RewardModel zero(shape_for(5));
  Rng rng(1);
  const PreferenceGroup g = random_group(rng, 5, 3);
  for (auto agg : {Aggregation::sum(), Aggregation::soft_max(2.0)}) {
    if (agg.kind == Aggregation::Kind::sum) {
      // unequal lengths break the tie under sum, so use equal lengths
      PreferenceGroup eq = g;
      for (auto& t : eq.trajectories) t.tokens.resize(3, 1);
      CHECK(listwise_loss(zero, eq, agg).loss == doctest::Approx(std::log(6.0)).epsilon(1e-12));
    } else {
      PreferenceGroup eq = g;
      for (auto& t : eq.trajectories) t.tokens.resize(2, 0);
      CHECK(listwise_loss(zero, eq, agg).loss == doctest::Approx(std::log(6.0)).epsilon(1e-12));
    }
  }
  CHECK(listwise_loss(zero, g, Aggregation::average()).loss ==
        doctest::Approx(std::log(6.0)).epsilon(1e-12));
}

TEST_CASE("pairwise and listwise agree for two items under sum") {
  Rng rng(5);
  for (int rep = 0; rep < 30; ++rep) {
    RewardModel m = RewardModel::random(shape_for(6), rep, 1.0);
    const PreferenceGroup g = random_group(rng, 6, 2);
    const Trajectory& a = g.trajectories[static_cast<std::size_t>(g.ordering[0])];
    const Trajectory& b = g.trajectories[static_cast<std::size_t>(g.ordering[1])];
    const auto lw = listwise_loss(m, g, Aggregation::sum());
    const auto pw = pairwise_loss(m, a, b);
    CHECK(std::abs(lw.loss - pw.loss) <= 1e-12);
    CHECK((lw.grad.values - pw.grad.values).cwiseAbs().maxCoeff() <= 1e-12);
    const auto swapped = pairwise_loss(m, b, a);
    CHECK(std::exp(-pw.loss) + std::exp(-swapped.loss) == doctest::Approx(1.0).epsilon(1e-12));
  }
  RewardModel zero(shape_for(6));
  CHECK(pairwise_loss(zero, {0, {1, 2}}, {0, {3, 4}}).loss ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK_THROWS_AS(pairwise_loss(zero, {0, {1}}, {1, {2}}), Error);
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(9);
  for (auto agg : {Aggregation::sum(), Aggregation::average(), Aggregation::soft_max(2.0),
                   Aggregation::soft_min(0.5), Aggregation::last()}) {
    RewardModel m = RewardModel::random(shape_for(5), 3, 0.8);
    const PreferenceGroup g = random_group(rng, 5, 4);
    auto check = [&](auto loss_fn) {
      const Vector numeric = oracle::finite_diff_grad(
          [&](const Vector& p) {
            RewardModel c = m;
            c.params() = p;
            return loss_fn(c).loss;
          },
          m.params());
      CHECK(oracle::compare_gradients(loss_fn(m).grad.values, numeric).ok);
    };
    check([&](const RewardModel& r) { return listwise_loss(r, g, agg); });
    check([&](const RewardModel& r) { return all_pairs_loss(r, g, agg); });
  }
}

TEST_CASE("rank accuracy") {
  RewardModel zero(shape_for(4));
  std::vector<PreferenceGroup> groups;
  groups.push_back(make_group(0, {{0, {1}}, {0, {2}}, {0, {3}}}, std::vector<double>{3, 2, 1}));
  CHECK(rank_accuracy(zero, groups, Aggregation::sum()) == 0.5);
  RewardModel probe = RewardModel::random(shape_for(4), 0, 1.0);
  std::vector<PreferenceGroup> aligned, reversed;
  for (int rep = 0; rep < 5; ++rep) {
    Rng rng(rep);
    PreferenceGroup g = random_group(rng, 4, 4);
    const Vector e = group_evaluations(probe, g, Aggregation::sum());
    std::vector<double> sc(e.data(), e.data() + e.size());
    std::vector<double> neg;
    for (double x : sc) neg.push_back(-x);
    aligned.push_back(make_group(0, g.trajectories, sc));
    reversed.push_back(make_group(0, g.trajectories, neg));
  }
  CHECK(rank_accuracy(probe, aligned, Aggregation::sum()) == 1.0);
  CHECK(rank_accuracy(probe, reversed, Aggregation::sum()) == 0.0);
}

TEST_CASE("train config validation") {
  RewardTrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.k = 1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.holdout_fraction = 1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.max_steps = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("train_reward with zero patience leaves the model unchanged") {
  auto task = KeywordTask::generate(6, 2, 3, 1);
  ModelShape s = shape_for(6);
  PolicyModel policy(s);
  RewardModel start = RewardModel::random(s, 1);
  RewardTrainConfig cfg;
  cfg.early_stop_patience = 0;
  const auto out = train_reward(start, policy, task, cfg);
  CHECK(out.history.empty());
  CHECK(out.model.params() == start.params());
}

TEST_CASE("two-item listwise training equals pairwise training step for step") {
  auto task = KeywordTask::generate(6, 2, 3, 4);
  ModelShape s = shape_for(6);
  PolicyModel policy(s);
  RewardTrainConfig a;
  a.k = 2;
  a.max_steps = 30;
  a.agg = Aggregation::sum();
  a.seed = 12;
  RewardTrainConfig b = a;
  b.loss = RewardTrainConfig::Loss::pairwise;
  const auto ra = train_reward(RewardModel::random(s, 2), policy, task, a);
  const auto rb = train_reward(RewardModel::random(s, 2), policy, task, b);
  REQUIRE(ra.history.size() == rb.history.size());
  for (std::size_t i = 0; i < ra.history.size(); ++i) {
    CHECK(ra.history[i].train_loss == doctest::Approx(rb.history[i].train_loss).epsilon(1e-12));
  }
  CHECK((ra.model.params() - rb.model.params()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("reward learning separates the keyword task") {
  auto task = KeywordTask::generate(8, 3, 3, 2);
  ModelShape s;
  s.vocab_size = 8;
  PolicyModel policy(s);
  RewardTrainConfig cfg;
  cfg.max_steps = 300;
  cfg.k = 5;
  cfg.agg = Aggregation::soft_max(0.5);
  cfg.group_batch = 8;
  cfg.adam.lr = 1e-2;
  cfg.seed = 3;
  cfg.early_stop_patience = 100;
  const auto out = train_reward(RewardModel::random(s, 5), policy, task, cfg);
  Rng rng(99);
  std::vector<PreferenceGroup> fresh;
  for (int i = 0; i < 200; ++i) fresh.push_back(sample_group(policy, task, 5, 1.0, rng));
  CHECK(rank_accuracy(out.model, fresh, cfg.agg) >= 0.9);
}

TEST_CASE("reward loss decreases on a noiseless source") {
  auto task = KeywordTask::generate(8, 3, 3, 2);
  ModelShape s;
  s.vocab_size = 8;
  PolicyModel policy(s);
  RewardTrainConfig cfg;
  cfg.max_steps = 110;
  cfg.group_batch = 64;
  cfg.adam.lr = 1e-3;
  cfg.early_stop_patience = 100;
  cfg.seed = 8;
  const auto out = train_reward(RewardModel::random(s, 5), policy, task, cfg);
  REQUIRE(out.history.size() == 110);
  std::vector<double> smooth;
  for (std::size_t i = 0; i + 10 <= out.history.size(); ++i) {
    double m = 0.0;
    for (std::size_t j = i; j < i + 10; ++j) m += out.history[j].train_loss / 10.0;
    smooth.push_back(m);
  }
  int ok = 0, total = 0;
  for (std::size_t i = 0; i + 1 < smooth.size(); ++i, ++total) {
    ok += smooth[i + 1] <= smooth[i];
  }
  MESSAGE("non-increasing windows: " << ok << "/" << total);
  CHECK(ok >= 0.95 * total);
}

TEST_CASE("sum aggregation favors length, average does not") {
  AvgQualityTask task = AvgQualityTask::generate(6, 6, 3);
  ModelShape s;
  s.vocab_size = 6;
  PolicyModel policy(s);
  double source_bias = 0.0;
  auto length_bias = [&](Aggregation agg) {
    RewardTrainConfig cfg;
    cfg.max_steps = 300;
    cfg.k = 5;
    cfg.agg = agg;
    cfg.group_batch = 4;
    cfg.adam.lr = 1e-2;
    cfg.seed = 0;
    cfg.early_stop_patience = 100;
    const auto out = train_reward(RewardModel::random(s, 1), policy, task, cfg);
    Rng rng(17);
    int longer = 0, truth = 0, pairs = 0;
    for (int i = 0; i < 2000; ++i) {
      const PreferenceGroup g = sample_group(policy, task, 2, 1.0, rng);
      const auto& a = g.trajectories[0];
      const auto& b = g.trajectories[1];
      // a lone eos scores 0 and would make the source itself length biased
      if (a.length() == b.length() || a.length() == 1 || b.length() == 1) continue;
      const Vector e = group_evaluations(out.model, g, agg);
      ++pairs;
      longer += (a.length() > b.length()) == (e[0] > e[1]);
      truth += (a.length() > b.length()) == (g.scores[0] > g.scores[1]);
    }
    source_bias = static_cast<double>(truth) / pairs;
    return static_cast<double>(longer) / pairs;
  };
  const double sum_bias = length_bias(Aggregation::sum());
  const double avg_bias = length_bias(Aggregation::average());
  MESSAGE("longer ranked higher: sum " << sum_bias << ", avg " << avg_bias << ", source "
                                       << source_bias);
  CHECK(sum_bias - source_bias > 0.1);
  CHECK(avg_bias - source_bias < 0.1);
  CHECK(sum_bias > avg_bias);
}
