#include "doctest.h"
#include "tokenguide/oracle.hpp"
#include "tokenguide/tasks.hpp"

#include <cmath>
#include <set>

using namespace tokenguide;

namespace {

class ConstSource final : public PreferenceSource {
 public:
  ConstSource(Vocab v, int horizon, double c) : vocab_(std::move(v)), horizon_(horizon), c_(c) {}
  double score(const Trajectory&, std::optional<int>) const override { return c_; }
  const Vocab& vocab() const override { return vocab_; }
  int horizon() const override { return horizon_; }
  std::string name() const override { return "const"; }

 private:
  Vocab vocab_;
  int horizon_;
  double c_;
};

class TableSource final : public PreferenceSource {
 public:
  explicit TableSource(std::vector<double> table) : vocab_(2), table_(std::move(table)) {}
  double score(const Trajectory& t, std::optional<int>) const override {
    return table_[static_cast<std::size_t>(2 * t.tokens[0] + t.tokens[1])];
  }
  const Vocab& vocab() const override { return vocab_; }
  int horizon() const override { return 2; }
  std::string name() const override { return "table"; }

 private:
  Vocab vocab_;
  std::vector<double> table_;
};

ModelShape shape_for(int vocab, int inputs = 1) {
  ModelShape s;
  s.vocab_size = vocab;
  s.num_inputs = inputs;
  s.embed_dim = 4;
  s.hidden = 5;
  s.window = 2;
  return s;
}

}  // namespace

TEST_CASE("sequence enumeration") {
  const auto plain = oracle::enumerate_sequences(Vocab(2), 3, {});
  CHECK(plain.size() == 8);
  CHECK(std::set<std::vector<TokenId>>(plain.begin(), plain.end()).size() == 8);
  const auto with_eos = oracle::enumerate_sequences(Vocab(2, 0), 2, {});
  REQUIRE(with_eos.size() == 3);
  CHECK(with_eos[0] == std::vector<TokenId>{0});
  CHECK(with_eos[1] == std::vector<TokenId>{1, 0});
  CHECK(with_eos[2] == std::vector<TokenId>{1, 1});
  try {
    oracle::enumerate_sequences(Vocab(10), 6, {100000});
    FAIL("expected budget error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::budget_exceeded);
  }
}

TEST_CASE("enumerated probabilities sum to one") {
  for (int seed = 0; seed < 10; ++seed) {
    PolicyModel p = PolicyModel::random(shape_for(4, 2), seed, 1.5);
    for (auto vocab : {Vocab(4), Vocab(4, 2)}) {
      for (int input = 0; input < 2; ++input) {
        CHECK(std::abs(oracle::sequence_probability_mass(p, vocab, input, 4, {}) - 1.0) <= 1e-9);
      }
    }
  }
}

TEST_CASE("expected metric examples") {
  ConstSource c(Vocab(3, 0), 3, 0.37);
  CHECK(oracle::exact_expected_metric(PolicyModel(shape_for(3)), c) ==
        doctest::Approx(0.37).epsilon(1e-12));
  CHECK(oracle::optimal_expected_metric(c) == doctest::Approx(0.37));

  // a policy whose output bias makes token 1 overwhelmingly likely
  PolicyModel det(shape_for(2));
  det.params().tail(2) << -60.0, 60.0;
  TableSource table({0.1, 0.2, 0.3, 0.9});
  CHECK(oracle::exact_expected_metric(det, table) == doctest::Approx(0.9).epsilon(1e-12));

  PolicyModel p = PolicyModel::random(shape_for(2), 4, 2.0);
  const std::vector<TokenId> none, zero{0}, one{1};
  const Vector p0 = policy_probs(p, {0, none});
  const Vector pa = policy_probs(p, {0, zero});
  const Vector pb = policy_probs(p, {0, one});
  const double hand = p0[0] * pa[0] * 0.1 + p0[0] * pa[1] * 0.2 + p0[1] * pb[0] * 0.3 +
                      p0[1] * pb[1] * 0.9;
  CHECK(oracle::exact_expected_metric(p, table) == doctest::Approx(hand).epsilon(1e-12));
}

TEST_CASE("optimal metric") {
  auto kw = KeywordTask::generate(6, 2, 3, 5);
  double best = 0.0;
  for (double q : kw.quality()) best = std::max(best, q);
  const double kq = kw.quality()[2];
  CHECK(oracle::optimal_expected_metric(kw) ==
        doctest::Approx(1.0 + std::max(kq, (kq + 2 * best) / 3.0)).epsilon(1e-12));
  CHECK(oracle::optimal_expected_metric(kw) == doctest::Approx(kw.optimal_score()));
  auto avg = AvgQualityTask::generate(5, 3, 1);
  double qmax = 0.0;
  for (double q : avg.quality()) qmax = std::max(qmax, q);
  CHECK(oracle::optimal_expected_metric(avg) == doctest::Approx(qmax).epsilon(1e-12));
  for (int seed = 0; seed < 5; ++seed) {
    PolicyModel p = PolicyModel::random(shape_for(6), seed, 2.0);
    CHECK(oracle::exact_expected_metric(p, kw) <= oracle::optimal_expected_metric(kw) + 1e-12);
  }
}

TEST_CASE("exact policy gradient") {
  const Vocab vocab(3, 0);
  PolicyModel p = PolicyModel::random(shape_for(3, 2), 1, 1.0);
  RewardModel flat(shape_for(3, 2));
  CHECK(oracle::exact_policy_gradient(p, flat, 0.0, vocab, 3, 2).cwiseAbs().maxCoeff() < 1e-15);
  RewardModel r = RewardModel::random(shape_for(3, 2), 2, 1.0);
  for (double alpha : {0.0, 0.125, 1.0}) {
    const auto states = oracle::on_policy_state_weights(p, vocab, 3, 2, {});
    const Vector g = oracle::exact_policy_gradient(p, r, alpha, vocab, 3, 2);
    const Vector numeric = oracle::finite_diff_grad(
        [&](const Vector& x) {
          PolicyModel c = p;
          c.params() = x;
          return oracle::frozen_state_objective(c, r, alpha, states);
        },
        p.params());
    CHECK(oracle::compare_gradients(g, numeric).ok);
  }
}

TEST_CASE("state weights sum to the expected one per trajectory") {
  const Vocab vocab(3, 0);
  PolicyModel p = PolicyModel::random(shape_for(3, 2), 7, 1.0);
  double total = 0.0;
  for (const auto& ws : oracle::on_policy_state_weights(p, vocab, 3, 2, {})) total += ws.weight;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("permutation probabilities") {
  const auto flat = oracle::enumerate_permutation_probs(Vector::Zero(3));
  REQUIRE(flat.size() == 6);
  for (const auto& [order, prob] : flat) CHECK(prob == doctest::Approx(1.0 / 6.0));
  Vector e(3);
  e << 2.0, 1.0, 0.0;
  const auto probs = oracle::enumerate_permutation_probs(e);
  CHECK(probs.front().first == std::vector<int>{0, 1, 2});
  CHECK(probs.front().second == doctest::Approx(0.4863301075752072).epsilon(1e-12));
  const double delta = 0.8;
  Vector two(2);
  two << delta, 0.0;
  const auto pair = oracle::enumerate_permutation_probs(two);
  CHECK(pair[0].second == doctest::Approx(1.0 / (1.0 + std::exp(-delta))).epsilon(1e-14));
  CHECK(pair[1].second == doctest::Approx(1.0 / (1.0 + std::exp(delta))).epsilon(1e-14));
  CHECK_THROWS_AS(oracle::enumerate_permutation_probs(Vector::Zero(7)), Error);
}

TEST_CASE("finite differences") {
  Vector p(3);
  p << 0.5, -1.0, 2.0;
  const Vector q = oracle::finite_diff_grad([](const Vector& x) { return 0.5 * x.squaredNorm(); },
                                            p);
  CHECK((q - p).cwiseAbs().maxCoeff() < 1e-9);
  Vector a(3);
  a << 3.0, -2.0, 0.25;
  const Vector l = oracle::finite_diff_grad([&](const Vector& x) { return a.dot(x); }, p);
  CHECK((l - a).cwiseAbs().maxCoeff() < 1e-9);
  CHECK_THROWS_AS(oracle::finite_diff_grad([](const Vector&) { return NAN; }, p), Error);
  Vector b = a;
  b[1] += 1e-3;
  const auto cmp = oracle::compare_gradients(a, b);
  CHECK_FALSE(cmp.ok);
  CHECK(cmp.worst_index == 1);
}
