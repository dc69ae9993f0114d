#include "doctest.h"
#include "tokenguide/core.hpp"

#include <functional>
#include <vector>

using namespace tokenguide;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::io;
}

std::vector<Trajectory> trajs(int n) {
  std::vector<Trajectory> out;
  for (int i = 0; i < n; ++i) out.push_back({0, {i % 2}});
  return out;
}

}  // namespace

TEST_CASE("vocab invariants") {
  CHECK_THROWS_AS(Vocab(1), Error);
  CHECK_THROWS_AS(Vocab(4, 4), Error);
  Vocab v(4, 3);
  CHECK(v.is_eos(3));
  CHECK_FALSE(v.is_eos(2));
  CHECK(v.valid(0));
  CHECK_FALSE(v.valid(4));
  CHECK(v.token_names.size() == 4);
}

TEST_CASE("make_group orders by descending score") {
  auto order = [](std::vector<double> scores) {
    return make_group(0, trajs(static_cast<int>(scores.size())), scores).ordering;
  };
  CHECK(order({0.9, 0.1}) == std::vector<int>{0, 1});
  CHECK(order({0.5, 0.5}) == std::vector<int>{0, 1});
  CHECK(order({1, 3, 2}) == std::vector<int>{1, 2, 0});
  CHECK(order({2, 2, 5, 2}) == std::vector<int>{2, 0, 1, 3});
}

TEST_CASE("make_group errors") {
  std::vector<double> one{1.0};
  CHECK(code_of([&] { make_group(0, trajs(1), one); }) == ErrorCode::group_too_small);
  std::vector<double> three{1.0, 2.0, 3.0};
  CHECK(code_of([&] { make_group(0, trajs(2), three); }) == ErrorCode::shape);
}

TEST_CASE("make_group is idempotent on its induced scores") {
  std::vector<double> scores{0.3, 0.9, 0.1, 0.9, 0.5};
  auto g = make_group(0, trajs(5), scores);
  std::vector<Trajectory> sorted;
  std::vector<double> sorted_scores;
  for (int i : g.ordering) {
    sorted.push_back(g.trajectories[static_cast<std::size_t>(i)]);
    sorted_scores.push_back(scores[static_cast<std::size_t>(i)]);
  }
  auto again = make_group(0, sorted, sorted_scores);
  CHECK(again.ordering == std::vector<int>{0, 1, 2, 3, 4});
}

TEST_CASE("identical trajectories are both kept") {
  std::vector<Trajectory> same{{0, {1, 2}}, {0, {1, 2}}};
  std::vector<double> scores{0.4, 0.4};
  auto g = make_group(0, same, scores);
  CHECK(g.size() == 2);
  CHECK(g.ordering == std::vector<int>{0, 1});
}

TEST_CASE("validate_trajectory") {
  Vocab v(4, 3);
  CHECK_NOTHROW(validate_trajectory({0, {1, 2, 3}}, v));
  CHECK(code_of([&] { validate_trajectory({0, {1, 3, 2}}, v); }) == ErrorCode::interior_eos);
  CHECK(code_of([&] { validate_trajectory({0, {}}, v); }) == ErrorCode::empty_trajectory);
  CHECK(code_of([&] { validate_trajectory({0, {1, 7}}, v); }) == ErrorCode::invalid_token);
}

TEST_CASE("validate_group and records") {
  PreferenceGroup g = make_group(0, trajs(3), std::vector<double>{1, 2, 3});
  CHECK_NOTHROW(validate_group(g));
  g.ordering = {0, 0, 1};
  CHECK_THROWS_AS(validate_group(g), Error);
  g = make_group(0, trajs(2), std::vector<double>{1, 2});
  g.trajectories[1].input_id = 5;
  CHECK_THROWS_AS(validate_group(g), Error);
  Vocab v(3);
  CHECK_NOTHROW(validate_record({0, {1, 2}}, v));
  CHECK_THROWS_AS(validate_record({0, {}}, v), Error);
}
