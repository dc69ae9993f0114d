#include "tokenguide/core.hpp"

#include <algorithm>
#include <numeric>

namespace tokenguide {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::shape: return "shape error";
    case ErrorCode::group_too_small: return "group too small";
    case ErrorCode::empty_trajectory: return "empty trajectory";
    case ErrorCode::invalid_token: return "invalid token";
    case ErrorCode::interior_eos: return "interior eos";
    case ErrorCode::parameter: return "parameter error";
    case ErrorCode::numeric: return "numeric error";
    case ErrorCode::budget_exceeded: return "budget exceeded";
    case ErrorCode::infinite_kl: return "infinite KL";
    case ErrorCode::config: return "config error";
    case ErrorCode::io: return "io error";
  }
  return "error";
}

Vocab::Vocab(int size_, std::optional<TokenId> eos) : size(size_), eos_id(eos) {
  if (size < 2) {
    throw Error(ErrorCode::parameter, "vocabulary needs at least 2 tokens");
  }
  if (eos_id && !valid(*eos_id)) {
    throw Error(ErrorCode::invalid_token, "eos id outside vocabulary");
  }
  token_names.reserve(static_cast<std::size_t>(size));
  for (int i = 0; i < size; ++i) {
    token_names.push_back(is_eos(i) ? "<eos>" : "t" + std::to_string(i));
  }
}

const std::string& Vocab::name(TokenId token) const {
  if (!valid(token)) {
    throw Error(ErrorCode::invalid_token, "token " + std::to_string(token));
  }
  return token_names.at(static_cast<std::size_t>(token));
}

bool is_permutation_of_range(std::span<const int> ordering) {
  std::vector<char> seen(ordering.size(), 0);
  for (int idx : ordering) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= ordering.size() || seen[idx]) {
      return false;
    }
    seen[idx] = 1;
  }
  return true;
}

PreferenceGroup make_group(int input_id, std::vector<Trajectory> trajectories,
                           std::span<const double> scores,
                           std::optional<int> target_id) {
  if (scores.size() != trajectories.size()) {
    throw Error(ErrorCode::shape, "scores and trajectories differ in length");
  }
  if (trajectories.size() < 2) {
    throw Error(ErrorCode::group_too_small, "a preference group needs K >= 2");
  }
  PreferenceGroup group;
  group.input_id = input_id;
  group.target_id = target_id;
  group.ordering.resize(trajectories.size());
  std::iota(group.ordering.begin(), group.ordering.end(), 0);
  std::stable_sort(group.ordering.begin(), group.ordering.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  group.trajectories = std::move(trajectories);
  group.scores.assign(scores.begin(), scores.end());
  validate_group(group);
  return group;
}

void validate_trajectory(const Trajectory& traj, const Vocab& vocab) {
  if (traj.tokens.empty()) {
    throw Error(ErrorCode::empty_trajectory, "trajectory has no tokens");
  }
  const auto n = traj.tokens.size();
  for (std::size_t t = 0; t < n; ++t) {
    const TokenId token = traj.tokens[t];
    if (!vocab.valid(token)) {
      throw Error(ErrorCode::invalid_token,
                  "token " + std::to_string(token) + " at step " + std::to_string(t));
    }
    if (vocab.is_eos(token) && t + 1 != n) {
      throw Error(ErrorCode::interior_eos, "eos at step " + std::to_string(t));
    }
  }
}

void validate_record(const SupervisedRecord& record, const Vocab& vocab) {
  if (record.target_tokens.empty()) {
    throw Error(ErrorCode::empty_trajectory, "supervised target is empty");
  }
  for (TokenId token : record.target_tokens) {
    if (!vocab.valid(token)) {
      throw Error(ErrorCode::invalid_token, "target token " + std::to_string(token));
    }
  }
}

void validate_group(const PreferenceGroup& group) {
  if (group.trajectories.size() < 2) {
    throw Error(ErrorCode::group_too_small, "a preference group needs K >= 2");
  }
  if (group.ordering.size() != group.trajectories.size() ||
      !is_permutation_of_range(group.ordering)) {
    throw Error(ErrorCode::shape, "ordering is not a permutation of the group");
  }
  for (const auto& traj : group.trajectories) {
    if (traj.input_id != group.input_id) {
      throw Error(ErrorCode::shape, "trajectories in a group must share the input");
    }
  }
}

}  // namespace tokenguide
