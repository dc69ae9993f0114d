#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tokenguide {

using TokenId = std::int32_t;

enum class ErrorCode {
  shape,
  group_too_small,
  empty_trajectory,
  invalid_token,
  interior_eos,
  parameter,
  numeric,
  budget_exceeded,
  infinite_kl,
  config,
  io,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct Vocab {
  int size = 0;
  std::optional<TokenId> eos_id;
  std::vector<std::string> token_names;

  Vocab() = default;
  explicit Vocab(int size, std::optional<TokenId> eos = std::nullopt);

  bool valid(TokenId token) const noexcept { return token >= 0 && token < size; }
  bool is_eos(TokenId token) const noexcept { return eos_id && *eos_id == token; }
  const std::string& name(TokenId token) const;
};

/// A generated sequence a_0..a_{T-1} for LM input `input_id`.
/// The state s_t is (input_id, tokens[0..t)).
struct Trajectory {
  int input_id = 0;
  std::vector<TokenId> tokens;

  int length() const noexcept { return static_cast<int>(tokens.size()); }
  std::span<const TokenId> prefix(int t) const {
    return std::span<const TokenId>(tokens).first(static_cast<std::size_t>(t));
  }
};

/// K trajectories for one input with a total preference ordering.
/// ordering[0] is the index of the most preferred trajectory.
struct PreferenceGroup {
  int input_id = 0;
  std::optional<int> target_id;
  std::vector<Trajectory> trajectories;
  std::vector<int> ordering;
  /// Source scores the ordering was built from, when known.
  std::vector<double> scores;

  int size() const noexcept { return static_cast<int>(trajectories.size()); }
};

struct SupervisedRecord {
  int input_id = 0;
  std::vector<TokenId> target_tokens;
};

/// Orders trajectories by descending score; ties keep generation order.
PreferenceGroup make_group(int input_id, std::vector<Trajectory> trajectories,
                           std::span<const double> scores,
                           std::optional<int> target_id = std::nullopt);

/// Throws on an empty sequence, an out-of-range id or an eos before the end.
void validate_trajectory(const Trajectory& traj, const Vocab& vocab);
void validate_record(const SupervisedRecord& record, const Vocab& vocab);
void validate_group(const PreferenceGroup& group);

bool is_permutation_of_range(std::span<const int> ordering);

}  // namespace tokenguide
