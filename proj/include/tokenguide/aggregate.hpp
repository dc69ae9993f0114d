#pragma once

#include "tokenguide/core.hpp"
#include "tokenguide/numeric.hpp"

#include <string>
#include <string_view>

namespace tokenguide {

/// How per-step rewards of one trajectory become a sequence evaluation e(tau).
///
/// `last` is the sequence-level variant: the reward model is read only at the
/// final state and no aggregation takes place.
struct Aggregation {
  enum class Kind { sum, average, soft_max, soft_min, last };

  Kind kind = Kind::sum;
  double beta = 1.0;

  static Aggregation sum() { return {Kind::sum, 1.0}; }
  static Aggregation average() { return {Kind::average, 1.0}; }
  static Aggregation soft_max(double beta) { return {Kind::soft_max, beta}; }
  static Aggregation soft_min(double beta) { return {Kind::soft_min, beta}; }
  static Aggregation last() { return {Kind::last, 1.0}; }

  bool needs_beta() const noexcept { return kind == Kind::soft_max || kind == Kind::soft_min; }
  void validate() const;
};

/// Parses the CLI spelling: sum, avg, max, min (and `last`).
Aggregation parse_aggregation(std::string_view name, double beta = 1.0);
std::string to_string(const Aggregation& agg);

/// Average trajectory length of the group: C = (1/K) sum_k T^k.
double mean_length(const PreferenceGroup& group);

template <typename Scalar>
struct AggregateResult {
  Scalar value;
  VectorX<Scalar> grad;  // d value / d rewards
};

/// Sequence evaluation e from per-step rewards and the group's mean length C.
template <typename Derived>
AggregateResult<typename Derived::Scalar> aggregate(const Eigen::MatrixBase<Derived>& rewards,
                                                    typename Derived::Scalar mean_len,
                                                    const Aggregation& agg) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = rewards.size();
  if (n == 0) {
    throw Error(ErrorCode::empty_trajectory, "aggregate needs at least one reward");
  }
  if (!(mean_len > Scalar(0))) {
    throw Error(ErrorCode::parameter, "mean length C must be positive");
  }
  agg.validate();
  if (!rewards.allFinite()) {
    throw Error(ErrorCode::numeric, "non-finite reward");
  }

  AggregateResult<Scalar> out{Scalar(0), VectorX<Scalar>::Zero(n)};
  switch (agg.kind) {
    case Aggregation::Kind::sum:
      out.value = rewards.sum();
      out.grad.setOnes();
      break;
    case Aggregation::Kind::average: {
      const Scalar scale = mean_len / static_cast<Scalar>(n);
      out.value = scale * rewards.sum();
      out.grad.setConstant(scale);
      break;
    }
    case Aggregation::Kind::soft_max:
    case Aggregation::Kind::soft_min: {
      // soft_min is soft_max with beta -> -beta.
      const Scalar beta = agg.kind == Aggregation::Kind::soft_max ? Scalar(agg.beta)
                                                                   : Scalar(-agg.beta);
      const VectorX<Scalar> scaled = rewards / beta;
      out.value = mean_len * beta * log_sum_exp(scaled);
      out.grad = mean_len * softmax(scaled);
      break;
    }
    case Aggregation::Kind::last:
      out.value = rewards[n - 1];
      out.grad[n - 1] = Scalar(1);
      break;
  }
  return out;
}

}  // namespace tokenguide
