#include "tokenguide/aggregate.hpp"

#include <cmath>
#include <sstream>

namespace tokenguide {

void Aggregation::validate() const {
  if (needs_beta() && !(beta > 0.0 && std::isfinite(beta))) {
    throw Error(ErrorCode::parameter, "soft aggregation needs beta > 0");
  }
}

Aggregation parse_aggregation(std::string_view name, double beta) {
  Aggregation agg;
  if (name == "sum") {
    agg = Aggregation::sum();
  } else if (name == "avg" || name == "average") {
    agg = Aggregation::average();
  } else if (name == "max") {
    agg = Aggregation::soft_max(beta);
  } else if (name == "min") {
    agg = Aggregation::soft_min(beta);
  } else if (name == "last") {
    agg = Aggregation::last();
  } else {
    throw Error(ErrorCode::config, "unknown aggregation '" + std::string(name) + "'");
  }
  agg.validate();
  return agg;
}

std::string to_string(const Aggregation& agg) {
  switch (agg.kind) {
    case Aggregation::Kind::sum: return "sum";
    case Aggregation::Kind::average: return "avg";
    case Aggregation::Kind::last: return "last";
    case Aggregation::Kind::soft_max:
    case Aggregation::Kind::soft_min: {
      std::ostringstream os;
      os << (agg.kind == Aggregation::Kind::soft_max ? "max" : "min") << "(beta=" << agg.beta
         << ")";
      return os.str();
    }
  }
  return "?";
}

double mean_length(const PreferenceGroup& group) {
  if (group.trajectories.empty()) {
    throw Error(ErrorCode::group_too_small, "mean length of an empty group");
  }
  double total = 0.0;
  for (const auto& traj : group.trajectories) {
    total += traj.length();
  }
  return total / static_cast<double>(group.trajectories.size());
}

}  // namespace tokenguide
