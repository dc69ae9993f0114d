#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>

namespace tokenguide {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Max-shifted log-sum-exp; finite for any finite input.
template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  if (x.size() == 0) {
    return -std::numeric_limits<Scalar>::infinity();
  }
  const Scalar shift = x.maxCoeff();
  return shift + std::log((x.array() - shift).exp().sum());
}

template <typename Derived>
VectorX<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  VectorX<Scalar> p = (x.array() - x.maxCoeff()).exp().matrix();
  p /= p.sum();
  return p;
}

template <typename Derived>
VectorX<typename Derived::Scalar> log_softmax(const Eigen::MatrixBase<Derived>& x) {
  return (x.array() - log_sum_exp(x)).matrix();
}

template <typename Scalar>
Scalar sigmoid(Scalar u) {
  if (u >= Scalar(0)) {
    return Scalar(1) / (Scalar(1) + std::exp(-u));
  }
  const Scalar e = std::exp(u);
  return e / (Scalar(1) + e);
}

/// Shannon entropy in nats; zero-probability entries contribute nothing.
template <typename Derived>
typename Derived::Scalar entropy(const Eigen::MatrixBase<Derived>& p) {
  using Scalar = typename Derived::Scalar;
  Scalar h = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] > Scalar(0)) {
      h -= p[i] * std::log(p[i]);
    }
  }
  return h;
}

/// d H(softmax(l)) / d l, written in terms of p = softmax(l).
template <typename Derived>
VectorX<typename Derived::Scalar> entropy_logit_gradient(const Eigen::MatrixBase<Derived>& p) {
  using Scalar = typename Derived::Scalar;
  const Scalar h = entropy(p);
  VectorX<Scalar> g(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    g[i] = p[i] > Scalar(0) ? -p[i] * (std::log(p[i]) + h) : Scalar(0);
  }
  return g;
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& x) {
  return x.allFinite();
}

}  // namespace tokenguide
