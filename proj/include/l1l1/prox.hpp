#pragma once

// Thresholding operators used as activations of the unfolded network.
//
// The l1-l1 proximal map
//
//   phi_{g1,g2,v}(u) = argmin_h  1/2 (h - u)^2 + g1 |h| + g2 |h - v|
//
// is piecewise affine in (u, v, g1, g2) with five pieces. Pieces are
// selected with half-open intervals: lower bound inclusive, upper exclusive.

#include <array>
#include <cmath>
#include <string>
#include <type_traits>

#include <Eigen/Core>

#include "l1l1/errors.hpp"

namespace l1l1 {

template <typename Scalar = double>
struct ProxParams {
  Scalar gamma1{0};
  Scalar gamma2{0};

  ProxParams() = default;
  ProxParams(Scalar g1, Scalar g2) : gamma1(g1), gamma2(g2) {
    if (!(g1 >= Scalar(0)) || !(g2 >= Scalar(0)) || !std::isfinite(g1) || !std::isfinite(g2))
      throw ParameterError("ProxParams: thresholds must be finite and non-negative");
  }

  /// gamma_i = lambda_i / alpha
  static ProxParams from_regularization(Scalar lambda1, Scalar lambda2, Scalar alpha) {
    if (!(alpha > Scalar(0))) throw ParameterError("ProxParams: alpha must be positive");
    return ProxParams(lambda1 / alpha, lambda2 / alpha);
  }
};

/// Partial derivatives of the prox output inside the active piece. Each is -1, 0 or +1.
template <typename Scalar = double>
struct ProxDerivative {
  Scalar d_u{0};
  Scalar d_v{0};
  Scalar d_gamma1{0};
  Scalar d_gamma2{0};
};

/// Which affine piece of the l1-l1 prox is active.
enum class ProxCase {
  kShiftDownBoth,  // u - g1 - g2
  kClampToV,       // v
  kShiftDownOne,   // u - g1 + g2
  kShiftUpOne,     // u + g1 - g2
  kZero,           // 0
  kShiftUpBoth,    // u + g1 + g2
};

template <typename T>
using NonDeduced = std::type_identity_t<T>;

template <typename Scalar>
Scalar soft_threshold(Scalar u, Scalar gamma) {
  if (!(gamma >= Scalar(0))) throw ParameterError("soft_threshold: gamma must be non-negative");
  const Scalar mag = std::abs(u) - gamma;
  if (mag <= Scalar(0)) return Scalar(0);
  return u > Scalar(0) ? mag : -mag;
}

namespace detail {

template <typename Scalar>
void check_finite(Scalar u, Scalar v, const char* who) {
  if (!std::isfinite(u) || !std::isfinite(v))
    throw ParameterError(std::string(who) + ": non-finite input");
}

}  // namespace detail

template <typename Scalar>
ProxCase l1l1_prox_case(NonDeduced<Scalar> u, NonDeduced<Scalar> v, const ProxParams<Scalar>& p) {
  const Scalar g1 = p.gamma1;
  const Scalar g2 = p.gamma2;
  if (v >= Scalar(0)) {
    if (u >= v + g1 + g2) return ProxCase::kShiftDownBoth;
    if (u >= v + g1 - g2) return ProxCase::kClampToV;
    if (u >= g1 - g2) return ProxCase::kShiftDownOne;
    if (u >= -g1 - g2) return ProxCase::kZero;
    return ProxCase::kShiftUpBoth;
  }
  if (u >= g1 + g2) return ProxCase::kShiftDownBoth;
  if (u >= -g1 + g2) return ProxCase::kZero;
  if (u >= v - g1 + g2) return ProxCase::kShiftUpOne;
  if (u >= v - g1 - g2) return ProxCase::kClampToV;
  return ProxCase::kShiftUpBoth;
}

template <typename Scalar>
Scalar l1l1_prox(NonDeduced<Scalar> u, NonDeduced<Scalar> v, const ProxParams<Scalar>& p) {
  detail::check_finite(u, v, "l1l1_prox");
  const Scalar g1 = p.gamma1;
  const Scalar g2 = p.gamma2;
  switch (l1l1_prox_case(u, v, p)) {
    case ProxCase::kShiftDownBoth: return u - g1 - g2;
    case ProxCase::kClampToV: return v;
    case ProxCase::kShiftDownOne: return u - g1 + g2;
    case ProxCase::kShiftUpOne: return u + g1 - g2;
    case ProxCase::kZero: return Scalar(0);
    case ProxCase::kShiftUpBoth: return u + g1 + g2;
  }
  return Scalar(0);
}

template <typename Scalar>
ProxDerivative<Scalar> l1l1_prox_grad(NonDeduced<Scalar> u, NonDeduced<Scalar> v, const ProxParams<Scalar>& p) {
  detail::check_finite(u, v, "l1l1_prox_grad");
  switch (l1l1_prox_case(u, v, p)) {
    case ProxCase::kShiftDownBoth: return {1, 0, -1, -1};
    case ProxCase::kClampToV: return {0, 1, 0, 0};
    case ProxCase::kShiftDownOne: return {1, 0, -1, 1};
    case ProxCase::kShiftUpOne: return {1, 0, 1, -1};
    case ProxCase::kZero: return {0, 0, 0, 0};
    case ProxCase::kShiftUpBoth: return {1, 0, 1, 1};
  }
  return {};
}

/// Distance from u to the nearest piece boundary of phi_{g1,g2,v}.
template <typename Scalar>
Scalar l1l1_prox_boundary_distance(NonDeduced<Scalar> u, NonDeduced<Scalar> v, const ProxParams<Scalar>& p) {
  const Scalar g1 = p.gamma1;
  const Scalar g2 = p.gamma2;
  const std::array<Scalar, 4> edges =
      v >= Scalar(0) ? std::array<Scalar, 4>{v + g1 + g2, v + g1 - g2, g1 - g2, -g1 - g2}
                     : std::array<Scalar, 4>{g1 + g2, -g1 + g2, v - g1 + g2, v - g1 - g2};
  Scalar best = std::abs(u - edges[0]);
  for (Scalar e : edges) best = std::min(best, std::abs(u - e));
  return best;
}

/// Elementwise l1-l1 prox of u toward the reference vector v.
template <typename DerivedU, typename DerivedV>
Eigen::Matrix<typename DerivedU::Scalar, Eigen::Dynamic, 1> l1l1_prox_vec(
    const Eigen::MatrixBase<DerivedU>& u, const Eigen::MatrixBase<DerivedV>& v,
    const ProxParams<typename DerivedU::Scalar>& p) {
  using Scalar = typename DerivedU::Scalar;
  detail::require_dims(u.size() == v.size(), "l1l1_prox_vec: u and v differ in length");
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(u.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) out(i) = l1l1_prox(u(i), v(i), p);
  return out;
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> soft_threshold_vec(
    const Eigen::MatrixBase<Derived>& u, typename Derived::Scalar gamma) {
  using Scalar = typename Derived::Scalar;
  if (!(gamma >= Scalar(0))) throw ParameterError("soft_threshold: gamma must be non-negative");
  return u.unaryExpr([gamma](Scalar x) { return soft_threshold(x, gamma); });
}

/// Brute-force reference for l1l1_prox: minimizes the prox objective over the
/// finite set of kinks and stationary points. Independent of the piecewise formula.
template <typename Scalar>
Scalar prox_oracle(NonDeduced<Scalar> u, NonDeduced<Scalar> v, const ProxParams<Scalar>& p) {
  detail::check_finite(u, v, "prox_oracle");
  using Wide = long double;
  const Wide uu = u, vv = v, g1 = p.gamma1, g2 = p.gamma2;
  const std::array<Wide, 6> candidates{0, vv, uu - g1 - g2, uu - g1 + g2, uu + g1 - g2, uu + g1 + g2};
  auto objective = [&](Wide h) {
    return Wide(0.5) * (h - uu) * (h - uu) + g1 * std::abs(h) + g2 * std::abs(h - vv);
  };
  Wide best_h = candidates[0];
  Wide best_f = objective(best_h);
  for (Wide h : candidates) {
    const Wide f = objective(h);
    if (f < best_f) {
      best_f = f;
      best_h = h;
    }
  }
  return static_cast<Scalar>(best_h);
}

}  // namespace l1l1
