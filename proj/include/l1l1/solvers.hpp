#pragma once

// Iterative reference solvers for sparse recovery from compressive
// measurements x = A s, s = D h:
//
//   ista                 per-frame l1 recovery (soft thresholding)
//   sista_solve_sequence l1 recovery with an l2 penalty tying D h_t to F D h_{t-1}
//   l1l1_solve_sequence  proximal gradient on the l1-l1 objective,
//                        warm started at G h_{t-1} with K inner steps
//
// Sequences are stored column-wise: x_seq is m x T, codes are d x T.

#include <cmath>
#include <iostream>
#include <random>
#include <type_traits>

#include <Eigen/Core>

#include "l1l1/errors.hpp"
#include "l1l1/prox.hpp"

namespace l1l1 {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
// Non-deduced parameter: lets callers pass Eigen expressions and plain literals.
template <typename T>
using Same = std::type_identity_t<T>;

template <typename Scalar = double>
struct Operators {
  Mat<Scalar> A;  // m x n sensing matrix
  Mat<Scalar> D;  // n x d dictionary
  Mat<Scalar> G;  // d x d code-space transition
  Mat<Scalar> F;  // n x n signal-space transition, only used by the sista baseline

  Eigen::Index m() const { return A.rows(); }
  Eigen::Index n() const { return A.cols(); }
  Eigen::Index d() const { return D.cols(); }

  /// True when m <= n <= d.
  bool is_compressive() const { return m() <= n() && n() <= d(); }

  void validate() const {
    detail::require_dims(D.rows() == A.cols(), "Operators: A is m x n but D is not n x d");
    detail::require_dims(G.size() == 0 || (G.rows() == d() && G.cols() == d()),
                         "Operators: G must be d x d");
    detail::require_dims(F.size() == 0 || (F.rows() == n() && F.cols() == n()),
                         "Operators: F must be n x n");
    if (!A.allFinite() || !D.allFinite() || !G.allFinite() || !F.allFinite())
      throw ParameterError("Operators: non-finite entries");
  }

  /// The effective sensing-dictionary product A D (m x d).
  Mat<Scalar> sensing_dictionary() const { return A * D; }
};

template <typename Scalar = double>
struct SolverConfig {
  Scalar alpha{1};
  Scalar lambda1{0};
  Scalar lambda2{0};
  int inner_iters{1};
  /// Early exit when the sup-norm of the iterate change drops below this. 0 runs all K steps.
  Scalar tolerance{0};

  void validate() const {
    if (!(alpha > Scalar(0)) || !std::isfinite(alpha)) throw ParameterError("SolverConfig: alpha must be > 0");
    if (!(lambda1 >= Scalar(0)) || !(lambda2 >= Scalar(0)))
      throw ParameterError("SolverConfig: lambda1 and lambda2 must be >= 0");
    if (inner_iters < 1) throw ParameterError("SolverConfig: inner_iters must be >= 1");
    if (!(tolerance >= Scalar(0))) throw ParameterError("SolverConfig: tolerance must be >= 0");
  }
};

struct NoObserver {
  template <typename V>
  void operator()(Eigen::Index, int, const V&) const {}
};

namespace detail {

template <typename Scalar>
void check_sequence(const Operators<Scalar>& ops, Eigen::Index x_rows, Eigen::Index h_size) {
  ops.validate();
  require_dims(x_rows == ops.m(), "measurement length does not match A");
  require_dims(h_size == ops.d(), "code length does not match D");
}

/// h - (1/alpha) (AD)^T (AD h - x), with AD passed pre-multiplied.
template <typename Scalar>
Vec<Scalar> gradient_step(const Mat<Scalar>& ad, const Vec<Scalar>& h, const Vec<Scalar>& x, Scalar alpha) {
  const Vec<Scalar> residual = ad * h - x;
  return h - (ad.transpose() * residual) / alpha;
}

}  // namespace detail

/// 1/2 ||x - A D h||^2 + lambda ||h||_1
template <typename Scalar, typename DerivedH, typename DerivedX>
Scalar objective_l1(const Eigen::MatrixBase<DerivedH>& h, const Eigen::MatrixBase<DerivedX>& x,
                    const Operators<Scalar>& ops, Scalar lambda) {
  detail::check_sequence(ops, x.size(), h.size());
  const Vec<Scalar> r = x - ops.A * (ops.D * h);
  return Scalar(0.5) * r.squaredNorm() + lambda * h.template lpNorm<1>();
}

/// 1/2 ||x_t - A D h_t||^2 + lambda1 ||h_t||_1 + lambda2 ||h_t - G h_prev||_1
template <typename Scalar, typename DerivedH, typename DerivedX, typename DerivedP>
Scalar objective_l1l1(const Eigen::MatrixBase<DerivedH>& h_t, const Eigen::MatrixBase<DerivedX>& x_t,
                      const Eigen::MatrixBase<DerivedP>& h_prev, const Operators<Scalar>& ops,
                      Scalar lambda1, Scalar lambda2) {
  detail::check_sequence(ops, x_t.size(), h_t.size());
  detail::require_dims(h_prev.size() == h_t.size(), "objective_l1l1: h_prev length");
  const Vec<Scalar> r = x_t - ops.A * (ops.D * h_t);
  const Vec<Scalar> innovation = h_t - ops.G * h_prev;
  return Scalar(0.5) * r.squaredNorm() + lambda1 * h_t.template lpNorm<1>() +
         lambda2 * innovation.template lpNorm<1>();
}

/// 1/2 ||x_t - A D h_t||^2 + lambda1 ||h_t||_1 + lambda2/2 ||D h_t - F D h_prev||^2
template <typename Scalar, typename DerivedH, typename DerivedX, typename DerivedP>
Scalar objective_sista(const Eigen::MatrixBase<DerivedH>& h_t, const Eigen::MatrixBase<DerivedX>& x_t,
                       const Eigen::MatrixBase<DerivedP>& h_prev, const Operators<Scalar>& ops,
                       Scalar lambda1, Scalar lambda2) {
  detail::check_sequence(ops, x_t.size(), h_t.size());
  const Vec<Scalar> r = x_t - ops.A * (ops.D * h_t);
  const Vec<Scalar> s_prev = ops.D * h_prev;
  const Vec<Scalar> drift = ops.D * h_t - (ops.F.size() ? Vec<Scalar>(ops.F * s_prev) : s_prev);
  return Scalar(0.5) * r.squaredNorm() + lambda1 * h_t.template lpNorm<1>() +
         Scalar(0.5) * lambda2 * drift.squaredNorm();
}

/// ISTA on the l1 problem. iters = 0 returns h_init.
template <typename Scalar, typename Observer = NoObserver>
Vec<Scalar> ista(const Same<Vec<Scalar>>& x, const Operators<Scalar>& ops, Same<Scalar> lambda, Same<Scalar> alpha,
                 int iters, const Same<Vec<Scalar>>& h_init, Same<Scalar> tolerance = Scalar(0),
                 Observer&& observe = {}) {
  detail::check_sequence(ops, x.size(), h_init.size());
  if (!(alpha > Scalar(0))) throw ParameterError("ista: alpha must be > 0");
  if (!(lambda >= Scalar(0))) throw ParameterError("ista: lambda must be >= 0");
  const Mat<Scalar> ad = ops.sensing_dictionary();
  const Scalar gamma = lambda / alpha;
  Vec<Scalar> h = h_init;
  for (int k = 0; k < iters; ++k) {
    Vec<Scalar> next = soft_threshold_vec(detail::gradient_step(ad, h, x, alpha), gamma);
    observe(Eigen::Index(0), k + 1, next);
    const Scalar change = (next - h).template lpNorm<Eigen::Infinity>();
    h.swap(next);
    if (tolerance > Scalar(0) && change < tolerance) break;
  }
  return h;
}

/// Proximal gradient for the l1-l1 problem over a whole sequence.
/// Returns the final inner iterate of every frame as a d x T matrix.
template <typename Scalar, typename Observer = NoObserver>
Mat<Scalar> l1l1_solve_sequence(const Same<Mat<Scalar>>& x_seq, const Operators<Scalar>& ops,
                                const SolverConfig<Scalar>& cfg, const Same<Vec<Scalar>>& h0,
                                Observer&& observe = {}) {
  detail::check_sequence(ops, x_seq.rows(), h0.size());
  detail::require_dims(ops.G.size() != 0, "l1l1_solve_sequence: G is required");
  cfg.validate();
  const Mat<Scalar> ad = ops.sensing_dictionary();
  const auto prox = ProxParams<Scalar>::from_regularization(cfg.lambda1, cfg.lambda2, cfg.alpha);

  Mat<Scalar> codes(ops.d(), x_seq.cols());
  Vec<Scalar> h_prev = h0;
  for (Eigen::Index t = 0; t < x_seq.cols(); ++t) {
    const Vec<Scalar> x = x_seq.col(t);
    const Vec<Scalar> v = ops.G * h_prev;
    Vec<Scalar> h = v;
    for (int k = 0; k < cfg.inner_iters; ++k) {
      Vec<Scalar> next = l1l1_prox_vec(detail::gradient_step(ad, h, x, cfg.alpha), v, prox);
      observe(t, k + 1, next);
      const Scalar change = (next - h).template lpNorm<Eigen::Infinity>();
      h.swap(next);
      if (cfg.tolerance > Scalar(0) && change < cfg.tolerance) break;
    }
    codes.col(t) = h;
    h_prev = h;
  }
  return codes;
}

/// Proximal gradient on the l2-coupled (sista) problem. Each frame starts from
/// the previous frame's code (h0 for the first frame); F defaults to identity.
template <typename Scalar, typename Observer = NoObserver>
Mat<Scalar> sista_solve_sequence(const Same<Mat<Scalar>>& x_seq, const Operators<Scalar>& ops,
                                 const SolverConfig<Scalar>& cfg, const Same<Vec<Scalar>>& h0,
                                 Observer&& observe = {}) {
  detail::check_sequence(ops, x_seq.rows(), h0.size());
  cfg.validate();
  const Mat<Scalar> ad = ops.sensing_dictionary();
  const Scalar gamma = cfg.lambda1 / cfg.alpha;
  const bool coupled = cfg.lambda2 != Scalar(0);

  Mat<Scalar> codes(ops.d(), x_seq.cols());
  Vec<Scalar> h_prev = h0;
  for (Eigen::Index t = 0; t < x_seq.cols(); ++t) {
    const Vec<Scalar> x = x_seq.col(t);
    Vec<Scalar> target;
    if (coupled) {
      const Vec<Scalar> s_prev = ops.D * h_prev;
      target = ops.F.size() ? Vec<Scalar>(ops.F * s_prev) : s_prev;
    }
    Vec<Scalar> h = h_prev;
    for (int k = 0; k < cfg.inner_iters; ++k) {
      Vec<Scalar> u;
      if (coupled) {
        Vec<Scalar> grad = ad.transpose() * (ad * h - x);
        grad += cfg.lambda2 * (ops.D.transpose() * (ops.D * h - target));
        u = h - grad / cfg.alpha;
      } else {
        u = detail::gradient_step(ad, h, x, cfg.alpha);
      }
      Vec<Scalar> next = soft_threshold_vec(u, gamma);
      observe(t, k + 1, next);
      const Scalar change = (next - h).template lpNorm<Eigen::Infinity>();
      h.swap(next);
      if (cfg.tolerance > Scalar(0) && change < cfg.tolerance) break;
    }
    codes.col(t) = h;
    h_prev = h;
  }
  return codes;
}

/// Largest eigenvalue of (AD)^T (AD) by power iteration, times a 1.01 safety factor.
/// This is an upper bound on the Lipschitz constant of the data-fit gradient.
template <typename Scalar>
Scalar power_iteration_bound(const Operators<Scalar>& ops, int iters) {
  if (iters < 1) throw ParameterError("power_iteration_bound: iters must be >= 1");
  ops.validate();
  const Mat<Scalar> ad = ops.sensing_dictionary();
  if (ad.size() == 0 || ad.isZero(Scalar(0))) return Scalar(0);

  std::mt19937_64 rng(0x5eed);
  std::uniform_real_distribution<double> unif(0.5, 1.5);
  Vec<Scalar> q(ad.cols());
  for (Eigen::Index i = 0; i < q.size(); ++i) q(i) = Scalar(unif(rng));
  q.normalize();
  Scalar rayleigh(0);
  for (int it = 0; it < iters; ++it) {
    Vec<Scalar> next = ad.transpose() * (ad * q);
    rayleigh = q.dot(next);
    const Scalar norm = next.norm();
    if (norm == Scalar(0)) return Scalar(0);
    q = next / norm;
  }
  rayleigh = (ad * q).squaredNorm();
  return Scalar(1.01) * rayleigh;
}

/// Prints a warning when alpha is below the Lipschitz bound; returns whether alpha is safe.
template <typename Scalar>
bool check_step_size(const Operators<Scalar>& ops, Same<Scalar> alpha, std::ostream& log = std::cerr) {
  const Scalar bound = power_iteration_bound(ops, 200);
  if (alpha < bound) {
    log << "warning: alpha=" << alpha << " is below the Lipschitz bound " << bound
        << "; descent is not guaranteed\n";
    return false;
  }
  return true;
}

}  // namespace l1l1
