#pragma once

#include <cmath>
#include <numbers>

#include <Eigen/Core>

#include "l1l1/errors.hpp"

namespace l1l1 {

/// 1-D overcomplete DCT, rows x atoms, entries cos(pi (2p+1) q / (2 atoms)),
/// columns scaled to unit Euclidean norm.
template <typename Scalar = double>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> overcomplete_dct_1d(Eigen::Index rows, Eigen::Index atoms) {
  if (rows < 1 || atoms < 1) throw ParameterError("overcomplete_dct_1d: sizes must be positive");
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> c(rows, atoms);
  for (Eigen::Index q = 0; q < atoms; ++q)
    for (Eigen::Index p = 0; p < rows; ++p)
      c(p, q) = Scalar(std::cos(std::numbers::pi * double(2 * p + 1) * double(q) / double(2 * atoms)));
  c.colwise().normalize();
  return c;
}

namespace detail {

inline Eigen::Index exact_sqrt(Eigen::Index v) {
  auto r = Eigen::Index(std::llround(std::sqrt(double(v))));
  return r * r == v ? r : 0;
}

}  // namespace detail

/// Overcomplete DCT dictionary (n x d). When n and d are both perfect squares the
/// atoms are separable 2-D cosines, kron(C, C) with C the sqrt(n) x sqrt(d) 1-D
/// dictionary; otherwise the 1-D construction is used directly.
template <typename Scalar = double>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> overcomplete_dct(Eigen::Index n, Eigen::Index d) {
  const Eigen::Index rn = detail::exact_sqrt(n);
  const Eigen::Index rd = detail::exact_sqrt(d);
  if (rn == 0 || rd == 0) return overcomplete_dct_1d<Scalar>(n, d);

  const auto c = overcomplete_dct_1d<Scalar>(rn, rd);
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(n, d);
  for (Eigen::Index i = 0; i < rn; ++i)
    for (Eigen::Index j = 0; j < rd; ++j) out.block(i * rn, j * rd, rn, rd) = c(i, j) * c;
  out.colwise().normalize();
  return out;
}

}  // namespace l1l1
