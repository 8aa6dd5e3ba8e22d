#pragma once

// The unfolded l1-l1 recurrent network and the plain stacked-RNN baseline.
//
// Unfolded network, for t = 1..T with p = h^(K)_{t-1} (p = h0 at t = 1):
//
//   v        = G p
//   h^(1)_t  = phi(W1 p + U x_t ; v)
//   h^(k)_t  = phi(S h^(k-1)_t + U x_t ; v),   k = 2..K
//   shat_t   = V h^(K)_t
//
// with U = D^T A^T / alpha, S = I - D^T A^T A D / alpha, W1 = S G, V = D and
// phi the l1-l1 prox with thresholds lambda1/alpha and lambda2/alpha.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "l1l1/errors.hpp"
#include "l1l1/prox.hpp"
#include "l1l1/solvers.hpp"

namespace l1l1 {

template <typename Scalar = double>
struct ModelParams {
  Mat<Scalar> A;   // m x n
  Mat<Scalar> D;   // n x d
  Mat<Scalar> G;   // d x d
  Vec<Scalar> h0;  // d
  Scalar alpha{1};
  Scalar lambda1{1};
  Scalar lambda2{0.01};
  int K{3};

  Eigen::Index m() const { return A.rows(); }
  Eigen::Index n() const { return A.cols(); }
  Eigen::Index d() const { return D.cols(); }

  void validate() const {
    detail::require_dims(D.rows() == A.cols(), "ModelParams: D must have n rows");
    detail::require_dims(G.rows() == d() && G.cols() == d(), "ModelParams: G must be d x d");
    detail::require_dims(h0.size() == d(), "ModelParams: h0 must have length d");
    if (K < 1) throw ParameterError("ModelParams: K must be >= 1");
    if (!(alpha > Scalar(0))) throw ParameterError("ModelParams: alpha must be > 0");
    if (!(lambda1 >= Scalar(0)) || !(lambda2 >= Scalar(0)))
      throw ParameterError("ModelParams: lambda1 and lambda2 must be >= 0");
    if (!A.allFinite() || !D.allFinite() || !G.allFinite() || !h0.allFinite())
      throw ParameterError("ModelParams: non-finite entries");
  }

  ProxParams<Scalar> prox() const { return ProxParams<Scalar>::from_regularization(lambda1, lambda2, alpha); }

  Operators<Scalar> operators() const { return Operators<Scalar>{A, D, G, {}}; }

  SolverConfig<Scalar> solver_config() const { return SolverConfig<Scalar>{alpha, lambda1, lambda2, K, Scalar(0)}; }
};

template <typename Scalar = double>
struct UnfoldedWeights {
  Mat<Scalar> U;   // d x m
  Mat<Scalar> W1;  // d x d, first layer recurrence
  Mat<Scalar> S;   // d x d, shared by layers 2..K
  Mat<Scalar> V;   // n x d
};

/// Codes of every layer and time step plus the reconstructions.
template <typename Scalar = double>
struct HiddenStates {
  std::vector<Mat<Scalar>> h;  // h[t] is d x K, column k is layer k+1
  Mat<Scalar> shat;            // n x T

  Mat<Scalar> last_layer() const {
    Mat<Scalar> out(h.empty() ? 0 : h.front().rows(), Eigen::Index(h.size()));
    for (std::size_t t = 0; t < h.size(); ++t) out.col(Eigen::Index(t)) = h[t].col(h[t].cols() - 1);
    return out;
  }
};

/// Activation inputs recorded during a forward pass, for backpropagation.
template <typename Scalar = double>
struct ForwardTrace {
  std::vector<Mat<Scalar>> z;  // z[t] is d x K pre-activations
  std::vector<Vec<Scalar>> v;  // v[t] = G h^(K)_{t-1}
};

template <typename Scalar>
UnfoldedWeights<Scalar> build_weights(const ModelParams<Scalar>& theta) {
  theta.validate();
  const Scalar c = Scalar(1) / theta.alpha;
  const Mat<Scalar> ad = theta.A * theta.D;
  UnfoldedWeights<Scalar> w;
  w.U = c * ad.transpose();
  w.S = Mat<Scalar>::Identity(theta.d(), theta.d()) - c * (ad.transpose() * ad);
  w.W1 = w.S * theta.G;
  w.V = theta.D;
  return w;
}

/// x_t = A s_t + eta_t with eta_t ~ N(0, noise_sigma^2), deterministic in seed.
template <typename Scalar>
Mat<Scalar> sense(const Same<Mat<Scalar>>& s_seq, const Mat<Scalar>& A, Same<Scalar> noise_sigma, std::uint64_t seed) {
  detail::require_dims(A.cols() == s_seq.rows(), "sense: A columns must equal signal length");
  if (!(noise_sigma >= Scalar(0))) throw ParameterError("sense: noise_sigma must be >= 0");
  Mat<Scalar> x = A * s_seq;
  if (noise_sigma > Scalar(0)) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, double(noise_sigma));
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, j) += Scalar(gauss(rng));
  }
  return x;
}

template <typename Scalar>
HiddenStates<Scalar> forward_sequence(const Same<Mat<Scalar>>& x_seq, const ModelParams<Scalar>& theta,
                                      const UnfoldedWeights<Scalar>& w, ForwardTrace<Scalar>* trace = nullptr) {
  detail::require_dims(x_seq.rows() == theta.m(), "forward_sequence: measurement length must equal m");
  if (x_seq.cols() < 1) throw ParameterError("forward_sequence: T must be >= 1");
  const auto prox = theta.prox();
  const Eigen::Index T = x_seq.cols();
  const int K = theta.K;

  HiddenStates<Scalar> out;
  out.h.assign(std::size_t(T), Mat<Scalar>(theta.d(), K));
  out.shat.resize(theta.n(), T);
  if (trace) {
    trace->z.assign(std::size_t(T), Mat<Scalar>(theta.d(), K));
    trace->v.assign(std::size_t(T), Vec<Scalar>());
  }

  Vec<Scalar> prev = theta.h0;
  for (Eigen::Index t = 0; t < T; ++t) {
    const Vec<Scalar> drive = w.U * x_seq.col(t);
    const Vec<Scalar> v = theta.G * prev;
    Mat<Scalar>& h = out.h[std::size_t(t)];
    for (int k = 0; k < K; ++k) {
      Vec<Scalar> z = (k == 0 ? Vec<Scalar>(w.W1 * prev) : Vec<Scalar>(w.S * h.col(k - 1))) + drive;
      if (!z.allFinite())
        throw NumericError("forward_sequence: non-finite activation input at t=" + std::to_string(t + 1) +
                           " layer=" + std::to_string(k + 1));
      h.col(k) = l1l1_prox_vec(z, v, prox);
      if (trace) trace->z[std::size_t(t)].col(k) = z;
    }
    if (trace) trace->v[std::size_t(t)] = v;
    out.shat.col(t) = w.V * h.col(K - 1);
    prev = h.col(K - 1);
  }
  return out;
}

template <typename Scalar>
HiddenStates<Scalar> forward_sequence(const Same<Mat<Scalar>>& x_seq, const ModelParams<Scalar>& theta) {
  return forward_sequence(x_seq, theta, build_weights(theta));
}

enum class Activation { kTanh, kRelu, kIdentity };

/// Weights of the plain stacked RNN: layer 1 sees U x_t, layer k > 1 sees S[k] h^(k-1)_t.
template <typename Scalar = double>
struct StackedRnnWeights {
  std::vector<Mat<Scalar>> W;  // K recurrent matrices, d x d
  std::vector<Mat<Scalar>> S;  // K entries; S[0] unused, S[k] is d x d for k >= 1
  Mat<Scalar> U;               // d x m
  Mat<Scalar> V;               // n x d
  Vec<Scalar> b;               // n

  int K() const { return int(W.size()); }

  void validate(Eigen::Index m) const {
    detail::require_dims(!W.empty() && S.size() == W.size(), "StackedRnnWeights: need K >= 1 layers");
    const Eigen::Index d = U.rows();
    detail::require_dims(U.cols() == m, "StackedRnnWeights: U must be d x m");
    detail::require_dims(V.cols() == d && b.size() == V.rows(), "StackedRnnWeights: V is n x d, b has length n");
    for (std::size_t k = 0; k < W.size(); ++k) {
      detail::require_dims(W[k].rows() == d && W[k].cols() == d, "StackedRnnWeights: W must be d x d");
      if (k > 0) detail::require_dims(S[k].rows() == d && S[k].cols() == d, "StackedRnnWeights: S must be d x d");
    }
  }
};

template <typename Scalar>
Scalar activate(Activation act, Scalar z) {
  switch (act) {
    case Activation::kTanh: return std::tanh(z);
    case Activation::kRelu: return z > Scalar(0) ? z : Scalar(0);
    case Activation::kIdentity: return z;
  }
  return z;
}

/// d activate / dz expressed through the activation input z.
template <typename Scalar>
Scalar activate_derivative(Activation act, Scalar z) {
  switch (act) {
    case Activation::kTanh: {
      const Scalar y = std::tanh(z);
      return Scalar(1) - y * y;
    }
    case Activation::kRelu: return z > Scalar(0) ? Scalar(1) : Scalar(0);
    case Activation::kIdentity: return Scalar(1);
  }
  return Scalar(1);
}

/// Runs the stacked RNN. h_init is d x K (initial hidden state of each layer).
/// Returns the n x T reconstructions; states/trace receive per-time d x K blocks when given.
template <typename Scalar>
Mat<Scalar> stacked_rnn_forward(const Same<Mat<Scalar>>& x_seq, const StackedRnnWeights<Scalar>& w,
                                const Same<Mat<Scalar>>& h_init, Activation act,
                                std::vector<Mat<Scalar>>* states = nullptr,
                                std::vector<Mat<Scalar>>* pre_activations = nullptr) {
  w.validate(x_seq.rows());
  const int K = w.K();
  const Eigen::Index d = w.U.rows();
  detail::require_dims(h_init.rows() == d && h_init.cols() == K, "stacked_rnn_forward: h_init must be d x K");
  const Eigen::Index T = x_seq.cols();

  Mat<Scalar> shat(w.V.rows(), T);
  if (states) states->assign(std::size_t(T), Mat<Scalar>(d, K));
  if (pre_activations) pre_activations->assign(std::size_t(T), Mat<Scalar>(d, K));
  Mat<Scalar> prev = h_init;
  Mat<Scalar> cur(d, K);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (int k = 0; k < K; ++k) {
      Vec<Scalar> z = w.W[std::size_t(k)] * prev.col(k);
      if (k == 0)
        z += w.U * x_seq.col(t);
      else
        z += w.S[std::size_t(k)] * cur.col(k - 1);
      if (!z.allFinite())
        throw NumericError("stacked_rnn_forward: non-finite activation input at t=" + std::to_string(t + 1) +
                           " layer=" + std::to_string(k + 1));
      cur.col(k) = z.unaryExpr([act](Scalar a) { return activate(act, a); });
      if (pre_activations) (*pre_activations)[std::size_t(t)].col(k) = z;
    }
    shat.col(t) = w.V * cur.col(K - 1) + w.b;
    if (states) (*states)[std::size_t(t)] = cur;
    prev = cur;
  }
  return shat;
}

}  // namespace l1l1
