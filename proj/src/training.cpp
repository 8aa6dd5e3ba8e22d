#include "l1l1/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "l1l1/checkpoint.hpp"
#include "l1l1/dictionary.hpp"
#include "l1l1/errors.hpp"
#include "l1l1/metrics.hpp"

namespace l1l1 {

// ---------------------------------------------------------------- loss

double loss(const Matrix& s, const Matrix& shat, double param_sq_norm, double beta) {
  detail::require_dims(s.rows() == shat.rows() && s.cols() == shat.cols(), "loss: s and shat differ in shape");
  return (s - shat).squaredNorm() + beta * param_sq_norm;
}

double parameter_squared_norm(const ModelParams<double>& theta) {
  return theta.A.squaredNorm() + theta.D.squaredNorm() + theta.G.squaredNorm() + theta.h0.squaredNorm() +
         theta.alpha * theta.alpha + theta.lambda1 * theta.lambda1 + theta.lambda2 * theta.lambda2;
}

double loss(const Matrix& s, const Matrix& shat, const ModelParams<double>& theta, double beta) {
  return loss(s, shat, parameter_squared_norm(theta), beta);
}

bool L1L1Gradients::all_finite() const {
  return A.allFinite() && D.allFinite() && G.allFinite() && h0.allFinite() && std::isfinite(alpha) &&
         std::isfinite(lambda1) && std::isfinite(lambda2);
}

// ---------------------------------------------------------------- l1-l1 BPTT

namespace {

void require_finite(const Matrix& g, const char* name) {
  if (!g.allFinite()) throw NumericError(std::string("backward: non-finite gradient for ") + name);
}

L1L1Backward backward_impl(const Matrix& x, const Matrix& s, const ModelParams<double>& theta, double beta,
                           bool sensing) {
  theta.validate();
  detail::require_dims(s.rows() == theta.n(), "backward: signal length must equal n");
  detail::require_dims(x.rows() == theta.m() && x.cols() == s.cols(), "backward: x must be m x T");

  const Eigen::Index T = x.cols();
  const Eigen::Index d = theta.d();
  const int K = theta.K;
  const auto w = build_weights(theta);
  const auto prox = theta.prox();
  ForwardTrace<double> trace;
  const auto states = forward_sequence(x, theta, w, &trace);

  Matrix dU = Matrix::Zero(d, theta.m());
  Matrix dS = Matrix::Zero(d, d);
  Matrix dW1 = Matrix::Zero(d, d);
  Matrix dV = Matrix::Zero(theta.n(), d);
  Matrix dG = Matrix::Zero(d, d);
  Matrix dX = Matrix::Zero(theta.m(), T);
  double dgamma1 = 0, dgamma2 = 0;
  double data_loss = 0;

  Vector carry = Vector::Zero(d);  // dL/dh^(K)_t arriving from frame t+1
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    const Matrix& h = states.h[std::size_t(t)];
    const Matrix& z = trace.z[std::size_t(t)];
    const Vector& v = trace.v[std::size_t(t)];
    const Vector prev = t > 0 ? Vector(states.h[std::size_t(t - 1)].col(K - 1)) : theta.h0;

    const Vector resid = states.shat.col(t) - s.col(t);
    data_loss += resid.squaredNorm();
    const Vector dshat = 2.0 * resid;
    dV.noalias() += dshat * h.col(K - 1).transpose();

    Vector dh = w.V.transpose() * dshat + carry;
    Vector dv = Vector::Zero(d);
    Vector dz_sum = Vector::Zero(d);
    Vector dprev = Vector::Zero(d);
    for (int k = K - 1; k >= 0; --k) {
      Vector dz(d);
      for (Eigen::Index i = 0; i < d; ++i) {
        const auto pd = l1l1_prox_grad(z(i, k), v(i), prox);
        dz(i) = pd.d_u * dh(i);
        dv(i) += pd.d_v * dh(i);
        dgamma1 += pd.d_gamma1 * dh(i);
        dgamma2 += pd.d_gamma2 * dh(i);
      }
      dz_sum += dz;
      if (k > 0) {
        dS.noalias() += dz * h.col(k - 1).transpose();
        dh = w.S.transpose() * dz;
      } else {
        dW1.noalias() += dz * prev.transpose();
        dprev.noalias() += w.W1.transpose() * dz;
      }
    }
    dU.noalias() += dz_sum * x.col(t).transpose();
    if (sensing) dX.col(t) = w.U.transpose() * dz_sum;
    dG.noalias() += dv * prev.transpose();
    dprev.noalias() += theta.G.transpose() * dv;
    carry = dprev;
  }

  // U = c M^T, S = I - c M^T M, W1 = S G with M = A D and c = 1/alpha.
  const double c = 1.0 / theta.alpha;
  const Matrix M = theta.A * theta.D;
  const Matrix Q = M.transpose() * M;
  dS.noalias() += dW1 * theta.G.transpose();
  dG.noalias() += w.S.transpose() * dW1;

  double dc = -(dS.cwiseProduct(Q)).sum() + (dU.cwiseProduct(M.transpose())).sum();
  const Matrix dQ = -c * dS;
  Matrix dM = c * dU.transpose();
  dM.noalias() += M * (dQ + dQ.transpose());

  L1L1Backward out;
  out.grads.A = dM * theta.D.transpose();
  if (sensing) out.grads.A.noalias() += dX * s.transpose();
  out.grads.D = theta.A.transpose() * dM + dV;
  out.grads.G = dG;
  out.grads.h0 = carry;
  out.grads.lambda1 = c * dgamma1;
  out.grads.lambda2 = c * dgamma2;
  dc += theta.lambda1 * dgamma1 + theta.lambda2 * dgamma2;
  out.grads.alpha = -dc * c * c;

  out.loss = data_loss;
  if (beta != 0.0) {
    out.loss += beta * parameter_squared_norm(theta);
    out.grads.A += 2.0 * beta * theta.A;
    out.grads.D += 2.0 * beta * theta.D;
    out.grads.G += 2.0 * beta * theta.G;
    out.grads.h0 += 2.0 * beta * theta.h0;
    out.grads.alpha += 2.0 * beta * theta.alpha;
    out.grads.lambda1 += 2.0 * beta * theta.lambda1;
    out.grads.lambda2 += 2.0 * beta * theta.lambda2;
  }

  require_finite(out.grads.A, "A");
  require_finite(out.grads.D, "D");
  require_finite(out.grads.G, "G");
  require_finite(out.grads.h0, "h0");
  if (!std::isfinite(out.grads.alpha)) throw NumericError("backward: non-finite gradient for alpha");
  if (!std::isfinite(out.grads.lambda1)) throw NumericError("backward: non-finite gradient for lambda1");
  if (!std::isfinite(out.grads.lambda2)) throw NumericError("backward: non-finite gradient for lambda2");
  return out;
}

}  // namespace

L1L1Backward backward(const Matrix& x, const Matrix& s, const ModelParams<double>& theta, double beta) {
  return backward_impl(x, s, theta, beta, false);
}

L1L1Backward backward_end_to_end(const Matrix& s, const ModelParams<double>& theta, double beta) {
  detail::require_dims(s.rows() == theta.n(), "backward_end_to_end: signal length must equal n");
  return backward_impl(theta.A * s, s, theta, beta, true);
}

// ---------------------------------------------------------------- stacked RNN BPTT

double stacked_rnn_backward(const Matrix& s, const Matrix& A, const StackedRnnWeights<double>& w,
                            const Matrix& h_init, Activation act, StackedRnnGradients& g) {
  detail::require_dims(A.cols() == s.rows(), "stacked_rnn_backward: A columns must equal n");
  const Matrix x = A * s;
  std::vector<Matrix> states, pre;
  const Matrix shat = stacked_rnn_forward(x, w, h_init, act, &states, &pre);
  const int K = w.K();
  const Eigen::Index d = w.U.rows();
  const Eigen::Index T = s.cols();

  g.weights.U = Matrix::Zero(w.U.rows(), w.U.cols());
  g.weights.V = Matrix::Zero(w.V.rows(), w.V.cols());
  g.weights.b = Vector::Zero(w.b.size());
  g.weights.W.assign(std::size_t(K), Matrix::Zero(d, d));
  g.weights.S.assign(std::size_t(K), Matrix());
  for (int k = 1; k < K; ++k) g.weights.S[std::size_t(k)] = Matrix::Zero(d, d);
  Matrix dX = Matrix::Zero(x.rows(), T);

  double data_loss = 0;
  std::vector<Vector> carry(std::size_t(K), Vector::Zero(d));
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    const Vector resid = shat.col(t) - s.col(t);
    data_loss += resid.squaredNorm();
    const Vector dshat = 2.0 * resid;
    g.weights.V.noalias() += dshat * states[std::size_t(t)].col(K - 1).transpose();
    g.weights.b += dshat;

    Vector from_above = w.V.transpose() * dshat;
    for (int k = K - 1; k >= 0; --k) {
      const Vector dh = carry[std::size_t(k)] + from_above;
      const Vector dz = dh.cwiseProduct(pre[std::size_t(t)].col(k).unaryExpr(
          [act](double z) { return activate_derivative(act, z); }));
      const Vector prev = t > 0 ? Vector(states[std::size_t(t - 1)].col(k)) : Vector(h_init.col(k));
      g.weights.W[std::size_t(k)].noalias() += dz * prev.transpose();
      carry[std::size_t(k)] = w.W[std::size_t(k)].transpose() * dz;
      if (k > 0) {
        g.weights.S[std::size_t(k)].noalias() += dz * states[std::size_t(t)].col(k - 1).transpose();
        from_above = w.S[std::size_t(k)].transpose() * dz;
      } else {
        g.weights.U.noalias() += dz * x.col(t).transpose();
        dX.col(t) = w.U.transpose() * dz;
      }
    }
  }
  g.h_init.resize(d, K);
  for (int k = 0; k < K; ++k) g.h_init.col(k) = carry[std::size_t(k)];
  g.A = dX * s.transpose();
  if (!g.A.allFinite() || !g.weights.V.allFinite() || !g.weights.U.allFinite())
    throw NumericError("stacked_rnn_backward: non-finite gradient");
  return data_loss;
}

// ---------------------------------------------------------------- Adam

AdamState AdamState::zeros_like(const TensorList& params) {
  return {l1l1::zeros_like(params), l1l1::zeros_like(params), 0};
}

void adam_step(TensorList& params, const TensorList& grads, AdamState& state, const AdamConfig& cfg) {
  detail::require_dims(grads.size() == params.size(), "adam_step: gradient list does not match parameters");
  if (state.first_moment.size() != params.size()) state = AdamState::zeros_like(params);
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].value;
    const auto& g = grads[i].value;
    detail::require_dims(p.rows() == g.rows() && p.cols() == g.cols(), "adam_step: shape mismatch for " + params[i].name);
    auto& m = state.first_moment[i].value;
    auto& v = state.second_moment[i].value;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseAbs2();
    p.array() -= cfg.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.epsilon);
  }
}

double clip_global_norm(TensorList& grads, double max_norm) {
  const double norm = std::sqrt(squared_norm(grads));
  if (max_norm > 0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& g : grads) g.value *= scale;
  }
  return norm;
}

// ---------------------------------------------------------------- init

namespace {

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(-bound, bound);
  Matrix out(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) out(i, j) = unif(rng);
  return out;
}

void check_dims(const ModelDims& dims) {
  if (dims.m == 0 || dims.n == 0 || dims.d == 0 || dims.K == 0)
    throw ParameterError("invalid model dimensions: " + to_string(dims));
}

}  // namespace

ModelParams<double> init_params(const ModelDims& dims, std::uint64_t seed, const InitOptions& opts) {
  check_dims(dims);
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(double(dims.d));
  ModelParams<double> theta;
  theta.A = uniform_matrix(dims.m, dims.n, bound, rng);
  theta.D = opts.dict_init == DictInit::kOvercompleteDct ? overcomplete_dct<double>(dims.n, dims.d)
                                                         : uniform_matrix(dims.n, dims.d, bound, rng);
  theta.G = opts.g_init == GInit::kIdentity ? Matrix(Matrix::Identity(dims.d, dims.d))
                                            : uniform_matrix(dims.d, dims.d, bound, rng);
  theta.h0 = Vector::Zero(dims.d);
  theta.alpha = opts.alpha;
  theta.lambda1 = opts.lambda1;
  theta.lambda2 = opts.lambda2;
  theta.K = int(dims.K);
  theta.validate();
  return theta;
}

std::unique_ptr<StackedRnn> init_stacked_rnn(const ModelDims& dims, std::uint64_t seed, Activation act) {
  check_dims(dims);
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(double(dims.d));
  const Matrix A = uniform_matrix(dims.m, dims.n, bound, rng);
  StackedRnnWeights<double> w;
  w.U = uniform_matrix(dims.d, dims.m, bound, rng);
  w.W.resize(dims.K);
  w.S.resize(dims.K);
  for (std::uint32_t k = 0; k < dims.K; ++k) w.W[k] = uniform_matrix(dims.d, dims.d, bound, rng);
  for (std::uint32_t k = 1; k < dims.K; ++k) w.S[k] = uniform_matrix(dims.d, dims.d, bound, rng);
  w.V = uniform_matrix(dims.n, dims.d, bound, rng);
  w.b = uniform_matrix(dims.n, 1, bound, rng).col(0);
  return std::make_unique<StackedRnn>(A, w, Matrix::Zero(dims.d, dims.K), act, dims.T);
}

// ---------------------------------------------------------------- train loop

void TrainConfig::validate() const {
  if (epochs < 0) throw ParameterError("TrainConfig: epochs must be >= 0");
  if (batch_size < 1) throw ParameterError("TrainConfig: batch_size must be >= 1");
  if (!(learning_rate > 0)) throw ParameterError("TrainConfig: learning_rate must be > 0");
  if (!(beta >= 0)) throw ParameterError("TrainConfig: beta must be >= 0");
  if (K < 1) throw ParameterError("TrainConfig: K must be >= 1");
  if (!(alpha_init > 0) || !(lambda1_init > 0) || !(lambda2_init > 0))
    throw ParameterError("TrainConfig: alpha_init, lambda1_init, lambda2_init must be > 0");
}

double validation_psnr(const SequenceModel& model, const Dataset& val) {
  if (val.empty()) throw ParameterError("validation set is empty");
  double acc = 0;
  for (const auto& s : val) acc += psnr(s, model.reconstruct(s));
  return acc / double(val.size());
}

TrainState make_initial_state(ModelKind kind, const ModelDims& dims, const TrainConfig& cfg,
                              const InitOptions& init, Activation act) {
  cfg.validate();
  ModelDims md = dims;
  md.K = std::uint32_t(cfg.K);
  TrainState state;
  if (kind == ModelKind::kL1L1Rnn) {
    InitOptions opts = init;
    opts.alpha = cfg.alpha_init;
    opts.lambda1 = cfg.lambda1_init;
    opts.lambda2 = cfg.lambda2_init;
    state.model = std::make_unique<L1L1Rnn>(init_params(md, cfg.seed, opts), md.T);
  } else {
    state.model = init_stacked_rnn(md, cfg.seed, act);
  }
  state.adam = AdamState::zeros_like(state.model->parameters());
  return state;
}

TrainResult train(TrainState& state, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  const TrainHooks& hooks) {
  cfg.validate();
  if (!state.model) throw ParameterError("train: state has no model");
  if (train_set.empty()) throw ParameterError("train: training set is empty");
  SequenceModel& model = *state.model;

  if (state.epoch == 0) {
    state.initial_val_psnr_db = validation_psnr(model, val_set);
    state.best_val_psnr_db = state.initial_val_psnr_db;
    state.best_epoch = 0;
  }
  TrainResult result;
  result.initial_val_psnr_db = state.initial_val_psnr_db;
  result.best_params = model.parameters();

  const AdamConfig adam = cfg.adam();
  std::vector<std::size_t> order(train_set.size());
  for (int e = 0; e < cfg.epochs; ++e) {
    const int epoch = state.epoch + 1;
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::mt19937_64 rng(cfg.seed ^ (0x9E3779B97F4A7C15ULL * std::uint64_t(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + std::size_t(cfg.batch_size));
      const double weight = 1.0 / double(stop - start);
      TensorList grads = zeros_like(model.parameters());
      double data = 0;
      for (std::size_t i = start; i < stop; ++i) data += model.accumulate_gradient(train_set[order[i]], weight, grads);
      const double batch_loss = data * weight + model.decay(cfg.beta, &grads);
      if (!std::isfinite(batch_loss) || !all_finite(grads))
        throw NumericError("train: non-finite loss or gradient in epoch " + std::to_string(epoch));
      clip_global_norm(grads, cfg.clip_norm);
      adam_step(model.parameters(), grads, state.adam, adam);
      if (!all_finite(model.parameters()))
        throw NumericError("train: parameters diverged in epoch " + std::to_string(epoch));
      loss_sum += batch_loss;
      ++batches;
    }

    const CurvePoint point{epoch, loss_sum / batches, validation_psnr(model, val_set)};
    if (!std::isfinite(point.val_psnr_db))
      throw NumericError("train: non-finite validation PSNR in epoch " + std::to_string(epoch));
    state.epoch = epoch;
    result.curve.push_back(point);
    const bool improved = point.val_psnr_db > state.best_val_psnr_db;
    if (improved) {
      state.best_val_psnr_db = point.val_psnr_db;
      state.best_epoch = epoch;
      result.best_params = model.parameters();
    }
    if (!hooks.checkpoint_dir.empty()) {
      save_train_state(hooks.checkpoint_dir / "checkpoint_last.ckpt", state);
      if (improved) save_train_state(hooks.checkpoint_dir / "checkpoint_best.ckpt", state);
    }
    if (hooks.on_epoch) hooks.on_epoch(point);
  }
  result.best_epoch = state.best_epoch;
  result.best_val_psnr_db = state.best_val_psnr_db;
  return result;
}

// ---------------------------------------------------------------- gradient check

double prox_boundary_margin(const Matrix& s, const ModelParams<double>& theta) {
  ForwardTrace<double> trace;
  forward_sequence<double>(theta.A * s, theta, build_weights(theta), &trace);
  const auto prox = theta.prox();
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < trace.z.size(); ++t)
    for (Eigen::Index k = 0; k < trace.z[t].cols(); ++k)
      for (Eigen::Index i = 0; i < trace.z[t].rows(); ++i)
        margin = std::min(margin, l1l1_prox_boundary_distance(trace.z[t](i, k), trace.v[t](i), prox));
  return margin;
}

std::pair<ModelParams<double>, Matrix> random_gradcheck_problem(const ModelDims& dims, std::uint64_t seed,
                                                                double margin) {
  check_dims(dims);
  if (dims.T == 0) throw ParameterError("random_gradcheck_problem: T must be >= 1");
  for (std::uint64_t attempt = 0; attempt < 10000; ++attempt) {
    std::mt19937_64 rng(seed * 1000003ULL + attempt);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    ModelParams<double> theta;
    theta.A = uniform_matrix(dims.m, dims.n, 1.0 / std::sqrt(double(dims.n)), rng);
    theta.D = uniform_matrix(dims.n, dims.d, 1.0, rng);
    theta.G = uniform_matrix(dims.d, dims.d, 1.5 / std::sqrt(double(dims.d)), rng);
    theta.h0 = uniform_matrix(dims.d, 1, 1.0, rng).col(0);
    theta.K = int(dims.K);
    const Matrix s = uniform_matrix(dims.n, dims.T, 1.0, rng);
    std::uniform_real_distribution<double> ratio(0.05, 0.3);
    theta.alpha = 1.2 * power_iteration_bound(theta.operators(), 200);
    theta.lambda1 = ratio(rng) * theta.alpha;
    theta.lambda2 = ratio(rng) * theta.alpha;
    if (prox_boundary_margin(s, theta) >= margin) return {theta, s};
  }
  throw ParameterError("random_gradcheck_problem: no instance with the requested boundary margin");
}

GradCheckReport gradient_check(const SequenceModel& model, const Matrix& s, const GradCheckOptions& opts) {
  TensorList analytic = zeros_like(model.parameters());
  model.accumulate_gradient(s, 1.0, analytic);
  model.decay(opts.beta, &analytic);
  if (opts.corrupt != 0.0)
    for (auto& g : analytic) g.value.array() += opts.corrupt;

  auto probe = model.clone();
  auto objective = [&](const SequenceModel& m) {
    return (s - m.reconstruct(s)).squaredNorm() + m.decay(opts.beta, nullptr);
  };

  GradCheckReport report;
  if (const auto* rnn = dynamic_cast<const L1L1Rnn*>(&model)) report.boundary_margin = prox_boundary_margin(s, rnn->model_params());
  for (std::size_t p = 0; p < analytic.size(); ++p) {
    ParamCheck check{analytic[p].name, 0, 0, 0};
    Matrix& value = probe->parameters()[p].value;
    for (Eigen::Index j = 0; j < value.cols(); ++j) {
      for (Eigen::Index i = 0; i < value.rows(); ++i) {
        const double orig = value(i, j);
        value(i, j) = orig + opts.step;
        const double up = objective(*probe);
        value(i, j) = orig - opts.step;
        const double down = objective(*probe);
        value(i, j) = orig;
        const double fd = (up - down) / (2.0 * opts.step);
        const double a = analytic[p].value(i, j);
        const double abs_err = std::abs(a - fd);
        const double rel_err = abs_err / std::max({std::abs(a), std::abs(fd), 1e-6});
        check.max_abs_error = std::max(check.max_abs_error, abs_err);
        check.max_rel_error = std::max(check.max_rel_error, rel_err);
        ++check.entries;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.params.push_back(check);
  }
  report.passed = report.max_rel_error <= opts.tolerance;
  return report;
}

}  // namespace l1l1
