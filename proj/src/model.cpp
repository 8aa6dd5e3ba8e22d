#include "l1l1/model.hpp"

#include <cmath>

#include "l1l1/errors.hpp"
#include "l1l1/training.hpp"

namespace l1l1 {

TensorList zeros_like(const TensorList& tensors) {
  TensorList out;
  out.reserve(tensors.size());
  for (const auto& t : tensors) out.push_back({t.name, Matrix::Zero(t.value.rows(), t.value.cols())});
  return out;
}

double squared_norm(const TensorList& tensors) {
  double acc = 0;
  for (const auto& t : tensors) acc += t.value.squaredNorm();
  return acc;
}

bool all_finite(const TensorList& tensors) {
  for (const auto& t : tensors)
    if (!t.value.allFinite()) return false;
  return true;
}

Matrix& tensor(TensorList& tensors, const std::string& name) {
  for (auto& t : tensors)
    if (t.name == name) return t.value;
  throw ParameterError("no tensor named '" + name + "'");
}

const Matrix& tensor(const TensorList& tensors, const std::string& name) {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw ParameterError("no tensor named '" + name + "'");
}

std::string to_string(ModelKind kind) { return kind == ModelKind::kL1L1Rnn ? "l1l1_rnn" : "stacked_rnn"; }

ModelKind parse_model_kind(const std::string& name) {
  if (name == "l1l1_rnn" || name == "l1l1") return ModelKind::kL1L1Rnn;
  if (name == "stacked_rnn" || name == "stacked") return ModelKind::kStackedRnn;
  throw ParameterError("unknown model kind '" + name + "'");
}

std::string to_string(const ModelDims& dims) {
  return "m=" + std::to_string(dims.m) + " n=" + std::to_string(dims.n) + " d=" + std::to_string(dims.d) +
         " K=" + std::to_string(dims.K) + " T=" + std::to_string(dims.T);
}

double softplus(double raw) { return raw > 30.0 ? raw + std::log1p(std::exp(-raw)) : std::log1p(std::exp(raw)); }

double softplus_inverse(double value) {
  if (!(value > 0)) throw ParameterError("softplus_inverse: value must be > 0");
  return value > 30.0 ? value + std::log1p(-std::exp(-value)) : std::log(std::expm1(value));
}

double sigmoid(double raw) { return 1.0 / (1.0 + std::exp(-raw)); }

namespace {

Matrix scalar_tensor(double v) { return Matrix::Constant(1, 1, v); }

}  // namespace

// ---------------------------------------------------------------- L1L1Rnn

L1L1Rnn::L1L1Rnn(const ModelParams<double>& theta, std::uint32_t T) : K_(theta.K), T_(T) {
  theta.validate();
  params_ = {
      {"A", theta.A},
      {"D", theta.D},
      {"G", theta.G},
      {"h0", theta.h0},
      {"alpha_raw", scalar_tensor(softplus_inverse(theta.alpha))},
      {"lambda1_raw", scalar_tensor(softplus_inverse(std::max(theta.lambda1, 1e-300)))},
      {"lambda2_raw", scalar_tensor(softplus_inverse(std::max(theta.lambda2, 1e-300)))},
  };
}

ModelDims L1L1Rnn::dims() const {
  const auto& A = params_[0].value;
  return {std::uint32_t(A.rows()), std::uint32_t(A.cols()), std::uint32_t(params_[1].value.cols()),
          std::uint32_t(K_), T_};
}

ModelParams<double> L1L1Rnn::model_params() const {
  ModelParams<double> theta;
  theta.A = params_[0].value;
  theta.D = params_[1].value;
  theta.G = params_[2].value;
  theta.h0 = params_[3].value.col(0);
  theta.alpha = softplus(params_[4].value(0, 0));
  theta.lambda1 = softplus(params_[5].value(0, 0));
  theta.lambda2 = softplus(params_[6].value(0, 0));
  theta.K = K_;
  return theta;
}

Matrix L1L1Rnn::reconstruct(const Matrix& s, std::vector<Matrix>* codes) const {
  const auto theta = model_params();
  detail::require_dims(s.rows() == theta.n(), "L1L1Rnn: signal length must equal n");
  auto states = forward_sequence<double>(theta.A * s, theta);
  if (codes) *codes = std::move(states.h);
  return states.shat;
}

double L1L1Rnn::accumulate_gradient(const Matrix& s, double weight, TensorList& grads) const {
  const auto theta = model_params();
  const auto r = backward_end_to_end(s, theta, 0.0);
  grads[0].value += weight * r.grads.A;
  grads[1].value += weight * r.grads.D;
  grads[2].value += weight * r.grads.G;
  grads[3].value += weight * r.grads.h0;
  grads[4].value(0, 0) += weight * r.grads.alpha * sigmoid(params_[4].value(0, 0));
  grads[5].value(0, 0) += weight * r.grads.lambda1 * sigmoid(params_[5].value(0, 0));
  grads[6].value(0, 0) += weight * r.grads.lambda2 * sigmoid(params_[6].value(0, 0));
  return r.loss;
}

double L1L1Rnn::decay(double beta, TensorList* grads) const {
  const auto theta = model_params();
  if (grads) {
    for (int i = 0; i < 4; ++i) (*grads)[i].value += 2.0 * beta * params_[i].value;
    (*grads)[4].value(0, 0) += 2.0 * beta * theta.alpha * sigmoid(params_[4].value(0, 0));
    (*grads)[5].value(0, 0) += 2.0 * beta * theta.lambda1 * sigmoid(params_[5].value(0, 0));
    (*grads)[6].value(0, 0) += 2.0 * beta * theta.lambda2 * sigmoid(params_[6].value(0, 0));
  }
  return beta * parameter_squared_norm(theta);
}

// ---------------------------------------------------------------- StackedRnn
//
// Tensor order: A, U, W1..WK, S2..SK, V, b, h0 (d x K).

StackedRnn::StackedRnn(const Matrix& A, const StackedRnnWeights<double>& weights, const Matrix& h_init,
                       Activation activation, std::uint32_t T)
    : K_(weights.K()), activation_(activation), T_(T) {
  weights.validate(A.rows());
  detail::require_dims(weights.V.rows() == A.cols(), "StackedRnn: V must have n rows");
  params_.push_back({"A", A});
  params_.push_back({"U", weights.U});
  for (int k = 0; k < K_; ++k) params_.push_back({"W" + std::to_string(k + 1), weights.W[std::size_t(k)]});
  for (int k = 1; k < K_; ++k) params_.push_back({"S" + std::to_string(k + 1), weights.S[std::size_t(k)]});
  params_.push_back({"V", weights.V});
  params_.push_back({"b", weights.b});
  params_.push_back({"h0", h_init});
}

ModelDims StackedRnn::dims() const {
  const auto& A = params_[0].value;
  return {std::uint32_t(A.rows()), std::uint32_t(A.cols()), std::uint32_t(params_[1].value.rows()),
          std::uint32_t(K_), T_};
}

StackedRnnWeights<double> StackedRnn::weights() const {
  StackedRnnWeights<double> w;
  std::size_t i = 1;
  w.U = params_[i++].value;
  w.W.resize(std::size_t(K_));
  w.S.resize(std::size_t(K_));
  for (int k = 0; k < K_; ++k) w.W[std::size_t(k)] = params_[i++].value;
  for (int k = 1; k < K_; ++k) w.S[std::size_t(k)] = params_[i++].value;
  w.V = params_[i++].value;
  w.b = params_[i++].value.col(0);
  return w;
}

Matrix StackedRnn::reconstruct(const Matrix& s, std::vector<Matrix>* codes) const {
  const Matrix& A = params_.front().value;
  detail::require_dims(s.rows() == A.cols(), "StackedRnn: signal length must equal n");
  return stacked_rnn_forward<double>(A * s, weights(), params_.back().value, activation_, codes);
}

double StackedRnn::accumulate_gradient(const Matrix& s, double weight, TensorList& grads) const {
  StackedRnnGradients g;
  const double data =
      stacked_rnn_backward(s, params_.front().value, weights(), params_.back().value, activation_, g);
  std::size_t i = 0;
  grads[i++].value += weight * g.A;
  grads[i++].value += weight * g.weights.U;
  for (int k = 0; k < K_; ++k) grads[i++].value += weight * g.weights.W[std::size_t(k)];
  for (int k = 1; k < K_; ++k) grads[i++].value += weight * g.weights.S[std::size_t(k)];
  grads[i++].value += weight * g.weights.V;
  grads[i++].value += weight * g.weights.b;
  grads[i++].value += weight * g.h_init;
  return data;
}

double StackedRnn::decay(double beta, TensorList* grads) const {
  if (grads)
    for (std::size_t i = 0; i < params_.size(); ++i) (*grads)[i].value += 2.0 * beta * params_[i].value;
  return beta * squared_norm(params_);
}

std::unique_ptr<SequenceModel> model_from_tensors(ModelKind kind, const ModelDims& dims, const TensorList& params,
                                                  Activation activation) {
  if (kind == ModelKind::kL1L1Rnn) {
    ModelParams<double> theta;
    theta.A = tensor(params, "A");
    theta.D = tensor(params, "D");
    theta.G = tensor(params, "G");
    theta.h0 = tensor(params, "h0").col(0);
    theta.alpha = softplus(tensor(params, "alpha_raw")(0, 0));
    theta.lambda1 = softplus(tensor(params, "lambda1_raw")(0, 0));
    theta.lambda2 = softplus(tensor(params, "lambda2_raw")(0, 0));
    theta.K = int(dims.K);
    auto model = std::make_unique<L1L1Rnn>(theta, dims.T);
    // keep the stored pre-activations bit-exact rather than round-tripping through softplus
    for (auto& t : model->parameters()) t.value = tensor(params, t.name);
    if (!(model->dims() == dims)) throw DimensionError("checkpoint tensors disagree with header dims");
    return model;
  }
  StackedRnnWeights<double> w;
  const int K = int(dims.K);
  w.U = tensor(params, "U");
  w.W.resize(std::size_t(K));
  w.S.resize(std::size_t(K));
  for (int k = 0; k < K; ++k) w.W[std::size_t(k)] = tensor(params, "W" + std::to_string(k + 1));
  for (int k = 1; k < K; ++k) w.S[std::size_t(k)] = tensor(params, "S" + std::to_string(k + 1));
  w.V = tensor(params, "V");
  w.b = tensor(params, "b").col(0);
  auto model = std::make_unique<StackedRnn>(tensor(params, "A"), w, tensor(params, "h0"), activation, dims.T);
  if (!(model->dims() == dims)) throw DimensionError("checkpoint tensors disagree with header dims");
  return model;
}

}  // namespace l1l1
