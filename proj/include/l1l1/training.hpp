#pragma once

// End-to-end training: loss, backpropagation through time and layers, Adam,
// initialization and the epoch loop.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "l1l1/model.hpp"
#include "l1l1/network.hpp"

namespace l1l1 {

using Dataset = std::vector<Matrix>;  // one n x T signal sequence per entry

// ---------------------------------------------------------------- loss / grads

/// sum_t ||s_t - shat_t||^2 + beta * param_sq_norm
double loss(const Matrix& s, const Matrix& shat, double param_sq_norm, double beta);

/// Squared norm of theta = {A, D, G, h0, alpha, lambda1, lambda2}.
double parameter_squared_norm(const ModelParams<double>& theta);

double loss(const Matrix& s, const Matrix& shat, const ModelParams<double>& theta, double beta);

/// Gradients with respect to the natural parameters of the unfolded network.
struct L1L1Gradients {
  Matrix A;
  Matrix D;
  Matrix G;
  Vector h0;
  double alpha{0};
  double lambda1{0};
  double lambda2{0};

  bool all_finite() const;
};

struct L1L1Backward {
  double loss{0};
  L1L1Gradients grads;
};

/// Loss and exact gradients for fixed measurements x (A enters only through the weights).
L1L1Backward backward(const Matrix& x, const Matrix& s, const ModelParams<double>& theta, double beta);

/// Same, with x = A s computed inside so the sensing path also contributes to dA.
L1L1Backward backward_end_to_end(const Matrix& s, const ModelParams<double>& theta, double beta);

struct StackedRnnGradients {
  Matrix A;
  StackedRnnWeights<double> weights;
  Matrix h_init;
};

/// Data loss sum_t ||s_t - shat_t||^2 of the stacked RNN with x = A s, and its gradients.
double stacked_rnn_backward(const Matrix& s, const Matrix& A, const StackedRnnWeights<double>& w,
                            const Matrix& h_init, Activation act, StackedRnnGradients& grads);

// ---------------------------------------------------------------- optimizer

struct AdamConfig {
  double learning_rate{3e-4};
  double beta1{0.9};
  double beta2{0.999};
  double epsilon{1e-8};
};

struct AdamState {
  TensorList first_moment;
  TensorList second_moment;
  std::int64_t step{0};

  static AdamState zeros_like(const TensorList& params);
};

/// One bias-corrected Adam update in place.
void adam_step(TensorList& params, const TensorList& grads, AdamState& state, const AdamConfig& cfg);

/// Rescales grads to global norm max_norm if larger; returns the norm before clipping. max_norm <= 0 disables.
double clip_global_norm(TensorList& grads, double max_norm);

// ---------------------------------------------------------------- init

enum class DictInit { kOvercompleteDct, kUniform };
enum class GInit { kUniform, kIdentity };

struct InitOptions {
  DictInit dict_init{DictInit::kOvercompleteDct};
  GInit g_init{GInit::kUniform};
  double alpha{1.0};
  double lambda1{1.0};
  double lambda2{0.01};
};

/// A, G (uniform option) and D (uniform option) drawn from U[-1/sqrt(d), 1/sqrt(d)]; h0 = 0.
ModelParams<double> init_params(const ModelDims& dims, std::uint64_t seed, const InitOptions& opts = {});

/// Stacked-RNN baseline: every weight and bias from U[-1/sqrt(d), 1/sqrt(d)], zero initial state.
std::unique_ptr<StackedRnn> init_stacked_rnn(const ModelDims& dims, std::uint64_t seed,
                                             Activation act = Activation::kTanh);

// ---------------------------------------------------------------- train loop

struct TrainConfig {
  int epochs{200};
  double learning_rate{3e-4};
  int batch_size{32};
  double beta{0.01};
  int K{3};
  std::uint64_t seed{0};
  double adam_beta1{0.9};
  double adam_beta2{0.999};
  double adam_epsilon{1e-8};
  double lambda1_init{1.0};
  double lambda2_init{0.01};
  double alpha_init{1.0};
  double clip_norm{5.0};

  void validate() const;
  AdamConfig adam() const { return {learning_rate, adam_beta1, adam_beta2, adam_epsilon}; }
};

struct CurvePoint {
  int epoch{0};
  double train_loss{0};
  double val_psnr_db{0};
};

/// Everything needed to continue a run: model, optimizer, progress.
struct TrainState {
  std::unique_ptr<SequenceModel> model;
  AdamState adam;
  int epoch{0};
  double best_val_psnr_db{-1e300};
  int best_epoch{0};
  double initial_val_psnr_db{0};
};

struct TrainResult {
  std::vector<CurvePoint> curve;  // epochs completed in this call
  double initial_val_psnr_db{0};
  int best_epoch{0};
  double best_val_psnr_db{0};
  TensorList best_params;
};

struct TrainHooks {
  /// Directory receiving checkpoint_last.ckpt and checkpoint_best.ckpt after each epoch. Empty disables.
  std::filesystem::path checkpoint_dir;
  std::function<void(const CurvePoint&)> on_epoch;
};

/// Mean validation PSNR of the model over a dataset.
double validation_psnr(const SequenceModel& model, const Dataset& val);

/// Minibatch Adam for cfg.epochs epochs starting from state (which may be resumed).
/// The batch loss is the mean sequence loss plus beta ||theta||^2.
TrainResult train(TrainState& state, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  const TrainHooks& hooks = {});

/// Fresh state for a model kind; uniform weights, DCT or uniform D, G per init.g_init.
TrainState make_initial_state(ModelKind kind, const ModelDims& dims, const TrainConfig& cfg,
                              const InitOptions& init = {}, Activation act = Activation::kTanh);

// ---------------------------------------------------------------- gradient check

struct ParamCheck {
  std::string name;
  double max_rel_error{0};
  double max_abs_error{0};
  std::size_t entries{0};
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_rel_error{0};
  double boundary_margin{0};
  bool passed{false};
};

struct GradCheckOptions {
  double step{1e-5};
  double margin{1e-3};
  double tolerance{1e-4};
  double beta{0.01};
  /// Adds this offset to every analytic gradient entry. Negative control only.
  double corrupt{0};
};

/// Smallest distance of any prox input in the forward pass to a prox case boundary.
double prox_boundary_margin(const Matrix& s, const ModelParams<double>& theta);

/// Random model and signal whose forward pass stays at least margin away from every prox boundary.
std::pair<ModelParams<double>, Matrix> random_gradcheck_problem(const ModelDims& dims, std::uint64_t seed,
                                                                double margin);

/// Central finite differences against the analytic gradient of every stored parameter of the model.
GradCheckReport gradient_check(const SequenceModel& model, const Matrix& s, const GradCheckOptions& opts);

}  // namespace l1l1
