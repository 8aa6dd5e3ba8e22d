#pragma once

// Trainable sequence models behind a common interface.
//
// Parameters live in an ordered list of named dense tensors so that the
// optimizer, gradient clipping and checkpointing stay model-agnostic. The
// signal path is end to end: a model receives signal frames s_t, senses them
// with its own trainable A and reconstructs shat_t.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "l1l1/network.hpp"

namespace l1l1 {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct NamedTensor {
  std::string name;
  Matrix value;
};

/// Ordered parameter (or gradient) tensors. Vectors are stored as d x 1, scalars as 1 x 1.
using TensorList = std::vector<NamedTensor>;

TensorList zeros_like(const TensorList& tensors);
double squared_norm(const TensorList& tensors);
bool all_finite(const TensorList& tensors);
Matrix& tensor(TensorList& tensors, const std::string& name);
const Matrix& tensor(const TensorList& tensors, const std::string& name);

enum class ModelKind { kL1L1Rnn = 0, kStackedRnn = 1 };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

struct ModelDims {
  std::uint32_t m{0};
  std::uint32_t n{0};
  std::uint32_t d{0};
  std::uint32_t K{0};
  std::uint32_t T{0};

  bool operator==(const ModelDims&) const = default;
};

std::string to_string(const ModelDims& dims);

double softplus(double raw);
double softplus_inverse(double value);
double sigmoid(double raw);

class SequenceModel {
 public:
  virtual ~SequenceModel() = default;

  virtual ModelKind kind() const = 0;
  virtual ModelDims dims() const = 0;
  virtual std::unique_ptr<SequenceModel> clone() const = 0;

  TensorList& parameters() { return params_; }
  const TensorList& parameters() const { return params_; }

  /// Reconstruction of a signal sequence (n x T). When codes is given it
  /// receives one d x K block of hidden states per frame.
  virtual Matrix reconstruct(const Matrix& s, std::vector<Matrix>* codes = nullptr) const = 0;

  /// Adds weight * d/dtheta sum_t ||s_t - shat_t||^2 into grads and returns the unweighted data loss.
  virtual double accumulate_gradient(const Matrix& s, double weight, TensorList& grads) const = 0;

  /// beta * ||theta||^2, adding its gradient into grads when given.
  virtual double decay(double beta, TensorList* grads) const = 0;

 protected:
  TensorList params_;
};

/// The unfolded l1-l1 network. alpha, lambda1 and lambda2 are stored as
/// softplus pre-activations named alpha_raw, lambda1_raw, lambda2_raw.
class L1L1Rnn final : public SequenceModel {
 public:
  L1L1Rnn(const ModelParams<double>& theta, std::uint32_t T);

  ModelKind kind() const override { return ModelKind::kL1L1Rnn; }
  ModelDims dims() const override;
  std::unique_ptr<SequenceModel> clone() const override { return std::make_unique<L1L1Rnn>(*this); }

  ModelParams<double> model_params() const;

  Matrix reconstruct(const Matrix& s, std::vector<Matrix>* codes = nullptr) const override;
  double accumulate_gradient(const Matrix& s, double weight, TensorList& grads) const override;
  double decay(double beta, TensorList* grads) const override;

 private:
  int K_;
  std::uint32_t T_;
};

/// Plain stacked RNN baseline with its own trainable sensing matrix.
class StackedRnn final : public SequenceModel {
 public:
  StackedRnn(const Matrix& A, const StackedRnnWeights<double>& weights, const Matrix& h_init,
             Activation activation, std::uint32_t T);

  ModelKind kind() const override { return ModelKind::kStackedRnn; }
  ModelDims dims() const override;
  std::unique_ptr<SequenceModel> clone() const override { return std::make_unique<StackedRnn>(*this); }

  Activation activation() const { return activation_; }
  StackedRnnWeights<double> weights() const;

  Matrix reconstruct(const Matrix& s, std::vector<Matrix>* codes = nullptr) const override;
  double accumulate_gradient(const Matrix& s, double weight, TensorList& grads) const override;
  double decay(double beta, TensorList* grads) const override;

 private:
  int K_;
  Activation activation_;
  std::uint32_t T_;
};

/// Rebuilds a model of the given kind from a parameter list (e.g. read from a checkpoint).
std::unique_ptr<SequenceModel> model_from_tensors(ModelKind kind, const ModelDims& dims, const TensorList& params,
                                                  Activation activation = Activation::kTanh);

}  // namespace l1l1
