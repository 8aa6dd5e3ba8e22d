#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "l1l1/errors.hpp"
#include "l1l1/model.hpp"

namespace l1l1 {

/// Returned by psnr when the reconstruction is exact (or better than this).
inline constexpr double kPsnrCapDb = 200.0;

/// 10 log10(peak^2 / MSE), MSE averaged over every entry of the sequence; capped at kPsnrCapDb.
double psnr(const Matrix& s, const Matrix& shat, double peak = 1.0);

/// Share of entries exactly equal to zero.
template <typename Derived>
double zero_fraction(const Eigen::DenseBase<Derived>& h) {
  if (h.size() == 0) return 0.0;
  return double((h.derived().array() == typename Derived::Scalar(0)).count()) / double(h.size());
}

struct EvalReport {
  std::vector<double> psnr_db;              // one per sequence
  double mean_psnr_db{0};
  std::vector<double> zero_fraction_layer;  // one per hidden layer
  double compression_rate{0};               // m / n

  double last_layer_zero_fraction() const {
    return zero_fraction_layer.empty() ? 0.0 : zero_fraction_layer.back();
  }
};

/// Runs the model over every sequence: per-sequence PSNR, their mean, and
/// the exact-zero fraction of each hidden layer pooled over all frames.
EvalReport evaluate(const SequenceModel& model, const std::vector<Matrix>& sequences);

/// CSV with header sequence_id,psnr_db followed by a final "mean" row.
void write_eval_csv(const EvalReport& report, const std::filesystem::path& path);

std::string format_eval_table(const EvalReport& report);

}  // namespace l1l1
