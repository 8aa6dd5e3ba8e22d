#pragma once

// Glue shared by the command-line tool and the acceptance runner: dataset
// assembly, the desk-scale synthetic task and learning-curve files.

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "l1l1/data.hpp"
#include "l1l1/training.hpp"

namespace l1l1 {

struct SequenceSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Synthetic sequences from s_t = D h_t, h_t = g_decay * h_{t-1} + e_t, with D the overcomplete DCT.
struct SyntheticTaskConfig {
  Eigen::Index n{64};
  Eigen::Index d{128};
  Eigen::Index T{10};
  Eigen::Index sparsity{4};
  Eigen::Index innovation_sparsity{4};
  double amplitude_min{0.5};
  double amplitude_max{1.0};
  double g_decay{0.5};
  std::size_t train_count{200};
  std::size_t val_count{50};
  std::size_t test_count{50};
  std::uint64_t seed{1000};
};

struct SyntheticTask {
  SequenceSplits data;
  Matrix D;  // generating dictionary
  Matrix G;  // generating transition
};

/// Train, validation and test sequences use disjoint seed ranges.
SyntheticTask make_synthetic_task(const SyntheticTaskConfig& cfg);

/// Loads a prepared video tensor, vectorizes it and splits it. Zero sizes mean 80/10/10 of the file.
SequenceSplits load_sequence_splits(const std::filesystem::path& path, const LoadOptions& opts,
                                    std::array<std::size_t, 3> sizes, std::uint64_t seed);

/// m = round(rate * n), required to satisfy 1 <= m <= n.
std::uint32_t measurements_for_rate(double rate, std::uint32_t n);

/// CSV with header epoch,train_loss,val_psnr_db. append keeps existing rows (resumed runs).
void write_learning_curve(const std::filesystem::path& path, const std::vector<CurvePoint>& curve, bool append);
std::vector<CurvePoint> read_learning_curve(const std::filesystem::path& path);

/// Training setup of the desk-scale acceptance run (30 epochs, lr 3e-4, batch 16).
TrainConfig desk_scale_train_config(std::uint64_t seed = 0);
InitOptions desk_scale_init();

}  // namespace l1l1
