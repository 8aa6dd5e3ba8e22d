#pragma once

// Checkpoint container, little-endian:
//
//   "L1L1CKPT"  u32 version  u32 m, n, d, K, T
//   repeated until EOF:
//     u16 name length, name bytes, u8 rank, rank x u32 shape, float64 data (C order)

#include <cstdint>
#include <filesystem>

#include "l1l1/model.hpp"
#include "l1l1/training.hpp"

namespace l1l1 {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::string name;
  std::vector<std::uint32_t> shape;  // rank 0 for scalars, rank 2 for matrices
  std::vector<double> data;          // C order
};

struct Checkpoint {
  ModelDims dims;
  std::vector<CheckpointRecord> records;

  const CheckpointRecord* find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

CheckpointRecord matrix_record(const std::string& name, const Matrix& value);
CheckpointRecord scalar_record(const std::string& name, double value);
Matrix record_matrix(const CheckpointRecord& rec);

/// Model parameters, Adam moments and progress counters.
void save_train_state(const std::filesystem::path& path, const TrainState& state);
TrainState load_train_state(const std::filesystem::path& path);

}  // namespace l1l1
