#pragma once

// Video tensors, preprocessing and synthetic sparse sequences.
//
// raw_v1 container, little-endian:
//   "MMV1RAW0"  u32 version (1)  u8 dtype (0 = u8, 1 = f32, 2 = f64)  u8 rank
//   rank x u32 shape, C-order payload.

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "l1l1/errors.hpp"

namespace l1l1 {

using Frame = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class VideoFormat { kAuto, kRawV1, kNpyV1 };
enum class DType : std::uint8_t { kU8 = 0, kF32 = 1, kF64 = 2 };

/// Axis order of rank-4 files: sequences-major [N][T][H][W] or frames-major [T][N][H][W].
enum class VideoLayout { kSequencesFirst, kFramesFirst };

struct Splits {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Pixel tensor [num_sequences][T][H][W] with values in [0, 1].
struct VideoDataset {
  std::size_t num_sequences{0};
  std::size_t frames{0};
  std::size_t height{0};
  std::size_t width{0};
  std::vector<double> pixels;  // C order
  Splits splits;

  double& at(std::size_t seq, std::size_t t, std::size_t r, std::size_t c) {
    return pixels[((seq * frames + t) * height + r) * width + c];
  }
  double at(std::size_t seq, std::size_t t, std::size_t r, std::size_t c) const {
    return pixels[((seq * frames + t) * height + r) * width + c];
  }

  Frame frame(std::size_t seq, std::size_t t) const;
  void set_frame(std::size_t seq, std::size_t t, const Frame& f);
};

struct LoadOptions {
  VideoFormat format{VideoFormat::kAuto};
  VideoLayout layout{VideoLayout::kSequencesFirst};
};

/// Rank-4 tensors use opts.layout; a rank-3 tensor [T][H][W] is read as one sequence.
VideoDataset load_video_tensor(const std::filesystem::path& path, const LoadOptions& opts = {});

/// Loads and downsamples frame by frame, never holding the full-resolution tensor as reals.
VideoDataset load_downscaled(const std::filesystem::path& path, int factor, const LoadOptions& opts = {});

/// Writes [N][T][H][W] as raw_v1 with the given payload dtype.
void save_raw_v1(const std::filesystem::path& path, const VideoDataset& data, DType dtype = DType::kF64);

/// Generic raw_v1 / npy writers for any C-order tensor (used by tools and tests).
void write_raw_v1(const std::filesystem::path& path, const std::vector<std::uint32_t>& shape, DType dtype,
                  const std::vector<double>& values);
void write_npy_v1(const std::filesystem::path& path, const std::vector<std::uint32_t>& shape, DType dtype,
                  const std::vector<double>& values, bool fortran_order = false);

/// Output (i, j) samples the input bilinearly at ((i + 0.5) f - 0.5, (j + 0.5) f - 0.5).
Frame bilinear_downscale(const Frame& frame, int factor);

VideoDataset downscale(const VideoDataset& data, int factor);

/// Seeded permutation of [0, num_sequences) partitioned in order into the three sizes.
Splits make_splits(std::size_t num_sequences, std::array<std::size_t, 3> sizes, std::uint64_t seed);

/// Row-major flattening of every frame: one (H W) x T matrix per sequence.
std::vector<Eigen::MatrixXd> vectorize(const VideoDataset& data);
std::vector<Eigen::MatrixXd> vectorize(const VideoDataset& data, const std::vector<std::size_t>& indices);
Frame unvectorize(const Eigen::VectorXd& v, std::size_t height, std::size_t width);

struct SyntheticSpec {
  Eigen::Index n{64};
  Eigen::Index d{128};
  Eigen::Index m{16};
  Eigen::Index T{10};
  Eigen::Index sparsity{8};             // nonzeros of h_1
  Eigen::Index innovation_sparsity{4};  // nonzeros of h_t - G h_{t-1}
  double amplitude_min{0.5};
  double amplitude_max{1.0};
  std::uint64_t seed{0};

  void validate() const;
};

struct SyntheticSequence {
  Eigen::MatrixXd signals;  // n x T
  Eigen::MatrixXd codes;    // d x T
};

/// h_1 with `sparsity` random-sign nonzeros, h_t = G h_{t-1} + e_t with e_t
/// having exactly `innovation_sparsity` nonzeros, s_t = D h_t.
SyntheticSequence generate_synthetic(const SyntheticSpec& spec, const Eigen::MatrixXd& G,
                                     const Eigen::MatrixXd& D);

/// `count` sequences with seeds spec.seed, spec.seed + 1, ...
std::vector<Eigen::MatrixXd> generate_synthetic_dataset(const SyntheticSpec& spec, const Eigen::MatrixXd& G,
                                                        const Eigen::MatrixXd& D, std::size_t count);

}  // namespace l1l1
