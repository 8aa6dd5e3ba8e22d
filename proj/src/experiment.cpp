#include "l1l1/experiment.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "l1l1/dictionary.hpp"

namespace l1l1 {

SyntheticTask make_synthetic_task(const SyntheticTaskConfig& cfg) {
  if (!(cfg.g_decay >= 0) || !std::isfinite(cfg.g_decay)) throw ParameterError("synthetic task: g_decay must be >= 0");
  SyntheticTask task;
  task.D = overcomplete_dct<double>(cfg.n, cfg.d);
  task.G = cfg.g_decay * Matrix::Identity(cfg.d, cfg.d);

  SyntheticSpec spec;
  spec.n = cfg.n;
  spec.d = cfg.d;
  spec.T = cfg.T;
  spec.sparsity = cfg.sparsity;
  spec.innovation_sparsity = cfg.innovation_sparsity;
  spec.amplitude_min = cfg.amplitude_min;
  spec.amplitude_max = cfg.amplitude_max;

  // one block of 2^20 seeds per split
  spec.seed = cfg.seed;
  task.data.train = generate_synthetic_dataset(spec, task.G, task.D, cfg.train_count);
  spec.seed = cfg.seed + (std::uint64_t(1) << 20);
  task.data.val = generate_synthetic_dataset(spec, task.G, task.D, cfg.val_count);
  spec.seed = cfg.seed + (std::uint64_t(2) << 20);
  task.data.test = generate_synthetic_dataset(spec, task.G, task.D, cfg.test_count);
  return task;
}

SequenceSplits load_sequence_splits(const std::filesystem::path& path, const LoadOptions& opts,
                                    std::array<std::size_t, 3> sizes, std::uint64_t seed) {
  const VideoDataset video = load_video_tensor(path, opts);
  const std::size_t N = video.num_sequences;
  if (sizes[0] + sizes[1] + sizes[2] == 0) {
    sizes[1] = N / 10;
    sizes[2] = N / 10;
    sizes[0] = N - sizes[1] - sizes[2];
  }
  const Splits s = make_splits(N, sizes, seed);
  return {vectorize(video, s.train), vectorize(video, s.val), vectorize(video, s.test)};
}

std::uint32_t measurements_for_rate(double rate, std::uint32_t n) {
  if (!(rate > 0) || rate > 1) throw ParameterError("compression rate must be in (0, 1]");
  const auto m = static_cast<std::uint32_t>(std::lround(rate * double(n)));
  if (m < 1 || m > n) throw ParameterError("compression rate gives m outside [1, n]");
  return m;
}

void write_learning_curve(const std::filesystem::path& path, const std::vector<CurvePoint>& curve, bool append) {
  const bool header = !append || !std::filesystem::exists(path);
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  if (header) out << "epoch,train_loss,val_psnr_db\n";
  for (const auto& p : curve) out << p.epoch << ',' << p.train_loss << ',' << p.val_psnr_db << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<CurvePoint> read_learning_curve(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "epoch,train_loss,val_psnr_db") throw FormatError(path.string() + ": unexpected learning-curve header");
  std::vector<CurvePoint> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    CurvePoint p;
    char c1 = 0, c2 = 0;
    if (!(row >> p.epoch >> c1 >> p.train_loss >> c2 >> p.val_psnr_db) || c1 != ',' || c2 != ',')
      throw FormatError(path.string() + ": malformed row '" + line + "'");
    out.push_back(p);
  }
  return out;
}

TrainConfig desk_scale_train_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.learning_rate = 3e-4;
  cfg.batch_size = 16;
  cfg.K = 3;
  cfg.seed = seed;
  // lambda1 = 1 zeroes every code at this signal scale, which also zeroes every gradient
  cfg.lambda1_init = 0.01;
  cfg.lambda2_init = 0.01;
  cfg.alpha_init = 1.0;
  return cfg;
}

InitOptions desk_scale_init() {
  InitOptions init;
  init.g_init = GInit::kIdentity;
  return init;
}

}  // namespace l1l1
