// Acceptance runner: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,2,...] [--known-failure 6,...]
//
// Exit status is 0 when every criterion passes, or fails only where listed
// with --known-failure. Known failures still print FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "l1l1/checkpoint.hpp"
#include "l1l1/data.hpp"
#include "l1l1/experiment.hpp"
#include "l1l1/metrics.hpp"
#include "l1l1/network.hpp"
#include "l1l1/prox.hpp"
#include "l1l1/solvers.hpp"
#include "l1l1/training.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace l1l1;
using l1l1::testing::random_matrix;
using l1l1::testing::random_vector;

namespace {

struct Outcome {
  bool passed{false};
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(4) << v;
  return s.str();
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / ("l1l1_acceptance_" + std::to_string(::getpid()))) {
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

// ---------------------------------------------------------------- 1, 2: prox

Outcome prox_vs_oracle() {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> uv(-5.0, 5.0), gamma(0.0, 3.0);
  double worst = 0;
  int g2_above_g1 = 0;
  for (int i = 0; i < 100000; ++i) {
    const double u = uv(rng), v = uv(rng);
    const ProxParams<double> p(gamma(rng), gamma(rng));
    g2_above_g1 += p.gamma2 > p.gamma1;
    worst = std::max(worst, std::abs(l1l1_prox<double>(u, v, p) - prox_oracle<double>(u, v, p)));
  }
  return {worst <= 1e-12 && g2_above_g1 > 0,
          "max |prox - oracle| = " + fmt(worst) + " over 1e5 tuples (" + std::to_string(g2_above_g1) +
              " with gamma2 > gamma1)"};
}

Outcome prox_reductions() {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> uv(-5.0, 5.0), gamma(0.0, 3.0);
  double worst_g2 = 0, worst_g1 = 0;
  for (int i = 0; i < 10000; ++i) {
    const double u = uv(rng), v = uv(rng), g = gamma(rng);
    worst_g2 = std::max(worst_g2, std::abs(l1l1_prox<double>(u, v, {g, 0.0}) - soft_threshold(u, g)));
    worst_g1 = std::max(worst_g1, std::abs(l1l1_prox<double>(u, v, {0.0, g}) - (v + soft_threshold(u - v, g))));
  }
  return {worst_g2 <= 1e-12 && worst_g1 <= 1e-12,
          "gamma2=0 err " + fmt(worst_g2) + ", gamma1=0 err " + fmt(worst_g1) + " over 1e4 samples"};
}

// ---------------------------------------------------------------- 3: descent and optimality

Operators<double> random_ops(Eigen::Index m, Eigen::Index n, Eigen::Index d, std::mt19937_64& rng) {
  Operators<double> ops;
  ops.A = random_matrix(m, n, rng) / std::sqrt(double(m));
  ops.D = random_matrix(n, d, rng) / std::sqrt(double(n));
  ops.G = random_matrix(d, d, rng) / std::sqrt(double(d));
  return ops;
}

// Minimum of a convex function on a box by repeated grid refinement around the best point.
double grid_refinement_min(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::Index d, double radius) {
  const int points = d == 1 ? 401 : d == 2 ? 61 : 21;
  Eigen::VectorXd center = Eigen::VectorXd::Zero(d);
  double half = radius, best = f(center);
  while (half > 1e-11) {
    const double step = 2 * half / (points - 1);
    Eigen::VectorXd best_x = center;
    std::vector<int> idx(std::size_t(d), 0);
    for (;;) {
      Eigen::VectorXd h(d);
      for (Eigen::Index j = 0; j < d; ++j) h(j) = center(j) - half + step * idx[std::size_t(j)];
      const double v = f(h);
      if (v < best) {
        best = v;
        best_x = h;
      }
      std::size_t j = 0;
      while (j < idx.size() && ++idx[j] == points) idx[j++] = 0;
      if (j == idx.size()) break;
    }
    center = best_x;
    half = 3 * step;
  }
  return best;
}

Outcome solver_descent_and_optimality() {
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> lam(0.01, 0.3);
  int violations = 0;
  double worst_rise = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const auto ops = random_ops(8, 16, 24, rng);
    const double alpha = power_iteration_bound(ops, 500);
    const SolverConfig<double> cfg{alpha, lam(rng), lam(rng), 50, 0.0};
    const Eigen::MatrixXd x = random_matrix(8, 5, rng);
    const Eigen::VectorXd h0 = random_vector(24, rng);
    // per-frame objective uses the previous frame's final code
    Eigen::VectorXd prev = h0, last_h;
    Eigen::Index cur_t = -1;
    double last_f = 0;
    l1l1_solve_sequence(x, ops, cfg, h0, [&](Eigen::Index t, int k, const Eigen::VectorXd& h) {
      if (t != cur_t) {
        if (cur_t >= 0) prev = last_h;
        cur_t = t;
        last_f = objective_l1l1(Eigen::VectorXd(ops.G * prev), x.col(t), prev, ops, cfg.lambda1, cfg.lambda2);
      }
      const double f = objective_l1l1(h, x.col(t), prev, ops, cfg.lambda1, cfg.lambda2);
      if (f > last_f + 1e-10) {
        ++violations;
        worst_rise = std::max(worst_rise, f - last_f);
      }
      (void)k;
      last_f = f;
      last_h = h;
    });
  }

  double worst_gap = 0;
  int small = 0;
  for (Eigen::Index d = 1; d <= 3; ++d)
    for (int inst = 0; inst < 4; ++inst, ++small) {
      const auto ops = random_ops(8, 16, d, rng);
      const double alpha = power_iteration_bound(ops, 500);
      const SolverConfig<double> cfg{alpha, lam(rng), lam(rng), 20000, 1e-15};
      const Eigen::MatrixXd x = random_matrix(8, 5, rng);
      const Eigen::VectorXd h0 = random_vector(d, rng);
      const Eigen::MatrixXd codes = l1l1_solve_sequence(x, ops, cfg, h0);
      Eigen::VectorXd prev = h0;
      for (Eigen::Index t = 0; t < x.cols(); ++t) {
        const Eigen::VectorXd xt = x.col(t);
        const double oracle = grid_refinement_min(
            [&](const Eigen::VectorXd& h) { return objective_l1l1(h, xt, prev, ops, cfg.lambda1, cfg.lambda2); }, d,
            std::max(4.0, 2 * codes.col(t).lpNorm<Eigen::Infinity>()));
        const double solved = objective_l1l1(codes.col(t), xt, prev, ops, cfg.lambda1, cfg.lambda2);
        worst_gap = std::max(worst_gap, std::abs(solved - oracle));
        prev = codes.col(t);
      }
    }
  return {violations == 0 && worst_gap <= 1e-6,
          std::to_string(violations) + " increases over 100 instances x 5 frames x 50 iterations (worst " +
              fmt(worst_rise) + "); max |F - grid oracle| = " + fmt(worst_gap) + " on " + std::to_string(small) +
              " instances with d <= 3"};
}

// ---------------------------------------------------------------- 4: forward equivalence

Outcome forward_equivalence() {
  std::mt19937_64 rng(404);
  const int Ks[] = {1, 2, 3, 5};
  const Eigen::Index Ts[] = {1, 3, 10};
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double worst = 0;
  for (int i = 0; i < 50; ++i) {
    ModelParams<double> theta;
    const Eigen::Index m = 4 + i % 5, n = 8 + i % 3, d = 12 + i % 7;
    theta.A = random_matrix(m, n, rng) / std::sqrt(double(m));
    theta.D = random_matrix(n, d, rng) / std::sqrt(double(n));
    theta.G = random_matrix(d, d, rng) / std::sqrt(double(d));
    theta.h0 = random_vector(d, rng);
    theta.K = Ks[i % 4];
    theta.alpha = power_iteration_bound(theta.operators(), 200) * (1 + unif(rng));
    theta.lambda1 = 0.3 * unif(rng);
    theta.lambda2 = 0.3 * unif(rng);
    const Eigen::MatrixXd x = random_matrix(m, Ts[(i / 4) % 3], rng);
    const auto net = forward_sequence(x, theta, build_weights(theta));
    const Eigen::MatrixXd ref = l1l1_solve_sequence(x, theta.operators(), theta.solver_config(), theta.h0);
    worst = std::max(worst, (net.last_layer() - ref).lpNorm<Eigen::Infinity>());
  }
  return {worst <= 1e-10, "max elementwise difference " + fmt(worst) + " over 50 parameter sets"};
}

// ---------------------------------------------------------------- 5: gradients

Outcome gradients() {
  const ModelDims dims{3, 6, 8, 2, 3};
  GradCheckOptions opts;  // step 1e-5, margin 1e-3, tolerance 1e-4
  auto [theta, s] = random_gradcheck_problem(dims, 505, opts.margin);
  const L1L1Rnn model(theta, dims.T);
  const auto report = gradient_check(model, s, opts);
  std::set<std::string> names;
  for (const auto& p : report.params) names.insert(p.name);
  const std::set<std::string> want{"A", "D", "G", "h0", "alpha_raw", "lambda1_raw", "lambda2_raw"};
  const bool covered = std::includes(names.begin(), names.end(), want.begin(), want.end());
  return {report.passed && report.max_rel_error <= 1e-4 && covered,
          "max relative error " + fmt(report.max_rel_error) + " (boundary margin " + fmt(report.boundary_margin) +
              ")" + (covered ? "" : ", missing parameters")};
}

// ---------------------------------------------------------------- 6, 7, 9: desk-scale training

struct DeskRun {
  TrainResult result;
  double final_val{0};
  double zero_fraction{0};
  fs::path curve_csv;
};

const SyntheticTask& desk_task() {
  static const SyntheticTask task = make_synthetic_task(SyntheticTaskConfig{});
  return task;
}

DeskRun desk_run(ModelKind kind, const fs::path& curve_csv) {
  const auto& task = desk_task();
  const TrainConfig cfg = desk_scale_train_config(0);
  const ModelDims dims{16, 64, 128, std::uint32_t(cfg.K), 10};
  TrainState state = make_initial_state(kind, dims, cfg, desk_scale_init());
  DeskRun run;
  run.result = train(state, task.data.train, task.data.val, cfg);
  run.final_val = run.result.curve.empty() ? run.result.initial_val_psnr_db : run.result.curve.back().val_psnr_db;
  run.zero_fraction = evaluate(*state.model, task.data.val).last_layer_zero_fraction();
  write_learning_curve(curve_csv, run.result.curve, false);
  run.curve_csv = curve_csv;
  return run;
}

struct DeskResults {
  DeskRun l1l1, l1l1_again, stacked;
};

const DeskResults& desk_results(const fs::path& dir) {
  static const DeskResults r{desk_run(ModelKind::kL1L1Rnn, dir / "l1l1_a.csv"),
                             desk_run(ModelKind::kL1L1Rnn, dir / "l1l1_b.csv"),
                             desk_run(ModelKind::kStackedRnn, dir / "stacked.csv")};
  return r;
}

Outcome training_efficacy(const fs::path& dir) {
  const auto& r = desk_results(dir);
  const double gain = r.l1l1.final_val - r.l1l1.result.initial_val_psnr_db;
  const double margin = r.l1l1.final_val - r.stacked.final_val;
  return {gain >= 3.0 && margin >= 0.5, "l1l1 " + fmt(r.l1l1.result.initial_val_psnr_db) + " -> " +
                                            fmt(r.l1l1.final_val) + " dB (gain " + fmt(gain) +
                                            ", need 3); stacked " + fmt(r.stacked.final_val) + " dB (margin " +
                                            fmt(margin) + ", need 0.5)"};
}

Outcome exact_sparsity(const fs::path& dir) {
  const double zf = desk_results(dir).l1l1.zero_fraction;
  return {zf >= 0.10, "last-layer zero fraction " + fmt(zf)};
}

Outcome determinism(const fs::path& dir) {
  const auto& r = desk_results(dir);
  const std::string a = read_bytes(r.l1l1.curve_csv), b = read_bytes(r.l1l1_again.curve_csv);
  return {!a.empty() && a == b, "two seeded runs: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                                    " bytes, " + (a == b ? "identical" : "different")};
}

std::string moving_average_info(const fs::path& dir) {
  const auto& curve = desk_results(dir).l1l1.result.curve;
  std::vector<double> ma;
  for (std::size_t e = 4; e < std::min<std::size_t>(curve.size(), 20); ++e) {
    double sum = 0;
    for (std::size_t j = e - 4; j <= e; ++j) sum += curve[j].val_psnr_db;
    ma.push_back(sum / 5);
  }
  int drops = 0;
  for (std::size_t i = 1; i < ma.size(); ++i) drops += ma[i] < ma[i - 1];
  return "5-epoch moving-average validation PSNR over epochs 1-20: " + std::to_string(drops) + " decreases";
}

// ---------------------------------------------------------------- 8: formats

// npy v1.0 bytes built by hand
std::string npy_bytes(bool fortran, const std::string& payload) {
  std::string dict = std::string("{'descr': '<f8', 'fortran_order': ") + (fortran ? "True" : "False") +
                     ", 'shape': (1, 2, 2, 2), }";
  dict.append((64 - (10 + dict.size() + 1) % 64) % 64, ' ');
  dict.push_back('\n');
  std::string out = "\x93NUMPY";
  out.push_back('\x01');
  out.push_back('\x00');
  out.push_back(char(dict.size() & 0xff));
  out.push_back(char(dict.size() >> 8));
  return out + dict + payload;
}

Outcome format_round_trips(const fs::path& dir) {
  std::vector<std::string> failures;
  // raw_v1: write, read, write again; both files and all values identical
  std::mt19937_64 rng(808);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> f64(2 * 3 * 4 * 5);
  for (auto& v : f64) v = unif(rng);
  std::vector<double> u8(f64.size());
  for (std::size_t i = 0; i < u8.size(); ++i) u8[i] = double(i % 256) / 255.0;
  const std::pair<DType, const std::vector<double>*> cases[] = {{DType::kF64, &f64}, {DType::kU8, &u8}};
  for (const auto& [dtype, values] : cases) {
    const auto a = dir / "a.raw", b = dir / "b.raw";
    write_raw_v1(a, {2, 3, 4, 5}, dtype, *values);
    const VideoDataset loaded = load_video_tensor(a);
    save_raw_v1(b, loaded, dtype);
    if (loaded.pixels != *values || read_bytes(a) != read_bytes(b))
      failures.push_back(std::string("raw_v1 ") + (dtype == DType::kU8 ? "u8" : "f64"));
  }

  // checkpoint: trained state survives save/load/save unchanged
  {
    auto task_cfg = SyntheticTaskConfig{};
    task_cfg.n = 8;
    task_cfg.d = 12;
    task_cfg.T = 3;
    task_cfg.train_count = 6;
    task_cfg.val_count = 2;
    task_cfg.test_count = 0;
    const auto task = make_synthetic_task(task_cfg);
    TrainConfig cfg = desk_scale_train_config(3);
    cfg.epochs = 2;
    cfg.batch_size = 3;
    for (ModelKind kind : {ModelKind::kL1L1Rnn, ModelKind::kStackedRnn}) {
      TrainState state = make_initial_state(kind, ModelDims{4, 8, 12, 3, 3}, cfg, desk_scale_init());
      train(state, task.data.train, task.data.val, cfg);
      const auto a = dir / "a.ckpt", b = dir / "b.ckpt";
      save_train_state(a, state);
      const TrainState back = load_train_state(a);
      save_train_state(b, back);
      bool same = read_bytes(a) == read_bytes(b) && back.epoch == state.epoch;
      const auto& p = state.model->parameters();
      const auto& q = back.model->parameters();
      same = same && p.size() == q.size();
      for (std::size_t i = 0; same && i < p.size(); ++i) same = p[i].name == q[i].name && p[i].value == q[i].value;
      if (!same) failures.push_back("checkpoint " + to_string(kind));
    }
  }

  // npy: C order accepted, Fortran order rejected
  std::string payload(8 * sizeof(double), '\0');
  for (int i = 0; i < 8; ++i) {
    const double v = i / 8.0;
    std::memcpy(payload.data() + i * sizeof(double), &v, sizeof(double));
  }
  {
    std::ofstream(dir / "c.npy", std::ios::binary) << npy_bytes(false, payload);
    std::ofstream(dir / "f.npy", std::ios::binary) << npy_bytes(true, payload);
  }
  try {
    const auto c = load_video_tensor(dir / "c.npy");
    if (c.pixels.size() != 8 || c.pixels[5] != 5 / 8.0) failures.push_back("npy C order values");
  } catch (const std::exception&) {
    failures.push_back("npy C order rejected");
  }
  try {
    load_video_tensor(dir / "f.npy");
    failures.push_back("npy Fortran order accepted");
  } catch (const FormatError&) {
  }

  std::string detail = "raw_v1 (f64, u8), checkpoints (l1l1, stacked), npy C/Fortran: ";
  if (failures.empty()) return {true, detail + "ok"};
  for (const auto& f : failures) detail += f + "; ";
  return {false, detail};
}

std::set<int> parse_list(const char* arg) {
  std::set<int> out;
  std::stringstream ss(arg);
  std::string item;
  while (std::getline(ss, item, ',')) out.insert(std::stoi(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only, known;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--only") && i + 1 < argc)
      only = parse_list(argv[++i]);
    else if (!std::strcmp(argv[i], "--known-failure") && i + 1 < argc)
      known = parse_list(argv[++i]);
    else {
      std::cerr << "usage: acceptance [--only 1,2,...] [--known-failure 6,...]\n";
      return 2;
    }
  }

  TempDir tmp;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"prox matches the brute-force oracle", prox_vs_oracle},
      {"prox reductions to soft thresholding", prox_reductions},
      {"solver descent and grid-oracle optimality", solver_descent_and_optimality},
      {"network and solver forward equivalence", forward_equivalence},
      {"gradient check", gradients},
      {"desk-scale training efficacy", [&] { return training_efficacy(tmp.path); }},
      {"exact sparsity after training", [&] { return exact_sparsity(tmp.path); }},
      {"format round trips", [&] { return format_round_trips(tmp.path); }},
      {"determinism of seeded training", [&] { return determinism(tmp.path); }},
  };

  int unexpected = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = criteria[i].second();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << (out.passed ? "PASS" : "FAIL") << "  " << id << ". " << criteria[i].first << ": " << out.detail
              << " [" << std::fixed << std::setprecision(1) << secs << " s]" << std::defaultfloat;
    if (!out.passed && known.count(id)) std::cout << " (known failure)";
    std::cout << std::endl;
    if (!out.passed && !known.count(id)) ++unexpected;
    if (id == 6) std::cout << "INFO  " << moving_average_info(tmp.path) << std::endl;
  }
  return unexpected == 0 ? 0 : 1;
}
