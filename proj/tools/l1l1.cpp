// l1l1: data prep, solving, training, evaluation, gradient checks and rate sweeps.
//
// Exit codes: 0 success, 2 I/O or format error, 3 configuration or dimension
// mismatch, 4 numeric failure (including a failed gradient check).

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "l1l1/checkpoint.hpp"
#include "l1l1/data.hpp"
#include "l1l1/dictionary.hpp"
#include "l1l1/experiment.hpp"
#include "l1l1/metrics.hpp"
#include "l1l1/solvers.hpp"
#include "l1l1/training.hpp"

namespace fs = std::filesystem;
using namespace l1l1;

namespace {

constexpr int kExitIo = 2;
constexpr int kExitConfig = 3;
constexpr int kExitNumeric = 4;

struct GlobalOptions {
  std::uint64_t seed{0};
  int jobs{1};
  fs::path out_dir{"l1l1_out"};
};

struct DataOptions {
  std::string data;  // prepared tensor path or "synthetic"
  std::string format{"auto"};
  std::string layout{"sequences"};
  std::vector<std::size_t> split_sizes{0, 0, 0};
  std::uint64_t split_seed{0};
  // synthetic task
  Eigen::Index n{64};
  Eigen::Index d{128};
  Eigen::Index T{10};
  Eigen::Index sparsity{4};
  Eigen::Index innovation{4};
  double amplitude_min{0.5};
  double amplitude_max{1.0};
  double g_decay{0.5};
  std::size_t train_count{200};
  std::size_t val_count{50};
  std::size_t test_count{50};
  std::uint64_t data_seed{1000};
};

struct ModelOptions {
  std::string kind{"l1l1"};
  std::uint32_t m{0};
  double rate{0.25};
  std::uint32_t d{0};
  std::string activation{"tanh"};
  std::string dict_init{"dct"};
  std::string g_init{"uniform"};
};

struct Dataset3 {
  SequenceSplits splits;
  Matrix D;  // generating or default dictionary
  Matrix G;
  bool synthetic{false};
};

LoadOptions load_options(const DataOptions& o) {
  LoadOptions opts;
  opts.format = o.format == "raw" ? VideoFormat::kRawV1 : o.format == "npy" ? VideoFormat::kNpyV1 : VideoFormat::kAuto;
  opts.layout = o.layout == "frames" ? VideoLayout::kFramesFirst : VideoLayout::kSequencesFirst;
  return opts;
}

fs::path data_dir_path(const fs::path& p) {
  const char* env = std::getenv("L1L1_DATA_DIR");
  if (env && *env && p.is_relative()) return fs::path(env) / p;
  return p;
}

std::string resolve_data(const std::string& data) {
  if (!data.empty()) return data == "synthetic" ? data : data_dir_path(data).string();
  const char* env = std::getenv("L1L1_DATA_DIR");
  if (env && *env) return (fs::path(env) / "prepared.raw").string();
  return "synthetic";
}

Dataset3 load_data(const DataOptions& o, std::uint32_t model_d) {
  Dataset3 out;
  const std::string source = resolve_data(o.data);
  if (source == "synthetic") {
    SyntheticTaskConfig cfg;
    cfg.n = o.n;
    cfg.d = o.d;
    cfg.T = o.T;
    cfg.sparsity = o.sparsity;
    cfg.innovation_sparsity = o.innovation;
    cfg.amplitude_min = o.amplitude_min;
    cfg.amplitude_max = o.amplitude_max;
    cfg.g_decay = o.g_decay;
    cfg.train_count = o.train_count;
    cfg.val_count = o.val_count;
    cfg.test_count = o.test_count;
    cfg.seed = o.data_seed;
    auto task = make_synthetic_task(cfg);
    out.splits = std::move(task.data);
    out.D = std::move(task.D);
    out.G = std::move(task.G);
    out.synthetic = true;
    return out;
  }
  if (o.split_sizes.size() != 3) throw ParameterError("--split-sizes needs three values");
  out.splits = load_sequence_splits(source, load_options(o), {o.split_sizes[0], o.split_sizes[1], o.split_sizes[2]},
                                    o.split_seed);
  if (out.splits.train.empty() && out.splits.test.empty()) throw ParameterError("dataset has no sequences");
  const Eigen::Index n = (out.splits.train.empty() ? out.splits.test : out.splits.train).front().rows();
  const Eigen::Index d = model_d ? Eigen::Index(model_d) : 4 * n;
  out.D = overcomplete_dct<double>(n, d);
  out.G = Matrix::Identity(d, d);
  return out;
}

const Dataset& pick_split(const SequenceSplits& s, const std::string& name) {
  if (name == "train") return s.train;
  if (name == "val") return s.val;
  return s.test;
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "identity") return Activation::kIdentity;
  return Activation::kTanh;
}

std::string signal_count(const Dataset& d) {
  if (d.empty()) return "0";
  return std::to_string(d.size()) + " x (" + std::to_string(d.front().rows()) + " x " +
         std::to_string(d.front().cols()) + ")";
}

void echo_config(const CLI::App& app, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream out(out_dir / "effective_config.toml");
  if (!out) throw IoError("cannot write " + (out_dir / "effective_config.toml").string());
  out << app.config_to_str(true, true);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

void add_data_options(CLI::App* cmd, DataOptions& o) {
  cmd->add_option("--data", o.data, "prepared raw_v1/npy tensor, or 'synthetic' (default: $L1L1_DATA_DIR/prepared.raw)");
  cmd->add_option("--format", o.format, "tensor container")->check(CLI::IsMember({"auto", "raw", "npy"}));
  cmd->add_option("--layout", o.layout, "rank-4 axis order: sequences ([N][T][H][W]) or frames ([T][N][H][W])")
      ->check(CLI::IsMember({"sequences", "frames"}));
  cmd->add_option("--split-sizes", o.split_sizes, "train,val,test sequence counts (0,0,0 = 80/10/10)")
      ->delimiter(',')
      ->expected(3);
  cmd->add_option("--split-seed", o.split_seed, "seed of the split permutation");
  cmd->add_option("--n", o.n, "synthetic signal length");
  cmd->add_option("--synthetic-d", o.d, "synthetic dictionary size");
  cmd->add_option("--T", o.T, "synthetic frames per sequence");
  cmd->add_option("--sparsity", o.sparsity, "synthetic nonzeros of the first code");
  cmd->add_option("--innovation", o.innovation, "synthetic nonzeros of each innovation");
  cmd->add_option("--amplitude-min", o.amplitude_min);
  cmd->add_option("--amplitude-max", o.amplitude_max);
  cmd->add_option("--g-decay", o.g_decay, "synthetic transition G = g_decay * I");
  cmd->add_option("--train-count", o.train_count);
  cmd->add_option("--val-count", o.val_count);
  cmd->add_option("--test-count", o.test_count);
  cmd->add_option("--data-seed", o.data_seed, "first seed of the synthetic sequences");
}

void add_model_options(CLI::App* cmd, ModelOptions& o) {
  cmd->add_option("--model", o.kind, "l1l1 or stacked")->check(CLI::IsMember({"l1l1", "stacked"}));
  cmd->add_option("--m", o.m, "measurements per frame (overrides --rate)");
  cmd->add_option("--rate", o.rate, "compression rate m/n");
  cmd->add_option("--d", o.d, "code size (default: synthetic d, else 4n)");
  cmd->add_option("--activation", o.activation, "stacked-RNN activation")
      ->check(CLI::IsMember({"tanh", "relu", "identity"}));
  cmd->add_option("--dict-init", o.dict_init)->check(CLI::IsMember({"dct", "uniform"}));
  cmd->add_option("--g-init", o.g_init)->check(CLI::IsMember({"uniform", "identity"}));
}

void add_train_options(CLI::App* cmd, TrainConfig& c) {
  cmd->add_option("--epochs", c.epochs);
  cmd->add_option("--lr", c.learning_rate);
  cmd->add_option("--batch-size", c.batch_size);
  cmd->add_option("--beta", c.beta, "weight decay");
  cmd->add_option("--K", c.K, "layers");
  cmd->add_option("--adam-beta1", c.adam_beta1);
  cmd->add_option("--adam-beta2", c.adam_beta2);
  cmd->add_option("--adam-epsilon", c.adam_epsilon);
  cmd->add_option("--alpha-init", c.alpha_init);
  cmd->add_option("--lambda1-init", c.lambda1_init);
  cmd->add_option("--lambda2-init", c.lambda2_init);
  cmd->add_option("--clip-norm", c.clip_norm, "global gradient-norm clip, <= 0 disables");
}

ModelDims model_dims(const ModelOptions& mo, const Dataset3& data, int K) {
  const Dataset& probe = data.splits.train.empty() ? data.splits.test : data.splits.train;
  if (probe.empty()) throw ParameterError("dataset has no sequences");
  ModelDims dims;
  dims.n = std::uint32_t(probe.front().rows());
  dims.T = std::uint32_t(probe.front().cols());
  dims.d = mo.d ? mo.d : std::uint32_t(data.D.cols());
  dims.m = mo.m ? mo.m : measurements_for_rate(mo.rate, dims.n);
  if (dims.m > dims.n) throw ParameterError("m must not exceed n");
  dims.K = std::uint32_t(K);
  return dims;
}

InitOptions init_options(const ModelOptions& mo) {
  InitOptions init;
  init.dict_init = mo.dict_init == "uniform" ? DictInit::kUniform : DictInit::kOvercompleteDct;
  init.g_init = mo.g_init == "identity" ? GInit::kIdentity : GInit::kUniform;
  return init;
}

// ---------------------------------------------------------------- prep

struct PrepOptions {
  std::string input{"mnist_test_seq.npy"};
  std::string output;
  int factor{4};
  std::string format{"auto"};
  std::string layout{"sequences"};
};

int cmd_prep(const PrepOptions& o, const GlobalOptions& g) {
  DataOptions d;
  d.format = o.format;
  d.layout = o.layout;
  const fs::path input = data_dir_path(o.input);
  const fs::path output = o.output.empty() ? g.out_dir / "prepared.raw" : fs::path(o.output);
  const VideoDataset out = load_downscaled(input, o.factor, load_options(d));
  if (output.has_parent_path()) fs::create_directories(output.parent_path());
  save_raw_v1(output, out);
  std::cout << "prep: " << input.string() << " -> " << output.string() << '\n'
            << "  sequences " << out.num_sequences << ", frames " << out.frames << ", frame " << out.height * o.factor
            << "x" << out.width * o.factor << " -> " << out.height << "x" << out.width << '\n';
  return 0;
}

// ---------------------------------------------------------------- solve

struct SolveOptions {
  std::string solver{"l1l1"};
  std::string split{"test"};
  std::size_t sequences{1};
  double lambda1{0.01};
  double lambda2{0.01};
  double alpha{0};  // 0 = power-iteration bound
  int iters{100};
  double tolerance{0};
  double noise_sigma{0};
};

int cmd_solve(const SolveOptions& o, const DataOptions& dopt, const ModelOptions& mo, const GlobalOptions& g) {
  const Dataset3 data = load_data(dopt, mo.d);
  const Dataset& seqs = pick_split(data.splits, o.split);
  if (seqs.empty()) throw ParameterError("solve: split '" + o.split + "' is empty");
  const auto n = std::uint32_t(seqs.front().rows());
  const std::uint32_t m = mo.m ? mo.m : measurements_for_rate(mo.rate, n);
  if (m > n) throw ParameterError("m must not exceed n");

  std::mt19937_64 rng(g.seed);
  std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(double(m)));
  Matrix A(m, n);
  for (Eigen::Index j = 0; j < A.cols(); ++j)
    for (Eigen::Index i = 0; i < A.rows(); ++i) A(i, j) = gauss(rng);
  const Operators<double> ops{A, data.D, data.G, {}};
  const double alpha = o.alpha > 0 ? o.alpha : power_iteration_bound(ops, 500);
  check_step_size(ops, alpha, std::cerr);
  const SolverConfig<double> cfg{alpha, o.lambda1, o.lambda2, o.iters, o.tolerance};
  cfg.validate();

  fs::create_directories(g.out_dir);
  std::ofstream trace(g.out_dir / "objective_trace.csv");
  if (!trace) throw IoError("cannot write " + (g.out_dir / "objective_trace.csv").string());
  trace << std::setprecision(17) << "sequence,t,iter,objective\n";

  const std::size_t count = std::min(o.sequences, seqs.size());
  const Eigen::Index d = data.D.cols();
  double psnr_sum = 0, zeros = 0, entries = 0;
  bool monotone = true;
  for (std::size_t i = 0; i < count; ++i) {
    const Matrix& s = seqs[i];
    const Matrix x = sense(s, A, o.noise_sigma, g.seed + 1 + i);
    Matrix codes(d, s.cols());
    Vector prev = Vector::Zero(d);
    auto objective = [&](const Vector& h, Eigen::Index t) {
      const Vector xt = x.col(t);
      if (o.solver == "ista") return objective_l1(h, xt, ops, o.lambda1);
      if (o.solver == "sista") return objective_sista(h, xt, prev, ops, o.lambda1, o.lambda2);
      return objective_l1l1(h, xt, prev, ops, o.lambda1, o.lambda2);
    };
    for (Eigen::Index t = 0; t < s.cols(); ++t) {
      const Vector start = o.solver == "l1l1" ? Vector(data.G * prev) : o.solver == "sista" ? prev : Vector(Vector::Zero(d));
      double last = objective(start, t);
      trace << i << ',' << t + 1 << ",0," << last << '\n';
      auto observe = [&](Eigen::Index, int k, const Vector& h) {
        const double f = objective(h, t);
        if (f > last + 1e-10 * std::max(1.0, std::abs(last))) monotone = false;
        last = f;
        trace << i << ',' << t + 1 << ',' << k << ',' << f << '\n';
      };
      const Matrix xt = x.col(t);
      Vector h;
      if (o.solver == "ista") {
        h = ista(xt.col(0), ops, o.lambda1, alpha, o.iters, start, o.tolerance, observe);
      } else {
        // one-frame sequence warm-started from the previous code
        const Vector h_prev = prev;
        const Matrix one = o.solver == "sista" ? sista_solve_sequence(xt, ops, cfg, h_prev, observe)
                                               : l1l1_solve_sequence(xt, ops, cfg, h_prev, observe);
        h = one.col(0);
      }
      codes.col(t) = h;
      prev = h;
    }
    if (!codes.allFinite()) throw NumericError("solve: non-finite codes in sequence " + std::to_string(i));
    psnr_sum += psnr(s, data.D * codes);
    zeros += double((codes.array() == 0.0).count());
    entries += double(codes.size());
  }

  std::ostringstream summary;
  summary << std::setprecision(6) << "solver " << o.solver << ", m " << m << ", n " << n << ", d " << d << ", alpha "
          << alpha << ", iterations " << o.iters << '\n'
          << "sequences " << count << ", mean psnr_db " << psnr_sum / double(count) << ", code zero fraction "
          << zeros / entries << '\n'
          << "objective non-increasing: " << (monotone ? "yes" : "no") << '\n';
  if (zeros == entries) summary << "all codes are zero\n";
  std::cout << summary.str();
  write_text(g.out_dir / "solve_summary.txt", summary.str());
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainOptions {
  TrainConfig cfg;
  std::string resume;
};

int cmd_train(TrainOptions o, const DataOptions& dopt, const ModelOptions& mo, const GlobalOptions& g) {
  o.cfg.seed = g.seed;
  o.cfg.validate();
  const Dataset3 data = load_data(dopt, mo.d);
  if (data.splits.train.empty() || data.splits.val.empty()) throw ParameterError("train: need train and val sequences");
  fs::create_directories(g.out_dir);
  const fs::path curve_path = g.out_dir / "learning_curve.csv";

  TrainState state;
  if (!o.resume.empty()) {
    state = load_train_state(o.resume);
    const auto dims = state.model->dims();
    if (dims.n != std::uint32_t(data.splits.train.front().rows()))
      throw DimensionError("train: checkpoint has n=" + std::to_string(dims.n) + " but the data has n=" +
                           std::to_string(data.splits.train.front().rows()));
    std::cout << "resuming " << to_string(state.model->kind()) << " at epoch " << state.epoch << '\n';
  } else {
    const ModelDims dims = model_dims(mo, data, o.cfg.K);
    state = make_initial_state(parse_model_kind(mo.kind), dims, o.cfg, init_options(mo), parse_activation(mo.activation));
    state.initial_val_psnr_db = validation_psnr(*state.model, data.splits.val);
    state.best_val_psnr_db = state.initial_val_psnr_db;
    save_train_state(g.out_dir / "checkpoint_last.ckpt", state);
    save_train_state(g.out_dir / "checkpoint_best.ckpt", state);
    write_learning_curve(curve_path, {}, false);
  }
  std::cout << "model " << to_string(state.model->kind()) << " " << to_string(state.model->dims()) << ", train "
            << signal_count(data.splits.train) << ", val " << signal_count(data.splits.val) << '\n'
            << std::fixed << std::setprecision(4) << "epoch 0 val psnr " << state.initial_val_psnr_db << " dB\n";

  TrainHooks hooks;
  hooks.checkpoint_dir = g.out_dir;
  hooks.on_epoch = [&](const CurvePoint& p) {
    write_learning_curve(curve_path, {p}, true);
    std::cout << "epoch " << p.epoch << "  train loss " << p.train_loss << "  val psnr " << p.val_psnr_db << " dB\n";
  };
  const TrainResult result = train(state, data.splits.train, data.splits.val, o.cfg, hooks);

  std::ostringstream summary;
  summary << std::fixed << std::setprecision(4) << "epochs completed " << state.epoch << '\n'
          << "initial val psnr_db " << state.initial_val_psnr_db << '\n'
          << "final val psnr_db "
          << (result.curve.empty() ? validation_psnr(*state.model, data.splits.val) : result.curve.back().val_psnr_db)
          << '\n'
          << "best val psnr_db " << state.best_val_psnr_db << " at epoch " << state.best_epoch << '\n';
  std::cout << summary.str();
  write_text(g.out_dir / "train_summary.txt", summary.str());
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalOptions {
  std::string checkpoint;
  std::string split{"test"};
};

int cmd_eval(const EvalOptions& o, const DataOptions& dopt, const GlobalOptions& g) {
  const fs::path ckpt = o.checkpoint.empty() ? g.out_dir / "checkpoint_last.ckpt" : fs::path(o.checkpoint);
  const TrainState state = load_train_state(ckpt);
  const auto dims = state.model->dims();
  const Dataset3 data = load_data(dopt, dims.d);
  const Dataset& seqs = pick_split(data.splits, o.split);
  if (seqs.empty()) throw ParameterError("eval: split '" + o.split + "' is empty");
  if (std::uint32_t(seqs.front().rows()) != dims.n)
    throw DimensionError("eval: checkpoint expects n=" + std::to_string(dims.n) + " but the data has n=" +
                         std::to_string(seqs.front().rows()));
  const EvalReport report = evaluate(*state.model, seqs);
  fs::create_directories(g.out_dir);
  write_eval_csv(report, g.out_dir / ("eval_" + o.split + ".csv"));
  std::ostringstream summary;
  summary << "checkpoint " << ckpt.string() << " (" << to_string(state.model->kind()) << ", epoch " << state.epoch
          << ")\nsplit " << o.split << ", " << seqs.size() << " sequences\n"
          << format_eval_table(report);
  std::cout << summary.str();
  write_text(g.out_dir / ("eval_" + o.split + "_summary.txt"), summary.str());
  return 0;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckOptions {
  std::uint32_t m{3}, n{6}, d{8}, K{2}, T{3};
  std::string model{"l1l1"};
  GradCheckOptions check;
};

int cmd_gradcheck(const GradcheckOptions& o, const GlobalOptions& g) {
  const ModelDims dims{o.m, o.n, o.d, o.K, o.T};
  std::unique_ptr<SequenceModel> model;
  Matrix s;
  double margin = 0;
  if (o.model == "stacked") {
    model = init_stacked_rnn(dims, g.seed, Activation::kTanh);
    std::mt19937_64 rng(g.seed + 1);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    s = Matrix::NullaryExpr(o.n, o.T, [&]() { return unif(rng); });
  } else {
    auto [theta, signal] = random_gradcheck_problem(dims, g.seed, o.check.margin);
    margin = prox_boundary_margin(signal, theta);
    model = std::make_unique<L1L1Rnn>(theta, o.T);
    s = std::move(signal);
  }
  const GradCheckReport report = gradient_check(*model, s, o.check);

  std::ostringstream out;
  out << "gradcheck " << o.model << " " << to_string(dims) << ", step " << o.check.step << ", tolerance "
      << o.check.tolerance << '\n';
  if (o.model != "stacked") out << "prox boundary margin " << margin << '\n';
  out << std::left << std::setw(14) << "parameter" << std::setw(10) << "entries" << std::setw(16) << "max_rel_error"
      << "max_abs_error\n";
  for (const auto& p : report.params)
    out << std::left << std::setw(14) << p.name << std::setw(10) << p.entries << std::setw(16) << p.max_rel_error
        << p.max_abs_error << '\n';
  out << "max relative error " << report.max_rel_error << " -> " << (report.passed ? "PASS" : "FAIL") << '\n';
  std::cout << out.str();

  fs::create_directories(g.out_dir);
  std::ofstream csv(g.out_dir / "gradcheck.csv");
  if (!csv) throw IoError("cannot write " + (g.out_dir / "gradcheck.csv").string());
  csv << std::setprecision(17) << "parameter,entries,max_rel_error,max_abs_error\n";
  for (const auto& p : report.params)
    csv << p.name << ',' << p.entries << ',' << p.max_rel_error << ',' << p.max_abs_error << '\n';
  return report.passed ? 0 : kExitNumeric;
}

// ---------------------------------------------------------------- sweep

struct SweepOptions {
  std::vector<double> rates{0.5, 0.33, 0.25, 0.2};
  std::vector<std::string> models{"l1l1", "stacked"};
  bool cache{true};
  TrainConfig cfg;
};

struct CellResult {
  bool ok{false};
  double psnr_db{0};
  std::string error;
};

std::string rate_label(double rate) { return std::to_string(std::lround(rate * 100)) + "%"; }

int cmd_sweep(SweepOptions o, const DataOptions& dopt, const ModelOptions& mo, const GlobalOptions& g) {
  o.cfg.seed = g.seed;
  o.cfg.validate();
  if (o.rates.empty() || o.models.empty()) throw ParameterError("sweep: need at least one rate and one model");
  for (const auto& name : o.models) parse_model_kind(name);
  const Dataset3 data = load_data(dopt, mo.d);
  if (data.splits.train.empty() || data.splits.val.empty() || data.splits.test.empty())
    throw ParameterError("sweep: need train, val and test sequences");
  const auto n = std::uint32_t(data.splits.train.front().rows());

  struct Cell {
    std::string model;
    double rate;
    std::uint32_t m;
    fs::path dir;
  };
  std::vector<Cell> cells;
  for (const auto& model : o.models)
    for (double rate : o.rates) {
      const std::uint32_t m = measurements_for_rate(rate, n);
      cells.push_back({model, rate, m, g.out_dir / "cells" / (model + "_m" + std::to_string(m))});
    }
  std::cout << "sweep: " << cells.size() << " cells, n " << n << ", jobs " << g.jobs << '\n';

  std::vector<CellResult> results(cells.size());
  std::mutex log;
  auto run_cell = [&](std::size_t i) {
    const Cell& c = cells[i];
    const fs::path result_file = c.dir / "result.txt";
    CellResult& r = results[i];
    try {
      if (o.cache && fs::exists(result_file)) {
        std::ifstream in(result_file);
        std::string key;
        if (in >> key >> r.psnr_db && key == "test_psnr_db") {
          r.ok = true;
          std::lock_guard<std::mutex> lock(log);
          std::cout << "  " << c.model << " m=" << c.m << ": cached " << r.psnr_db << " dB\n";
          return;
        }
      }
      fs::create_directories(c.dir);
      ModelOptions cell_opts = mo;
      cell_opts.m = c.m;
      const ModelDims dims = model_dims(cell_opts, data, o.cfg.K);
      TrainState state = make_initial_state(parse_model_kind(c.model), dims, o.cfg, init_options(mo),
                                            parse_activation(mo.activation));
      TrainHooks hooks;
      hooks.checkpoint_dir = c.dir;
      const TrainResult tr = train(state, data.splits.train, data.splits.val, o.cfg, hooks);
      write_learning_curve(c.dir / "learning_curve.csv", tr.curve, false);
      auto best = model_from_tensors(state.model->kind(), state.model->dims(), tr.best_params,
                                     parse_activation(mo.activation));
      r.psnr_db = evaluate(*best, data.splits.test).mean_psnr_db;
      r.ok = std::isfinite(r.psnr_db);
      if (!r.ok) throw NumericError("non-finite test PSNR");
      std::ofstream out(result_file);
      out << std::setprecision(17) << "test_psnr_db " << r.psnr_db << '\n';
      std::lock_guard<std::mutex> lock(log);
      std::cout << "  " << c.model << " m=" << c.m << ": " << r.psnr_db << " dB\n";
    } catch (const std::exception& e) {
      r.ok = false;
      r.error = e.what();
      std::lock_guard<std::mutex> lock(log);
      std::cout << "  " << c.model << " m=" << c.m << ": FAILED (" << e.what() << ")\n";
    }
  };

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < cells.size(); i = next++) run_cell(i);
  };
  const int threads = std::max(1, std::min<int>(g.jobs, int(cells.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  fs::create_directories(g.out_dir);
  std::ofstream table(g.out_dir / "sweep_table.csv");
  if (!table) throw IoError("cannot write " + (g.out_dir / "sweep_table.csv").string());
  table << "model";
  for (double rate : o.rates) table << ',' << rate_label(rate);
  table << '\n' << std::fixed << std::setprecision(2);
  bool all_ok = true;
  for (std::size_t mi = 0; mi < o.models.size(); ++mi) {
    table << to_string(parse_model_kind(o.models[mi]));
    for (std::size_t ri = 0; ri < o.rates.size(); ++ri) {
      const CellResult& r = results[mi * o.rates.size() + ri];
      all_ok = all_ok && r.ok;
      if (r.ok)
        table << ',' << r.psnr_db;
      else
        table << ",FAILED";
    }
    table << '\n';
  }
  std::cout << "wrote " << (g.out_dir / "sweep_table.csv").string() << '\n';
  return all_ok ? 0 : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential sparse recovery with l1-l1 minimization and its unfolded RNN"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML configuration file; command-line flags override it");

  GlobalOptions global;
  app.add_option("--seed", global.seed, "seed for initialization, data order, sensing and noise");
  app.add_option("--jobs", global.jobs, "worker threads for sweep cells")->check(CLI::PositiveNumber);
  app.add_option("--out-dir", global.out_dir, "output directory");

  PrepOptions prep;
  auto* prep_cmd = app.add_subcommand("prep", "downscale and normalize a video tensor to raw_v1");
  prep_cmd->add_option("--input", prep.input, "input tensor (relative paths resolve against $L1L1_DATA_DIR)");
  prep_cmd->add_option("--output", prep.output, "output raw_v1 file (default: <out-dir>/prepared.raw)");
  prep_cmd->add_option("--factor", prep.factor, "bilinear decimation factor")->check(CLI::PositiveNumber);
  prep_cmd->add_option("--format", prep.format)->check(CLI::IsMember({"auto", "raw", "npy"}));
  prep_cmd->add_option("--layout", prep.layout)->check(CLI::IsMember({"sequences", "frames"}));

  // each subcommand owns its options: a config file sets every section, not only the invoked one
  DataOptions solve_data, train_data, eval_data, sweep_data;
  ModelOptions solve_model, train_model, sweep_model;

  SolveOptions solve;
  auto* solve_cmd = app.add_subcommand("solve", "run ista, sista or the l1-l1 solver and trace the objective");
  solve_cmd->add_option("--solver", solve.solver)->check(CLI::IsMember({"ista", "sista", "l1l1"}));
  solve_cmd->add_option("--split", solve.split)->check(CLI::IsMember({"train", "val", "test"}));
  solve_cmd->add_option("--sequences", solve.sequences, "number of sequences to solve");
  solve_cmd->add_option("--lambda1", solve.lambda1);
  solve_cmd->add_option("--lambda2", solve.lambda2);
  solve_cmd->add_option("--alpha", solve.alpha, "step parameter, 0 = power-iteration bound");
  solve_cmd->add_option("--iters", solve.iters)->check(CLI::PositiveNumber);
  solve_cmd->add_option("--tolerance", solve.tolerance);
  solve_cmd->add_option("--noise-sigma", solve.noise_sigma);
  add_data_options(solve_cmd, solve_data);
  add_model_options(solve_cmd, solve_model);

  TrainOptions train_opts;
  auto* train_cmd = app.add_subcommand("train", "train an l1-l1 RNN or stacked RNN end to end");
  add_train_options(train_cmd, train_opts.cfg);
  train_cmd->add_option("--resume", train_opts.resume, "checkpoint to continue from");
  add_data_options(train_cmd, train_data);
  add_model_options(train_cmd, train_model);

  EvalOptions eval_opts;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a data split");
  eval_cmd->add_option("--checkpoint", eval_opts.checkpoint, "default: <out-dir>/checkpoint_last.ckpt");
  eval_cmd->add_option("--split", eval_opts.split)->check(CLI::IsMember({"train", "val", "test"}));
  add_data_options(eval_cmd, eval_data);

  GradcheckOptions gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "compare analytic gradients with central differences");
  gc_cmd->add_option("--m", gc.m);
  gc_cmd->add_option("--n", gc.n);
  gc_cmd->add_option("--d", gc.d);
  gc_cmd->add_option("--K", gc.K);
  gc_cmd->add_option("--T", gc.T);
  gc_cmd->add_option("--model", gc.model)->check(CLI::IsMember({"l1l1", "stacked"}));
  gc_cmd->add_option("--step", gc.check.step);
  gc_cmd->add_option("--margin", gc.check.margin, "minimum distance of prox inputs to a case boundary");
  gc_cmd->add_option("--tolerance", gc.check.tolerance);
  gc_cmd->add_option("--beta", gc.check.beta);
  gc_cmd->add_option("--corrupt", gc.check.corrupt, "test hook: offset added to every analytic gradient")
      ->group("");

  SweepOptions sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "train and test every (model, rate) cell");
  sweep_cmd->add_option("--rates", sweep.rates)->delimiter(',');
  sweep_cmd->add_option("--models", sweep.models)->delimiter(',');
  sweep_cmd->add_flag("--cache,!--no-cache", sweep.cache, "reuse finished cells");
  add_train_options(sweep_cmd, sweep.cfg);
  add_data_options(sweep_cmd, sweep_data);
  add_model_options(sweep_cmd, sweep_model);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    echo_config(app, global.out_dir);
    if (prep_cmd->parsed()) return cmd_prep(prep, global);
    if (solve_cmd->parsed()) return cmd_solve(solve, solve_data, solve_model, global);
    if (train_cmd->parsed()) return cmd_train(train_opts, train_data, train_model, global);
    if (eval_cmd->parsed()) return cmd_eval(eval_opts, eval_data, global);
    if (gc_cmd->parsed()) return cmd_gradcheck(gc, global);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep, sweep_data, sweep_model, global);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitConfig;
}
