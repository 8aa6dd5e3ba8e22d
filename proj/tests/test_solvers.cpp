#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "l1l1/solvers.hpp"
#include "test_support.hpp"

using namespace l1l1;
using l1l1::testing::random_matrix;
using l1l1::testing::random_vector;

namespace {

Operators<double> scalar_ops(double a = 1, double d = 1, double g = 1, double f = 1) {
  return {Eigen::MatrixXd::Constant(1, 1, a), Eigen::MatrixXd::Constant(1, 1, d), Eigen::MatrixXd::Constant(1, 1, g),
          Eigen::MatrixXd::Constant(1, 1, f)};
}

Operators<double> random_ops(Eigen::Index m, Eigen::Index n, Eigen::Index d, std::mt19937_64& rng) {
  return {random_matrix(m, n, rng), random_matrix(n, d, rng), random_matrix(d, d, rng, -0.5, 0.5),
          Eigen::MatrixXd::Identity(n, n)};
}

}  // namespace

TEST_SUITE("solvers") {
  TEST_CASE("objective_l1") {
    std::mt19937_64 rng(1);
    const auto ops = random_ops(3, 5, 7, rng);
    const Eigen::VectorXd x = random_vector(3, rng);
    CHECK(objective_l1(Eigen::VectorXd::Zero(7), x, ops, 0.3) == doctest::Approx(0.5 * x.squaredNorm()));
    CHECK(objective_l1(Eigen::VectorXd::Constant(1, 0.75), Eigen::VectorXd::Ones(1), scalar_ops(), 0.25) ==
          doctest::Approx(0.21875).epsilon(1e-15));
    // penalty off at a least-squares solution leaves only the residual (zero here: system is square and invertible)
    const auto sq = scalar_ops(2.0, 1.0);
    CHECK(objective_l1(Eigen::VectorXd::Constant(1, 0.5), Eigen::VectorXd::Ones(1), sq, 0.0) == 0.0);
    CHECK_THROWS_AS(objective_l1(Eigen::VectorXd::Zero(6), x, ops, 0.1), DimensionError);
  }

  TEST_CASE("objective_l1l1") {
    std::mt19937_64 rng(2);
    auto ops = random_ops(4, 4, 4, rng);
    ops.D = Eigen::MatrixXd::Identity(4, 4);
    ops.A = Eigen::MatrixXd::Identity(4, 4);
    const Eigen::VectorXd prev = random_vector(4, rng);
    const Eigen::VectorXd h = ops.G * prev;
    CHECK(objective_l1l1(h, h, prev, ops, 0.3, 0.7) == doctest::Approx(0.3 * h.lpNorm<1>()));
    const Eigen::VectorXd x = random_vector(4, rng);
    CHECK(objective_l1l1(Eigen::VectorXd::Zero(4), x, prev, ops, 0.3, 0.7) ==
          doctest::Approx(0.5 * x.squaredNorm() + 0.7 * (ops.G * prev).lpNorm<1>()));
    const Eigen::VectorXd one = Eigen::VectorXd::Ones(1);
    CHECK(objective_l1l1(one, one, one, scalar_ops(), 0.1, 0.1) == doctest::Approx(0.1).epsilon(1e-15));
  }

  TEST_CASE("ista") {
    const auto ops = scalar_ops();
    const Eigen::VectorXd x = Eigen::VectorXd::Ones(1);
    const Eigen::VectorXd h1 = ista(x, ops, 0.25, 1.0, 1, Eigen::VectorXd::Zero(1));
    CHECK(h1(0) == doctest::Approx(0.75).epsilon(1e-15));
    // fixed point
    CHECK(ista(x, ops, 0.25, 1.0, 5, h1)(0) == doctest::Approx(0.75).epsilon(1e-15));

    std::mt19937_64 rng(4);
    const auto rops = random_ops(5, 8, 12, rng);
    const Eigen::VectorXd rx = random_vector(5, rng);
    const double full = (rops.D.transpose() * rops.A.transpose() * rx).lpNorm<Eigen::Infinity>();
    CHECK(ista(rx, rops, full * 1.01, 100.0, 30, Eigen::VectorXd::Zero(12)).isZero(0));

    const Eigen::VectorXd init = random_vector(12, rng);
    CHECK(ista(rx, rops, 0.1, 10.0, 0, init) == init);
    CHECK_THROWS_AS(ista(rx, rops, 0.1, 0.0, 3, init), ParameterError);
    CHECK_THROWS_AS(ista(Eigen::VectorXd(Eigen::VectorXd::Zero(4)), rops, 0.1, 1.0, 3, init), DimensionError);
  }

  TEST_CASE("l1l1_solve_sequence reduces to ista when G = 0 and T = 1") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      auto ops = random_ops(4, 6, 9, rng);
      ops.G.setZero();
      const double alpha = power_iteration_bound(ops, 300);
      const SolverConfig<double> cfg{alpha, 0.3, 0.2, 15, 0.0};
      const Eigen::MatrixXd x = random_matrix(4, 1, rng);
      const Eigen::MatrixXd codes = l1l1_solve_sequence(x, ops, cfg, Eigen::VectorXd::Zero(9));
      const Eigen::VectorXd ref = ista(Eigen::VectorXd(x.col(0)), ops, 0.5, alpha, 15, Eigen::VectorXd::Zero(9));
      CHECK((codes.col(0) - ref).lpNorm<Eigen::Infinity>() <= 1e-12);
    }
  }

  TEST_CASE("l1l1_solve_sequence with lambda2 = 0 is warm-started ista") {
    std::mt19937_64 rng(6);
    const auto ops = random_ops(4, 6, 9, rng);
    const double alpha = power_iteration_bound(ops, 300);
    const SolverConfig<double> cfg{alpha, 0.3, 0.0, 10, 0.0};
    const Eigen::MatrixXd x = random_matrix(4, 4, rng);
    const Eigen::VectorXd h0 = random_vector(9, rng);
    const Eigen::MatrixXd codes = l1l1_solve_sequence(x, ops, cfg, h0);
    Eigen::VectorXd prev = h0;
    for (Eigen::Index t = 0; t < 4; ++t) {
      const Eigen::VectorXd ref = ista(Eigen::VectorXd(x.col(t)), ops, 0.3, alpha, 10, Eigen::VectorXd(ops.G * prev));
      CHECK((codes.col(t) - ref).lpNorm<Eigen::Infinity>() <= 1e-12);
      prev = codes.col(t);
    }
  }

  TEST_CASE("scalar chain converges to the per-frame grid minimizer") {
    const auto ops = scalar_ops();
    const SolverConfig<double> cfg{1.0, 0.25, 0.01, 200, 0.0};
    const Eigen::MatrixXd x = Eigen::MatrixXd::Ones(1, 6);
    const Eigen::MatrixXd codes = l1l1_solve_sequence(x, ops, cfg, Eigen::VectorXd::Zero(1));
    double prev = 0;
    for (Eigen::Index t = 0; t < 6; ++t) {
      const double best = testing::grid_argmin(
          [&](double h) { return 0.5 * (1 - h) * (1 - h) + 0.25 * std::abs(h) + 0.01 * std::abs(h - prev); }, -2.0,
          2.0, 1e-5);
      CHECK(std::abs(codes(0, t) - best) <= 2e-5);
      prev = codes(0, t);
    }
  }

  TEST_CASE("descent and fixed point") {
    std::mt19937_64 rng(7);
    auto ops = random_ops(6, 10, 14, rng);
    const double alpha = power_iteration_bound(ops, 500);
    SolverConfig<double> cfg{alpha, 0.05, 0.02, 400, 0.0};
    const Eigen::MatrixXd x = random_matrix(6, 3, rng);
    const Eigen::VectorXd h0 = random_vector(14, rng);

    // replay objectives through the observer
    Eigen::VectorXd h_prev = h0;
    Eigen::MatrixXd codes_so_far(14, 3);
    double last = 0;
    bool monotone = true;
    Eigen::Index current_t = -1;
    auto observe = [&](Eigen::Index t, int k, const Eigen::VectorXd& h) {
      if (t != current_t) {
        if (t > 0) h_prev = codes_so_far.col(t - 1);
        current_t = t;
        last = objective_l1l1(Eigen::VectorXd(ops.G * h_prev), Eigen::VectorXd(x.col(t)), h_prev, ops, cfg.lambda1,
                              cfg.lambda2);
      }
      const double f = objective_l1l1(h, Eigen::VectorXd(x.col(t)), h_prev, ops, cfg.lambda1, cfg.lambda2);
      if (f > last + 1e-10) monotone = false;
      last = f;
      if (k == cfg.inner_iters) codes_so_far.col(t) = h;
    };
    const Eigen::MatrixXd codes = l1l1_solve_sequence(x, ops, cfg, h0, observe);
    CHECK(monotone);

    cfg.tolerance = 1e-12;
    cfg.inner_iters = 200000;
    const Eigen::MatrixXd conv = l1l1_solve_sequence(x, ops, cfg, h0);
    // one more step from the converged last frame
    const Eigen::VectorXd prev = conv.col(1);
    const Eigen::VectorXd v = ops.G * prev;
    const Eigen::MatrixXd ad = ops.A * ops.D;
    const Eigen::VectorXd u = conv.col(2) - ad.transpose() * (ad * conv.col(2) - x.col(2)) / alpha;
    const Eigen::VectorXd again = l1l1_prox_vec(u, v, ProxParams<double>::from_regularization(0.05, 0.02, alpha));
    CHECK((again - conv.col(2)).lpNorm<Eigen::Infinity>() < 1e-9);
  }

  TEST_CASE("sista_solve_sequence") {
    // scalar analytic case: argmin 1/2 (1-h)^2 + 0.2|h| + 1/2 (h-1)^2 = 0.9
    const auto ops = scalar_ops();
    const SolverConfig<double> cfg{2.0, 0.2, 1.0, 500, 0.0};
    const Eigen::MatrixXd codes = sista_solve_sequence(Eigen::MatrixXd::Ones(1, 1), ops, cfg, Eigen::VectorXd::Ones(1));
    CHECK(codes(0, 0) == doctest::Approx(0.9).epsilon(1e-12));

    // lambda2 = 0 is bit-identical to per-frame ista warm-started at the previous code
    std::mt19937_64 rng(8);
    const auto rops = random_ops(4, 6, 9, rng);
    const double alpha = power_iteration_bound(rops, 300);
    const SolverConfig<double> plain{alpha, 0.1, 0.0, 12, 0.0};
    const Eigen::MatrixXd x = random_matrix(4, 5, rng);
    const Eigen::VectorXd h0 = random_vector(9, rng);
    const Eigen::MatrixXd sista = sista_solve_sequence(x, rops, plain, h0);
    Eigen::VectorXd prev = h0;
    for (Eigen::Index t = 0; t < 5; ++t) {
      const Eigen::VectorXd ref = ista(Eigen::VectorXd(x.col(t)), rops, 0.1, alpha, 12, prev);
      CHECK(sista.col(t) == ref);
      prev = sista.col(t);
    }

    // h_prev = 0 with arbitrary F: plain l1 problem with an extra (lambda2/2)||Dh||^2; 1-D grid oracle
    auto fops = scalar_ops(1.0, 0.8, 1.0, -3.0);
    const SolverConfig<double> c2{3.0, 0.15, 0.7, 2000, 0.0};
    const double h = sista_solve_sequence(Eigen::MatrixXd::Ones(1, 1), fops, c2, Eigen::VectorXd::Zero(1))(0, 0);
    const double best = testing::grid_argmin(
        [](double z) { return 0.5 * (1 - 0.8 * z) * (1 - 0.8 * z) + 0.15 * std::abs(z) + 0.35 * 0.64 * z * z; }, -2,
        2, 1e-5);
    CHECK(std::abs(h - best) <= 2e-5);
  }

  TEST_CASE("power_iteration_bound") {
    Operators<double> id{Eigen::MatrixXd::Identity(3, 3), Eigen::MatrixXd::Identity(3, 3),
                         Eigen::MatrixXd::Identity(3, 3), {}};
    CHECK(power_iteration_bound(id, 10) == doctest::Approx(1.01).epsilon(1e-14));
    id.A *= 2;
    CHECK(power_iteration_bound(id, 10) == doctest::Approx(4.04).epsilon(1e-14));
    id.A.setZero();
    CHECK(power_iteration_bound(id, 10) == 0.0);
    CHECK_THROWS_AS(power_iteration_bound(id, 0), ParameterError);

    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 10; ++trial) {
      Operators<double> ops{random_matrix(8, 8, rng), random_matrix(8, 16, rng), Eigen::MatrixXd::Identity(16, 16), {}};
      const Eigen::MatrixXd ad = ops.A * ops.D;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(ad.transpose() * ad);
      const double top = eig.eigenvalues().maxCoeff();
      const double bound = power_iteration_bound(ops, 500);
      CHECK(bound >= top);
      CHECK(bound <= 1.01 * top * (1 + 1e-12));
    }
  }

  TEST_CASE("check_step_size warns below the bound") {
    Operators<double> ops{2 * Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(2, 2),
                          Eigen::MatrixXd::Identity(2, 2), {}};
    std::ostringstream log;
    CHECK_FALSE(check_step_size(ops, 1.0, log));
    CHECK(log.str().find("warning") != std::string::npos);
    CHECK(check_step_size(ops, 5.0, log));
  }

  TEST_CASE("solvers in single precision") {
    Operators<float> ops{Eigen::MatrixXf::Identity(2, 2), Eigen::MatrixXf::Identity(2, 2),
                         Eigen::MatrixXf::Identity(2, 2), {}};
    const SolverConfig<float> cfg{1.0f, 0.25f, 0.0f, 3, 0.0f};
    const Eigen::MatrixXf codes = l1l1_solve_sequence(Eigen::MatrixXf::Ones(2, 2), ops, cfg, Eigen::VectorXf::Zero(2));
    CHECK(codes(0, 1) == doctest::Approx(0.75f));
  }
}
