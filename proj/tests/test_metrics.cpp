#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "l1l1/metrics.hpp"

using namespace l1l1;

namespace {

// Reconstructs every sequence as zero: U, W, S, V and b are all zero.
StackedRnn zero_model(Eigen::Index n, Eigen::Index T) {
  const Eigen::Index m = 2, d = 3;
  StackedRnnWeights<double> w;
  w.W = {Matrix::Zero(d, d), Matrix::Zero(d, d)};
  w.S = {Matrix(), Matrix::Zero(d, d)};
  w.U = Matrix::Zero(d, m);
  w.V = Matrix::Zero(n, d);
  w.b = Vector::Zero(n);
  return StackedRnn(Matrix::Ones(m, n), w, Matrix::Zero(d, 2), Activation::kIdentity, std::uint32_t(T));
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("psnr") {
    const Matrix s = Matrix::Constant(4, 5, 0.1);
    CHECK(psnr(s, Matrix::Zero(4, 5)) == doctest::Approx(20.0).epsilon(1e-12));
    CHECK(psnr(s, s) == kPsnrCapDb);
    const Matrix half = Matrix::Constant(2, 2, std::sqrt(0.5));
    CHECK(psnr(half, Matrix::Zero(2, 2)) == doctest::Approx(10 * std::log10(2.0)).epsilon(1e-12));
    CHECK(psnr(half, Matrix::Zero(2, 2)) == doctest::Approx(3.0103).epsilon(1e-5));
    CHECK(psnr(s, Matrix::Zero(4, 5), 2.0) == doctest::Approx(20.0 + 20 * std::log10(2.0)).epsilon(1e-12));
    CHECK_THROWS_AS(psnr(s, Matrix::Zero(4, 4)), DimensionError);
  }

  TEST_CASE("zero_fraction") {
    Vector v(4);
    v << 0, 1e-300, 0, -2;
    CHECK(zero_fraction(v) == 0.5);
    CHECK(zero_fraction(Matrix::Zero(3, 3)) == 1.0);
    CHECK(zero_fraction(Matrix(0, 0)) == 0.0);
  }

  TEST_CASE("evaluate and the csv report") {
    const auto model = zero_model(6, 4);
    std::vector<Matrix> seqs{Matrix::Constant(6, 4, 0.1), Matrix::Constant(6, 4, std::sqrt(1e-3))};
    const auto report = evaluate(model, seqs);
    REQUIRE(report.psnr_db.size() == 2);
    CHECK(report.psnr_db[0] == doctest::Approx(20.0).epsilon(1e-12));
    CHECK(report.psnr_db[1] == doctest::Approx(30.0).epsilon(1e-12));
    CHECK(report.mean_psnr_db == doctest::Approx(25.0).epsilon(1e-12));
    CHECK(report.compression_rate == doctest::Approx(2.0 / 6.0));
    REQUIRE(report.zero_fraction_layer.size() == 2);
    CHECK(report.last_layer_zero_fraction() == 1.0);

    const auto again = evaluate(model, seqs);
    CHECK(again.psnr_db == report.psnr_db);

    const auto path = std::filesystem::temp_directory_path() / ("l1l1_eval_" + std::to_string(::getpid()) + ".csv");
    write_eval_csv(report, path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "sequence_id,psnr_db");
    std::getline(in, line);
    CHECK(line.rfind("0,", 0) == 0);
    std::getline(in, line);
    CHECK(line.rfind("1,", 0) == 0);
    std::getline(in, line);
    CHECK(line.rfind("mean,", 0) == 0);
    CHECK(std::stod(line.substr(5)) == doctest::Approx(25.0).epsilon(1e-12));
    std::filesystem::remove(path);

    CHECK(format_eval_table(report).find("25.") != std::string::npos);
  }
}
