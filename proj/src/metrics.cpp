#include "l1l1/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace l1l1 {

double psnr(const Matrix& s, const Matrix& shat, double peak) {
  detail::require_dims(s.rows() == shat.rows() && s.cols() == shat.cols(), "psnr: shapes differ");
  if (s.size() == 0) throw DimensionError("psnr: empty sequence");
  const double mse = (s - shat).squaredNorm() / double(s.size());
  if (mse == 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(peak * peak / mse));
}

EvalReport evaluate(const SequenceModel& model, const std::vector<Matrix>& sequences) {
  EvalReport report;
  const auto dims = model.dims();
  report.compression_rate = double(dims.m) / double(dims.n);
  std::vector<double> zeros(dims.K, 0.0);
  double entries = 0;
  for (const auto& s : sequences) {
    std::vector<Matrix> codes;
    const Matrix shat = model.reconstruct(s, &codes);
    report.psnr_db.push_back(psnr(s, shat));
    for (const auto& block : codes) {
      for (Eigen::Index k = 0; k < block.cols(); ++k)
        zeros[std::size_t(k)] += double((block.col(k).array() == 0.0).count());
      entries += double(block.rows());
    }
  }
  if (!report.psnr_db.empty())
    report.mean_psnr_db =
        std::accumulate(report.psnr_db.begin(), report.psnr_db.end(), 0.0) / double(report.psnr_db.size());
  for (double z : zeros) report.zero_fraction_layer.push_back(entries > 0 ? z / entries : 0.0);
  return report;
}

void write_eval_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  out << "sequence_id,psnr_db\n";
  for (std::size_t i = 0; i < report.psnr_db.size(); ++i) out << i << ',' << report.psnr_db[i] << '\n';
  out << "mean," << report.mean_psnr_db << '\n';
}

std::string format_eval_table(const EvalReport& report) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "sequences            " << report.psnr_db.size() << '\n';
  os << "compression rate     " << report.compression_rate << '\n';
  os << "mean PSNR [dB]       " << report.mean_psnr_db << '\n';
  for (std::size_t k = 0; k < report.zero_fraction_layer.size(); ++k)
    os << "zero fraction h^(" << k + 1 << ")   " << report.zero_fraction_layer[k] << '\n';
  return os.str();
}

}  // namespace l1l1
