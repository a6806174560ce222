#include "retrainaudit/abstain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "retrainaudit/rng.hpp"

namespace retrainaudit::abstain {

Abstainer calibrate(const Matrix& x_std,
                    std::span<const std::string> patient_of_row,
                    const Config& cfg, std::uint64_t seed) {
  if (cfg.k < 1) throw ConfigError("abstain: k must be >= 1");
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0))
    throw ConfigError("abstain: alpha must be in (0,1)");
  if (x_std.rows != patient_of_row.size())
    throw InternalError("abstain: patient labels do not match rows");
  if (x_std.rows < static_cast<std::size_t>(5 * (cfg.k + 1)))
    throw CalibrationError("abstain: too few training rows to calibrate");

  // Patient-level 80/20 split, seeded.
  std::map<std::string, std::vector<std::size_t>> by_patient;
  for (std::size_t i = 0; i < patient_of_row.size(); ++i)
    by_patient[std::string(patient_of_row[i])].push_back(i);
  std::vector<std::string> ids;
  ids.reserve(by_patient.size());
  for (const auto& [id, _] : by_patient) ids.push_back(id);
  std::mt19937_64 rng(derive_seed(seed, 0x41425354ULL));
  std::shuffle(ids.begin(), ids.end(), rng);

  const std::size_t n_cal_patients = std::max<std::size_t>(1, ids.size() / 5);
  std::vector<std::size_t> cal_rows, ref_rows;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto& rows = by_patient[ids[i]];
    auto& dst = i < n_cal_patients ? cal_rows : ref_rows;
    dst.insert(dst.end(), rows.begin(), rows.end());
  }
  if (ref_rows.size() < static_cast<std::size_t>(cfg.k) || cal_rows.empty())
    throw CalibrationError("abstain: split leaves too few rows");
  // Keep reference rows in original order so neighbor ties are deterministic.
  std::sort(ref_rows.begin(), ref_rows.end());
  std::sort(cal_rows.begin(), cal_rows.end());

  Abstainer a;
  a.k = cfg.k;
  a.alpha = cfg.alpha;
  a.reference = Matrix(ref_rows.size(), x_std.cols);
  for (std::size_t i = 0; i < ref_rows.size(); ++i)
    std::copy_n(x_std.row(ref_rows[i]), x_std.cols, a.reference.row(i));

  a.calibration_distances.reserve(cal_rows.size());
  for (std::size_t i : cal_rows)
    a.calibration_distances.push_back(knn_distance(a, x_std.row_span(i)));
  std::sort(a.calibration_distances.begin(), a.calibration_distances.end());

  const std::size_t n_cal = a.calibration_distances.size();
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil((1.0 - cfg.alpha) * static_cast<double>(n_cal + 1)));
  a.tau = rank > n_cal ? std::numeric_limits<double>::infinity()
                       : a.calibration_distances[rank - 1];
  return a;
}

double knn_distance(const Abstainer& a, std::span<const double> x_std) {
  if (x_std.size() != a.reference.cols)
    throw InternalError("knn_distance: dimension mismatch");
  const std::size_t n = a.reference.rows;
  const std::size_t k = std::min<std::size_t>(a.k, n);

  // Max-heap of the k smallest squared distances. Scanning in insertion
  // order with strict replacement keeps tie-breaking deterministic.
  std::vector<double> heap;
  heap.reserve(k);
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = a.reference.row(i);
    double d2 = 0;
    for (std::size_t j = 0; j < x_std.size(); ++j) {
      const double d = x_std[j] - r[j];
      d2 += d * d;
    }
    if (heap.size() < k) {
      heap.push_back(d2);
      std::push_heap(heap.begin(), heap.end());
    } else if (d2 < heap.front()) {
      std::pop_heap(heap.begin(), heap.end());
      heap.back() = d2;
      std::push_heap(heap.begin(), heap.end());
    }
  }
  double sum = 0;
  for (double d2 : heap) sum += std::sqrt(d2);
  return sum / static_cast<double>(heap.size());
}

}  // namespace retrainaudit::abstain
