#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "retrainaudit/common.hpp"

namespace retrainaudit::abstain {

struct Config {
  int k = 5;            // neighbors averaged in the distance score
  double alpha = 0.05;  // abstention budget
};

struct CalibrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Split-conformal abstainer. The training split is divided 80/20 at patient
// level into a reference set and a calibration set; d(x) is the mean
// Euclidean distance from standardized x to its k nearest reference rows,
// and tau is the ceil((1-alpha)(n_cal+1))-th smallest calibration distance.
struct Abstainer {
  int k = 5;
  double alpha = 0.05;
  double tau = 0.0;
  Matrix reference;                          // standardized feature rows
  std::vector<double> calibration_distances; // sorted ascending

  bool should_abstain(double distance) const { return distance > tau; }
};

// x_std: standardized features of the full training split (same
// standardizer as the model). patient_of_row drives the patient-level split.
// Throws CalibrationError when rows < 5 * (k + 1).
Abstainer calibrate(const Matrix& x_std,
                    std::span<const std::string> patient_of_row,
                    const Config& cfg, std::uint64_t seed);

// Mean distance to the k nearest reference rows; ties broken by reference
// insertion order.
double knn_distance(const Abstainer& a, std::span<const double> x_std);

struct AbstentionRecord {
  std::int32_t instance = 0;
  int phase = 0;
  double distance = 0.0;
  double tau = 0.0;
  bool abstained = false;
  double score = 0.0;  // the model score at abstention time
};

}  // namespace retrainaudit::abstain
