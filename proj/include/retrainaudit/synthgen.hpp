#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "retrainaudit/dataio.hpp"

namespace retrainaudit::synthgen {

// Temporal drift controls. Date fractions run 0..1 over the cohort span;
// disabling every field yields a stationary cohort.
struct DriftSpec {
  // Linear covariate trends: feature -> total shift (in feature units)
  // reached at date fraction 1.
  std::map<std::string, double> covariate_shift;
  // Linear changes to the label-generating coefficients over time.
  std::map<std::string, double> concept_drift;
  // Concept drift confined to one protected subgroup after the onset date.
  std::optional<dataio::AttrKind> subgroup_attr;
  metrics::GroupId subgroup_group = metrics::kGroupB;
  std::map<std::string, double> subgroup_delta;
  double onset = 0.5;  // date fraction in [0,1]

  bool enabled() const {
    return !covariate_shift.empty() || !concept_drift.empty() ||
           subgroup_attr.has_value();
  }
};

struct CohortSpec {
  int n_patients = 200;
  int weeks_min = 2;
  int weeks_max = 57;
  int date_span_days = 360;
  double sex_female_ratio = 0.5;
  double age_mean = 11.0;
  double age_sd = 4.0;
  std::vector<double> education_probs = {0.10, 0.25, 0.25, 0.25, 0.15};
  std::vector<double> income_probs = {0.20, 0.20, 0.20, 0.20, 0.20};
  double base_risk = 0.20;
  DriftSpec drift;
  std::uint64_t seed = 1;

  void validate() const;  // throws ConfigError on infeasible marginals
};

// The label-generating logistic ground truth: risk = sigmoid(intercept +
// sum_j coef[j] * (x[j] - center[j]) / scale[j]), with drift deltas applied
// on top. Recorded in the manifest so learner correctness has an oracle.
struct TruthModel {
  std::vector<std::string> feature_names;
  std::vector<double> coef;
  std::vector<double> center;
  std::vector<double> scale;
  double intercept = 0.0;

  double linear(std::span<const double> features) const;
};

struct Cohort {
  dataio::WeeklyTable table;
  TruthModel truth;
  nlohmann::json manifest;
};

// Deterministic under spec.seed; per-patient and per-row streams are derived
// splittably so generation order never matters.
Cohort gen_cohort(const CohortSpec& spec);

// Raw CGM trace simulation: 5-minute mean-reverting walk with superimposed
// post-meal excursions, clipped to [40, 400] mg/dL.
struct TraceParams {
  double mean_mgdl = 140.0;
  double volatility = 12.0;        // per-step noise SD
  double revert_rate = 0.05;       // pull toward the mean per step
  double meal_spikes_per_day = 3.0;
  double spike_height_mgdl = 90.0;
  double spike_duration_min = 120.0;
};

std::vector<dataio::GlucoseReading> gen_trace(const std::string& patient_id,
                                              Date start, int days,
                                              const TraceParams& params,
                                              std::uint64_t seed);

// Demographics + traces for the featurize integration path.
struct TraceCohort {
  std::map<std::string, std::vector<dataio::GlucoseReading>> traces;
  std::map<std::string, dataio::PatientMeta> meta;
};
TraceCohort gen_trace_cohort(const CohortSpec& spec);

}  // namespace retrainaudit::synthgen
