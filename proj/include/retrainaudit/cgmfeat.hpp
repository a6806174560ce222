#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "retrainaudit/common.hpp"
#include "retrainaudit/dataio.hpp"

namespace retrainaudit::cgmfeat {

using dataio::GlucoseReading;

struct FeatureConfig {
  double hyper_mgdl = 180.0;        // hyperglycemic event threshold
  double hypo_mgdl = 70.0;          // hypoglycemic event threshold
  double severe_mgdl = 250.0;       // severe-hyperglycemia level
  double severe_min_minutes = 180;  // minimum severe-event duration
  double gap_tolerance_min = 30.0;  // a longer gap terminates runs and caps weights
  double tir_low = 70.0;            // TIR band
  double tir_high = 180.0;
  double trailing_interval_min = 5.0;  // weight of a trace's final reading
  double expected_readings_per_day = 288.0;  // 5-minute cadence
};

enum class EventKind : std::uint8_t { hyperglycemic, hypoglycemic };
enum class Direction : std::uint8_t { above, below };

struct GlycemicEvent {
  std::string patient_id;
  EventKind kind = EventKind::hyperglycemic;
  Instant start{};
  Instant end{};  // start + duration
  double duration_min = 0.0;
  double peak_or_nadir = 0.0;    // max for hyper, min for hypo
  bool severe = false;           // all readings > severe level for >= 180 min
  double threshold_mgdl = 0.0;   // segmentation threshold that produced it
};

// Maximal runs of consecutive readings strictly beyond the threshold. Each
// reading spans the interval to the next one, capped at the gap tolerance;
// a gap beyond the tolerance terminates the run. min_duration_min gates only
// the severe flag, not whether a run is reported.
std::vector<GlycemicEvent> segment_events(std::span<const GlucoseReading> trace,
                                          double threshold, Direction direction,
                                          double min_duration_min = 0.0,
                                          const FeatureConfig& cfg = {});

struct DailyMetrics {
  std::string patient_id;
  Date date{};
  double tir = 0, tar = 0, tbr = 0;  // time-weighted fractions, sum to 1
  double sd = 0;                     // population standard deviation
  double mage = 0;                   // classic MAGE (excursions > 1 SD)
  double cv = 0;                     // sd / mean; 0 when sd = 0
  int n_readings = 0;
  double coverage = 0;               // n_readings / expected per day
};

// All readings must share one patient and one calendar date.
DailyMetrics daily_metrics(std::span<const GlucoseReading> day,
                           const FeatureConfig& cfg = {});

// Classic MAGE: mean absolute amplitude of the peak-to-nadir excursions that
// exceed one (population) SD, counted in the direction of the first
// qualifying excursion. Exposed for direct testing.
double mage(std::span<const double> glucose, double sd);

struct WeeklyFeatures {
  std::string patient_id;
  Date week_start{};
  std::map<std::string, double> values;  // keyed by dataio feature names
};

// Aggregates one patient-week: reading-count-weighted means of the daily
// metrics plus event counts. Returns nullopt when no day has data.
std::optional<WeeklyFeatures> weekly_aggregate(
    std::span<const DailyMetrics> days, std::span<const GlycemicEvent> events,
    Date week_start, const FeatureConfig& cfg = {});

// High-risk week rule: strictly more than three severe hyperglycemic events.
int label_week(int severe_hyper_count);

// Full pipeline: traces -> weekly table in the dataio schema. Weeks are
// anchored at each patient's first reading date. Patients without metadata
// get an empty PatientMeta entry.
dataio::WeeklyTable featurize(
    const std::map<std::string, std::vector<GlucoseReading>>& traces,
    const std::map<std::string, dataio::PatientMeta>& meta,
    const FeatureConfig& cfg = {});

}  // namespace retrainaudit::cgmfeat
