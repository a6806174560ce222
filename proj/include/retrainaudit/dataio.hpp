#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "retrainaudit/common.hpp"
#include "retrainaudit/metrics.hpp"  // GroupId

namespace retrainaudit::dataio {

using metrics::GroupId;
using metrics::kGroupA;
using metrics::kGroupB;
using metrics::kNoGroup;

// Canonical clinical feature columns of the weekly schema, in order.
inline const std::vector<std::string> kClinicalFeatures = {
    "tir",          "tar",         "tbr",
    "sd",           "mage",        "cv",
    "hyper_events", "hypo_events", "severe_hyper_events"};

// Plausible CGM reporting range; readings outside are rejected at ingestion.
inline constexpr double kGlucoseMin = 20.0;
inline constexpr double kGlucoseMax = 600.0;

struct GlucoseReading {
  std::string patient_id;
  Instant timestamp;
  double glucose_mgdl = 0.0;
};

enum class Sex : std::uint8_t { male, female };

struct PatientMeta {
  std::string patient_id;
  std::optional<Sex> sex;
  std::optional<double> age_years;
  std::optional<int> education;  // ordinal level, larger = more education
  std::optional<int> income;     // ordinal bracket, larger = higher income
  std::string race_ethnicity;    // carried through, not audited by default
};

enum class AttrKind : std::uint8_t { sex, age, education, income };

AttrKind attr_kind_from_string(std::string_view s);
std::string to_string(AttrKind k);

// A binarized protected attribute. For ordinal/continuous attributes the
// rule is: group A iff value >= threshold (sex is fixed: A = male).
struct ProtectedAttr {
  AttrKind kind = AttrKind::sex;
  double threshold = 0.0;
  std::string name() const { return to_string(kind); }
};

// Deterministic group label, or nullopt when the attribute value is
// missing (the patient is then excluded from that attribute's disparity
// analysis but stays in training).
std::optional<metrics::GroupId> binarize(const PatientMeta& meta,
                                         const ProtectedAttr& attr);

struct WeeklyObservation {
  std::string patient_id;
  Date week_start{};
  std::vector<double> features;  // parallel to WeeklyTable::feature_names
  int label = 0;
};

struct WeeklyTable {
  std::vector<std::string> feature_names = kClinicalFeatures;
  std::vector<WeeklyObservation> rows;
  std::map<std::string, PatientMeta> meta;

  std::ptrdiff_t feature_index(std::string_view name) const;
  std::vector<std::string> patients_sorted() const;
  std::pair<Date, Date> week_range() const;  // min/max over rows
  // First observed week per patient; batching keys off this.
  std::map<std::string, Date> first_week_by_patient() const;
};

// Resolves binarization thresholds against a cohort: age and income default
// to the cohort median (patient level); education defaults to level 4
// ("bachelor's degree or higher" on the 1..5 coding). Overrides win.
std::vector<ProtectedAttr> resolve_attributes(
    const WeeklyTable& table, const std::vector<AttrKind>& kinds,
    const std::map<AttrKind, double>& overrides = {});

// Per-row group labels for one attribute (kNoGroup where missing).
std::vector<metrics::GroupId> row_groups(const WeeklyTable& table,
                                         const ProtectedAttr& attr);

// ---------------------------------------------------------------------------
// CSV ingestion

// Maps logical column names to CSV header names; defaults to identity.
struct ColumnMap {
  std::unordered_map<std::string, std::string> to_csv;
  std::string col(const std::string& logical) const {
    auto it = to_csv.find(logical);
    return it == to_csv.end() ? logical : it->second;
  }
};

struct RowReject {
  std::size_t line = 0;  // 1-based, header = line 1
  std::string reason;
};

struct WeeklyLoadResult {
  WeeklyTable table;
  std::vector<RowReject> rejects;
};

// Loads and validates the weekly schema. Schema errors (missing mapped
// columns) throw ConfigError; malformed rows are rejected with a reason.
// With pediatric_check, rows whose age is >= 20 are rejected.
WeeklyLoadResult load_weekly_csv(const std::filesystem::path& path,
                                 const ColumnMap& schema = {},
                                 bool pediatric_check = false);

void write_weekly_csv(const std::filesystem::path& path, const WeeklyTable& t);
void write_meta_csv(const std::filesystem::path& path,
                    const std::map<std::string, PatientMeta>& meta);
std::map<std::string, PatientMeta> load_meta_csv(const std::filesystem::path& path);

struct CgmLoadResult {
  std::map<std::string, std::vector<GlucoseReading>> traces;  // sorted by time
  std::size_t accepted = 0;
  std::size_t dropped_out_of_range = 0;
  std::size_t dropped_duplicate = 0;
  std::vector<RowReject> rejects;
};

CgmLoadResult load_cgm_csv(const std::filesystem::path& path);
void write_cgm_csv(const std::filesystem::path& path, const CgmLoadResult& r);

// ---------------------------------------------------------------------------
// Chronological batching and holdout sampling

struct BatchPlan {
  int n_batches = 0;
  std::map<std::string, int> assignment;          // patient -> batch index
  std::vector<std::pair<Date, Date>> boundaries;  // [start, end) per batch
  std::set<std::string> holdout;                  // patients kept out entirely
  std::vector<int> patient_counts;                // per batch
  std::vector<std::string> warnings;              // e.g. empty batches
};

// Splits the cohort date range into n_batches equal calendar spans and
// assigns each patient to the span containing their first observed week.
// Patients in exclude are left out (used for retrospective holdouts).
BatchPlan make_batches(const WeeklyTable& table, int n_batches,
                       const std::set<std::string>& exclude = {});

// Patient-level stratified holdout: strata are (patient label-prevalence
// quartile x protected group); allocation uses largest-remainder rounding so
// the total is round(fraction * n_patients). Deterministic under seed.
std::set<std::string> make_holdout(const WeeklyTable& table, double fraction,
                                   std::uint64_t seed,
                                   const ProtectedAttr& strat_attr);

}  // namespace retrainaudit::dataio
