#include "retrainaudit/synthgen.hpp"

#include <algorithm>
#include <cmath>

#include "retrainaudit/rng.hpp"

namespace retrainaudit::synthgen {

using dataio::AttrKind;
using dataio::PatientMeta;
using dataio::Sex;

namespace {

// Cohort calendar anchor; only relative time matters.
const Date kStartDate = parse_date("2023-01-02");

void check_probs(const std::vector<double>& p, const std::string& what) {
  if (p.empty()) throw ConfigError(what + ": empty distribution");
  double sum = 0;
  for (double v : p) {
    if (v < 0 || v > 1) throw ConfigError(what + ": probability out of [0,1]");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ConfigError(what + ": probabilities must sum to 1");
}

double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z))
                : std::exp(z) / (1.0 + std::exp(z));
}

int draw_categorical(std::mt19937_64& rng, const std::vector<double>& probs) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double r = u(rng);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    r -= probs[i];
    if (r <= 0) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

struct PatientDraw {
  PatientMeta meta;
  double latent = 0.0;  // per-patient glycemic-control latent
  int first_day = 0;    // offset from cohort start
  int n_weeks = 1;
};

}  // namespace

void CohortSpec::validate() const {
  if (n_patients < 1) throw ConfigError("n_patients must be >= 1");
  if (weeks_min < 1 || weeks_max < weeks_min)
    throw ConfigError("weeks range invalid");
  if (date_span_days < 14) throw ConfigError("date_span_days must be >= 14");
  if (base_risk <= 0 || base_risk >= 1)
    throw ConfigError("base_risk must be in (0,1)");
  if (sex_female_ratio < 0 || sex_female_ratio > 1)
    throw ConfigError("sex_female_ratio out of [0,1]");
  if (drift.onset < 0 || drift.onset > 1)
    throw ConfigError("drift onset must be in [0,1]");
  check_probs(education_probs, "education_probs");
  check_probs(income_probs, "income_probs");
}

double TruthModel::linear(std::span<const double> features) const {
  double z = intercept;
  for (std::size_t j = 0; j < coef.size(); ++j)
    z += coef[j] * (features[j] - center[j]) / scale[j];
  return z;
}

Cohort gen_cohort(const CohortSpec& spec) {
  spec.validate();

  Cohort out;
  out.table.feature_names = dataio::kClinicalFeatures;

  // --- demographics, observation windows -----------------------------------
  const int id_width = spec.n_patients > 9999 ? 6 : 4;
  static const std::vector<std::string> kRace = {"groupW", "groupX", "groupY",
                                                 "groupZ"};
  static const std::vector<double> kRaceProbs = {0.45, 0.25, 0.20, 0.10};

  std::vector<PatientDraw> patients(spec.n_patients);
  for (int p = 0; p < spec.n_patients; ++p) {
    std::mt19937_64 rng(derive_seed(spec.seed, 1, static_cast<std::uint64_t>(p)));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    PatientDraw& d = patients[p];
    char buf[16];
    std::snprintf(buf, sizeof buf, "P%0*d", id_width, p + 1);
    d.meta.patient_id = buf;
    d.meta.sex = u(rng) < spec.sex_female_ratio ? Sex::female : Sex::male;
    d.meta.age_years =
        std::clamp(spec.age_mean + spec.age_sd * normal(rng), 1.0, 19.9);
    d.meta.education = 1 + draw_categorical(rng, spec.education_probs);
    d.meta.income = 1 + draw_categorical(rng, spec.income_probs);
    d.meta.race_ethnicity = kRace[draw_categorical(rng, kRaceProbs)];
    d.latent = normal(rng);

    std::uniform_int_distribution<int> start_day(0, spec.date_span_days - 8);
    d.first_day = start_day(rng);
    std::uniform_int_distribution<int> weeks(spec.weeks_min, spec.weeks_max);
    const int fit = std::max(1, (spec.date_span_days - d.first_day) / 7);
    d.n_weeks = std::min(weeks(rng), fit);
  }

  // Thresholds for subgroup-drift membership mirror the default audit
  // binarizations (median age/income, education >= 4).
  auto subgroup_of = [&](const PatientMeta& m, AttrKind kind,
                         double threshold) -> metrics::GroupId {
    dataio::ProtectedAttr a{kind, threshold};
    auto g = dataio::binarize(m, a);
    return g ? *g : metrics::kNoGroup;
  };
  double drift_threshold = 0.0;
  if (spec.drift.subgroup_attr) {
    std::vector<double> vals;
    for (const auto& d : patients) {
      switch (*spec.drift.subgroup_attr) {
        case AttrKind::sex: break;
        case AttrKind::age: vals.push_back(*d.meta.age_years); break;
        case AttrKind::education: break;
        case AttrKind::income: vals.push_back(*d.meta.income); break;
      }
    }
    if (*spec.drift.subgroup_attr == AttrKind::education) {
      drift_threshold = 4.0;
    } else if (!vals.empty()) {
      std::sort(vals.begin(), vals.end());
      const std::size_t n = vals.size();
      drift_threshold = n % 2 ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
    }
  }

  // --- ground-truth label model ---------------------------------------------
  TruthModel truth;
  truth.feature_names = out.table.feature_names;
  truth.center = {0.62, 0.30, 0.04, 50.0, 85.0, 0.37, 2.3, 0.8, 0.7};
  truth.scale = {0.15, 0.15, 0.03, 18.0, 35.0, 0.12, 1.8, 1.0, 1.0};
  truth.coef = {-0.40, 1.10, 0.15, 0.55, 0.35, 0.25, 0.45, 0.05, 0.90};

  // --- features --------------------------------------------------------------
  struct RowDraw {
    int patient = 0;
    Date week{};
    double fraction = 0.0;  // date fraction of week_start within the span
    std::vector<double> x;
  };
  std::vector<RowDraw> rows;
  auto shift_of = [&](const char* name, double fraction) {
    auto it = spec.drift.covariate_shift.find(name);
    return it == spec.drift.covariate_shift.end() ? 0.0 : it->second * fraction;
  };

  for (int p = 0; p < spec.n_patients; ++p) {
    const PatientDraw& d = patients[p];
    std::mt19937_64 rng(derive_seed(spec.seed, 2, static_cast<std::uint64_t>(p)));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);

    for (int w = 0; w < d.n_weeks; ++w) {
      RowDraw r;
      r.patient = p;
      r.week = Date{kStartDate.days + d.first_day + 7 * w};
      r.fraction = static_cast<double>(d.first_day + 7 * w) /
                   static_cast<double>(spec.date_span_days);

      const double z = 0.8 * d.latent + 0.6 * normal(rng);
      const double n1 = normal(rng), n2 = normal(rng), n3 = normal(rng),
                   n4 = normal(rng);

      double tar = std::clamp(
          0.28 + 0.16 * z + 0.05 * n1 + shift_of("tar", r.fraction), 0.01, 0.90);
      double tbr = std::clamp(
          0.04 + 0.015 * n2 + shift_of("tbr", r.fraction), 0.0, 0.15);
      if (tar + tbr > 0.98) tbr = 0.98 - tar;
      const double tir = 1.0 - tar - tbr;

      const double sd = std::clamp(
          48.0 + 16.0 * z + 6.0 * n3 + shift_of("sd", r.fraction), 8.0, 150.0);
      const double mean_glucose = 135.0 + 95.0 * tar + 10.0 * std::abs(n4);
      const double cv = sd / mean_glucose;
      const double mage_v = std::clamp(
          1.7 * sd + 12.0 * n4 + shift_of("mage", r.fraction), 0.0, 400.0);

      std::poisson_distribution<int> hyper(std::exp(0.8 + 0.55 * z));
      std::poisson_distribution<int> hypo(std::exp(-0.3 - 0.25 * z + 0.2 * n2));
      std::poisson_distribution<int> severe(std::exp(-0.6 + 0.9 * z));

      r.x = {tir,
             tar,
             tbr,
             sd,
             mage_v,
             cv,
             static_cast<double>(hyper(rng)),
             static_cast<double>(hypo(rng)),
             static_cast<double>(severe(rng))};
      rows.push_back(std::move(r));
    }
  }

  // --- intercept calibration -------------------------------------------------
  // Bisect so the base model's mean risk equals base_risk; drift deltas are
  // applied on top of the calibrated base.
  std::vector<double> base_linear(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    truth.intercept = 0.0;
    base_linear[i] = truth.linear(rows[i].x);
  }
  double lo = -25.0, hi = 25.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    double mean = 0.0;
    for (double bl : base_linear) mean += sigmoid(mid + bl);
    mean /= static_cast<double>(base_linear.size());
    (mean < spec.base_risk ? lo : hi) = mid;
  }
  truth.intercept = 0.5 * (lo + hi);

  // --- labels ------------------------------------------------------------------
  const double onset_day = spec.drift.onset * spec.date_span_days;
  std::size_t idx = 0;
  std::map<int, int> week_counter;
  for (const RowDraw& r : rows) {
    double eta = truth.intercept + base_linear[idx];
    for (const auto& [name, delta] : spec.drift.concept_drift) {
      const auto j = out.table.feature_index(name);
      if (j < 0) throw ConfigError("concept drift on unknown feature: " + name);
      eta += delta * r.fraction * (r.x[j] - truth.center[j]) / truth.scale[j];
    }
    if (spec.drift.subgroup_attr) {
      const PatientMeta& m = patients[r.patient].meta;
      const bool member = subgroup_of(m, *spec.drift.subgroup_attr,
                                      drift_threshold) == spec.drift.subgroup_group;
      const bool post = static_cast<double>(r.week.days - kStartDate.days) >=
                        onset_day;
      if (member && post) {
        for (const auto& [name, delta] : spec.drift.subgroup_delta) {
          const auto j = out.table.feature_index(name);
          if (j < 0)
            throw ConfigError("subgroup drift on unknown feature: " + name);
          eta += delta * (r.x[j] - truth.center[j]) / truth.scale[j];
        }
      }
    }
    std::mt19937_64 rng(derive_seed(spec.seed, 3,
                                    static_cast<std::uint64_t>(r.patient),
                                    static_cast<std::uint64_t>(week_counter[r.patient]++)));
    std::uniform_real_distribution<double> u(0.0, 1.0);

    dataio::WeeklyObservation obs;
    obs.patient_id = patients[r.patient].meta.patient_id;
    obs.week_start = r.week;
    obs.features = r.x;
    obs.label = u(rng) < sigmoid(eta) ? 1 : 0;
    out.table.rows.push_back(std::move(obs));
    ++idx;
  }
  for (const auto& d : patients) out.table.meta[d.meta.patient_id] = d.meta;

  // --- manifest ---------------------------------------------------------------
  out.truth = truth;
  nlohmann::json j;
  j["generator"] = "synthgen";
  j["seed"] = spec.seed;
  j["n_patients"] = spec.n_patients;
  j["n_rows"] = out.table.rows.size();
  j["base_risk"] = spec.base_risk;
  j["date_span_days"] = spec.date_span_days;
  j["truth"] = {{"feature_names", truth.feature_names},
                {"coef", truth.coef},
                {"center", truth.center},
                {"scale", truth.scale},
                {"intercept", truth.intercept}};
  double rate = 0;
  for (const auto& r : out.table.rows) rate += r.label;
  j["empirical_risk"] = rate / static_cast<double>(out.table.rows.size());
  nlohmann::json dj;
  dj["covariate_shift"] = spec.drift.covariate_shift;
  dj["concept_drift"] = spec.drift.concept_drift;
  dj["onset"] = spec.drift.onset;
  if (spec.drift.subgroup_attr) {
    dj["subgroup_attr"] = dataio::to_string(*spec.drift.subgroup_attr);
    dj["subgroup_group"] = spec.drift.subgroup_group == metrics::kGroupA ? "A" : "B";
    dj["subgroup_delta"] = spec.drift.subgroup_delta;
    dj["subgroup_threshold"] = drift_threshold;
  }
  j["drift"] = dj;
  out.manifest = j;
  return out;
}

std::vector<dataio::GlucoseReading> gen_trace(const std::string& patient_id,
                                              Date start, int days,
                                              const TraceParams& params,
                                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  std::vector<dataio::GlucoseReading> trace;
  const int steps_per_day = 288;  // 5-minute cadence
  trace.reserve(static_cast<std::size_t>(days) * steps_per_day);

  const double spike_prob_per_step =
      params.meal_spikes_per_day / static_cast<double>(steps_per_day);
  double g = params.mean_mgdl;
  double spike_left_min = 0.0;

  const std::int64_t t0 = static_cast<std::int64_t>(start.days) * 24 * 60;
  for (int s = 0; s < days * steps_per_day; ++s) {
    if (spike_left_min <= 0 && u(rng) < spike_prob_per_step)
      spike_left_min = params.spike_duration_min;
    const double spike =
        spike_left_min > 0
            ? params.spike_height_mgdl * (spike_left_min / params.spike_duration_min)
            : 0.0;
    if (spike_left_min > 0) spike_left_min -= 5.0;

    g += params.revert_rate * (params.mean_mgdl - g) +
         params.volatility * normal(rng);

    dataio::GlucoseReading r;
    r.patient_id = patient_id;
    r.timestamp = Instant{t0 + static_cast<std::int64_t>(s) * 5};
    r.glucose_mgdl = std::clamp(g + spike, 40.0, 400.0);
    trace.push_back(std::move(r));
  }
  return trace;
}

TraceCohort gen_trace_cohort(const CohortSpec& spec) {
  spec.validate();
  TraceCohort out;
  const int id_width = spec.n_patients > 9999 ? 6 : 4;
  for (int p = 0; p < spec.n_patients; ++p) {
    std::mt19937_64 rng(derive_seed(spec.seed, 11, static_cast<std::uint64_t>(p)));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    PatientMeta m;
    char buf[16];
    std::snprintf(buf, sizeof buf, "P%0*d", id_width, p + 1);
    m.patient_id = buf;
    m.sex = u(rng) < spec.sex_female_ratio ? Sex::female : Sex::male;
    m.age_years = std::clamp(spec.age_mean + spec.age_sd * normal(rng), 1.0, 19.9);
    m.education = 1 + draw_categorical(rng, spec.education_probs);
    m.income = 1 + draw_categorical(rng, spec.income_probs);

    std::uniform_int_distribution<int> start_day(0, spec.date_span_days - 8);
    const int first = start_day(rng);
    std::uniform_int_distribution<int> weeks(spec.weeks_min, spec.weeks_max);
    const int fit = std::max(1, (spec.date_span_days - first) / 7);
    const int n_weeks = std::min(weeks(rng), fit);

    TraceParams params;
    const double latent = normal(rng);
    params.mean_mgdl = std::clamp(150.0 + 35.0 * latent, 90.0, 260.0);
    params.volatility = std::clamp(10.0 + 4.0 * normal(rng), 4.0, 25.0);
    params.meal_spikes_per_day = std::clamp(2.5 + latent, 0.5, 6.0);

    out.traces[m.patient_id] =
        gen_trace(m.patient_id, Date{kStartDate.days + first}, 7 * n_weeks,
                  params, derive_seed(spec.seed, 12, static_cast<std::uint64_t>(p)));
    out.meta[m.patient_id] = m;
  }
  return out;
}

}  // namespace retrainaudit::synthgen
