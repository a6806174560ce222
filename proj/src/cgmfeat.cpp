#include "retrainaudit/cgmfeat.hpp"

#include <algorithm>
#include <cmath>

namespace retrainaudit::cgmfeat {

namespace {

bool beyond(double g, double threshold, Direction dir) {
  return dir == Direction::above ? g > threshold : g < threshold;
}

// Interval represented by reading j: up to the next reading, capped at the
// gap tolerance; the final reading of a trace gets the nominal cadence.
double interval_weight(std::span<const GlucoseReading> trace, std::size_t j,
                       const FeatureConfig& cfg) {
  if (j + 1 >= trace.size()) return cfg.trailing_interval_min;
  const double gap = static_cast<double>(trace[j + 1].timestamp.minutes -
                                         trace[j].timestamp.minutes);
  return std::min(gap, cfg.gap_tolerance_min);
}

}  // namespace

std::vector<GlycemicEvent> segment_events(std::span<const GlucoseReading> trace,
                                          double threshold, Direction direction,
                                          double min_duration_min,
                                          const FeatureConfig& cfg) {
  std::vector<GlycemicEvent> events;
  if (trace.empty()) return events;

  const EventKind kind = direction == Direction::above
                             ? EventKind::hyperglycemic
                             : EventKind::hypoglycemic;
  std::size_t run_start = 0;
  bool in_run = false;
  double run_duration = 0.0;
  double run_extreme = 0.0;
  double run_min = 0.0;

  auto flush = [&](std::size_t last) {
    GlycemicEvent e;
    e.patient_id = trace[run_start].patient_id;
    e.kind = kind;
    e.start = trace[run_start].timestamp;
    e.duration_min = run_duration;
    e.end = Instant{e.start.minutes + static_cast<std::int64_t>(
                                          std::llround(run_duration))};
    e.peak_or_nadir = run_extreme;
    e.threshold_mgdl = threshold;
    e.severe = direction == Direction::above &&
               run_duration >= min_duration_min &&
               run_min > cfg.severe_mgdl &&
               run_duration >= cfg.severe_min_minutes;
    (void)last;
    events.push_back(std::move(e));
  };

  for (std::size_t j = 0; j < trace.size(); ++j) {
    const double g = trace[j].glucose_mgdl;
    const bool hit = beyond(g, threshold, direction);
    const bool gap_break =
        in_run && static_cast<double>(trace[j].timestamp.minutes -
                                      trace[j - 1].timestamp.minutes) >
                      cfg.gap_tolerance_min;
    if (in_run && (!hit || gap_break)) {
      flush(j - 1);
      in_run = false;
    }
    if (hit && !in_run) {
      in_run = true;
      run_start = j;
      run_duration = 0.0;
      run_extreme = g;
      run_min = g;
    }
    if (in_run) {
      run_duration += interval_weight(trace, j, cfg);
      run_extreme = direction == Direction::above ? std::max(run_extreme, g)
                                                  : std::min(run_extreme, g);
      run_min = std::min(run_min, g);
    }
  }
  if (in_run) flush(trace.size() - 1);
  return events;
}

double mage(std::span<const double> glucose, double sd) {
  if (glucose.size() < 3 || sd <= 0.0) return 0.0;

  // Compress plateaus, then keep turning points (plus the endpoints).
  std::vector<double> v;
  for (double g : glucose)
    if (v.empty() || v.back() != g) v.push_back(g);
  if (v.size() < 3) return 0.0;
  std::vector<double> extrema;
  extrema.push_back(v.front());
  for (std::size_t i = 1; i + 1 < v.size(); ++i) {
    const bool peak = v[i] > v[i - 1] && v[i] > v[i + 1];
    const bool nadir = v[i] < v[i - 1] && v[i] < v[i + 1];
    if (peak || nadir) extrema.push_back(v[i]);
  }
  extrema.push_back(v.back());

  // Excursions between consecutive extrema, counted in the direction of the
  // first excursion whose amplitude exceeds one SD.
  int wanted_sign = 0;
  double sum = 0.0;
  int count = 0;
  for (std::size_t k = 0; k + 1 < extrema.size(); ++k) {
    const double amp = extrema[k + 1] - extrema[k];
    if (std::abs(amp) <= sd) continue;
    const int sign = amp > 0 ? 1 : -1;
    if (wanted_sign == 0) wanted_sign = sign;
    if (sign == wanted_sign) {
      sum += std::abs(amp);
      ++count;
    }
  }
  return count > 0 ? sum / count : 0.0;
}

DailyMetrics daily_metrics(std::span<const GlucoseReading> day,
                           const FeatureConfig& cfg) {
  if (day.empty()) throw DataError("daily_metrics: no readings");
  DailyMetrics m;
  m.patient_id = day.front().patient_id;
  m.date = date_of(day.front().timestamp);
  m.n_readings = static_cast<int>(day.size());
  m.coverage = std::min(1.0, static_cast<double>(day.size()) /
                                 cfg.expected_readings_per_day);

  double w_in = 0, w_above = 0, w_below = 0, w_total = 0;
  long double sum = 0;
  for (std::size_t j = 0; j < day.size(); ++j) {
    const double g = day[j].glucose_mgdl;
    const double w = interval_weight(day, j, cfg);
    w_total += w;
    if (g > cfg.tir_high)
      w_above += w;
    else if (g < cfg.tir_low)
      w_below += w;
    else
      w_in += w;
    sum += g;
  }
  m.tir = w_in / w_total;
  m.tar = w_above / w_total;
  m.tbr = w_below / w_total;

  const double mean = static_cast<double>(sum / day.size());
  long double ss = 0;
  for (const auto& r : day) {
    const double d = r.glucose_mgdl - mean;
    ss += static_cast<long double>(d) * d;
  }
  m.sd = std::sqrt(static_cast<double>(ss / day.size()));
  m.cv = (m.sd == 0.0 || mean <= 0.0) ? 0.0 : m.sd / mean;

  std::vector<double> values;
  values.reserve(day.size());
  for (const auto& r : day) values.push_back(r.glucose_mgdl);
  m.mage = mage(values, m.sd);
  return m;
}

std::optional<WeeklyFeatures> weekly_aggregate(
    std::span<const DailyMetrics> days, std::span<const GlycemicEvent> events,
    Date week_start, const FeatureConfig& cfg) {
  const Date week_end{week_start.days + 7};

  double w_total = 0;
  double tir = 0, tar = 0, tbr = 0, sd = 0, mage_sum = 0, cv = 0;
  for (const auto& d : days) {
    if (d.date < week_start || !(d.date < week_end)) continue;
    const double w = d.n_readings;
    w_total += w;
    tir += w * d.tir;
    tar += w * d.tar;
    tbr += w * d.tbr;
    sd += w * d.sd;
    mage_sum += w * d.mage;
    cv += w * d.cv;
  }
  if (w_total <= 0) return std::nullopt;

  WeeklyFeatures f;
  f.week_start = week_start;
  int hyper = 0, hypo = 0, severe = 0;
  for (const auto& e : events) {
    const Date start_day = date_of(e.start);
    if (start_day < week_start || !(start_day < week_end)) continue;
    f.patient_id = e.patient_id;
    if (e.kind == EventKind::hypoglycemic) {
      if (e.threshold_mgdl == cfg.hypo_mgdl) ++hypo;
    } else {
      if (e.threshold_mgdl == cfg.hyper_mgdl) ++hyper;
      if (e.threshold_mgdl == cfg.severe_mgdl && e.severe) ++severe;
    }
  }
  for (const auto& d : days)
    if (!(d.date < week_start) && d.date < week_end) f.patient_id = d.patient_id;

  f.values["tir"] = tir / w_total;
  f.values["tar"] = tar / w_total;
  f.values["tbr"] = tbr / w_total;
  f.values["sd"] = sd / w_total;
  f.values["mage"] = mage_sum / w_total;
  f.values["cv"] = cv / w_total;
  f.values["hyper_events"] = hyper;
  f.values["hypo_events"] = hypo;
  f.values["severe_hyper_events"] = severe;
  return f;
}

int label_week(int severe_hyper_count) { return severe_hyper_count > 3 ? 1 : 0; }

dataio::WeeklyTable featurize(
    const std::map<std::string, std::vector<GlucoseReading>>& traces,
    const std::map<std::string, dataio::PatientMeta>& meta,
    const FeatureConfig& cfg) {
  dataio::WeeklyTable table;
  for (const auto& [patient, trace] : traces) {
    if (trace.empty()) continue;

    std::vector<GlycemicEvent> events =
        segment_events(trace, cfg.hyper_mgdl, Direction::above, 0.0, cfg);
    {
      auto hypo = segment_events(trace, cfg.hypo_mgdl, Direction::below, 0.0, cfg);
      events.insert(events.end(), hypo.begin(), hypo.end());
      auto severe = segment_events(trace, cfg.severe_mgdl, Direction::above,
                                   cfg.severe_min_minutes, cfg);
      for (auto& e : severe)
        if (e.severe) events.push_back(e);
    }

    std::vector<DailyMetrics> days;
    std::size_t i = 0;
    while (i < trace.size()) {
      const Date d = date_of(trace[i].timestamp);
      std::size_t j = i;
      while (j < trace.size() && date_of(trace[j].timestamp) == d) ++j;
      days.push_back(daily_metrics({trace.data() + i, j - i}, cfg));
      i = j;
    }

    const Date anchor = date_of(trace.front().timestamp);
    const Date last = date_of(trace.back().timestamp);
    for (Date w = anchor; w <= last; w.days += 7) {
      auto f = weekly_aggregate(days, events, w, cfg);
      if (!f) continue;
      dataio::WeeklyObservation obs;
      obs.patient_id = patient;
      obs.week_start = w;
      obs.features.reserve(table.feature_names.size());
      for (const auto& name : table.feature_names)
        obs.features.push_back(f->values.at(name));
      obs.label = label_week(static_cast<int>(f->values.at("severe_hyper_events")));
      table.rows.push_back(std::move(obs));
    }

    if (auto it = meta.find(patient); it != meta.end()) {
      table.meta[patient] = it->second;
    } else {
      dataio::PatientMeta blank;
      blank.patient_id = patient;
      table.meta[patient] = blank;
    }
  }
  return table;
}

}  // namespace retrainaudit::cgmfeat
