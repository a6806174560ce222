#include "retrainaudit/dataio.hpp"

#include <algorithm>
#include <cmath>

#include "retrainaudit/csv.hpp"
#include "retrainaudit/rng.hpp"

namespace retrainaudit::dataio {

AttrKind attr_kind_from_string(std::string_view s) {
  const std::string v = lower(s);
  if (v == "sex") return AttrKind::sex;
  if (v == "age") return AttrKind::age;
  if (v == "education") return AttrKind::education;
  if (v == "income") return AttrKind::income;
  throw ConfigError("unknown protected attribute: '" + std::string(s) + "'");
}

std::string to_string(AttrKind k) {
  switch (k) {
    case AttrKind::sex: return "sex";
    case AttrKind::age: return "age";
    case AttrKind::education: return "education";
    case AttrKind::income: return "income";
  }
  return "?";
}

std::optional<metrics::GroupId> binarize(const PatientMeta& meta,
                                         const ProtectedAttr& attr) {
  switch (attr.kind) {
    case AttrKind::sex:
      if (!meta.sex) return std::nullopt;
      return *meta.sex == Sex::male ? kGroupA : kGroupB;
    case AttrKind::age:
      if (!meta.age_years) return std::nullopt;
      return *meta.age_years >= attr.threshold ? kGroupA : kGroupB;
    case AttrKind::education:
      if (!meta.education) return std::nullopt;
      return *meta.education >= attr.threshold ? kGroupA : kGroupB;
    case AttrKind::income:
      if (!meta.income) return std::nullopt;
      return *meta.income >= attr.threshold ? kGroupA : kGroupB;
  }
  return std::nullopt;
}

std::ptrdiff_t WeeklyTable::feature_index(std::string_view name) const {
  for (std::size_t i = 0; i < feature_names.size(); ++i)
    if (feature_names[i] == name) return static_cast<std::ptrdiff_t>(i);
  return -1;
}

std::vector<std::string> WeeklyTable::patients_sorted() const {
  std::vector<std::string> out;
  out.reserve(meta.size());
  for (const auto& [id, _] : meta) out.push_back(id);
  return out;  // std::map iterates sorted
}

std::pair<Date, Date> WeeklyTable::week_range() const {
  if (rows.empty()) throw DataError("week_range on empty table");
  Date lo = rows.front().week_start, hi = lo;
  for (const auto& r : rows) {
    lo = std::min(lo, r.week_start);
    hi = std::max(hi, r.week_start);
  }
  return {lo, hi};
}

std::map<std::string, Date> WeeklyTable::first_week_by_patient() const {
  std::map<std::string, Date> out;
  for (const auto& r : rows) {
    auto [it, inserted] = out.emplace(r.patient_id, r.week_start);
    if (!inserted) it->second = std::min(it->second, r.week_start);
  }
  return out;
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) throw DataError("median of empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<ProtectedAttr> resolve_attributes(
    const WeeklyTable& table, const std::vector<AttrKind>& kinds,
    const std::map<AttrKind, double>& overrides) {
  std::vector<ProtectedAttr> out;
  for (AttrKind k : kinds) {
    ProtectedAttr a;
    a.kind = k;
    if (auto it = overrides.find(k); it != overrides.end()) {
      a.threshold = it->second;
    } else {
      switch (k) {
        case AttrKind::sex:
          a.threshold = 0.0;
          break;
        case AttrKind::age: {
          std::vector<double> ages;
          for (const auto& [_, m] : table.meta)
            if (m.age_years) ages.push_back(*m.age_years);
          a.threshold = median(std::move(ages));
          break;
        }
        case AttrKind::education:
          a.threshold = 4.0;  // bachelor's degree or higher on the 1..5 coding
          break;
        case AttrKind::income: {
          std::vector<double> v;
          for (const auto& [_, m] : table.meta)
            if (m.income) v.push_back(static_cast<double>(*m.income));
          a.threshold = median(std::move(v));
          break;
        }
      }
    }
    out.push_back(a);
  }
  return out;
}

std::vector<metrics::GroupId> row_groups(const WeeklyTable& table,
                                         const ProtectedAttr& attr) {
  std::vector<metrics::GroupId> out(table.rows.size(), kNoGroup);
  std::map<std::string, metrics::GroupId> by_patient;
  for (const auto& [id, m] : table.meta) {
    auto g = binarize(m, attr);
    by_patient[id] = g ? *g : kNoGroup;
  }
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    auto it = by_patient.find(table.rows[i].patient_id);
    if (it != by_patient.end()) out[i] = it->second;
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::optional<Sex> parse_sex(std::string_view s) {
  const std::string v = lower(trim(s));
  if (v.empty()) return std::nullopt;
  if (v == "male" || v == "m") return Sex::male;
  if (v == "female" || v == "f") return Sex::female;
  throw DataError("bad sex value: '" + std::string(s) + "'");
}

std::string sex_to_string(std::optional<Sex> s) {
  if (!s) return "";
  return *s == Sex::male ? "male" : "female";
}

}  // namespace

WeeklyLoadResult load_weekly_csv(const std::filesystem::path& path,
                                 const ColumnMap& schema, bool pediatric_check) {
  const CsvTable csv = read_csv(path);
  WeeklyLoadResult out;
  out.table.feature_names = kClinicalFeatures;

  const std::vector<std::string> logical = {
      "patient_id", "week_start", "tir", "tar", "tbr", "sd", "mage", "cv",
      "hyper_events", "hypo_events", "severe_hyper_events", "label",
      "sex", "age", "education", "income"};
  std::unordered_map<std::string, std::size_t> col;
  for (const auto& name : logical) {
    const std::string csv_name = schema.col(name);
    const std::ptrdiff_t idx = csv.col(csv_name);
    if (idx < 0)
      throw ConfigError("weekly csv: missing column '" + csv_name + "' in " +
                        path.string());
    col[name] = static_cast<std::size_t>(idx);
  }

  std::set<std::pair<std::string, std::int32_t>> seen_keys;
  std::size_t line = 1;
  for (const auto& raw : csv.rows) {
    ++line;
    auto field = [&](const std::string& name) -> const std::string& {
      return raw.at(col.at(name));
    };
    try {
      WeeklyObservation obs;
      obs.patient_id = std::string(trim(field("patient_id")));
      if (obs.patient_id.empty()) throw DataError("empty patient_id");
      obs.week_start = parse_date(field("week_start"));
      if (!seen_keys.emplace(obs.patient_id, obs.week_start.days).second)
        throw DataError("duplicate key (patient, week)");

      obs.features.reserve(kClinicalFeatures.size());
      for (const auto& f : kClinicalFeatures)
        obs.features.push_back(parse_double(field(f)));

      const double tir = obs.features[0], tar = obs.features[1], tbr = obs.features[2];
      if (std::abs(tir + tar + tbr - 1.0) > 1e-9)
        throw DataError("tir+tar+tbr != 1");
      if (tir < 0 || tar < 0 || tbr < 0) throw DataError("negative time fraction");
      for (const char* name : {"hyper_events", "hypo_events", "severe_hyper_events"}) {
        const double v = obs.features[out.table.feature_index(name)];
        if (v < 0 || v != std::floor(v))
          throw DataError(std::string(name) + " must be a non-negative integer");
      }

      const long long lab = parse_int(field("label"));
      if (lab != 0 && lab != 1) throw DataError("label must be 0 or 1");
      obs.label = static_cast<int>(lab);

      PatientMeta pm;
      pm.patient_id = obs.patient_id;
      pm.sex = parse_sex(field("sex"));
      if (const auto a = trim(field("age")); !a.empty()) {
        pm.age_years = parse_double(a);
        if (*pm.age_years < 0) throw DataError("negative age");
        if (pediatric_check && *pm.age_years >= 20)
          throw DataError("age >= 20 with pediatric check on");
      }
      if (const auto e = trim(field("education")); !e.empty())
        pm.education = static_cast<int>(parse_int(e));
      if (const auto in = trim(field("income")); !in.empty())
        pm.income = static_cast<int>(parse_int(in));

      auto [it, inserted] = out.table.meta.emplace(pm.patient_id, pm);
      if (!inserted) {
        const PatientMeta& prev = it->second;
        if (prev.sex != pm.sex || prev.age_years != pm.age_years ||
            prev.education != pm.education || prev.income != pm.income)
          throw DataError("conflicting demographics for patient " + pm.patient_id);
      }
      out.table.rows.push_back(std::move(obs));
    } catch (const DataError& e) {
      out.rejects.push_back({line, e.what()});
    }
  }
  return out;
}

void write_weekly_csv(const std::filesystem::path& path, const WeeklyTable& t) {
  CsvWriter w(path);
  std::vector<std::string> header = {"patient_id", "week_start"};
  for (const auto& f : t.feature_names) header.push_back(f);
  header.insert(header.end(), {"label", "sex", "age", "education", "income"});
  w.row(header);
  for (const auto& r : t.rows) {
    std::vector<std::string> row = {r.patient_id, format_date(r.week_start)};
    for (double v : r.features) row.push_back(fmt_double(v));
    row.push_back(std::to_string(r.label));
    const PatientMeta& m = t.meta.at(r.patient_id);
    row.push_back(sex_to_string(m.sex));
    row.push_back(m.age_years ? fmt_double(*m.age_years) : "");
    row.push_back(m.education ? std::to_string(*m.education) : "");
    row.push_back(m.income ? std::to_string(*m.income) : "");
    w.row(row);
  }
}

void write_meta_csv(const std::filesystem::path& path,
                    const std::map<std::string, PatientMeta>& meta) {
  CsvWriter w(path);
  w.row({"patient_id", "sex", "age", "education", "income", "race_ethnicity"});
  for (const auto& [id, m] : meta) {
    w.row({id, sex_to_string(m.sex), m.age_years ? fmt_double(*m.age_years) : "",
           m.education ? std::to_string(*m.education) : "",
           m.income ? std::to_string(*m.income) : "", m.race_ethnicity});
  }
}

std::map<std::string, PatientMeta> load_meta_csv(const std::filesystem::path& path) {
  const CsvTable csv = read_csv(path);
  for (const char* c : {"patient_id", "sex", "age", "education", "income"})
    if (csv.col(c) < 0)
      throw ConfigError("meta csv: missing column '" + std::string(c) + "'");
  const auto race_col = csv.col("race_ethnicity");
  std::map<std::string, PatientMeta> out;
  for (const auto& row : csv.rows) {
    PatientMeta m;
    m.patient_id = std::string(trim(row[csv.col("patient_id")]));
    m.sex = parse_sex(row[csv.col("sex")]);
    if (const auto a = trim(row[csv.col("age")]); !a.empty())
      m.age_years = parse_double(a);
    if (const auto e = trim(row[csv.col("education")]); !e.empty())
      m.education = static_cast<int>(parse_int(e));
    if (const auto i = trim(row[csv.col("income")]); !i.empty())
      m.income = static_cast<int>(parse_int(i));
    if (race_col >= 0) m.race_ethnicity = row[race_col];
    if (!out.emplace(m.patient_id, m).second)
      throw DataError("duplicate patient in meta csv: " + m.patient_id);
  }
  return out;
}

CgmLoadResult load_cgm_csv(const std::filesystem::path& path) {
  const CsvTable csv = read_csv(path);
  for (const char* c : {"patient_id", "timestamp", "glucose_mgdl"})
    if (csv.col(c) < 0)
      throw ConfigError("cgm csv: missing column '" + std::string(c) + "'");
  const std::size_t pid = csv.col("patient_id");
  const std::size_t ts = csv.col("timestamp");
  const std::size_t gl = csv.col("glucose_mgdl");

  CgmLoadResult out;
  std::size_t line = 1;
  for (const auto& row : csv.rows) {
    ++line;
    try {
      GlucoseReading r;
      r.patient_id = std::string(trim(row[pid]));
      if (r.patient_id.empty()) throw DataError("empty patient_id");
      r.timestamp = parse_instant(row[ts]);
      r.glucose_mgdl = parse_double(row[gl]);
      if (r.glucose_mgdl < kGlucoseMin || r.glucose_mgdl > kGlucoseMax) {
        ++out.dropped_out_of_range;
        out.rejects.push_back({line, "glucose out of [20,600]"});
        continue;
      }
      out.traces[r.patient_id].push_back(std::move(r));
      ++out.accepted;
    } catch (const DataError& e) {
      out.rejects.push_back({line, e.what()});
    }
  }
  // Sort per patient; on duplicate timestamps the later row is dropped.
  for (auto& [id, trace] : out.traces) {
    std::stable_sort(trace.begin(), trace.end(),
                     [](const GlucoseReading& a, const GlucoseReading& b) {
                       return a.timestamp < b.timestamp;
                     });
    std::vector<GlucoseReading> dedup;
    dedup.reserve(trace.size());
    for (auto& r : trace) {
      if (!dedup.empty() && dedup.back().timestamp == r.timestamp) {
        ++out.dropped_duplicate;
        --out.accepted;
        continue;
      }
      dedup.push_back(std::move(r));
    }
    trace = std::move(dedup);
  }
  return out;
}

void write_cgm_csv(const std::filesystem::path& path, const CgmLoadResult& r) {
  CsvWriter w(path);
  w.row({"patient_id", "timestamp", "glucose_mgdl"});
  for (const auto& [id, trace] : r.traces)
    for (const auto& g : trace)
      w.row({id, format_instant(g.timestamp), fmt_double(g.glucose_mgdl)});
}

// ---------------------------------------------------------------------------

BatchPlan make_batches(const WeeklyTable& table, int n_batches,
                       const std::set<std::string>& exclude) {
  if (n_batches < 2) throw ConfigError("n_batches must be >= 2");
  BatchPlan plan;
  plan.n_batches = n_batches;

  const auto first_weeks = table.first_week_by_patient();
  // Range over all weeks of included patients, so every observation falls
  // inside some batch window.
  std::optional<Date> lo, hi;
  for (const auto& r : table.rows) {
    if (exclude.count(r.patient_id)) continue;
    if (!lo) {
      lo = hi = r.week_start;
    } else {
      lo = std::min(*lo, r.week_start);
      hi = std::max(*hi, r.week_start);
    }
  }
  if (!lo) throw DataError("make_batches: no patients after exclusion");

  const double span_days = static_cast<double>(hi->days - lo->days + 1);
  const double span = span_days / n_batches;
  // Cumulative ceil edges keep the windows contiguous and approximately
  // equal, and put degenerate (shorter-than-one-day) windows at the end.
  std::vector<std::int32_t> edges(n_batches + 1);
  edges[0] = lo->days;
  for (int b = 1; b < n_batches; ++b)
    edges[b] = lo->days + static_cast<std::int32_t>(std::ceil(b * span));
  edges[n_batches] = hi->days + 1;
  plan.boundaries.reserve(n_batches);
  for (int b = 0; b < n_batches; ++b)
    plan.boundaries.emplace_back(Date{edges[b]}, Date{edges[b + 1]});

  plan.patient_counts.assign(n_batches, 0);
  for (const auto& [id, first] : first_weeks) {
    if (exclude.count(id)) continue;
    int idx = static_cast<int>(
        std::floor(static_cast<double>(first.days - lo->days) / span));
    idx = std::clamp(idx, 0, n_batches - 1);
    // floor drift at window edges: honor the stored boundaries exactly
    while (idx > 0 && first < plan.boundaries[idx].first) --idx;
    while (idx + 1 < n_batches && first >= plan.boundaries[idx].second) ++idx;
    plan.assignment[id] = idx;
    ++plan.patient_counts[idx];
  }
  for (int b = 0; b < n_batches; ++b)
    if (plan.patient_counts[b] == 0)
      plan.warnings.push_back("batch " + std::to_string(b) + " has no patients");
  return plan;
}

std::set<std::string> make_holdout(const WeeklyTable& table, double fraction,
                                   std::uint64_t seed,
                                   const ProtectedAttr& strat_attr) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw ConfigError("holdout fraction must be in (0,1)");

  struct PatientInfo {
    std::string id;
    double prevalence = 0.0;
    metrics::GroupId group = kNoGroup;
  };
  std::map<std::string, std::pair<int, int>> counts;  // id -> (positives, weeks)
  for (const auto& r : table.rows) {
    auto& c = counts[r.patient_id];
    c.first += r.label;
    c.second += 1;
  }
  std::vector<PatientInfo> patients;
  std::vector<double> prevalences;
  for (const auto& [id, c] : counts) {
    PatientInfo p;
    p.id = id;
    p.prevalence = static_cast<double>(c.first) / c.second;
    if (auto it = table.meta.find(id); it != table.meta.end())
      if (auto g = binarize(it->second, strat_attr)) p.group = *g;
    prevalences.push_back(p.prevalence);
    patients.push_back(std::move(p));
  }
  const std::size_t n = patients.size();

  // Quartile cut points of patient-level label prevalence.
  std::sort(prevalences.begin(), prevalences.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(prevalences.size() - 1);
    const std::size_t i = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(i);
    return i + 1 < prevalences.size()
               ? prevalences[i] * (1 - frac) + prevalences[i + 1] * frac
               : prevalences[i];
  };
  const double q1 = quantile(0.25), q2 = quantile(0.50), q3 = quantile(0.75);
  auto quartile_of = [&](double p) {
    if (p <= q1) return 0;
    if (p <= q2) return 1;
    if (p <= q3) return 2;
    return 3;
  };

  // stratum key = quartile * 3 + (group + 1)
  std::map<int, std::vector<std::string>> strata;
  for (const auto& p : patients)
    strata[quartile_of(p.prevalence) * 3 + (p.group + 1)].push_back(p.id);

  const long target =
      std::lround(fraction * static_cast<double>(n));

  // Largest-remainder apportionment over strata.
  struct Alloc {
    int key;
    long base;
    double remainder;
  };
  std::vector<Alloc> allocs;
  long allocated = 0;
  for (const auto& [key, ids] : strata) {
    const double exact = fraction * static_cast<double>(ids.size());
    Alloc a{key, static_cast<long>(std::floor(exact)), exact - std::floor(exact)};
    allocated += a.base;
    allocs.push_back(a);
  }
  std::stable_sort(allocs.begin(), allocs.end(), [](const Alloc& a, const Alloc& b) {
    if (a.remainder != b.remainder) return a.remainder > b.remainder;
    return a.key < b.key;
  });
  for (auto& a : allocs) {
    if (allocated >= target) break;
    if (static_cast<std::size_t>(a.base) < strata[a.key].size()) {
      ++a.base;
      ++allocated;
    }
  }

  std::set<std::string> holdout;
  for (const auto& a : allocs) {
    auto ids = strata[a.key];  // already sorted (map of vectors built in order)
    std::sort(ids.begin(), ids.end());
    std::mt19937_64 rng(derive_seed(seed, 0x48574f55ULL, static_cast<std::uint64_t>(a.key)));
    std::shuffle(ids.begin(), ids.end(), rng);
    for (long i = 0; i < a.base && i < static_cast<long>(ids.size()); ++i)
      holdout.insert(ids[static_cast<std::size_t>(i)]);
  }
  return holdout;
}

}  // namespace retrainaudit::dataio
