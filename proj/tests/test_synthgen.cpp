#include <doctest.h>

#include <cmath>
#include <set>

#include "retrainaudit/cgmfeat.hpp"
#include "retrainaudit/learner.hpp"
#include "retrainaudit/metrics.hpp"
#include "retrainaudit/synthgen.hpp"

using namespace retrainaudit;
using namespace retrainaudit::synthgen;

namespace {

double label_rate(const dataio::WeeklyTable& t) {
  double s = 0;
  for (const auto& r : t.rows) s += r.label;
  return s / static_cast<double>(t.rows.size());
}

}  // namespace

TEST_CASE("gen_cohort: stationary base risk lands in the binomial band") {
  CohortSpec spec;
  spec.n_patients = 200;
  spec.base_risk = 0.2;
  spec.seed = 3;
  const Cohort c = gen_cohort(spec);
  CHECK(c.table.rows.size() > 1000);
  const double rate = label_rate(c.table);
  CHECK(rate >= 0.15);
  CHECK(rate <= 0.25);
}

TEST_CASE("gen_cohort: deterministic under seed") {
  CohortSpec spec;
  spec.n_patients = 40;
  spec.seed = 11;
  const Cohort a = gen_cohort(spec);
  const Cohort b = gen_cohort(spec);
  REQUIRE(a.table.rows.size() == b.table.rows.size());
  for (std::size_t i = 0; i < a.table.rows.size(); ++i) {
    CHECK(a.table.rows[i].patient_id == b.table.rows[i].patient_id);
    CHECK(a.table.rows[i].week_start == b.table.rows[i].week_start);
    CHECK(a.table.rows[i].label == b.table.rows[i].label);
    for (std::size_t j = 0; j < a.table.rows[i].features.size(); ++j)
      CHECK(a.table.rows[i].features[j] == b.table.rows[i].features[j]);
  }
  spec.seed = 12;
  const Cohort c = gen_cohort(spec);
  bool any_diff = c.table.rows.size() != a.table.rows.size();
  for (std::size_t i = 0; !any_diff && i < c.table.rows.size(); ++i)
    any_diff = c.table.rows[i].features != a.table.rows[i].features;
  CHECK(any_diff);
}

TEST_CASE("gen_cohort: output passes dataio validation with zero rejects") {
  CohortSpec spec;
  spec.n_patients = 80;
  spec.seed = 21;
  const Cohort c = gen_cohort(spec);
  const auto p = std::filesystem::temp_directory_path() / "synth_valid.csv";
  dataio::write_weekly_csv(p, c.table);
  const auto loaded = dataio::load_weekly_csv(p, {}, /*pediatric_check=*/true);
  CHECK(loaded.rejects.empty());
  CHECK(loaded.table.rows.size() == c.table.rows.size());
}

TEST_CASE("gen_cohort: subgroup drift moves group-B label rate after onset only") {
  CohortSpec spec;
  spec.n_patients = 240;
  spec.weeks_min = 6;
  spec.weeks_max = 20;
  spec.seed = 5;
  spec.base_risk = 0.25;
  spec.drift.subgroup_attr = dataio::AttrKind::sex;
  spec.drift.subgroup_group = metrics::kGroupB;
  spec.drift.onset = 0.5;
  spec.drift.subgroup_delta = {{"tar", -2.2}, {"severe_hyper_events", -1.4}};
  const Cohort c = gen_cohort(spec);

  const Date start = c.table.week_range().first;
  const double onset_day = 0.5 * spec.date_span_days;
  double pre_b = 0, post_b = 0, pre_a = 0, post_a = 0;
  long npre_b = 0, npost_b = 0, npre_a = 0, npost_a = 0;
  for (const auto& r : c.table.rows) {
    const bool female = c.table.meta.at(r.patient_id).sex == dataio::Sex::female;
    const bool post = (r.week_start.days - start.days) >= onset_day;
    if (female) {
      (post ? post_b : pre_b) += r.label;
      (post ? npost_b : npre_b) += 1;
    } else {
      (post ? post_a : pre_a) += r.label;
      (post ? npost_a : npre_a) += 1;
    }
  }
  pre_b /= npre_b;
  post_b /= npost_b;
  pre_a /= npre_a;
  post_a /= npost_a;

  // two-proportion z-test, group B must shift (p < 0.01 -> |z| > 2.58)
  auto ztest = [](double p1, long n1, double p2, long n2) {
    const double pool = (p1 * n1 + p2 * n2) / (n1 + n2);
    const double se = std::sqrt(pool * (1 - pool) * (1.0 / n1 + 1.0 / n2));
    return (p1 - p2) / se;
  };
  CHECK(std::abs(ztest(pre_b, npre_b, post_b, npost_b)) > 2.58);
  CHECK(std::abs(ztest(pre_a, npre_a, post_a, npost_a)) < 2.58);
}

TEST_CASE("gen_cohort: ground truth is recoverable by the learner (AUC >= 0.85)") {
  CohortSpec spec;
  spec.n_patients = 400;
  spec.weeks_min = 5;
  spec.weeks_max = 25;
  spec.seed = 31;
  const Cohort c = gen_cohort(spec);

  learner::Dataset ds;
  ds.feature_names = c.table.feature_names;
  ds.x = Matrix(c.table.rows.size(), ds.feature_names.size());
  ds.y.resize(c.table.rows.size());
  for (std::size_t i = 0; i < c.table.rows.size(); ++i) {
    std::copy(c.table.rows[i].features.begin(), c.table.rows[i].features.end(),
              ds.x.row(i));
    ds.y[i] = c.table.rows[i].label;
  }
  const learner::Model m = learner::fit(ds, learner::TrainConfig{});
  std::vector<double> scores(ds.x.rows);
  for (std::size_t i = 0; i < ds.x.rows; ++i)
    scores[i] = m.predict_proba(ds.x.row_span(i));
  CHECK(metrics::auc(scores, ds.y).value() >= 0.85);
}

TEST_CASE("gen_cohort: stationary cohort has stable per-batch feature means") {
  CohortSpec spec;
  spec.n_patients = 300;
  spec.weeks_min = 4;
  spec.weeks_max = 16;
  spec.seed = 17;
  const Cohort c = gen_cohort(spec);
  const auto plan = dataio::make_batches(c.table, 6);

  // Rows cluster by patient (shared latent), so the unit of analysis is the
  // patient mean, not the row.
  const auto tar_idx = c.table.feature_index("tar");
  std::map<std::string, std::pair<double, long>> by_patient;
  for (const auto& r : c.table.rows) {
    auto& acc = by_patient[r.patient_id];
    acc.first += r.features[tar_idx];
    acc.second += 1;
  }
  std::vector<std::vector<double>> batch_means(6);
  double grand = 0;
  long total = 0;
  for (const auto& [id, acc] : by_patient) {
    const double m = acc.first / acc.second;
    batch_means[plan.assignment.at(id)].push_back(m);
    grand += m;
    ++total;
  }
  grand /= total;
  for (int b = 0; b < 6; ++b) {
    const auto& v = batch_means[b];
    REQUIRE(v.size() > 5);
    double mean = 0;
    for (double x : v) mean += x;
    mean /= v.size();
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double se = std::sqrt(ss / (v.size() - 1) / v.size());
    CHECK(std::abs(mean - grand) < 3.0 * se + 1e-12);
  }
}

TEST_CASE("gen_cohort: manifest records the generating model") {
  CohortSpec spec;
  spec.n_patients = 30;
  spec.seed = 41;
  const Cohort c = gen_cohort(spec);
  CHECK(c.manifest.at("truth").at("coef").size() == 9);
  CHECK(c.manifest.at("truth").at("intercept").is_number());
  CHECK(c.manifest.at("seed") == 41);
}

TEST_CASE("gen_cohort: infeasible marginals are a configuration error") {
  CohortSpec spec;
  spec.education_probs = {0.5, 0.2};  // sums to 0.7
  CHECK_THROWS_AS(gen_cohort(spec), ConfigError);
  spec = CohortSpec{};
  spec.base_risk = 0.0;
  CHECK_THROWS_AS(gen_cohort(spec), ConfigError);
}

TEST_CASE("gen_trace: degenerate process is constant at the mean") {
  TraceParams p;
  p.mean_mgdl = 120.0;
  p.volatility = 0.0;
  p.meal_spikes_per_day = 0.0;
  const auto trace = gen_trace("p1", parse_date("2023-01-02"), 2, p, 7);
  REQUIRE(trace.size() == 2 * 288);
  for (const auto& r : trace) CHECK(r.glucose_mgdl == doctest::Approx(120.0));
  // 5-minute cadence
  CHECK(trace[1].timestamp.minutes - trace[0].timestamp.minutes == 5);
}

TEST_CASE("gen_trace: identical seeds give identical traces") {
  TraceParams p;
  const auto a = gen_trace("p1", parse_date("2023-01-02"), 3, p, 99);
  const auto b = gen_trace("p1", parse_date("2023-01-02"), 3, p, 99);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(a[i].glucose_mgdl == b[i].glucose_mgdl);
}

TEST_CASE("gen_trace: high-mean traces produce severe events via cgmfeat") {
  TraceParams p;
  p.mean_mgdl = 285.0;
  p.volatility = 6.0;
  p.meal_spikes_per_day = 2.0;
  const auto trace = gen_trace("p1", parse_date("2023-01-02"), 14, p, 5);
  const auto events =
      cgmfeat::segment_events(trace, 250.0, cgmfeat::Direction::above, 180.0);
  int severe = 0;
  for (const auto& e : events) severe += e.severe ? 1 : 0;
  CHECK(severe >= 2);  // at least one per week on average
}

TEST_CASE("gen_trace_cohort: featurize path yields a valid labeled table") {
  CohortSpec spec;
  spec.n_patients = 12;
  spec.weeks_min = 2;
  spec.weeks_max = 4;
  spec.date_span_days = 90;
  spec.seed = 13;
  const TraceCohort tc = gen_trace_cohort(spec);
  REQUIRE(tc.traces.size() == 12);
  const auto table = cgmfeat::featurize(tc.traces, tc.meta);
  CHECK(table.rows.size() >= 12);
  const auto p = std::filesystem::temp_directory_path() / "trace_weekly.csv";
  dataio::write_weekly_csv(p, table);
  CHECK(dataio::load_weekly_csv(p).rejects.empty());
}
