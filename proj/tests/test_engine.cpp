#include <doctest.h>

#include <algorithm>
#include <set>

#include "retrainaudit/engine.hpp"
#include "retrainaudit/rng.hpp"
#include "retrainaudit/synthgen.hpp"

using namespace retrainaudit;
using namespace retrainaudit::engine;

namespace {

dataio::WeeklyTable fixture_table(int n_patients = 60, std::uint64_t seed = 7) {
  synthgen::CohortSpec spec;
  spec.n_patients = n_patients;
  spec.weeks_min = 3;
  spec.weeks_max = 12;
  spec.date_span_days = 180;
  spec.base_risk = 0.3;
  spec.seed = seed;
  return synthgen::gen_cohort(spec).table;
}

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.n_batches = 4;
  cfg.n_seeds = 2;
  cfg.bootstrap_b = 5;
  cfg.rashomon_m = 5;
  cfg.rashomon_epsilon = 0.05;
  cfg.train.max_iter = 60;
  cfg.attr_kinds = {dataio::AttrKind::sex, dataio::AttrKind::age};
  cfg.master_seed = 9;
  cfg.n_threads = 2;
  return cfg;
}

std::vector<std::vector<std::int32_t>> toy_batches() {
  // batch sizes 10, 12, 8, 10, 10 with disjoint ascending row ids
  std::vector<std::vector<std::int32_t>> batches;
  std::int32_t next = 0;
  for (int size : {10, 12, 8, 10, 10}) {
    std::vector<std::int32_t> b;
    for (int i = 0; i < size; ++i) b.push_back(next++);
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace

TEST_CASE("training_rows_for: strategy definitions") {
  const auto batches = toy_batches();

  SUBCASE("full at t=3 is exactly batches 0..2 concatenated") {
    const auto rows = training_rows_for(Strategy::full, 3, batches, 1);
    CHECK(rows.size() == 30);
    std::vector<std::int32_t> expect;
    for (int k = 0; k < 3; ++k)
      expect.insert(expect.end(), batches[k].begin(), batches[k].end());
    std::sort(expect.begin(), expect.end());
    CHECK(rows == expect);
  }
  SUBCASE("last at t=3 is batch 2 only") {
    CHECK(training_rows_for(Strategy::last, 3, batches, 1) == batches[2]);
  }
  SUBCASE("none uses batch 0") {
    CHECK(training_rows_for(Strategy::none, 1, batches, 1) == batches[0]);
  }
  SUBCASE("subset at t=5 samples mean batch size 10 from the 50-row union") {
    const auto rows = training_rows_for(Strategy::subset, 5, batches, 42);
    CHECK(rows.size() == 10);
    // sample is without replacement and drawn from the union
    std::set<std::int32_t> distinct(rows.begin(), rows.end());
    CHECK(distinct.size() == rows.size());
    for (auto r : rows) {
      CHECK(r >= 0);
      CHECK(r < 50);
    }
    // deterministic under seed
    CHECK(training_rows_for(Strategy::subset, 5, batches, 42) == rows);
    CHECK(training_rows_for(Strategy::subset, 5, batches, 43) != rows);
  }
  SUBCASE("strategy nesting: last and subset are subsets of full") {
    for (int t = 1; t <= 4; ++t) {
      const auto full = training_rows_for(Strategy::full, t, batches, 1);
      const auto last = training_rows_for(Strategy::last, t, batches, 1);
      const auto sub = training_rows_for(Strategy::subset, t, batches, 7);
      CHECK(std::includes(full.begin(), full.end(), last.begin(), last.end()));
      CHECK(std::includes(full.begin(), full.end(), sub.begin(), sub.end()));
    }
  }
}

TEST_CASE("bootstrap_ensemble: reproducible, resample-sized, diverse") {
  const auto table = fixture_table(40, 3);
  const auto attrs = dataio::resolve_attributes(table, {dataio::AttrKind::sex});
  const CohortIndex cohort = CohortIndex::build(table, attrs);
  std::vector<std::int32_t> rows(cohort.labels.size());
  std::iota(rows.begin(), rows.end(), 0);
  const learner::Dataset train = features_for(cohort, rows, false);

  learner::TrainConfig cfg;
  cfg.max_iter = 80;
  const auto models = bootstrap_ensemble(train, 6, 11, cfg, learner::ModelKind::logreg);
  REQUIRE(models.size() == 6);
  const auto again = bootstrap_ensemble(train, 6, 11, cfg, learner::ModelKind::logreg);
  for (std::size_t b = 0; b < models.size(); ++b)
    CHECK(models[b].weights == again[b].weights);
  // different derived seeds give generally different weights on noisy data
  bool any_diff = false;
  for (std::size_t b = 1; b < models.size(); ++b)
    any_diff = any_diff || models[b].weights != models[0].weights;
  CHECK(any_diff);
}

TEST_CASE("rashomon_set: epsilon boundary behavior") {
  const auto table = fixture_table(50, 13);
  const auto attrs = dataio::resolve_attributes(table, {dataio::AttrKind::sex});
  const CohortIndex cohort = CohortIndex::build(table, attrs);
  std::vector<std::int32_t> rows(cohort.labels.size());
  std::iota(rows.begin(), rows.end(), 0);
  // split rows: even -> train, odd -> validation
  std::vector<std::int32_t> tr, val;
  for (auto r : rows) ((r % 2 == 0) ? tr : val).push_back(r);
  const learner::Dataset dtrain = features_for(cohort, tr, false);
  const learner::Dataset dval = features_for(cohort, val, false);

  learner::TrainConfig cfg;
  cfg.max_iter = 80;
  SUBCASE("epsilon = 1 keeps all M candidates") {
    const auto rr = rashomon_set(dtrain, dval, 8, 1.0, 21, cfg,
                                 learner::ModelKind::logreg);
    CHECK(rr.members.size() == 8);
    CHECK(rr.n_candidates == 8);
  }
  SUBCASE("epsilon = 0 keeps only AUC-maximal candidates") {
    const auto rr = rashomon_set(dtrain, dval, 8, 0.0, 21, cfg,
                                 learner::ModelKind::logreg);
    CHECK(rr.members.size() >= 1);
    for (double a : rr.member_auc) CHECK(a == doctest::Approx(rr.best_auc));
  }
  SUBCASE("membership deterministic under seed") {
    const auto r1 = rashomon_set(dtrain, dval, 8, 0.02, 33, cfg,
                                 learner::ModelKind::logreg);
    const auto r2 = rashomon_set(dtrain, dval, 8, 0.02, 33, cfg,
                                 learner::ModelKind::logreg);
    CHECK(r1.members.size() == r2.members.size());
    CHECK(r1.member_auc == r2.member_auc);
    CHECK(r1.members.size() >= 1);
    CHECK(r1.members.size() <= 8);
  }
}

TEST_CASE("run: ledger completeness and structure") {
  const auto table = fixture_table();
  ExperimentConfig cfg = small_config();
  const RunResult result = run(table, cfg);

  // main-model cell count = sum over phases of evaluation-set size
  std::map<std::tuple<int, int, int>, std::size_t> eval_sizes;  // schema,seed,phase
  for (const Block& b : result.ledger.blocks) {
    if (b.kind != ReplicaKind::main) continue;
    const auto key = std::tuple(static_cast<int>(b.schema), b.seed, b.phase);
    auto it = eval_sizes.find(key);
    if (it == eval_sizes.end())
      eval_sizes[key] = b.instances.size();
    else  // same eval set for every strategy within (schema, seed, phase)
      CHECK(it->second == b.instances.size());
    CHECK(!b.instances.empty());
    CHECK(b.scores.size() == b.instances.size());
    CHECK(b.preds.size() == b.instances.size());
    // no abstention configured: every cell carries a prediction
    for (auto p : b.preds) CHECK((p == 0 || p == 1));
  }
  // retrospective: holdout identical across phases within a seed
  for (int seed = 0; seed < cfg.n_seeds; ++seed) {
    const Block* p1 = result.ledger.find(Schema::retrospective, Strategy::full,
                                         seed, 1, ReplicaKind::main, 0);
    REQUIRE(p1 != nullptr);
    for (int t = 2; t < cfg.n_batches; ++t) {
      const Block* pt = result.ledger.find(Schema::retrospective, Strategy::full,
                                           seed, t, ReplicaKind::main, 0);
      REQUIRE(pt != nullptr);
      CHECK(pt->instances == p1->instances);
    }
  }
  // bootstrap replica count
  const Block* boot = result.ledger.find(Schema::prospective, Strategy::full, 0,
                                         1, ReplicaKind::bootstrap, cfg.bootstrap_b - 1);
  CHECK(boot != nullptr);
}

TEST_CASE("run: patient-level leakage freedom across all arms") {
  const auto table = fixture_table(50, 17);
  ExperimentConfig cfg = small_config();
  const RunResult result = run(table, cfg);

  // training patients recorded per phase via re-derivation: rebuild plans
  // the same way the engine does and intersect with evaluation instances.
  const CohortIndex& cohort = result.cohort;
  for (const Block& b : result.ledger.blocks) {
    if (b.kind != ReplicaKind::main) continue;
    std::set<std::string> eval_patients;
    for (auto inst : b.instances)
      eval_patients.insert(cohort.patient_of_row[inst]);

    // retrospective: holdout patients must never appear in any batch;
    // prospective: evaluation batch t disjoint from batches 0..t-1 by
    // patient-unique batching. Verified through the plan reconstruction in
    // the prospective case and the holdout draw in the retrospective case.
    if (b.schema == Schema::retrospective) {
      const auto holdout = dataio::make_holdout(
          table, cfg.holdout_fraction,
          derive_seed(cfg.master_seed, 0x484f4c44ULL,
                      static_cast<std::uint64_t>(b.seed)),
          cohort.attrs.front());
      CHECK(eval_patients == holdout);
      const auto plan = dataio::make_batches(table, cfg.n_batches, holdout);
      for (const auto& p : eval_patients) CHECK(plan.assignment.count(p) == 0);
    } else {
      const auto plan = dataio::make_batches(table, cfg.n_batches);
      for (const auto& p : eval_patients) CHECK(plan.assignment.at(p) == b.phase);
    }
  }
}

TEST_CASE("run: strategy none freezes the model across phases") {
  const auto table = fixture_table(40, 23);
  ExperimentConfig cfg = small_config();
  cfg.strategies = {Strategy::none};
  cfg.schemas = {Schema::retrospective};
  cfg.n_seeds = 2;
  const RunResult result = run(table, cfg);

  for (int seed = 0; seed < cfg.n_seeds; ++seed) {
    const Block* first = result.ledger.find(Schema::retrospective, Strategy::none,
                                            seed, 1, ReplicaKind::main, 0);
    REQUIRE(first != nullptr);
    for (int t = 2; t < cfg.n_batches; ++t) {
      const Block* bt = result.ledger.find(Schema::retrospective, Strategy::none,
                                           seed, t, ReplicaKind::main, 0);
      REQUIRE(bt != nullptr);
      CHECK(bt->scores == first->scores);  // frozen model, fixed holdout
      CHECK(bt->preds == first->preds);
    }
  }
}

TEST_CASE("run: deterministic ledger across parallelism levels") {
  const auto table = fixture_table(40, 29);
  ExperimentConfig cfg = small_config();
  cfg.n_seeds = 2;

  cfg.n_threads = 1;
  const RunResult r1 = run(table, cfg);
  cfg.n_threads = 2;
  const RunResult r2 = run(table, cfg);
  cfg.n_threads = 4;
  const RunResult r3 = run(table, cfg);

  auto equal_ledgers = [](const Ledger& a, const Ledger& b) {
    if (a.blocks.size() != b.blocks.size()) return false;
    for (std::size_t i = 0; i < a.blocks.size(); ++i) {
      if (a.blocks[i].key() != b.blocks[i].key()) return false;
      if (a.blocks[i].instances != b.blocks[i].instances) return false;
      if (a.blocks[i].scores != b.blocks[i].scores) return false;
      if (a.blocks[i].preds != b.blocks[i].preds) return false;
    }
    return true;
  };
  CHECK(equal_ledgers(r1.ledger, r2.ledger));
  CHECK(equal_ledgers(r1.ledger, r3.ledger));
}

TEST_CASE("run: abstention marks cells and breaks no invariants") {
  const auto table = fixture_table(60, 31);
  ExperimentConfig cfg = small_config();
  cfg.schemas = {Schema::retrospective};
  cfg.n_seeds = 1;
  cfg.rashomon_m = 0;
  abstain::Config ac;
  ac.alpha = 0.2;  // aggressive budget so some abstentions happen
  cfg.abstention = ac;
  const RunResult result = run(table, cfg);

  long abstained = 0, cells = 0;
  for (const Block& b : result.ledger.blocks) {
    for (std::size_t i = 0; i < b.instances.size(); ++i) {
      ++cells;
      if (b.abstained[i]) {
        ++abstained;
        CHECK(b.preds[i] == -1);  // abstained cells carry no prediction
      } else {
        CHECK((b.preds[i] == 0 || b.preds[i] == 1));
      }
    }
  }
  CHECK(abstained > 0);
  CHECK(abstained < cells);
  CHECK(!result.abstentions.empty());
  for (const auto& rec : result.abstentions)
    CHECK(rec.abstained == (rec.distance > rec.tau));
}

TEST_CASE("run: empty evaluation batches are skipped with a notice") {
  // all patients start the same week -> prospective batches 1.. are empty
  dataio::WeeklyTable t;
  const Date base = parse_date("2023-01-02");
  for (int p = 0; p < 12; ++p) {
    for (int w = 0; w < 4; ++w) {
      dataio::WeeklyObservation o;
      o.patient_id = "p" + std::to_string(p);
      o.week_start = Date{base.days + 7 * w};
      o.features.assign(t.feature_names.size(), 0.1);
      o.features[0] = 0.5 + 0.01 * p;
      o.features[1] = 0.4 - 0.01 * p;
      o.features[2] = 1.0 - o.features[0] - o.features[1];
      o.label = (p + w) % 2;
      t.rows.push_back(o);
    }
    dataio::PatientMeta m;
    m.patient_id = "p" + std::to_string(p);
    m.sex = p % 2 ? dataio::Sex::female : dataio::Sex::male;
    m.age_years = 10.0 + p;
    t.meta.emplace(m.patient_id, m);
  }
  ExperimentConfig cfg = small_config();
  cfg.schemas = {Schema::prospective};
  cfg.strategies = {Strategy::full};
  cfg.rashomon_m = 0;
  cfg.bootstrap_b = 2;
  const RunResult result = run(t, cfg);
  CHECK(result.ledger.blocks.empty());  // nothing to evaluate
  bool skipped_notice = false;
  for (const auto& ti : result.train_infos)
    skipped_notice = skipped_notice || (ti.skipped && !ti.skip_reason.empty());
  CHECK(skipped_notice);
}
