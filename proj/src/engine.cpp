#include "retrainaudit/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <tuple>

#include "retrainaudit/metrics.hpp"
#include "retrainaudit/parallel.hpp"
#include "retrainaudit/rng.hpp"

namespace retrainaudit::engine {

Strategy strategy_from_string(std::string_view s) {
  const std::string v = lower(s);
  if (v == "none" || v == "no") return Strategy::none;
  if (v == "last") return Strategy::last;
  if (v == "subset" || v == "sub") return Strategy::subset;
  if (v == "full") return Strategy::full;
  throw ConfigError("unknown strategy: '" + std::string(s) + "'");
}

Schema schema_from_string(std::string_view s) {
  const std::string v = lower(s);
  if (v == "prospective") return Schema::prospective;
  if (v == "retrospective") return Schema::retrospective;
  throw ConfigError("unknown schema: '" + std::string(s) + "'");
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::none: return "none";
    case Strategy::last: return "last";
    case Strategy::subset: return "subset";
    case Strategy::full: return "full";
  }
  return "?";
}

std::string to_string(Schema s) {
  return s == Schema::prospective ? "prospective" : "retrospective";
}

std::string to_string(ReplicaKind k) {
  switch (k) {
    case ReplicaKind::main: return "main";
    case ReplicaKind::bootstrap: return "bootstrap";
    case ReplicaKind::rashomon: return "rashomon";
  }
  return "?";
}

void ExperimentConfig::validate() const {
  if (strategies.empty()) throw ConfigError("no strategies configured");
  if (schemas.empty()) throw ConfigError("no schemas configured");
  if (n_batches < 2) throw ConfigError("n_batches must be >= 2");
  if (!(holdout_fraction > 0 && holdout_fraction < 1))
    throw ConfigError("holdout_fraction must be in (0,1)");
  if (n_seeds < 1) throw ConfigError("n_seeds must be >= 1");
  if (bootstrap_b < 2) throw ConfigError("bootstrap must be >= 2");
  if (rashomon_m != 0 && rashomon_m < 2)
    throw ConfigError("rashomon must be 0 (disabled) or >= 2");
  if (rashomon_epsilon < 0) throw ConfigError("rashomon_epsilon must be >= 0");
  if (!(decision_threshold > 0 && decision_threshold < 1))
    throw ConfigError("decision_threshold must be in (0,1)");
  if (attr_kinds.empty()) throw ConfigError("no protected attributes configured");
}

CohortIndex CohortIndex::build(const dataio::WeeklyTable& table,
                               const std::vector<dataio::ProtectedAttr>& attrs) {
  CohortIndex c;
  c.feature_names = table.feature_names;
  c.attrs = attrs;
  const std::size_t n = table.rows.size();
  c.clinical = Matrix(n, table.feature_names.size());
  c.labels.resize(n);
  c.patient_of_row.resize(n);
  c.week_of_row.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = table.rows[i];
    std::copy(r.features.begin(), r.features.end(), c.clinical.row(i));
    c.labels[i] = r.label;
    c.patient_of_row[i] = r.patient_id;
    c.week_of_row[i] = r.week_start;
    c.rows_by_patient[r.patient_id].push_back(static_cast<std::int32_t>(i));
  }
  for (const auto& attr : attrs)
    c.groups.push_back(dataio::row_groups(table, attr));
  return c;
}

std::vector<std::vector<std::int32_t>> batch_rows(const CohortIndex& cohort,
                                                  const dataio::BatchPlan& plan) {
  std::vector<std::vector<std::int32_t>> out(plan.n_batches);
  for (const auto& [patient, batch] : plan.assignment) {
    const auto it = cohort.rows_by_patient.find(patient);
    if (it == cohort.rows_by_patient.end()) continue;
    out[batch].insert(out[batch].end(), it->second.begin(), it->second.end());
  }
  for (auto& rows : out) std::sort(rows.begin(), rows.end());
  return out;
}

std::vector<std::int32_t> training_rows_for(
    Strategy strategy, int t,
    const std::vector<std::vector<std::int32_t>>& batches, std::uint64_t seed,
    std::vector<std::string>* warnings) {
  if (t < 1 || t > static_cast<int>(batches.size()))
    throw InternalError("training_rows_for: phase out of range");

  auto union_of = [&](int upto) {
    std::vector<std::int32_t> rows;
    for (int k = 0; k < upto; ++k)
      rows.insert(rows.end(), batches[k].begin(), batches[k].end());
    std::sort(rows.begin(), rows.end());
    return rows;
  };

  switch (strategy) {
    case Strategy::full:
      return union_of(t);
    case Strategy::last:
      return batches[t - 1];
    case Strategy::none:
      return batches[0];
    case Strategy::subset: {
      std::vector<std::int32_t> rows = union_of(t);
      const std::size_t size = static_cast<std::size_t>(
          std::llround(static_cast<double>(rows.size()) / t));
      if (size >= rows.size()) {
        if (size > rows.size() && warnings)
          warnings->push_back("subset size exceeds union; using full union");
        return rows;
      }
      std::mt19937_64 rng(derive_seed(seed, 0x53554253ULL));
      std::shuffle(rows.begin(), rows.end(), rng);
      rows.resize(size);
      std::sort(rows.begin(), rows.end());
      return rows;
    }
  }
  throw InternalError("training_rows_for: bad strategy");
}

learner::Dataset features_for(const CohortIndex& cohort,
                              std::span<const std::int32_t> rows,
                              bool include_protected) {
  learner::Dataset d;
  d.feature_names = cohort.feature_names;
  std::size_t extra = 0;
  if (include_protected) {
    for (const auto& attr : cohort.attrs)
      d.feature_names.push_back("prot_" + attr.name());
    extra = cohort.attrs.size();
  }
  d.x = Matrix(rows.size(), cohort.feature_names.size() + extra);
  d.y.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<std::size_t>(rows[i]);
    std::copy_n(cohort.clinical.row(r), cohort.clinical.cols, d.x.row(i));
    if (include_protected) {
      for (std::size_t a = 0; a < cohort.attrs.size(); ++a) {
        const metrics::GroupId g = cohort.groups[a][r];
        d.x.at(i, cohort.clinical.cols + a) =
            g == metrics::kNoGroup ? 0.5 : (g == metrics::kGroupB ? 1.0 : 0.0);
      }
    }
    d.y[i] = cohort.labels[r];
  }
  return d;
}

namespace {

learner::Dataset resample(const learner::Dataset& train, std::mt19937_64& rng) {
  const std::size_t n = train.x.rows;
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  learner::Dataset out;
  out.feature_names = train.feature_names;
  out.x = Matrix(n, train.x.cols);
  out.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = pick(rng);
    std::copy_n(train.x.row(src), train.x.cols, out.x.row(i));
    out.y[i] = train.y[src];
  }
  return out;
}

double positive_rate(std::span<const int> y) {
  if (y.empty()) return 0.0;
  double s = 0;
  for (int v : y) s += (v != 0);
  return s / static_cast<double>(y.size());
}

}  // namespace

std::vector<learner::Model> bootstrap_ensemble(
    const learner::Dataset& train, int b, std::uint64_t seed,
    const learner::TrainConfig& cfg, learner::ModelKind kind,
    std::vector<std::string>* warnings) {
  if (b < 2) throw ConfigError("bootstrap_ensemble: B must be >= 2");
  std::vector<learner::Model> models;
  models.reserve(b);
  for (int i = 0; i < b; ++i) {
    bool done = false;
    for (int attempt = 0; attempt < 10 && !done; ++attempt) {
      std::mt19937_64 rng(derive_seed(seed, 0x424f4f54ULL,
                                      static_cast<std::uint64_t>(i),
                                      static_cast<std::uint64_t>(attempt)));
      learner::Dataset sample = resample(train, rng);
      try {
        models.push_back(learner::fit(sample, cfg, kind));
        done = true;
      } catch (const learner::TrainError&) {
      }
    }
    if (!done) {
      if (warnings)
        warnings->push_back("bootstrap replica " + std::to_string(i) +
                            ": single-class resamples; using constant model");
      models.push_back(
          learner::constant_model(positive_rate(train.y), train.feature_names));
    }
  }
  return models;
}

RashomonResult rashomon_set(const learner::Dataset& train,
                            const learner::Dataset& validation, int m,
                            double epsilon, std::uint64_t seed,
                            const learner::TrainConfig& cfg,
                            learner::ModelKind kind) {
  if (m < 2) throw ConfigError("rashomon_set: M must be >= 2");
  if (validation.x.rows == 0)
    throw ConfigError("rashomon_set: empty validation table");

  static constexpr double kJitter[] = {0.25, 0.5, 1.0, 2.0, 4.0};
  struct Candidate {
    learner::Model model;
    double auc = 0.0;
  };
  std::vector<Candidate> candidates;
  for (int i = 0; i < m; ++i) {
    std::mt19937_64 rng(
        derive_seed(seed, 0x52415348ULL, static_cast<std::uint64_t>(i)));
    learner::Dataset sample = resample(train, rng);
    learner::TrainConfig jittered = cfg;
    jittered.l2 = cfg.l2 * kJitter[i % 5];
    try {
      Candidate c;
      c.model = learner::fit(sample, jittered, kind);
      std::vector<double> scores(validation.x.rows);
      for (std::size_t r = 0; r < validation.x.rows; ++r)
        scores[r] = c.model.predict_proba(validation.x.row_span(r));
      const Stat a = metrics::auc(scores, validation.y);
      c.auc = a.defined() ? a.value() : 0.5;
      candidates.push_back(std::move(c));
    } catch (const learner::TrainError&) {
    }
  }
  if (candidates.empty())
    throw learner::TrainError("rashomon_set: all candidates degenerate");

  RashomonResult out;
  out.n_candidates = static_cast<int>(candidates.size());
  out.best_auc = 0.0;
  for (const auto& c : candidates) out.best_auc = std::max(out.best_auc, c.auc);
  for (auto& c : candidates) {
    if (c.auc >= out.best_auc - epsilon) {
      out.members.push_back(std::move(c.model));
      out.member_auc.push_back(c.auc);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void Ledger::finalize() {
  std::sort(blocks.begin(), blocks.end(),
            [](const Block& a, const Block& b) { return a.key() < b.key(); });
}

const Block* Ledger::find(Schema schema, Strategy strategy, int seed, int phase,
                          ReplicaKind kind, int replica) const {
  const auto key = std::tuple(static_cast<int>(schema), static_cast<int>(strategy),
                              seed, phase, static_cast<int>(kind), replica);
  const auto it = std::lower_bound(
      blocks.begin(), blocks.end(), key,
      [](const Block& b, const auto& k) { return b.key() < k; });
  if (it == blocks.end() || it->key() != key) return nullptr;
  return &*it;
}

namespace {

struct PhaseArtifacts {
  learner::Model main;
  std::vector<learner::Model> bootstrap;
  std::vector<learner::Model> rashomon;
  std::optional<abstain::Abstainer> abstainer;
  int rashomon_candidates = 0;
};

struct ArmOutput {
  std::vector<Block> blocks;
  std::vector<AbstentionRow> abstentions;
  std::vector<TrainInfo> train_infos;
  std::vector<std::string> warnings;
};

// One (schema, seed, strategy) arm across all phases.
void run_arm(const CohortIndex& cohort, const ExperimentConfig& cfg,
             Schema schema, int seed, Strategy strategy,
             const std::vector<std::vector<std::int32_t>>& batches,
             const std::vector<std::int32_t>& holdout_rows, ArmOutput& out) {
  const int phases = cfg.n_batches - 1;
  std::optional<PhaseArtifacts> frozen;  // strategy none trains once

  for (int t = 1; t <= phases; ++t) {
    TrainInfo info;
    info.schema = schema;
    info.strategy = strategy;
    info.seed = seed;
    info.phase = t;

    const std::vector<std::int32_t>& eval_rows =
        schema == Schema::prospective ? batches[t] : holdout_rows;
    if (eval_rows.empty()) {
      info.skipped = true;
      info.skip_reason = "empty evaluation batch";
      out.train_infos.push_back(info);
      out.warnings.push_back(to_string(schema) + "/" + to_string(strategy) +
                             " seed " + std::to_string(seed) + " phase " +
                             std::to_string(t) + ": empty evaluation batch");
      continue;
    }

    PhaseArtifacts* art = nullptr;
    PhaseArtifacts fresh;
    if (strategy == Strategy::none && frozen) {
      art = &*frozen;
      // frozen model: training metadata repeats phase 1
      for (const auto& ti : out.train_infos)
        if (ti.phase == 1 && !ti.skipped) {
          info.n_train = ti.n_train;
          info.train_pos_rate = ti.train_pos_rate;
          break;
        }
    } else {
      const std::uint64_t arm_seed =
          derive_seed(cfg.master_seed, static_cast<std::uint64_t>(schema),
                      static_cast<std::uint64_t>(seed),
                      static_cast<std::uint64_t>(strategy),
                      static_cast<std::uint64_t>(t));
      std::vector<std::int32_t> train_rows =
          training_rows_for(strategy, t, batches, arm_seed, &out.warnings);
      if (train_rows.empty()) {
        info.skipped = true;
        info.skip_reason = "empty training set";
        out.train_infos.push_back(info);
        out.warnings.push_back(to_string(schema) + "/" + to_string(strategy) +
                               " seed " + std::to_string(seed) + " phase " +
                               std::to_string(t) + ": empty training set");
        continue;
      }
      learner::Dataset train =
          features_for(cohort, train_rows, cfg.train.include_protected);
      info.n_train = static_cast<int>(train_rows.size());
      info.train_pos_rate = positive_rate(train.y);
      std::vector<std::string> train_patients;
      train_patients.reserve(train_rows.size());
      for (auto r : train_rows) train_patients.push_back(cohort.patient_of_row[r]);

      try {
        fresh.main = learner::fit(train, cfg.train, cfg.model_kind);
      } catch (const learner::TrainError& e) {
        out.warnings.push_back(std::string("main model fallback: ") + e.what());
        fresh.main =
            learner::constant_model(info.train_pos_rate, train.feature_names);
      }
      fresh.main.decision_threshold = cfg.decision_threshold;

      fresh.bootstrap = bootstrap_ensemble(train, cfg.bootstrap_b,
                                           derive_seed(arm_seed, 1), cfg.train,
                                           cfg.model_kind, &out.warnings);
      for (auto& mm : fresh.bootstrap) mm.decision_threshold = cfg.decision_threshold;

      if (cfg.rashomon_m >= 2) {
        // Patient-level 80/20 split of the training rows scores candidates
        // on held-out data.
        std::vector<std::string> uniq = train_patients;
        std::sort(uniq.begin(), uniq.end());
        uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
        std::mt19937_64 rng(derive_seed(arm_seed, 2));
        std::shuffle(uniq.begin(), uniq.end(), rng);
        const std::size_t n_val = std::max<std::size_t>(1, uniq.size() / 5);
        std::set<std::string> val_patients(uniq.begin(), uniq.begin() + n_val);
        std::vector<std::int32_t> proper, val;
        for (auto r : train_rows)
          (val_patients.count(cohort.patient_of_row[r]) ? val : proper).push_back(r);
        if (!proper.empty() && !val.empty()) {
          learner::Dataset dproper =
              features_for(cohort, proper, cfg.train.include_protected);
          learner::Dataset dval =
              features_for(cohort, val, cfg.train.include_protected);
          try {
            RashomonResult rr =
                rashomon_set(dproper, dval, cfg.rashomon_m, cfg.rashomon_epsilon,
                             derive_seed(arm_seed, 3), cfg.train, cfg.model_kind);
            fresh.rashomon = std::move(rr.members);
            fresh.rashomon_candidates = rr.n_candidates;
            for (auto& mm : fresh.rashomon)
              mm.decision_threshold = cfg.decision_threshold;
          } catch (const learner::TrainError& e) {
            out.warnings.push_back(std::string("rashomon skipped: ") + e.what());
          }
        } else {
          out.warnings.push_back("rashomon skipped: degenerate patient split");
        }
      }

      if (cfg.abstention) {
        try {
          const Matrix x_std = fresh.main.standardizer.apply(train.x);
          fresh.abstainer = abstain::calibrate(
              x_std, train_patients, *cfg.abstention, derive_seed(arm_seed, 4));
        } catch (const abstain::CalibrationError& e) {
          out.warnings.push_back(std::string("abstention disabled for phase ") +
                                 std::to_string(t) + ": " + e.what());
        }
      }

      if (strategy == Strategy::none) {
        frozen = std::move(fresh);
        art = &*frozen;
      } else {
        art = &fresh;
      }
    }

    info.rashomon_candidates = art->rashomon_candidates;
    info.rashomon_members = static_cast<int>(art->rashomon.size());
    info.abstention_active = art->abstainer.has_value();
    info.tau = art->abstainer ? art->abstainer->tau
                              : std::numeric_limits<double>::quiet_NaN();

    // --- evaluate -----------------------------------------------------------
    learner::Dataset eval =
        features_for(cohort, eval_rows, cfg.train.include_protected);

    std::vector<std::uint8_t> abst(eval_rows.size(), 0);
    std::vector<float> main_scores(eval_rows.size());
    for (std::size_t i = 0; i < eval_rows.size(); ++i) {
      main_scores[i] =
          static_cast<float>(art->main.predict_proba(eval.x.row_span(i)));
    }
    if (art->abstainer) {
      for (std::size_t i = 0; i < eval_rows.size(); ++i) {
        const std::vector<double> xs =
            art->main.standardizer.apply(eval.x.row_span(i));
        const double dist = abstain::knn_distance(*art->abstainer, xs);
        const bool a = art->abstainer->should_abstain(dist);
        abst[i] = a ? 1 : 0;
        AbstentionRow rec;
        rec.schema = schema;
        rec.strategy = strategy;
        rec.seed = seed;
        rec.phase = t;
        rec.instance = eval_rows[i];
        rec.distance = dist;
        rec.tau = art->abstainer->tau;
        rec.abstained = a;
        rec.score = main_scores[i];
        out.abstentions.push_back(rec);
      }
    }

    auto emit_block = [&](ReplicaKind kind, int replica,
                          const learner::Model& model) {
      Block b;
      b.schema = schema;
      b.strategy = strategy;
      b.seed = seed;
      b.phase = t;
      b.kind = kind;
      b.replica = replica;
      b.instances = eval_rows;
      b.scores.resize(eval_rows.size());
      b.preds.resize(eval_rows.size());
      b.abstained.assign(abst.begin(), abst.end());
      for (std::size_t i = 0; i < eval_rows.size(); ++i) {
        const float s = kind == ReplicaKind::main
                            ? main_scores[i]
                            : static_cast<float>(
                                  model.predict_proba(eval.x.row_span(i)));
        b.scores[i] = s;
        b.preds[i] = abst[i] ? static_cast<std::int8_t>(-1)
                             : static_cast<std::int8_t>(
                                   s >= cfg.decision_threshold ? 1 : 0);
      }
      out.blocks.push_back(std::move(b));
    };

    emit_block(ReplicaKind::main, 0, art->main);
    for (std::size_t b = 0; b < art->bootstrap.size(); ++b)
      emit_block(ReplicaKind::bootstrap, static_cast<int>(b), art->bootstrap[b]);
    for (std::size_t r = 0; r < art->rashomon.size(); ++r)
      emit_block(ReplicaKind::rashomon, static_cast<int>(r), art->rashomon[r]);

    out.train_infos.push_back(info);
  }
}

}  // namespace

RunResult run(const dataio::WeeklyTable& table, const ExperimentConfig& cfg) {
  cfg.validate();

  const std::vector<dataio::ProtectedAttr> attrs =
      dataio::resolve_attributes(table, cfg.attr_kinds, cfg.attr_overrides);

  RunResult result;
  result.cohort = CohortIndex::build(table, attrs);
  result.n_phases = cfg.n_batches - 1;
  const CohortIndex& cohort = result.cohort;

  struct Job {
    Schema schema;
    int seed;
    Strategy strategy;
    const std::vector<std::vector<std::int32_t>>* batches;
    const std::vector<std::int32_t>* holdout_rows;
  };

  // Plans are shared across strategies within a (schema, seed) pair so every
  // strategy faces the same batches and the same holdout.
  struct Plan {
    std::vector<std::vector<std::int32_t>> batches;
    std::vector<std::int32_t> holdout_rows;
  };
  std::vector<std::unique_ptr<Plan>> plans;
  std::vector<Job> jobs;
  std::vector<std::string> plan_warnings;

  for (Schema schema : cfg.schemas) {
    const int seeds = schema == Schema::retrospective ? cfg.n_seeds : 1;
    for (int seed = 0; seed < seeds; ++seed) {
      auto plan = std::make_unique<Plan>();
      if (schema == Schema::retrospective) {
        const std::set<std::string> holdout = dataio::make_holdout(
            table, cfg.holdout_fraction,
            derive_seed(cfg.master_seed, 0x484f4c44ULL,
                        static_cast<std::uint64_t>(seed)),
            attrs.front());
        dataio::BatchPlan bp = dataio::make_batches(table, cfg.n_batches, holdout);
        for (const auto& w : bp.warnings) plan_warnings.push_back(w);
        plan->batches = batch_rows(cohort, bp);
        for (const auto& p : holdout) {
          const auto it = cohort.rows_by_patient.find(p);
          if (it != cohort.rows_by_patient.end())
            plan->holdout_rows.insert(plan->holdout_rows.end(),
                                      it->second.begin(), it->second.end());
        }
        std::sort(plan->holdout_rows.begin(), plan->holdout_rows.end());
      } else {
        dataio::BatchPlan bp = dataio::make_batches(table, cfg.n_batches);
        for (const auto& w : bp.warnings) plan_warnings.push_back(w);
        plan->batches = batch_rows(cohort, bp);
      }
      for (Strategy strategy : cfg.strategies)
        jobs.push_back(Job{schema, seed, strategy, &plan->batches,
                           &plan->holdout_rows});
      plans.push_back(std::move(plan));
    }
  }

  std::vector<ArmOutput> outputs(jobs.size());
  parallel_for(jobs.size(), cfg.n_threads, [&](std::size_t i) {
    const Job& job = jobs[i];
    run_arm(cohort, cfg, job.schema, job.seed, job.strategy, *job.batches,
            *job.holdout_rows, outputs[i]);
  });

  result.warnings = std::move(plan_warnings);
  for (auto& o : outputs) {
    for (auto& b : o.blocks) result.ledger.blocks.push_back(std::move(b));
    result.abstentions.insert(result.abstentions.end(), o.abstentions.begin(),
                              o.abstentions.end());
    result.train_infos.insert(result.train_infos.end(), o.train_infos.begin(),
                              o.train_infos.end());
    result.warnings.insert(result.warnings.end(), o.warnings.begin(),
                           o.warnings.end());
  }
  result.ledger.finalize();
  return result;
}

}  // namespace retrainaudit::engine
