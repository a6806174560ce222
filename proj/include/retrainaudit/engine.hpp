#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "retrainaudit/abstain.hpp"
#include "retrainaudit/dataio.hpp"
#include "retrainaudit/learner.hpp"

namespace retrainaudit::engine {

enum class Strategy : std::uint8_t { none = 0, last = 1, subset = 2, full = 3 };
enum class Schema : std::uint8_t { prospective = 0, retrospective = 1 };
enum class ReplicaKind : std::uint8_t { main = 0, bootstrap = 1, rashomon = 2 };

Strategy strategy_from_string(std::string_view s);
Schema schema_from_string(std::string_view s);
std::string to_string(Strategy s);
std::string to_string(Schema s);
std::string to_string(ReplicaKind k);

struct ExperimentConfig {
  std::vector<Strategy> strategies = {Strategy::none, Strategy::last,
                                      Strategy::subset, Strategy::full};
  std::vector<Schema> schemas = {Schema::prospective, Schema::retrospective};
  int n_batches = 6;
  double holdout_fraction = 0.10;
  int n_seeds = 10;       // retrospective repetitions
  int bootstrap_b = 30;   // SC ensemble size
  int rashomon_m = 20;    // candidate count; 0 disables Rashomon analysis
  double rashomon_epsilon = 0.01;
  std::vector<dataio::AttrKind> attr_kinds = {
      dataio::AttrKind::sex, dataio::AttrKind::age, dataio::AttrKind::education,
      dataio::AttrKind::income};
  std::map<dataio::AttrKind, double> attr_overrides;
  learner::TrainConfig train;
  learner::ModelKind model_kind = learner::ModelKind::logreg;
  double decision_threshold = 0.5;
  std::optional<abstain::Config> abstention;
  std::uint64_t master_seed = 1;
  int n_threads = 0;  // 0 = hardware concurrency

  void validate() const;
};

// Immutable per-run view of the cohort: features, labels and group labels
// addressed by row index. Row index doubles as the ledger instance id.
struct CohortIndex {
  std::vector<std::string> feature_names;
  Matrix clinical;
  std::vector<int> labels;
  std::vector<std::string> patient_of_row;
  std::vector<Date> week_of_row;
  std::vector<dataio::ProtectedAttr> attrs;
  // groups[a][row] = group of the row's patient under attrs[a]
  std::vector<std::vector<metrics::GroupId>> groups;
  std::map<std::string, std::vector<std::int32_t>> rows_by_patient;

  static CohortIndex build(const dataio::WeeklyTable& table,
                           const std::vector<dataio::ProtectedAttr>& attrs);
};

// Rows per batch (sorted), derived from a BatchPlan.
std::vector<std::vector<std::int32_t>> batch_rows(const CohortIndex& cohort,
                                                  const dataio::BatchPlan& plan);

// Training rows for a strategy at phase t (1-based): full = batches 0..t-1,
// last = batch t-1, none = batch 0, subset = seeded sample without
// replacement from the full union, sized to the mean batch row count.
std::vector<std::int32_t> training_rows_for(
    Strategy strategy, int t,
    const std::vector<std::vector<std::int32_t>>& batches, std::uint64_t seed,
    std::vector<std::string>* warnings = nullptr);

// Assembles the learner view of a row set. include_protected appends one
// indicator column per attribute (B = 1, A = 0, missing = 0.5).
learner::Dataset features_for(const CohortIndex& cohort,
                              std::span<const std::int32_t> rows,
                              bool include_protected);

// B models fit on with-replacement resamples of the training set. A
// single-class resample is redrawn up to 10 times, then replaced by a
// constant-score model with a warning.
std::vector<learner::Model> bootstrap_ensemble(
    const learner::Dataset& train, int b, std::uint64_t seed,
    const learner::TrainConfig& cfg, learner::ModelKind kind,
    std::vector<std::string>* warnings = nullptr);

struct RashomonResult {
  std::vector<learner::Model> members;  // validation AUC within epsilon of best
  std::vector<double> member_auc;
  int n_candidates = 0;
  double best_auc = 0.0;
};

// Candidates are bootstrap resamples of the training set crossed with an l2
// jitter grid {0.25, 0.5, 1, 2, 4} x base; survivors score within epsilon of
// the best validation AUC. Throws learner::TrainError if every candidate is
// degenerate.
RashomonResult rashomon_set(const learner::Dataset& train,
                            const learner::Dataset& validation, int m,
                            double epsilon, std::uint64_t seed,
                            const learner::TrainConfig& cfg,
                            learner::ModelKind kind);

// ---------------------------------------------------------------------------
// Prediction ledger

struct Block {
  Schema schema{};
  Strategy strategy{};
  int seed = 0;
  int phase = 0;
  ReplicaKind kind{};
  int replica = 0;
  std::vector<std::int32_t> instances;
  std::vector<float> scores;
  std::vector<std::int8_t> preds;      // -1 where abstained
  std::vector<std::uint8_t> abstained;

  auto key() const {
    return std::tuple(static_cast<int>(schema), static_cast<int>(strategy),
                      seed, phase, static_cast<int>(kind), replica);
  }
};

struct Ledger {
  std::vector<Block> blocks;  // sorted by key after finalize
  void finalize();
  const Block* find(Schema schema, Strategy strategy, int seed, int phase,
                    ReplicaKind kind, int replica) const;
};

struct AbstentionRow {
  Schema schema{};
  Strategy strategy{};
  int seed = 0;
  int phase = 0;
  std::int32_t instance = 0;
  double distance = 0.0;
  double tau = 0.0;
  bool abstained = false;
  double score = 0.0;
};

struct TrainInfo {
  Schema schema{};
  Strategy strategy{};
  int seed = 0;
  int phase = 0;
  int n_train = 0;
  double train_pos_rate = 0.0;
  double tau = 0.0;             // NaN when abstention inactive
  bool abstention_active = false;
  int rashomon_candidates = 0;
  int rashomon_members = 0;
  bool skipped = false;
  std::string skip_reason;
};

struct RunResult {
  CohortIndex cohort;
  Ledger ledger;
  std::vector<AbstentionRow> abstentions;
  std::vector<TrainInfo> train_infos;
  std::vector<std::string> warnings;
  int n_phases = 0;
};

// Executes every configured (schema, seed, strategy) arm. Deterministic for
// a fixed master seed at any parallelism level: work is keyed structurally
// and merged in job order.
RunResult run(const dataio::WeeklyTable& table, const ExperimentConfig& cfg);

}  // namespace retrainaudit::engine
