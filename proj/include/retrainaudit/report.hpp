#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "retrainaudit/engine.hpp"

namespace retrainaudit::report {

// One metric record: a (schema, strategy, seed, phase, attribute) cell of
// the experiment, in baseline or retained-only (post-abstention) form.
struct PhaseReport {
  engine::Schema schema{};
  engine::Strategy strategy{};
  int seed = 0;
  int phase = 0;
  std::string attr;
  bool retained_only = false;

  int n_eval = 0;
  int n_train = 0;
  double train_pos_rate = 0.0;
  int n_group_a = 0;
  int n_group_b = 0;

  Stat auc, auc_a, auc_b, auc_diff;
  Stat eo, dp;
  Stat mean_sc, oa, sa;
  Stat flip_rate;  // transition phase -> phase+1
  Stat dpr, dr;
  Stat abstention_rate;

  nlohmann::json to_json() const;
};

// Everything the metric layer needs, decoupled from how it was produced so
// `run` and `report` share one code path.
struct InstanceInfo {
  std::string patient;
  Date week{};
  int label = 0;
  std::vector<metrics::GroupId> groups;  // one per attribute
};

struct ReportInput {
  std::vector<std::string> attr_names;
  std::vector<InstanceInfo> instances;
  engine::Ledger ledger;
  std::vector<engine::AbstentionRow> abstentions;
  std::vector<engine::TrainInfo> train_infos;
  int n_phases = 0;
  double decision_threshold = 0.5;
  bool abstention_enabled = false;
};

ReportInput make_report_input(const engine::RunResult& run,
                              const engine::ExperimentConfig& cfg);

std::vector<PhaseReport> compute_phase_reports(const ReportInput& input);

// Prevalence of instability per protected subgroup (the Table II shape).
struct SubgroupStability {
  engine::Schema schema{};
  engine::Strategy strategy{};
  int seed = 0;
  std::string attr;
  std::string subgroup;  // "A" or "B"
  Stat pct_flip_unstable;
  Stat pct_tsc_unstable;
  Stat pct_high_abstention;  // individuals with > 10% abstained weekly predictions
  int n_individuals = 0;
};

std::vector<SubgroupStability> compute_subgroup_stability(const ReportInput& input);

struct EquityRow {
  engine::Schema schema{};
  engine::Strategy strategy{};
  std::string attr;
  long cells_a = 0, cells_b = 0;
  long abstained_a = 0, abstained_b = 0;
  Stat rate_a, rate_b;
};

std::vector<EquityRow> compute_equity(const ReportInput& input);

// Mean and normal-approximation 95% CI across seeds; undefined cells are
// excluded and counted.
struct AggCell {
  Stat mean;
  double ci_lo = 0, ci_hi = 0;
  int n_used = 0;
  int n_undefined = 0;
  bool degenerate = false;  // single defined value
};
AggCell aggregate_cell(std::span<const Stat> values);

// Writes the full output set: ledger + instances + train info + abstention
// log + equity tables + phase reports + aggregated metric tables + plot data
// + manifest.
void write_outputs(const std::filesystem::path& outdir, const ReportInput& input,
                   const std::vector<PhaseReport>& reports,
                   nlohmann::json manifest);

// Rebuilds a ReportInput from a run directory (ledger.csv, instances.csv,
// train_info.csv, abstention_log.csv, manifest.json).
ReportInput read_run_dir(const std::filesystem::path& outdir);

}  // namespace retrainaudit::report
