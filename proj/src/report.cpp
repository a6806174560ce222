#include "retrainaudit/report.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "retrainaudit/csv.hpp"
#include "retrainaudit/metrics.hpp"

namespace retrainaudit::report {

using engine::Block;
using engine::ReplicaKind;
using engine::Schema;
using engine::Strategy;

namespace {

nlohmann::json stat_json(const Stat& s) {
  if (s.defined()) return s.value();
  return nlohmann::json{{"undefined", s.reason()}};
}

std::string stat_csv(const Stat& s) {
  return s.defined() ? fmt_double(s.value()) : std::string();
}

}  // namespace

nlohmann::json PhaseReport::to_json() const {
  nlohmann::json j;
  j["schema"] = engine::to_string(schema);
  j["strategy"] = engine::to_string(strategy);
  j["seed"] = seed;
  j["phase"] = phase;
  j["attr"] = attr;
  j["retained_only"] = retained_only;
  j["n_eval"] = n_eval;
  j["n_train"] = n_train;
  j["train_pos_rate"] = train_pos_rate;
  j["n_group_a"] = n_group_a;
  j["n_group_b"] = n_group_b;
  j["auc"] = stat_json(auc);
  j["auc_a"] = stat_json(auc_a);
  j["auc_b"] = stat_json(auc_b);
  j["auc_diff"] = stat_json(auc_diff);
  j["eo"] = stat_json(eo);
  j["dp"] = stat_json(dp);
  j["mean_sc"] = stat_json(mean_sc);
  j["oa"] = stat_json(oa);
  j["sa"] = stat_json(sa);
  j["flip_rate"] = stat_json(flip_rate);
  j["dpr"] = stat_json(dpr);
  j["dr"] = stat_json(dr);
  j["abstention_rate"] = stat_json(abstention_rate);
  return j;
}

ReportInput make_report_input(const engine::RunResult& run,
                              const engine::ExperimentConfig& cfg) {
  ReportInput in;
  for (const auto& a : run.cohort.attrs) in.attr_names.push_back(a.name());
  const std::size_t n = run.cohort.labels.size();
  in.instances.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    InstanceInfo& info = in.instances[i];
    info.patient = run.cohort.patient_of_row[i];
    info.week = run.cohort.week_of_row[i];
    info.label = run.cohort.labels[i];
    info.groups.reserve(run.cohort.groups.size());
    for (const auto& g : run.cohort.groups) info.groups.push_back(g[i]);
  }
  in.ledger = run.ledger;
  in.abstentions = run.abstentions;
  in.train_infos = run.train_infos;
  in.n_phases = run.n_phases;
  in.decision_threshold = cfg.decision_threshold;
  in.abstention_enabled = cfg.abstention.has_value();
  return in;
}

// ---------------------------------------------------------------------------

namespace {

using ArmKey = std::tuple<int, int, int>;  // schema, strategy, seed

struct PhaseBlocks {
  const Block* main = nullptr;
  std::vector<const Block*> boots;
  std::vector<const Block*> rash;
};

struct Arm {
  std::map<int, PhaseBlocks> phases;  // by phase t
};

std::map<ArmKey, Arm> group_arms(const engine::Ledger& ledger) {
  std::map<ArmKey, Arm> arms;
  for (const Block& b : ledger.blocks) {
    ArmKey key{static_cast<int>(b.schema), static_cast<int>(b.strategy), b.seed};
    PhaseBlocks& pb = arms[key].phases[b.phase];
    switch (b.kind) {
      case ReplicaKind::main: pb.main = &b; break;
      case ReplicaKind::bootstrap: pb.boots.push_back(&b); break;
      case ReplicaKind::rashomon: pb.rash.push_back(&b); break;
    }
  }
  return arms;
}

}  // namespace

std::vector<PhaseReport> compute_phase_reports(const ReportInput& in) {
  std::vector<PhaseReport> out;
  const double thr = in.decision_threshold;
  const std::size_t n_attrs = in.attr_names.size();

  std::map<std::tuple<int, int, int, int>, const engine::TrainInfo*> tinfo;
  for (const auto& ti : in.train_infos)
    tinfo[{static_cast<int>(ti.schema), static_cast<int>(ti.strategy), ti.seed,
           ti.phase}] = &ti;

  const auto arms = group_arms(in.ledger);
  for (const auto& [key, arm] : arms) {
    const auto schema = static_cast<Schema>(std::get<0>(key));
    const auto strategy = static_cast<Strategy>(std::get<1>(key));
    const int seed = std::get<2>(key);

    // Prediction chains across phases (index t-1) and per-phase SC.
    std::map<std::int32_t, std::vector<std::optional<int>>> base_chain, ret_chain;
    std::map<int, std::map<std::int32_t, double>> sc_at;
    auto chain_slot = [&](auto& chains, std::int32_t inst)
        -> std::vector<std::optional<int>>& {
      auto [it, inserted] = chains.try_emplace(
          inst, std::vector<std::optional<int>>(in.n_phases));
      return it->second;
    };

    for (const auto& [t, pb] : arm.phases) {
      if (!pb.main) continue;
      const Block& mb = *pb.main;
      for (std::size_t i = 0; i < mb.instances.size(); ++i) {
        const int pred = mb.scores[i] >= thr ? 1 : 0;
        chain_slot(base_chain, mb.instances[i])[t - 1] = pred;
        if (!mb.abstained[i])
          chain_slot(ret_chain, mb.instances[i])[t - 1] = pred;
      }
      if (pb.boots.size() >= 2) {
        auto& sc_map = sc_at[t];
        std::vector<int> ones(mb.instances.size(), 0);
        for (const Block* bb : pb.boots)
          for (std::size_t i = 0; i < bb->instances.size(); ++i)
            ones[i] += bb->scores[i] >= thr ? 1 : 0;
        for (std::size_t i = 0; i < mb.instances.size(); ++i)
          sc_map[mb.instances[i]] = metrics::self_consistency(
              ones[i], static_cast<int>(pb.boots.size()));
      }
    }

    const int n_variants = in.abstention_enabled ? 2 : 1;
    for (int variant = 0; variant < n_variants; ++variant) {
      const bool retained = variant == 1;
      const auto& chains = retained ? ret_chain : base_chain;

      for (const auto& [t, pb] : arm.phases) {
        if (!pb.main) continue;
        const Block& mb = *pb.main;

        std::vector<std::size_t> scope;
        for (std::size_t i = 0; i < mb.instances.size(); ++i)
          if (!retained || !mb.abstained[i]) scope.push_back(i);

        std::vector<double> scores;
        std::vector<int> labels, preds;
        scores.reserve(scope.size());
        for (std::size_t i : scope) {
          scores.push_back(mb.scores[i]);
          labels.push_back(in.instances[mb.instances[i]].label);
          preds.push_back(mb.scores[i] >= thr ? 1 : 0);
        }

        const Stat auc_all = metrics::auc(scores, labels);

        // Self-consistency over the scope.
        std::vector<double> sc_scope;
        std::vector<std::int32_t> sc_instances;
        if (auto it = sc_at.find(t); it != sc_at.end()) {
          for (std::size_t i : scope) {
            auto f = it->second.find(mb.instances[i]);
            if (f != it->second.end()) {
              sc_scope.push_back(f->second);
              sc_instances.push_back(mb.instances[i]);
            }
          }
        }
        const Stat mean_sc = sc_scope.empty()
                                 ? Stat::undefined("no-bootstrap")
                                 : Stat::of([&] {
                                     double s = 0;
                                     for (double v : sc_scope) s += v;
                                     return s / static_cast<double>(sc_scope.size());
                                   }());
        const Stat oa = sc_scope.empty() ? Stat::undefined("no-bootstrap")
                                         : metrics::overall_arbitrariness(sc_scope);

        // Flip rate for the transition t -> t+1.
        Stat flip_rate = Stat::undefined("no-next-phase");
        if (t < in.n_phases) {
          long flips = 0, evaluated = 0;
          for (const auto& [inst, chain] : chains) {
            if (chain[t - 1].has_value() && chain[t].has_value()) {
              ++evaluated;
              flips += (*chain[t - 1] != *chain[t]) ? 1 : 0;
            }
          }
          flip_rate = evaluated == 0
                          ? Stat::undefined("no-shared-instances")
                          : Stat::of(static_cast<double>(flips) /
                                     static_cast<double>(evaluated));
        }

        // Rashomon multiplicity over the scope.
        Stat dpr = Stat::undefined("rashomon-disabled");
        Stat dr = Stat::undefined("rashomon-disabled");
        if (!pb.rash.empty()) {
          std::vector<std::vector<std::int8_t>> vectors;
          vectors.reserve(pb.rash.size());
          for (const Block* rb : pb.rash) {
            std::vector<std::int8_t> v;
            v.reserve(scope.size());
            for (std::size_t i : scope)
              v.push_back(rb->scores[i] >= thr ? 1 : 0);
            vectors.push_back(std::move(v));
          }
          const metrics::Multiplicity m = metrics::multiplicity(vectors);
          dpr = Stat::of(m.dpr);
          dr = m.dr;
        }

        Stat abstention_rate = Stat::undefined("abstention-disabled");
        if (in.abstention_enabled) {
          long a = 0;
          for (std::size_t i = 0; i < mb.instances.size(); ++i)
            a += mb.abstained[i] ? 1 : 0;
          abstention_rate = Stat::of(static_cast<double>(a) /
                                     static_cast<double>(mb.instances.size()));
        }

        const engine::TrainInfo* ti = nullptr;
        if (auto f = tinfo.find({static_cast<int>(schema),
                                 static_cast<int>(strategy), seed, t});
            f != tinfo.end())
          ti = f->second;

        for (std::size_t a = 0; a < n_attrs; ++a) {
          PhaseReport r;
          r.schema = schema;
          r.strategy = strategy;
          r.seed = seed;
          r.phase = t;
          r.attr = in.attr_names[a];
          r.retained_only = retained;
          r.n_eval = static_cast<int>(scope.size());
          if (ti) {
            r.n_train = ti->n_train;
            r.train_pos_rate = ti->train_pos_rate;
          }
          r.auc = auc_all;
          r.mean_sc = mean_sc;
          r.oa = oa;
          r.flip_rate = flip_rate;
          r.dpr = dpr;
          r.dr = dr;
          r.abstention_rate = abstention_rate;

          std::vector<metrics::GroupId> groups;
          groups.reserve(scope.size());
          for (std::size_t i : scope)
            groups.push_back(in.instances[mb.instances[i]].groups[a]);
          for (metrics::GroupId g : groups) {
            if (g == metrics::kGroupA) ++r.n_group_a;
            if (g == metrics::kGroupB) ++r.n_group_b;
          }

          const metrics::GroupAuc ga =
              metrics::group_auc_and_gap(scores, labels, groups);
          r.auc_a = ga.auc_a;
          r.auc_b = ga.auc_b;
          r.auc_diff = ga.gap;
          r.eo = metrics::eo_gap(preds, labels, groups);
          r.dp = metrics::dp_gap(preds, groups);

          // Systematic arbitrariness: W1 between the group SC samples.
          std::vector<double> sc_a, sc_b;
          for (std::size_t i = 0; i < sc_instances.size(); ++i) {
            const metrics::GroupId g =
                in.instances[sc_instances[i]].groups[a];
            if (g == metrics::kGroupA) sc_a.push_back(sc_scope[i]);
            if (g == metrics::kGroupB) sc_b.push_back(sc_scope[i]);
          }
          r.sa = sc_scope.empty() ? Stat::undefined("no-bootstrap")
                                  : metrics::wasserstein1(sc_a, sc_b);

          out.push_back(std::move(r));
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<SubgroupStability> compute_subgroup_stability(const ReportInput& in) {
  std::vector<SubgroupStability> out;
  const double thr = in.decision_threshold;
  const auto arms = group_arms(in.ledger);

  for (const auto& [key, arm] : arms) {
    const auto schema = static_cast<Schema>(std::get<0>(key));
    const auto strategy = static_cast<Strategy>(std::get<1>(key));
    const int seed = std::get<2>(key);

    struct PatientAgg {
      std::map<std::int32_t, std::vector<std::optional<int>>> chains;
      std::map<int, std::vector<double>> sc_by_phase;  // instance SCs at phase
      long cells = 0;
      long abstained = 0;
    };
    std::map<std::string, PatientAgg> patients;

    for (const auto& [t, pb] : arm.phases) {
      if (!pb.main) continue;
      const Block& mb = *pb.main;
      std::vector<int> ones(mb.instances.size(), 0);
      for (const Block* bb : pb.boots)
        for (std::size_t i = 0; i < bb->instances.size(); ++i)
          ones[i] += bb->scores[i] >= thr ? 1 : 0;
      for (std::size_t i = 0; i < mb.instances.size(); ++i) {
        const std::int32_t inst = mb.instances[i];
        PatientAgg& pa = patients[in.instances[inst].patient];
        auto [it, inserted] = pa.chains.try_emplace(
            inst, std::vector<std::optional<int>>(in.n_phases));
        it->second[t - 1] = mb.scores[i] >= thr ? 1 : 0;
        if (pb.boots.size() >= 2)
          pa.sc_by_phase[t].push_back(metrics::self_consistency(
              ones[i], static_cast<int>(pb.boots.size())));
        ++pa.cells;
        pa.abstained += mb.abstained[i] ? 1 : 0;
      }
    }

    // Per-patient flags.
    struct Flags {
      std::optional<bool> flips;
      std::optional<bool> tsc;
      std::optional<bool> high_abst;
    };
    std::map<std::string, Flags> flags;
    for (const auto& [patient, pa] : patients) {
      Flags f;
      double frac_sum = 0;
      int frac_n = 0;
      for (const auto& [inst, chain] : pa.chains) {
        const metrics::FlipStats fs = metrics::flip_stats(chain);
        if (fs.flip_fraction.defined()) {
          frac_sum += fs.flip_fraction.value();
          ++frac_n;
        }
      }
      if (frac_n > 0)
        f.flips = metrics::unstable_by_flips(frac_sum / frac_n);

      std::vector<double> sc_series;
      for (const auto& [t, scs] : pa.sc_by_phase) {
        double s = 0;
        for (double v : scs) s += v;
        sc_series.push_back(s / static_cast<double>(scs.size()));
      }
      if (sc_series.size() >= 2) f.tsc = metrics::unstable_by_tsc(sc_series);

      if (in.abstention_enabled && pa.cells > 0)
        f.high_abst = static_cast<double>(pa.abstained) /
                          static_cast<double>(pa.cells) >
                      0.10;
      flags[patient] = f;
    }

    // Patient group per attribute, taken from any of their instances.
    for (std::size_t a = 0; a < in.attr_names.size(); ++a) {
      std::map<std::string, metrics::GroupId> group_of;
      for (const auto& [patient, pa] : patients) {
        const std::int32_t inst = pa.chains.begin()->first;
        group_of[patient] = in.instances[inst].groups[a];
      }
      for (metrics::GroupId g : {metrics::kGroupA, metrics::kGroupB}) {
        SubgroupStability row;
        row.schema = schema;
        row.strategy = strategy;
        row.seed = seed;
        row.attr = in.attr_names[a];
        row.subgroup = g == metrics::kGroupA ? "A" : "B";
        long n_flip = 0, y_flip = 0, n_tsc = 0, y_tsc = 0, n_abst = 0, y_abst = 0;
        int members = 0;
        for (const auto& [patient, f] : flags) {
          if (group_of[patient] != g) continue;
          ++members;
          if (f.flips) {
            ++n_flip;
            y_flip += *f.flips ? 1 : 0;
          }
          if (f.tsc) {
            ++n_tsc;
            y_tsc += *f.tsc ? 1 : 0;
          }
          if (f.high_abst) {
            ++n_abst;
            y_abst += *f.high_abst ? 1 : 0;
          }
        }
        row.n_individuals = members;
        row.pct_flip_unstable =
            n_flip == 0 ? Stat::undefined("no-chains")
                        : Stat::of(100.0 * y_flip / static_cast<double>(n_flip));
        row.pct_tsc_unstable =
            n_tsc == 0 ? Stat::undefined("no-sc-series")
                       : Stat::of(100.0 * y_tsc / static_cast<double>(n_tsc));
        row.pct_high_abstention =
            n_abst == 0
                ? Stat::undefined("abstention-disabled")
                : Stat::of(100.0 * y_abst / static_cast<double>(n_abst));
        out.push_back(std::move(row));
      }
    }
  }
  return out;
}

std::vector<EquityRow> compute_equity(const ReportInput& in) {
  std::vector<EquityRow> out;
  if (!in.abstention_enabled) return out;

  std::map<std::tuple<int, int, std::size_t>, EquityRow> acc;
  const auto arms = group_arms(in.ledger);
  for (const auto& [key, arm] : arms) {
    for (const auto& [t, pb] : arm.phases) {
      if (!pb.main) continue;
      const Block& mb = *pb.main;
      for (std::size_t a = 0; a < in.attr_names.size(); ++a) {
        auto [it, inserted] = acc.try_emplace(
            {std::get<0>(key), std::get<1>(key), a});
        EquityRow& row = it->second;
        if (inserted) {
          row.schema = static_cast<Schema>(std::get<0>(key));
          row.strategy = static_cast<Strategy>(std::get<1>(key));
          row.attr = in.attr_names[a];
        }
        for (std::size_t i = 0; i < mb.instances.size(); ++i) {
          const metrics::GroupId g = in.instances[mb.instances[i]].groups[a];
          if (g == metrics::kGroupA) {
            ++row.cells_a;
            row.abstained_a += mb.abstained[i] ? 1 : 0;
          } else if (g == metrics::kGroupB) {
            ++row.cells_b;
            row.abstained_b += mb.abstained[i] ? 1 : 0;
          }
        }
      }
    }
  }
  for (auto& [key, row] : acc) {
    row.rate_a = row.cells_a == 0
                     ? Stat::undefined("empty-group")
                     : Stat::of(static_cast<double>(row.abstained_a) /
                                static_cast<double>(row.cells_a));
    row.rate_b = row.cells_b == 0
                     ? Stat::undefined("empty-group")
                     : Stat::of(static_cast<double>(row.abstained_b) /
                                static_cast<double>(row.cells_b));
    out.push_back(row);
  }
  return out;
}

AggCell aggregate_cell(std::span<const Stat> values) {
  AggCell cell;
  std::vector<double> v;
  for (const Stat& s : values) {
    if (s.defined())
      v.push_back(s.value());
    else
      ++cell.n_undefined;
  }
  cell.n_used = static_cast<int>(v.size());
  if (v.empty()) {
    cell.mean = Stat::undefined("no-defined-values");
    return cell;
  }
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  cell.mean = Stat::of(mean);
  if (v.size() == 1) {
    cell.degenerate = true;
    cell.ci_lo = cell.ci_hi = mean;
    return cell;
  }
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  const double half = 1.96 * sd / std::sqrt(static_cast<double>(v.size()));
  cell.ci_lo = mean - half;
  cell.ci_hi = mean + half;
  return cell;
}

// ---------------------------------------------------------------------------
// Output files

namespace {

struct MetricAccessor {
  const char* name;
  Stat PhaseReport::* member;
};

constexpr MetricAccessor kMetrics[] = {
    {"auc", &PhaseReport::auc},
    {"auc_a", &PhaseReport::auc_a},
    {"auc_b", &PhaseReport::auc_b},
    {"auc_diff", &PhaseReport::auc_diff},
    {"eo", &PhaseReport::eo},
    {"dp", &PhaseReport::dp},
    {"mean_sc", &PhaseReport::mean_sc},
    {"oa", &PhaseReport::oa},
    {"sa", &PhaseReport::sa},
    {"flip_rate", &PhaseReport::flip_rate},
    {"dpr", &PhaseReport::dpr},
    {"dr", &PhaseReport::dr},
    {"abstention_rate", &PhaseReport::abstention_rate},
};

void write_instances_csv(const std::filesystem::path& p, const ReportInput& in) {
  CsvWriter w(p);
  std::vector<std::string> header = {"instance", "patient_id", "week_start",
                                     "label"};
  for (const auto& a : in.attr_names) header.push_back("group_" + a);
  w.row(header);
  for (std::size_t i = 0; i < in.instances.size(); ++i) {
    const InstanceInfo& info = in.instances[i];
    std::vector<std::string> row = {std::to_string(i), info.patient,
                                    format_date(info.week),
                                    std::to_string(info.label)};
    for (metrics::GroupId g : info.groups)
      row.push_back(g == metrics::kGroupA ? "A"
                    : g == metrics::kGroupB ? "B"
                                            : "");
    w.row(row);
  }
}

void write_ledger_csv(const std::filesystem::path& p, const engine::Ledger& ledger) {
  CsvWriter w(p);
  w.row({"schema", "strategy", "seed", "phase", "replica_kind", "replica",
         "instance", "score", "pred", "abstained"});
  for (const Block& b : ledger.blocks) {
    const std::string schema = engine::to_string(b.schema);
    const std::string strategy = engine::to_string(b.strategy);
    const std::string kind = engine::to_string(b.kind);
    for (std::size_t i = 0; i < b.instances.size(); ++i) {
      w.row({schema, strategy, std::to_string(b.seed), std::to_string(b.phase),
             kind, std::to_string(b.replica), std::to_string(b.instances[i]),
             fmt_double(b.scores[i]), std::to_string(b.preds[i]),
             b.abstained[i] ? "1" : "0"});
    }
  }
}

void write_train_info_csv(const std::filesystem::path& p,
                          std::span<const engine::TrainInfo> infos) {
  CsvWriter w(p);
  w.row({"schema", "strategy", "seed", "phase", "n_train", "train_pos_rate",
         "tau", "abstention_active", "rashomon_candidates", "rashomon_members",
         "skipped", "skip_reason"});
  std::vector<engine::TrainInfo> sorted(infos.begin(), infos.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return std::tuple(static_cast<int>(a.schema), static_cast<int>(a.strategy),
                      a.seed, a.phase) <
           std::tuple(static_cast<int>(b.schema), static_cast<int>(b.strategy),
                      b.seed, b.phase);
  });
  for (const auto& ti : sorted) {
    w.row({engine::to_string(ti.schema), engine::to_string(ti.strategy),
           std::to_string(ti.seed), std::to_string(ti.phase),
           std::to_string(ti.n_train), fmt_double(ti.train_pos_rate),
           std::isnan(ti.tau) ? "" : fmt_double(ti.tau),
           ti.abstention_active ? "1" : "0",
           std::to_string(ti.rashomon_candidates),
           std::to_string(ti.rashomon_members), ti.skipped ? "1" : "0",
           ti.skip_reason});
  }
}

void write_abstention_csv(const std::filesystem::path& p, const ReportInput& in) {
  CsvWriter w(p);
  std::vector<std::string> header = {"schema", "strategy", "seed",
                                     "phase",  "instance", "distance",
                                     "tau",    "abstained", "score"};
  for (const auto& a : in.attr_names) header.push_back("group_" + a);
  w.row(header);
  std::vector<engine::AbstentionRow> sorted(in.abstentions.begin(),
                                            in.abstentions.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return std::tuple(static_cast<int>(a.schema), static_cast<int>(a.strategy),
                      a.seed, a.phase, a.instance) <
           std::tuple(static_cast<int>(b.schema), static_cast<int>(b.strategy),
                      b.seed, b.phase, b.instance);
  });
  for (const auto& r : sorted) {
    std::vector<std::string> row = {
        engine::to_string(r.schema), engine::to_string(r.strategy),
        std::to_string(r.seed),      std::to_string(r.phase),
        std::to_string(r.instance),  fmt_double(r.distance),
        fmt_double(r.tau),           r.abstained ? "1" : "0",
        fmt_double(r.score)};
    for (metrics::GroupId g : in.instances[r.instance].groups)
      row.push_back(g == metrics::kGroupA ? "A"
                    : g == metrics::kGroupB ? "B"
                                            : "");
    w.row(row);
  }
}

// Aggregated per-phase metric tables and plot data.
void write_aggregates(const std::filesystem::path& outdir,
                      const ReportInput& in,
                      const std::vector<PhaseReport>& reports) {
  // (schema, strategy, attr, retained, phase, metric) -> per-seed stats
  std::map<std::tuple<int, int, std::string, int, int, std::string>,
           std::vector<Stat>>
      cells;
  for (const PhaseReport& r : reports) {
    for (const auto& m : kMetrics) {
      cells[{static_cast<int>(r.schema), static_cast<int>(r.strategy), r.attr,
             r.retained_only ? 1 : 0, r.phase, m.name}]
          .push_back(r.*(m.member));
    }
  }

  CsvWriter plot(outdir / "plot_data.csv");
  plot.row({"schema", "strategy", "attr", "variant", "phase", "metric", "mean",
            "ci_lo", "ci_hi", "n_seeds", "n_undefined"});
  for (const auto& [key, stats] : cells) {
    const AggCell cell = aggregate_cell(stats);
    plot.row({engine::to_string(static_cast<Schema>(std::get<0>(key))),
              engine::to_string(static_cast<Strategy>(std::get<1>(key))),
              std::get<2>(key), std::get<3>(key) ? "retained" : "baseline",
              std::to_string(std::get<4>(key)), std::get<5>(key),
              stat_csv(cell.mean),
              cell.mean.defined() ? fmt_double(cell.ci_lo) : "",
              cell.mean.defined() ? fmt_double(cell.ci_hi) : "",
              std::to_string(cell.n_used), std::to_string(cell.n_undefined)});
  }

  // One compact per-phase table per (schema, strategy, attr), baseline only.
  std::set<std::tuple<int, int, std::string>> tables;
  for (const PhaseReport& r : reports)
    if (!r.retained_only)
      tables.insert({static_cast<int>(r.schema), static_cast<int>(r.strategy),
                     r.attr});
  for (const auto& [schema_i, strategy_i, attr] : tables) {
    const std::string name = "metrics_" +
                             engine::to_string(static_cast<Schema>(schema_i)) +
                             "_" +
                             engine::to_string(static_cast<Strategy>(strategy_i)) +
                             "_" + attr + ".csv";
    CsvWriter w(outdir / name);
    std::vector<std::string> header = {"phase"};
    for (const auto& m : kMetrics) header.push_back(m.name);
    w.row(header);
    for (int t = 1; t <= in.n_phases; ++t) {
      std::vector<std::string> row = {std::to_string(t)};
      bool any = false;
      for (const auto& m : kMetrics) {
        auto it = cells.find({schema_i, strategy_i, attr, 0, t, m.name});
        if (it == cells.end()) {
          row.push_back("");
          continue;
        }
        any = true;
        row.push_back(stat_csv(aggregate_cell(it->second).mean));
      }
      if (any) w.row(row);
    }
  }
}

// Phase-averaged Table-I-shaped summary.
void write_table1(const std::filesystem::path& outdir,
                  const std::vector<PhaseReport>& reports) {
  // per (schema, attr, strategy, variant, seed): phase-mean of each metric
  static constexpr const char* kCols[] = {"auc", "auc_diff", "eo", "dp", "oa"};
  static constexpr Stat PhaseReport::* kPtrs[] = {
      &PhaseReport::auc, &PhaseReport::auc_diff, &PhaseReport::eo,
      &PhaseReport::dp, &PhaseReport::oa};

  std::map<std::tuple<int, std::string, int, int, int>,
           std::array<std::pair<double, int>, 5>>
      sums;
  for (const PhaseReport& r : reports) {
    auto& arr = sums[{static_cast<int>(r.schema), r.attr,
                      static_cast<int>(r.strategy), r.retained_only ? 1 : 0,
                      r.seed}];
    for (std::size_t c = 0; c < 5; ++c) {
      const Stat& s = r.*(kPtrs[c]);
      if (s.defined()) {
        arr[c].first += s.value();
        arr[c].second += 1;
      }
    }
  }
  // collapse seeds
  std::map<std::tuple<int, std::string, int, int>,
           std::array<std::vector<Stat>, 5>>
      by_cell;
  for (const auto& [key, arr] : sums) {
    auto& dst = by_cell[{std::get<0>(key), std::get<1>(key), std::get<2>(key),
                         std::get<3>(key)}];
    for (std::size_t c = 0; c < 5; ++c)
      dst[c].push_back(arr[c].second == 0
                           ? Stat::undefined("no-defined-phases")
                           : Stat::of(arr[c].first / arr[c].second));
  }

  CsvWriter w(outdir / "table1.csv");
  std::vector<std::string> header = {"schema", "attr", "strategy", "variant"};
  for (const char* c : kCols) {
    header.push_back(std::string("av_") + c);
    header.push_back(std::string("av_") + c + "_ci_lo");
    header.push_back(std::string("av_") + c + "_ci_hi");
  }
  header.push_back("n_seeds");
  w.row(header);
  for (const auto& [key, arr] : by_cell) {
    std::vector<std::string> row = {
        engine::to_string(static_cast<Schema>(std::get<0>(key))),
        std::get<1>(key),
        engine::to_string(static_cast<Strategy>(std::get<2>(key))),
        std::get<3>(key) ? "retained" : "baseline"};
    int n_seeds = 0;
    for (std::size_t c = 0; c < 5; ++c) {
      const AggCell cell = aggregate_cell(arr[c]);
      row.push_back(stat_csv(cell.mean));
      row.push_back(cell.mean.defined() ? fmt_double(cell.ci_lo) : "");
      row.push_back(cell.mean.defined() ? fmt_double(cell.ci_hi) : "");
      n_seeds = std::max(n_seeds, cell.n_used);
    }
    row.push_back(std::to_string(n_seeds));
    w.row(row);
  }
}

void write_table2(const std::filesystem::path& outdir,
                  const std::vector<SubgroupStability>& rows) {
  std::map<std::tuple<int, int, std::string, std::string>,
           std::array<std::vector<Stat>, 3>>
      cells;
  std::map<std::tuple<int, int, std::string, std::string>, int> members;
  for (const auto& r : rows) {
    auto key = std::tuple(static_cast<int>(r.schema),
                          static_cast<int>(r.strategy), r.attr, r.subgroup);
    cells[key][0].push_back(r.pct_flip_unstable);
    cells[key][1].push_back(r.pct_tsc_unstable);
    cells[key][2].push_back(r.pct_high_abstention);
    members[key] = std::max(members[key], r.n_individuals);
  }
  CsvWriter w(outdir / "table2.csv");
  w.row({"schema", "strategy", "attr", "subgroup", "n_individuals",
         "pct_flip_unstable", "pct_flip_ci_lo", "pct_flip_ci_hi",
         "pct_tsc_unstable", "pct_tsc_ci_lo", "pct_tsc_ci_hi",
         "pct_high_abstention", "pct_abst_ci_lo", "pct_abst_ci_hi", "n_seeds"});
  for (const auto& [key, arr] : cells) {
    std::vector<std::string> row = {
        engine::to_string(static_cast<Schema>(std::get<0>(key))),
        engine::to_string(static_cast<Strategy>(std::get<1>(key))),
        std::get<2>(key), std::get<3>(key), std::to_string(members[key])};
    int n_seeds = 0;
    for (const auto& stats : arr) {
      const AggCell cell = aggregate_cell(stats);
      row.push_back(stat_csv(cell.mean));
      row.push_back(cell.mean.defined() ? fmt_double(cell.ci_lo) : "");
      row.push_back(cell.mean.defined() ? fmt_double(cell.ci_hi) : "");
      n_seeds = std::max(n_seeds, cell.n_used);
    }
    row.push_back(std::to_string(n_seeds));
    w.row(row);
  }
}

void write_equity_tables(const std::filesystem::path& outdir,
                         const ReportInput& in,
                         const std::vector<EquityRow>& rows) {
  for (const auto& attr : in.attr_names) {
    CsvWriter w(outdir / ("equity_" + attr + ".csv"));
    w.row({"schema", "strategy", "cells_a", "abstained_a", "rate_a", "cells_b",
           "abstained_b", "rate_b"});
    for (const auto& r : rows) {
      if (r.attr != attr) continue;
      w.row({engine::to_string(r.schema), engine::to_string(r.strategy),
             std::to_string(r.cells_a), std::to_string(r.abstained_a),
             stat_csv(r.rate_a), std::to_string(r.cells_b),
             std::to_string(r.abstained_b), stat_csv(r.rate_b)});
    }
  }
}

}  // namespace

void write_outputs(const std::filesystem::path& outdir, const ReportInput& in,
                   const std::vector<PhaseReport>& reports,
                   nlohmann::json manifest) {
  std::filesystem::create_directories(outdir);

  write_instances_csv(outdir / "instances.csv", in);
  write_ledger_csv(outdir / "ledger.csv", in.ledger);
  write_train_info_csv(outdir / "train_info.csv", in.train_infos);
  if (in.abstention_enabled)
    write_abstention_csv(outdir / "abstention_log.csv", in);

  {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : reports) arr.push_back(r.to_json());
    std::ofstream f(outdir / "phase_reports.json", std::ios::binary);
    f << arr.dump(1) << "\n";
  }

  write_aggregates(outdir, in, reports);
  write_table1(outdir, reports);
  const auto stability = compute_subgroup_stability(in);
  write_table2(outdir, stability);
  if (in.abstention_enabled)
    write_equity_tables(outdir, in, compute_equity(in));

  {
    std::ofstream f(outdir / "manifest.json", std::ios::binary);
    f << manifest.dump(1) << "\n";
  }
}

// ---------------------------------------------------------------------------

ReportInput read_run_dir(const std::filesystem::path& outdir) {
  ReportInput in;

  nlohmann::json manifest;
  {
    std::ifstream f(outdir / "manifest.json");
    if (!f) throw ConfigError("missing manifest.json in " + outdir.string());
    f >> manifest;
  }
  const auto& rj = manifest.at("report");
  in.attr_names = rj.at("attr_names").get<std::vector<std::string>>();
  in.n_phases = rj.at("n_phases").get<int>();
  in.decision_threshold = rj.at("decision_threshold").get<double>();
  in.abstention_enabled = rj.at("abstention_enabled").get<bool>();

  {
    const CsvTable t = read_csv(outdir / "instances.csv");
    in.instances.resize(t.rows.size());
    for (const auto& row : t.rows) {
      const std::size_t idx = static_cast<std::size_t>(parse_int(row[0]));
      InstanceInfo& info = in.instances.at(idx);
      info.patient = row[1];
      info.week = parse_date(row[2]);
      info.label = static_cast<int>(parse_int(row[3]));
      for (std::size_t a = 0; a < in.attr_names.size(); ++a) {
        const std::string& g = row.at(4 + a);
        info.groups.push_back(g == "A"   ? metrics::kGroupA
                              : g == "B" ? metrics::kGroupB
                                         : metrics::kNoGroup);
      }
    }
  }

  {
    const CsvTable t = read_csv(outdir / "ledger.csv");
    std::map<std::tuple<int, int, int, int, int, int>, Block> blocks;
    for (const auto& row : t.rows) {
      const Schema schema = engine::schema_from_string(row[0]);
      const Strategy strategy = engine::strategy_from_string(row[1]);
      const int seed = static_cast<int>(parse_int(row[2]));
      const int phase = static_cast<int>(parse_int(row[3]));
      ReplicaKind kind;
      if (row[4] == "main")
        kind = ReplicaKind::main;
      else if (row[4] == "bootstrap")
        kind = ReplicaKind::bootstrap;
      else if (row[4] == "rashomon")
        kind = ReplicaKind::rashomon;
      else
        throw DataError("bad replica_kind: " + row[4]);
      const int replica = static_cast<int>(parse_int(row[5]));

      auto [it, inserted] = blocks.try_emplace(
          {static_cast<int>(schema), static_cast<int>(strategy), seed, phase,
           static_cast<int>(kind), replica});
      Block& b = it->second;
      if (inserted) {
        b.schema = schema;
        b.strategy = strategy;
        b.seed = seed;
        b.phase = phase;
        b.kind = kind;
        b.replica = replica;
      }
      b.instances.push_back(static_cast<std::int32_t>(parse_int(row[6])));
      b.scores.push_back(static_cast<float>(parse_double(row[7])));
      b.preds.push_back(static_cast<std::int8_t>(parse_int(row[8])));
      b.abstained.push_back(row[9] == "1" ? 1 : 0);
    }
    for (auto& [key, b] : blocks) in.ledger.blocks.push_back(std::move(b));
    in.ledger.finalize();
  }

  {
    const CsvTable t = read_csv(outdir / "train_info.csv");
    for (const auto& row : t.rows) {
      engine::TrainInfo ti;
      ti.schema = engine::schema_from_string(row[0]);
      ti.strategy = engine::strategy_from_string(row[1]);
      ti.seed = static_cast<int>(parse_int(row[2]));
      ti.phase = static_cast<int>(parse_int(row[3]));
      ti.n_train = static_cast<int>(parse_int(row[4]));
      ti.train_pos_rate = parse_double(row[5]);
      ti.tau = row[6].empty() ? std::numeric_limits<double>::quiet_NaN()
                              : parse_double(row[6]);
      ti.abstention_active = row[7] == "1";
      ti.rashomon_candidates = static_cast<int>(parse_int(row[8]));
      ti.rashomon_members = static_cast<int>(parse_int(row[9]));
      ti.skipped = row[10] == "1";
      ti.skip_reason = row[11];
      in.train_infos.push_back(std::move(ti));
    }
  }

  if (in.abstention_enabled &&
      std::filesystem::exists(outdir / "abstention_log.csv")) {
    const CsvTable t = read_csv(outdir / "abstention_log.csv");
    for (const auto& row : t.rows) {
      engine::AbstentionRow r;
      r.schema = engine::schema_from_string(row[0]);
      r.strategy = engine::strategy_from_string(row[1]);
      r.seed = static_cast<int>(parse_int(row[2]));
      r.phase = static_cast<int>(parse_int(row[3]));
      r.instance = static_cast<std::int32_t>(parse_int(row[4]));
      r.distance = parse_double(row[5]);
      r.tau = parse_double(row[6]);
      r.abstained = row[7] == "1";
      r.score = parse_double(row[8]);
      in.abstentions.push_back(r);
    }
  }

  return in;
}

}  // namespace retrainaudit::report
