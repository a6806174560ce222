// retrainaudit: simulate continual retraining of a clinical risk classifier
// and audit performance, fairness, stability, multiplicity and conformal
// abstention per retraining phase.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "retrainaudit/cgmfeat.hpp"
#include "retrainaudit/config.hpp"
#include "retrainaudit/dataio.hpp"
#include "retrainaudit/engine.hpp"
#include "retrainaudit/report.hpp"
#include "retrainaudit/synthgen.hpp"

namespace ra = retrainaudit;

namespace {

constexpr const char* kVersion = "0.1.0";

std::filesystem::path default_out_dir(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("RETRAINAUDIT_OUT")) return env;
  return ".";
}

void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw ra::ConfigError("cannot write " + p.string());
  f << j.dump(1) << "\n";
}

int cmd_synth(const std::string& config_path, const std::string& out_flag) {
  const auto kv = ra::config::parse_kv_file(config_path);
  const ra::config::SynthConfig cfg = ra::config::parse_synth_config(kv);
  const std::filesystem::path out = default_out_dir(out_flag);
  std::filesystem::create_directories(out);

  nlohmann::json manifest;
  manifest["tool"] = "retrainaudit";
  manifest["version"] = kVersion;
  manifest["command"] = "synth";
  manifest["config_kv"] = ra::config::kv_to_json(cfg.resolved);

  if (cfg.traces) {
    const ra::synthgen::TraceCohort cohort = ra::synthgen::gen_trace_cohort(cfg.spec);
    ra::dataio::CgmLoadResult as_result;
    as_result.traces = cohort.traces;
    ra::dataio::write_cgm_csv(out / "cgm.csv", as_result);
    ra::dataio::write_meta_csv(out / "meta.csv", cohort.meta);
    std::size_t n = 0;
    for (const auto& [_, t] : cohort.traces) n += t.size();
    manifest["n_patients"] = cohort.meta.size();
    manifest["n_readings"] = n;
  } else {
    const ra::synthgen::Cohort cohort = ra::synthgen::gen_cohort(cfg.spec);
    ra::dataio::write_weekly_csv(out / "weekly.csv", cohort.table);
    ra::dataio::write_meta_csv(out / "meta.csv", cohort.table.meta);
    manifest["cohort"] = cohort.manifest;
  }
  write_json(out / "manifest.json", manifest);
  std::cout << "synth: wrote " << (cfg.traces ? "cgm.csv" : "weekly.csv")
            << ", meta.csv, manifest.json to " << out.string() << "\n";
  return 0;
}

int cmd_featurize(const std::string& cgm_path, const std::string& meta_path,
                  const std::string& out_path,
                  const ra::cgmfeat::FeatureConfig& fc) {
  const ra::dataio::CgmLoadResult cgm = ra::dataio::load_cgm_csv(cgm_path);
  std::map<std::string, ra::dataio::PatientMeta> meta;
  if (!meta_path.empty()) meta = ra::dataio::load_meta_csv(meta_path);

  const ra::dataio::WeeklyTable table = ra::cgmfeat::featurize(cgm.traces, meta, fc);
  ra::dataio::write_weekly_csv(out_path, table);
  std::cout << "featurize: " << cgm.accepted << " readings ("
            << cgm.dropped_out_of_range << " out-of-range, "
            << cgm.dropped_duplicate << " duplicate) -> " << table.rows.size()
            << " patient-weeks in " << out_path << "\n";
  return 0;
}

int run_and_report(const ra::config::RunConfig& cfg,
                   const std::filesystem::path& out) {
  const ra::dataio::WeeklyLoadResult loaded = ra::dataio::load_weekly_csv(
      cfg.weekly_csv, {}, cfg.pediatric_check);
  if (loaded.table.rows.empty())
    throw ra::DataError("no usable rows in " + cfg.weekly_csv.string());

  const ra::engine::RunResult result = ra::engine::run(loaded.table, cfg.experiment);
  const ra::report::ReportInput input =
      ra::report::make_report_input(result, cfg.experiment);
  const std::vector<ra::report::PhaseReport> reports =
      ra::report::compute_phase_reports(input);

  nlohmann::json manifest;
  manifest["tool"] = "retrainaudit";
  manifest["version"] = kVersion;
  manifest["command"] = "run";
  manifest["config_kv"] = ra::config::kv_to_json(cfg.resolved);
  manifest["input_rows"] = loaded.table.rows.size();
  manifest["input_rejects"] = loaded.rejects.size();
  manifest["n_patients"] = loaded.table.meta.size();
  nlohmann::json thresholds = nlohmann::json::object();
  for (const auto& a : result.cohort.attrs)
    thresholds[a.name()] = a.threshold;
  manifest["attr_thresholds"] = thresholds;
  manifest["report"] = {
      {"attr_names", input.attr_names},
      {"n_phases", input.n_phases},
      {"decision_threshold", input.decision_threshold},
      {"abstention_enabled", input.abstention_enabled},
  };
  manifest["warnings"] = result.warnings;

  ra::report::write_outputs(out, input, reports, manifest);
  std::cout << "run: " << result.ledger.blocks.size() << " ledger blocks, "
            << reports.size() << " phase-report rows -> " << out.string() << "\n";
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
  return 0;
}

int cmd_run(const std::string& config_path, const std::string& manifest_path,
            const std::string& out_flag) {
  std::map<std::string, std::string> kv;
  if (!manifest_path.empty()) {
    std::ifstream f(manifest_path);
    if (!f) throw ra::ConfigError("cannot open manifest: " + manifest_path);
    nlohmann::json m;
    f >> m;
    kv = ra::config::kv_from_json(m.at("config_kv"));
  } else {
    kv = ra::config::parse_kv_file(config_path);
  }
  const ra::config::RunConfig cfg = ra::config::parse_run_config(kv);
  return run_and_report(cfg, default_out_dir(out_flag));
}

int cmd_report(const std::string& run_dir, const std::string& out_flag) {
  const ra::report::ReportInput input = ra::report::read_run_dir(run_dir);
  const std::vector<ra::report::PhaseReport> reports =
      ra::report::compute_phase_reports(input);

  nlohmann::json manifest;
  {
    std::ifstream f(std::filesystem::path(run_dir) / "manifest.json");
    f >> manifest;
  }
  manifest["command"] = "report";
  manifest["source_run_dir"] = run_dir;

  const std::filesystem::path out =
      out_flag.empty() ? std::filesystem::path(run_dir) : default_out_dir(out_flag);
  ra::report::write_outputs(out, input, reports, manifest);
  std::cout << "report: " << reports.size() << " phase-report rows -> "
            << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"retrainaudit: continual-retraining audit toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::string config_path, manifest_path, out_dir;
  std::string cgm_path, meta_path, out_path, run_dir;
  ra::cgmfeat::FeatureConfig fc;

  auto* synth = app.add_subcommand("synth", "generate a synthetic cohort");
  synth->add_option("--config", config_path, "cohort spec (key = value file)")
      ->required();
  synth->add_option("--out", out_dir, "output directory");

  auto* featurize =
      app.add_subcommand("featurize", "raw CGM csv -> weekly feature csv");
  featurize->add_option("--cgm", cgm_path, "raw CGM csv")->required();
  featurize->add_option("--meta", meta_path, "patient metadata csv");
  featurize->add_option("--out", out_path, "output weekly csv")->required();
  featurize->add_option("--hyper", fc.hyper_mgdl, "hyperglycemia threshold (mg/dL)");
  featurize->add_option("--severe-hyper", fc.severe_mgdl,
                        "severe hyperglycemia level (mg/dL)");
  featurize->add_option("--severe-min-duration", fc.severe_min_minutes,
                        "severe event minimum duration (minutes)");
  featurize->add_option("--hypo", fc.hypo_mgdl, "hypoglycemia threshold (mg/dL)");
  featurize->add_option("--gap-tolerance", fc.gap_tolerance_min,
                        "max gap inside an event run (minutes)");

  auto* run = app.add_subcommand("run", "execute the retraining experiment");
  auto* run_cfg = run->add_option("--config", config_path, "run configuration");
  auto* run_man =
      run->add_option("--manifest", manifest_path, "rerun from a run manifest");
  run->add_option("--out", out_dir, "output directory");
  run_cfg->excludes(run_man);

  auto* report = app.add_subcommand("report", "regenerate reports from a run");
  report->add_option("--run-dir", run_dir, "existing run output directory")
      ->required();
  report->add_option("--out", out_dir, "report output directory");

  try {
    app.parse(argc, argv);
    if (synth->parsed()) return cmd_synth(config_path, out_dir);
    if (featurize->parsed()) return cmd_featurize(cgm_path, meta_path, out_path, fc);
    if (run->parsed()) {
      if (config_path.empty() && manifest_path.empty())
        throw ra::ConfigError("run: need --config or --manifest");
      return cmd_run(config_path, manifest_path, out_dir);
    }
    if (report->parsed()) return cmd_report(run_dir, out_dir);
    return 2;
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const ra::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
