#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "retrainaudit/config.hpp"
#include "retrainaudit/dataio.hpp"
#include "retrainaudit/synthgen.hpp"

using namespace retrainaudit;
namespace fs = std::filesystem;

namespace {

const char* kCli = RA_CLI_PATH;

struct CmdResult {
  int exit_code = -1;
  std::string output;
};

CmdResult run_cmd(const std::string& args) {
  const fs::path out_file = fs::temp_directory_path() / "ra_cli_out.txt";
  const std::string cmd =
      std::string(kCli) + " " + args + " > " + out_file.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  CmdResult r;
  r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  std::ifstream f(out_file);
  std::stringstream ss;
  ss << f.rdbuf();
  r.output = ss.str();
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& body) {
  std::ofstream f(p, std::ios::binary);
  f << body;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Small cohort + fast run configuration shared by the CLI tests.
fs::path make_small_run_setup(const fs::path& dir, int master_seed = 1) {
  write_file(dir / "synth.cfg",
             "synth.n_patients = 40\n"
             "synth.weeks_min = 3\n"
             "synth.weeks_max = 8\n"
             "synth.date_span_days = 120\n"
             "synth.base_risk = 0.3\n"
             "synth.seed = 7\n");
  const CmdResult synth = run_cmd("synth --config " + (dir / "synth.cfg").string() +
                                  " --out " + (dir / "data").string());
  REQUIRE(synth.exit_code == 0);

  std::ostringstream cfg;
  cfg << "input.weekly_csv = " << (dir / "data" / "weekly.csv").string() << "\n"
      << "run.schemas = retrospective\n"
      << "run.strategies = none,full\n"
      << "run.n_batches = 4\n"
      << "run.n_seeds = 2\n"
      << "run.bootstrap = 4\n"
      << "run.rashomon = 0\n"
      << "run.master_seed = " << master_seed << "\n"
      << "learner.max_iter = 50\n"
      << "attrs = sex,age\n";
  write_file(dir / "run.cfg", cfg.str());
  return dir / "run.cfg";
}

}  // namespace

TEST_CASE("cli: synth produces a weekly table that passes validation") {
  const fs::path dir = fresh_dir("ra_cli_synth");
  write_file(dir / "synth.cfg", "synth.n_patients = 25\nsynth.seed = 3\n");
  const CmdResult r = run_cmd("synth --config " + (dir / "synth.cfg").string() +
                              " --out " + dir.string());
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(dir / "weekly.csv"));
  CHECK(fs::exists(dir / "meta.csv"));
  CHECK(fs::exists(dir / "manifest.json"));
  const auto loaded = dataio::load_weekly_csv(dir / "weekly.csv", {}, true);
  CHECK(loaded.rejects.empty());
  CHECK(loaded.table.meta.size() == 25);
}

TEST_CASE("cli: unknown config key exits 2 and names the key") {
  const fs::path dir = fresh_dir("ra_cli_badkey");
  write_file(dir / "bad.cfg", "synth.n_patients = 10\nfoo = 1\n");
  const CmdResult r = run_cmd("synth --config " + (dir / "bad.cfg").string() +
                              " --out " + dir.string());
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("foo") != std::string::npos);

  write_file(dir / "bad_run.cfg", "input.weekly_csv = x.csv\nfoo = 1\n");
  const CmdResult rr = run_cmd("run --config " + (dir / "bad_run.cfg").string() +
                               " --out " + dir.string());
  CHECK(rr.exit_code == 2);
  CHECK(rr.output.find("foo") != std::string::npos);
}

TEST_CASE("cli: missing input file exits 2") {
  const fs::path dir = fresh_dir("ra_cli_missing");
  write_file(dir / "run.cfg", "input.weekly_csv = /nonexistent/x.csv\n");
  const CmdResult r = run_cmd("run --config " + (dir / "run.cfg").string() +
                              " --out " + dir.string());
  CHECK(r.exit_code == 2);
}

TEST_CASE("cli: run is byte-identical across repeated invocations") {
  const fs::path dir = fresh_dir("ra_cli_det");
  const fs::path cfg = make_small_run_setup(dir);

  const CmdResult r1 = run_cmd("run --config " + cfg.string() + " --out " +
                               (dir / "out1").string());
  REQUIRE(r1.exit_code == 0);
  const CmdResult r2 = run_cmd("run --config " + cfg.string() + " --out " +
                               (dir / "out2").string());
  REQUIRE(r2.exit_code == 0);

  for (const char* f : {"ledger.csv", "instances.csv", "phase_reports.json",
                        "table1.csv", "table2.csv", "plot_data.csv",
                        "train_info.csv", "manifest.json"}) {
    CHECK(slurp(dir / "out1" / f) == slurp(dir / "out2" / f));
  }
}

TEST_CASE("cli: report regenerated from a persisted ledger matches the run") {
  const fs::path dir = fresh_dir("ra_cli_report");
  const fs::path cfg = make_small_run_setup(dir);
  REQUIRE(run_cmd("run --config " + cfg.string() + " --out " +
                  (dir / "run_out").string())
              .exit_code == 0);
  REQUIRE(run_cmd("report --run-dir " + (dir / "run_out").string() + " --out " +
                  (dir / "rep_out").string())
              .exit_code == 0);
  for (const char* f :
       {"phase_reports.json", "table1.csv", "table2.csv", "plot_data.csv"})
    CHECK(slurp(dir / "run_out" / f) == slurp(dir / "rep_out" / f));
}

TEST_CASE("cli: a run is reproducible from its manifest alone") {
  const fs::path dir = fresh_dir("ra_cli_manifest");
  const fs::path cfg = make_small_run_setup(dir, 77);
  REQUIRE(run_cmd("run --config " + cfg.string() + " --out " +
                  (dir / "orig").string())
              .exit_code == 0);
  REQUIRE(run_cmd("run --manifest " + (dir / "orig" / "manifest.json").string() +
                  " --out " + (dir / "redo").string())
              .exit_code == 0);
  for (const char* f : {"ledger.csv", "instances.csv", "phase_reports.json",
                        "table1.csv", "table2.csv"})
    CHECK(slurp(dir / "orig" / f) == slurp(dir / "redo" / f));
}

TEST_CASE("cli: featurize turns traces into a weekly csv") {
  const fs::path dir = fresh_dir("ra_cli_feat");
  write_file(dir / "synth.cfg",
             "synth.n_patients = 8\nsynth.weeks_min = 2\nsynth.weeks_max = 4\n"
             "synth.date_span_days = 90\nsynth.mode = traces\nsynth.seed = 5\n");
  REQUIRE(run_cmd("synth --config " + (dir / "synth.cfg").string() + " --out " +
                  (dir / "data").string())
              .exit_code == 0);
  CHECK(fs::exists(dir / "data" / "cgm.csv"));
  const CmdResult r = run_cmd(
      "featurize --cgm " + (dir / "data" / "cgm.csv").string() + " --meta " +
      (dir / "data" / "meta.csv").string() + " --out " +
      (dir / "weekly.csv").string() + " --hyper 180 --severe-hyper 250 " +
      "--severe-min-duration 180 --hypo 70 --gap-tolerance 30");
  CHECK(r.exit_code == 0);
  const auto loaded = dataio::load_weekly_csv(dir / "weekly.csv");
  CHECK(loaded.rejects.empty());
  CHECK(loaded.table.rows.size() >= 8);
}

TEST_CASE("cli: table1 has the Table-I shape (4 strategies x 5 metric columns)") {
  const fs::path dir = fresh_dir("ra_cli_shape");
  make_small_run_setup(dir);
  // re-write run config with all four strategies, single seed, prospective
  std::ostringstream cfg;
  cfg << "input.weekly_csv = " << (dir / "data" / "weekly.csv").string() << "\n"
      << "run.schemas = prospective\n"
      << "run.strategies = none,last,subset,full\n"
      << "run.n_batches = 4\n"
      << "run.bootstrap = 4\n"
      << "run.rashomon = 0\n"
      << "learner.max_iter = 50\n"
      << "attrs = sex\n";
  write_file(dir / "run_all.cfg", cfg.str());
  REQUIRE(run_cmd("run --config " + (dir / "run_all.cfg").string() + " --out " +
                  (dir / "out").string())
              .exit_code == 0);
  const std::string table1 = slurp(dir / "out" / "table1.csv");
  std::size_t lines = 0;
  for (char c : table1) lines += c == '\n';
  CHECK(lines == 5);  // header + 4 strategy rows for the single attr
  CHECK(table1.find("av_auc") != std::string::npos);
  CHECK(table1.find("av_auc_diff") != std::string::npos);
  CHECK(table1.find("av_eo") != std::string::npos);
  CHECK(table1.find("av_dp") != std::string::npos);
  CHECK(table1.find("av_oa") != std::string::npos);
  for (const char* strat : {"none", "last", "subset", "full"})
    CHECK(table1.find(strat) != std::string::npos);
}

TEST_CASE("cli: config round trips through parse_run_config resolved map") {
  const fs::path dir = fresh_dir("ra_cli_cfgrt");
  write_file(dir / "run.cfg",
             "input.weekly_csv = data.csv\nrun.n_seeds = 3\nabstain.enabled = "
             "true\nabstain.alpha = 0.07\n");
  const auto kv = config::parse_kv_file(dir / "run.cfg");
  const auto cfg = config::parse_run_config(kv);
  CHECK(cfg.experiment.n_seeds == 3);
  REQUIRE(cfg.experiment.abstention.has_value());
  CHECK(cfg.experiment.abstention->alpha == doctest::Approx(0.07));
  // resolved map reparses to the same experiment
  const auto cfg2 = config::parse_run_config(cfg.resolved);
  CHECK(cfg2.resolved == cfg.resolved);
}
