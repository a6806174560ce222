#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "retrainaudit/cgmfeat.hpp"
#include "retrainaudit/engine.hpp"
#include "retrainaudit/synthgen.hpp"

namespace retrainaudit::config {

// Flat key=value file: one pair per line, '#' starts a comment, blank lines
// ignored. Duplicate keys are rejected.
std::map<std::string, std::string> parse_kv_file(const std::filesystem::path& p);

struct RunConfig {
  std::filesystem::path weekly_csv;
  bool pediatric_check = false;
  engine::ExperimentConfig experiment;
  // Every key with its final value (defaults filled in); reruns from a
  // manifest parse exactly this map.
  std::map<std::string, std::string> resolved;
};

// Validates strictly: any key outside the schema throws ConfigError naming it.
RunConfig parse_run_config(const std::map<std::string, std::string>& kv);

struct SynthConfig {
  synthgen::CohortSpec spec;
  bool traces = false;  // emit raw CGM traces instead of a weekly table
  std::map<std::string, std::string> resolved;
};

SynthConfig parse_synth_config(const std::map<std::string, std::string>& kv);

nlohmann::json kv_to_json(const std::map<std::string, std::string>& kv);
std::map<std::string, std::string> kv_from_json(const nlohmann::json& j);

}  // namespace retrainaudit::config
