#include "retrainaudit/config.hpp"

#include <fstream>
#include <optional>
#include <set>

namespace retrainaudit::config {

std::map<std::string, std::string> parse_kv_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open config file: " + p.string());
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string_view sv = trim(line);
    if (sv.empty()) continue;
    const auto eq = sv.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key = value");
    const std::string key(trim(sv.substr(0, eq)));
    const std::string value(trim(sv.substr(eq + 1)));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, value).second)
      throw ConfigError("duplicate config key: " + key);
  }
  return kv;
}

namespace {

// Pulls keys out of kv while tracking what is left; leftovers are unknown.
class KvReader {
 public:
  explicit KvReader(const std::map<std::string, std::string>& kv) : kv_(kv) {}

  std::optional<std::string> take(const std::string& key) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return std::nullopt;
    used_.insert(key);
    return it->second;
  }

  std::string take_or(const std::string& key, const std::string& fallback) {
    auto v = take(key);
    return v ? *v : fallback;
  }

  double take_double(const std::string& key, double fallback) {
    auto v = take(key);
    if (!v) return fallback;
    try {
      return parse_double(*v);
    } catch (const DataError&) {
      throw ConfigError("config key " + key + ": not a number: '" + *v + "'");
    }
  }

  long long take_int(const std::string& key, long long fallback) {
    auto v = take(key);
    if (!v) return fallback;
    try {
      return parse_int(*v);
    } catch (const DataError&) {
      throw ConfigError("config key " + key + ": not an integer: '" + *v + "'");
    }
  }

  bool take_bool(const std::string& key, bool fallback) {
    auto v = take(key);
    if (!v) return fallback;
    const std::string s = lower(*v);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("config key " + key + ": not a boolean: '" + *v + "'");
  }

  // Keys matching a dotted prefix, e.g. drift.covariate_shift.<feature>.
  std::map<std::string, double> take_prefixed(const std::string& prefix) {
    std::map<std::string, double> out;
    for (const auto& [key, value] : kv_) {
      if (key.rfind(prefix, 0) != 0) continue;
      used_.insert(key);
      try {
        out[key.substr(prefix.size())] = parse_double(value);
      } catch (const DataError&) {
        throw ConfigError("config key " + key + ": not a number: '" + value + "'");
      }
    }
    return out;
  }

  void reject_unknown() const {
    for (const auto& [key, _] : kv_)
      if (!used_.count(key)) throw ConfigError("unknown config key: " + key);
  }

 private:
  const std::map<std::string, std::string>& kv_;
  std::set<std::string> used_;
};

std::vector<double> parse_prob_list(const std::string& s, const std::string& key) {
  std::vector<double> out;
  for (const auto& part : split(s, ',')) {
    try {
      out.push_back(parse_double(part));
    } catch (const DataError&) {
      throw ConfigError("config key " + key + ": bad list entry '" + part + "'");
    }
  }
  return out;
}

std::string join_doubles(std::span<const double> v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += fmt_double(v[i]);
  }
  return out;
}

}  // namespace

RunConfig parse_run_config(const std::map<std::string, std::string>& kv) {
  KvReader r(kv);
  RunConfig cfg;

  const auto input = r.take("input.weekly_csv");
  if (!input) throw ConfigError("missing required config key: input.weekly_csv");
  cfg.weekly_csv = *input;
  cfg.pediatric_check = r.take_bool("input.pediatric_check", false);

  engine::ExperimentConfig& e = cfg.experiment;
  {
    const std::string s = r.take_or("run.schemas", "prospective,retrospective");
    e.schemas.clear();
    for (const auto& part : split(s, ','))
      e.schemas.push_back(engine::schema_from_string(trim(part)));
  }
  {
    const std::string s = r.take_or("run.strategies", "none,last,subset,full");
    e.strategies.clear();
    for (const auto& part : split(s, ','))
      e.strategies.push_back(engine::strategy_from_string(trim(part)));
  }
  e.n_batches = static_cast<int>(r.take_int("run.n_batches", 6));
  e.holdout_fraction = r.take_double("run.holdout_fraction", 0.10);
  e.n_seeds = static_cast<int>(r.take_int("run.n_seeds", 10));
  e.bootstrap_b = static_cast<int>(r.take_int("run.bootstrap", 30));
  e.rashomon_m = static_cast<int>(r.take_int("run.rashomon", 20));
  e.rashomon_epsilon = r.take_double("run.rashomon_epsilon", 0.01);
  e.master_seed = static_cast<std::uint64_t>(r.take_int("run.master_seed", 1));
  e.n_threads = static_cast<int>(r.take_int("run.threads", 0));

  e.model_kind = learner::model_kind_from_string(r.take_or("learner.kind", "logreg"));
  e.train.learning_rate = r.take_double("learner.learning_rate", 0.1);
  e.train.l2 = r.take_double("learner.l2", 1e-3);
  e.train.max_iter = static_cast<int>(r.take_int("learner.max_iter", 500));
  e.train.tol = r.take_double("learner.tol", 1e-8);
  e.train.include_protected = r.take_bool("learner.include_protected", false);
  e.decision_threshold = r.take_double("learner.decision_threshold", 0.5);

  {
    const std::string s = r.take_or("attrs", "sex,age,education,income");
    e.attr_kinds.clear();
    for (const auto& part : split(s, ','))
      e.attr_kinds.push_back(dataio::attr_kind_from_string(trim(part)));
  }
  for (const char* name : {"age", "education", "income"}) {
    if (auto v = r.take(std::string("attr.") + name + ".threshold")) {
      e.attr_overrides[dataio::attr_kind_from_string(name)] = parse_double(*v);
    }
  }

  if (r.take_bool("abstain.enabled", false)) {
    abstain::Config a;
    a.k = static_cast<int>(r.take_int("abstain.k", 5));
    a.alpha = r.take_double("abstain.alpha", 0.05);
    e.abstention = a;
  } else {
    r.take("abstain.k");
    r.take("abstain.alpha");
  }

  r.reject_unknown();

  // Resolved echo (defaults materialized).
  auto& out = cfg.resolved;
  out["input.weekly_csv"] = cfg.weekly_csv.string();
  out["input.pediatric_check"] = cfg.pediatric_check ? "true" : "false";
  {
    std::string s;
    for (std::size_t i = 0; i < e.schemas.size(); ++i)
      s += (i ? "," : "") + engine::to_string(e.schemas[i]);
    out["run.schemas"] = s;
  }
  {
    std::string s;
    for (std::size_t i = 0; i < e.strategies.size(); ++i)
      s += (i ? "," : "") + engine::to_string(e.strategies[i]);
    out["run.strategies"] = s;
  }
  out["run.n_batches"] = std::to_string(e.n_batches);
  out["run.holdout_fraction"] = fmt_double(e.holdout_fraction);
  out["run.n_seeds"] = std::to_string(e.n_seeds);
  out["run.bootstrap"] = std::to_string(e.bootstrap_b);
  out["run.rashomon"] = std::to_string(e.rashomon_m);
  out["run.rashomon_epsilon"] = fmt_double(e.rashomon_epsilon);
  out["run.master_seed"] = std::to_string(e.master_seed);
  out["run.threads"] = std::to_string(e.n_threads);
  out["learner.kind"] = learner::to_string(e.model_kind);
  out["learner.learning_rate"] = fmt_double(e.train.learning_rate);
  out["learner.l2"] = fmt_double(e.train.l2);
  out["learner.max_iter"] = std::to_string(e.train.max_iter);
  out["learner.tol"] = fmt_double(e.train.tol);
  out["learner.include_protected"] = e.train.include_protected ? "true" : "false";
  out["learner.decision_threshold"] = fmt_double(e.decision_threshold);
  {
    std::string s;
    for (std::size_t i = 0; i < e.attr_kinds.size(); ++i)
      s += (i ? "," : "") + dataio::to_string(e.attr_kinds[i]);
    out["attrs"] = s;
  }
  for (const auto& [kind, value] : e.attr_overrides)
    out["attr." + dataio::to_string(kind) + ".threshold"] = fmt_double(value);
  out["abstain.enabled"] = e.abstention ? "true" : "false";
  if (e.abstention) {
    out["abstain.k"] = std::to_string(e.abstention->k);
    out["abstain.alpha"] = fmt_double(e.abstention->alpha);
  }
  return cfg;
}

SynthConfig parse_synth_config(const std::map<std::string, std::string>& kv) {
  KvReader r(kv);
  SynthConfig cfg;
  synthgen::CohortSpec& s = cfg.spec;

  s.n_patients = static_cast<int>(r.take_int("synth.n_patients", s.n_patients));
  s.weeks_min = static_cast<int>(r.take_int("synth.weeks_min", s.weeks_min));
  s.weeks_max = static_cast<int>(r.take_int("synth.weeks_max", s.weeks_max));
  s.date_span_days =
      static_cast<int>(r.take_int("synth.date_span_days", s.date_span_days));
  s.sex_female_ratio = r.take_double("synth.sex_female_ratio", s.sex_female_ratio);
  s.age_mean = r.take_double("synth.age_mean", s.age_mean);
  s.age_sd = r.take_double("synth.age_sd", s.age_sd);
  if (auto v = r.take("synth.education_probs"))
    s.education_probs = parse_prob_list(*v, "synth.education_probs");
  if (auto v = r.take("synth.income_probs"))
    s.income_probs = parse_prob_list(*v, "synth.income_probs");
  s.base_risk = r.take_double("synth.base_risk", s.base_risk);
  s.seed = static_cast<std::uint64_t>(r.take_int("synth.seed", 1));
  cfg.traces = lower(r.take_or("synth.mode", "weekly")) == "traces";

  s.drift.onset = r.take_double("drift.onset", 0.5);
  s.drift.covariate_shift = r.take_prefixed("drift.covariate_shift.");
  s.drift.concept_drift = r.take_prefixed("drift.concept.");
  if (auto v = r.take("drift.subgroup.attr")) {
    s.drift.subgroup_attr = dataio::attr_kind_from_string(*v);
    const std::string g = lower(r.take_or("drift.subgroup.group", "B"));
    if (g != "a" && g != "b")
      throw ConfigError("drift.subgroup.group must be A or B");
    s.drift.subgroup_group = g == "a" ? metrics::kGroupA : metrics::kGroupB;
    s.drift.subgroup_delta = r.take_prefixed("drift.subgroup.delta.");
    if (s.drift.subgroup_delta.empty())
      throw ConfigError("drift.subgroup.attr set but no drift.subgroup.delta.*");
  }

  r.reject_unknown();
  s.validate();

  auto& out = cfg.resolved;
  out["synth.n_patients"] = std::to_string(s.n_patients);
  out["synth.weeks_min"] = std::to_string(s.weeks_min);
  out["synth.weeks_max"] = std::to_string(s.weeks_max);
  out["synth.date_span_days"] = std::to_string(s.date_span_days);
  out["synth.sex_female_ratio"] = fmt_double(s.sex_female_ratio);
  out["synth.age_mean"] = fmt_double(s.age_mean);
  out["synth.age_sd"] = fmt_double(s.age_sd);
  out["synth.education_probs"] = join_doubles(s.education_probs);
  out["synth.income_probs"] = join_doubles(s.income_probs);
  out["synth.base_risk"] = fmt_double(s.base_risk);
  out["synth.seed"] = std::to_string(s.seed);
  out["synth.mode"] = cfg.traces ? "traces" : "weekly";
  out["drift.onset"] = fmt_double(s.drift.onset);
  for (const auto& [k, v] : s.drift.covariate_shift)
    out["drift.covariate_shift." + k] = fmt_double(v);
  for (const auto& [k, v] : s.drift.concept_drift)
    out["drift.concept." + k] = fmt_double(v);
  if (s.drift.subgroup_attr) {
    out["drift.subgroup.attr"] = dataio::to_string(*s.drift.subgroup_attr);
    out["drift.subgroup.group"] =
        s.drift.subgroup_group == metrics::kGroupA ? "A" : "B";
    for (const auto& [k, v] : s.drift.subgroup_delta)
      out["drift.subgroup.delta." + k] = fmt_double(v);
  }
  return cfg;
}

nlohmann::json kv_to_json(const std::map<std::string, std::string>& kv) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : kv) j[k] = v;
  return j;
}

std::map<std::string, std::string> kv_from_json(const nlohmann::json& j) {
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : j.items()) kv[k] = v.get<std::string>();
  return kv;
}

}  // namespace retrainaudit::config
