#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "enfpf/experiments.hpp"

namespace enfpf {

using nlohmann::json;

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::track_stats: return "track_stats";
    case ExperimentKind::invariant_accel: return "invariant_accel";
    case ExperimentKind::moment_ablation: return "moment_ablation";
    case ExperimentKind::l96_accel: return "l96_accel";
    case ExperimentKind::ks_accel: return "ks_accel";
    case ExperimentKind::pullback: return "pullback";
    case ExperimentKind::kb_verify: return "kb_verify";
  }
  return "?";
}

std::vector<std::string> experiment_names() {
  return {"track_stats", "invariant_accel", "moment_ablation", "l96_accel",
          "ks_accel",    "pullback",        "kb_verify"};
}

ExperimentKind experiment_from_string(const std::string& name) {
  for (int k = 0; k <= int(ExperimentKind::kb_verify); ++k)
    if (to_string(ExperimentKind(k)) == name) return ExperimentKind(k);
  throw ContractViolation("unknown experiment '" + name + "'");
}

ExperimentConfig ExperimentConfig::defaults(ExperimentKind kind) {
  ExperimentConfig c;
  c.experiment = kind;
  switch (kind) {
    case ExperimentKind::track_stats:
      // Time-varying statistics of Lorenz63: 10-member ensemble tracking a
      // concurrently evolved 100-member reference, every 0.2 time units.
      c.ensemble_size = 10;
      c.reference_size = 100;
      c.n_cycles = 1500;
      c.filter_window = {0, 1500};
      c.tau = 0.2;
      c.dt = 0.05;
      c.moment_orders = {1, 2};
      c.gamma_fraction = 0.1;
      c.scoring_burn = 100;
      c.replicates = 1;
      c.seed = 1;
      break;
    case ExperimentKind::invariant_accel:
      c.ensemble_size = 100;
      c.reference_size = 100;
      c.n_cycles = 100;
      c.filter_window = {0, 30};
      c.tau = 0.2;
      c.dt = 0.05;
      c.moment_orders = {1, 2};
      c.gamma_fraction = 0.2;
      c.replicates = 10;
      c.seed = 1;
      break;
    case ExperimentKind::moment_ablation:
      c.ensemble_size = 100;
      c.reference_size = 100;
      c.n_cycles = 55;
      c.filter_window = {0, 55};
      c.tau = 0.2;
      c.dt = 0.05;
      c.moment_orders = {1, 2, 3};
      c.observed_variables = {0, 1};
      c.gamma_fraction = 0.2;
      c.replicates = 25;
      c.seed = 1;
      break;
    case ExperimentKind::l96_accel:
      c.model_params = {{"F", 8.0}, {"D", 40.0}};
      c.ensemble_size = 100;
      c.reference_size = 100;
      c.n_cycles = 40;
      c.filter_window = {0, 40};
      c.tau = 0.05;
      c.dt = 0.05;
      c.moment_orders = {1, 2};
      c.gamma_fraction = 0.2;
      c.replicates = 2;
      c.seed = 1;
      break;
    case ExperimentKind::ks_accel:
      c.model_params = {{"L", 22.0}, {"n_modes", 64.0}};
      c.ensemble_size = 100;
      c.reference_size = 100;
      c.n_cycles = 30;
      c.filter_window = {0, 30};
      c.tau = 2.0;
      c.dt = 0.25;
      c.moment_orders = {1, 2};
      c.gamma_fraction = 0.2;
      c.replicates = 1;
      c.seed = 4;
      c.ref_cycles = 300;
      c.ref_burn = 0;
      break;
    case ExperimentKind::pullback:
      c.ensemble_size = 100;
      c.reference_size = 100;
      c.n_cycles = 400;
      c.filter_window = {0, 400};
      c.tau = 0.05;
      c.dt = 0.05;
      c.moment_orders = {1, 2, 3};
      c.gamma_fraction = 0.2;
      c.replicates = 3;
      c.seed = 1;
      c.init_ball_frac = 0.01;
      break;
    case ExperimentKind::kb_verify:
      c.replicates = 1;
      c.seed = 1;
      break;
  }
  return c;
}

ModelSystem ExperimentConfig::make_model() const {
  auto get = [&](const std::string& key, double fallback) {
    auto it = model_params.find(key);
    return it == model_params.end() ? fallback : it->second;
  };
  switch (experiment) {
    case ExperimentKind::track_stats:
    case ExperimentKind::invariant_accel:
    case ExperimentKind::moment_ablation:
      return ModelSystem::lorenz63(get("sigma", 10.0), get("r", 28.0), get("beta", 8.0 / 3.0));
    case ExperimentKind::l96_accel:
      return ModelSystem::lorenz96(get("F", 8.0), int(get("D", 40.0)));
    case ExperimentKind::ks_accel:
      return ModelSystem::kuramoto_sivashinsky(get("L", 22.0), int(get("n_modes", 64.0)));
    case ExperimentKind::pullback:
      return ModelSystem::lorenz63_quasiperiodic(get("sigma", 10.0), get("beta", 8.0 / 3.0));
    case ExperimentKind::kb_verify:
      return ModelSystem::ornstein_uhlenbeck(kb.theta, kb.lemma_sigma);
  }
  throw ContractViolation("unreachable");
}

ObservationSpec ExperimentConfig::make_observation_spec(const ModelSystem& model) const {
  if (observed_variables.empty())
    return ObservationSpec::moments(model.dim, moment_orders);
  return ObservationSpec::moments_of(observed_variables, moment_orders);
}

namespace {

void validate(const ExperimentConfig& c) {
  if (c.replicates < 1) throw ContractViolation("config: replicates must be >= 1");
  if (c.ensemble_size < 2) throw ContractViolation("config: J must be >= 2");
  if (c.tau <= 0 || c.dt <= 0) throw ContractViolation("config: tau and dt must be positive");
  const double ratio = c.tau / c.dt;
  if (std::abs(ratio - std::lround(ratio)) > 1e-9)
    throw ContractViolation("config: tau must be an integer multiple of dt");
  if (c.filter_window.first < 0 || c.filter_window.second > c.n_cycles ||
      c.filter_window.first > c.filter_window.second)
    throw ContractViolation(
        "config: filter_window must satisfy 0 <= start <= end <= n_cycles");
  for (int o : c.moment_orders)
    if (o < 1 || o > 3) throw ContractViolation("config: moment_orders entries must be 1..3");
  if (c.gamma_fraction <= 0) throw ContractViolation("config: gamma_fraction must be > 0");
  if (c.gain_mode != "direct" && c.gain_mode != "square_root")
    throw ContractViolation("config: gain_mode must be 'direct' or 'square_root'");
}

const std::set<std::string> kKnownKeys = {
    "experiment",     "model_params",   "J",           "J_ref",
    "n_cycles",       "filter_window",  "tau",         "dt",
    "moment_orders",  "observed_variables", "gamma_fraction", "use_score",
    "gain_mode",      "seed",           "replicates",  "init_ball_frac",
    "spinup_time",    "ref_cycles",     "ref_burn",    "scoring_burn",
    "ergodic_time",   "kb"};

const std::set<std::string> kKnownKbKeys = {
    "n",       "dt",          "t_final",     "theta",          "gamma",
    "rank",    "observable",  "lemma_n",     "lemma_sigma",    "lemma_steps",
    "remark_samples"};

}  // namespace

ExperimentConfig parse_config_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ContractViolation(std::string("config parse error: ") + e.what());
  }
  if (!j.contains("experiment"))
    throw ContractViolation("config: missing required key 'experiment'");
  ExperimentConfig c = ExperimentConfig::defaults(
      experiment_from_string(j.at("experiment").get<std::string>()));

  for (const auto& [key, value] : j.items()) {
    if (!kKnownKeys.count(key))
      throw ContractViolation("config: unknown key '" + key + "'");
    (void)value;
  }
  if (j.contains("model_params"))
    for (const auto& [key, value] : j.at("model_params").items())
      c.model_params[key] = value.get<double>();
  if (j.contains("J")) c.ensemble_size = j.at("J").get<int>();
  if (j.contains("J_ref")) c.reference_size = j.at("J_ref").get<int>();
  if (j.contains("n_cycles")) c.n_cycles = j.at("n_cycles").get<int>();
  if (j.contains("filter_window")) {
    auto w = j.at("filter_window");
    if (!w.is_array() || w.size() != 2)
      throw ContractViolation("config: filter_window must be [start, end]");
    c.filter_window = {w[0].get<int>(), w[1].get<int>()};
  }
  if (j.contains("tau")) c.tau = j.at("tau").get<double>();
  if (j.contains("dt")) c.dt = j.at("dt").get<double>();
  if (j.contains("moment_orders"))
    c.moment_orders = j.at("moment_orders").get<std::vector<int>>();
  if (j.contains("observed_variables"))
    c.observed_variables = j.at("observed_variables").get<std::vector<int>>();
  if (j.contains("gamma_fraction")) c.gamma_fraction = j.at("gamma_fraction").get<double>();
  if (j.contains("use_score")) c.use_score = j.at("use_score").get<bool>();
  if (j.contains("gain_mode")) c.gain_mode = j.at("gain_mode").get<std::string>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("replicates")) c.replicates = j.at("replicates").get<int>();
  if (j.contains("init_ball_frac")) c.init_ball_frac = j.at("init_ball_frac").get<double>();
  if (j.contains("spinup_time")) c.spinup_time = j.at("spinup_time").get<double>();
  if (j.contains("ref_cycles")) c.ref_cycles = j.at("ref_cycles").get<int>();
  if (j.contains("ref_burn")) c.ref_burn = j.at("ref_burn").get<int>();
  if (j.contains("scoring_burn")) c.scoring_burn = j.at("scoring_burn").get<int>();
  if (j.contains("ergodic_time")) c.ergodic_time = j.at("ergodic_time").get<double>();
  if (j.contains("kb")) {
    const auto& kb = j.at("kb");
    for (const auto& [key, value] : kb.items()) {
      if (!kKnownKbKeys.count(key))
        throw ContractViolation("config: unknown key 'kb." + key + "'");
      (void)value;
    }
    if (kb.contains("n")) c.kb.n = kb.at("n").get<int>();
    if (kb.contains("dt")) c.kb.dt = kb.at("dt").get<double>();
    if (kb.contains("t_final")) c.kb.t_final = kb.at("t_final").get<double>();
    if (kb.contains("theta")) c.kb.theta = kb.at("theta").get<double>();
    if (kb.contains("gamma")) c.kb.gamma = kb.at("gamma").get<double>();
    if (kb.contains("rank")) c.kb.rank = kb.at("rank").get<int>();
    if (kb.contains("observable")) c.kb.observable = kb.at("observable").get<std::string>();
    if (kb.contains("lemma_n")) c.kb.lemma_n = kb.at("lemma_n").get<int>();
    if (kb.contains("lemma_sigma")) c.kb.lemma_sigma = kb.at("lemma_sigma").get<double>();
    if (kb.contains("lemma_steps")) c.kb.lemma_steps = kb.at("lemma_steps").get<int>();
    if (kb.contains("remark_samples"))
      c.kb.remark_samples = kb.at("remark_samples").get<int>();
  }
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ContractViolation("config file not found: " + path.string());
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_config_json(buf.str());
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["experiment"] = to_string(c.experiment);
  j["model_params"] = c.model_params;
  j["J"] = c.ensemble_size;
  j["J_ref"] = c.reference_size;
  j["n_cycles"] = c.n_cycles;
  j["filter_window"] = {c.filter_window.first, c.filter_window.second};
  j["tau"] = c.tau;
  j["dt"] = c.dt;
  j["moment_orders"] = c.moment_orders;
  j["observed_variables"] = c.observed_variables;
  j["gamma_fraction"] = c.gamma_fraction;
  j["use_score"] = c.use_score;
  j["gain_mode"] = c.gain_mode;
  j["seed"] = c.seed;
  j["replicates"] = c.replicates;
  j["init_ball_frac"] = c.init_ball_frac;
  j["spinup_time"] = c.spinup_time;
  j["ref_cycles"] = c.ref_cycles;
  j["ref_burn"] = c.ref_burn;
  j["scoring_burn"] = c.scoring_burn;
  j["ergodic_time"] = c.ergodic_time;
  if (c.experiment == ExperimentKind::kb_verify) {
    j["kb"] = {{"n", c.kb.n},
               {"dt", c.kb.dt},
               {"t_final", c.kb.t_final},
               {"theta", c.kb.theta},
               {"gamma", c.kb.gamma},
               {"rank", c.kb.rank},
               {"observable", c.kb.observable},
               {"lemma_n", c.kb.lemma_n},
               {"lemma_sigma", c.kb.lemma_sigma},
               {"lemma_steps", c.kb.lemma_steps},
               {"remark_samples", c.kb.remark_samples}};
  }
  return j.dump(2);
}

}  // namespace enfpf
