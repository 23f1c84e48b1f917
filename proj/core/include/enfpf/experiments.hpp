#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "enfpf/csv.hpp"
#include "enfpf/dynamics.hpp"
#include "enfpf/filter.hpp"
#include "enfpf/metrics.hpp"
#include "enfpf/observe.hpp"

namespace enfpf {

enum class ExperimentKind {
  track_stats,
  invariant_accel,
  moment_ablation,
  l96_accel,
  ks_accel,
  pullback,
  kb_verify,
};

std::string to_string(ExperimentKind kind);
ExperimentKind experiment_from_string(const std::string& name);
std::vector<std::string> experiment_names();

/// Grid Kalman-Bucy verification parameters (kb_verify only).
struct KbVerifyParams {
  int n = 400;
  double dt = 1e-3;
  double t_final = 2.0;
  double theta = 1.0;
  double gamma = 0.5;
  int rank = 5;
  std::string observable = "linear";  // "linear" or "quadratic"
  // Lemma-1 / Remark-2 arm (diffusive dynamics).
  int lemma_n = 200;
  double lemma_sigma = 1.0;
  int lemma_steps = 2000;
  int remark_samples = 100;
};

/// Declarative experiment description; bundled JSON configs mirror the
/// experiment protocols of the reference study.
struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::track_stats;

  std::map<std::string, double> model_params;  // overrides for the model's defaults

  int ensemble_size = 10;       // J
  int reference_size = 100;     // J_ref
  int n_cycles = 1500;
  std::pair<int, int> filter_window = {0, 1500};  // half-open [start, end)
  double tau = 0.2;
  double dt = 0.05;

  std::vector<int> moment_orders = {1, 2};
  std::vector<int> observed_variables;  // empty = all state variables
  double gamma_fraction = 0.2;

  bool use_score = false;
  std::string gain_mode = "direct";

  std::uint64_t seed = 1;
  int replicates = 1;

  double init_ball_frac = 0.05;  // cold-start ball std as fraction of attractor std
  double spinup_time = 500.0;    // invariant-ensemble integration time
  int ref_cycles = 800;          // gamma-calibration reference length (cycles)
  int ref_burn = 100;            // reference cycles dropped before calibration
  int scoring_burn = 100;        // cycles dropped from RMSE averaging (track_stats)
  double ergodic_time = 1000.0;  // single-trajectory time average length

  KbVerifyParams kb;

  /// Protocol defaults for a named experiment.
  static ExperimentConfig defaults(ExperimentKind kind);

  ModelSystem make_model() const;
  ObservationSpec make_observation_spec(const ModelSystem& model) const;
};

/// Parse + validate a JSON config file. Unknown keys are rejected; missing
/// keys take the per-experiment defaults.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& config);

/// Everything the acceptance checks need, plus the CSV series.
struct ExperimentResult {
  /// One replicate-averaged table per named arm (e.g. "filtered", "unfiltered").
  std::map<std::string, Table> series;
  /// Scalar end-state summaries, documented per experiment in the README.
  std::map<std::string, double> summary;
};

/// Execute the configured protocol. When out_dir is non-null, writes
/// <out>/<experiment>/<seed>/{series_<arm>.csv, summary.csv, config.echo.json}
/// plus per-replicate tables.
ExperimentResult run_experiment(const ExperimentConfig& config,
                                const std::filesystem::path* out_dir = nullptr);

/// Grid KB filter verification (normalization, sampling, moment-filter
/// equivalence); writes equivalence/normalization CSVs when out_dir is given.
ExperimentResult run_kb_verify(const ExperimentConfig& config,
                               const std::filesystem::path* out_dir = nullptr);

/// Replicate-averaged summary rows -> human-readable table.
void emit_summary(const std::map<std::string, double>& summary, std::ostream& os);

}  // namespace enfpf
