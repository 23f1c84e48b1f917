#include "enfpf/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include <Eigen/Dense>

#include "enfpf/kb_oracle.hpp"
#include "enfpf/rng.hpp"

namespace enfpf {

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) {
  CounterRng rng(seed, ids);
  return rng.next_u64();
}

Eigen::VectorXd rk4_linear(const Eigen::SparseMatrix<double>& op, const Eigen::VectorXd& v,
                           double dt) {
  const Eigen::VectorXd k1 = op * v;
  const Eigen::VectorXd k2 = op * (v + 0.5 * dt * k1);
  const Eigen::VectorXd k3 = op * (v + 0.5 * dt * k2);
  const Eigen::VectorXd k4 = op * (v + dt * k3);
  return v + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

struct AttractorPool {
  Eigen::MatrixXd states;  // rows are sampled attractor states
  Eigen::VectorXd std_dev;  // per-coordinate std over the pool
};

Eigen::VectorXd canonical_init(const ModelSystem& model, CounterRng& rng) {
  switch (model.name) {
    case ModelName::lorenz63:
    case ModelName::lorenz63_qp:
      return Eigen::Vector3d(1.0, 1.0, 1.0);
    case ModelName::lorenz96: {
      Eigen::VectorXd v = Eigen::VectorXd::Constant(model.dim, model.param("F"));
      v += 0.01 * rng.normal_vector(model.dim);
      return v;
    }
    case ModelName::kuramoto_sivashinsky: {
      // Tiny smooth multi-mode seed; grows into the attractor.
      const int n = model.dim;
      const double domain = model.param("L");
      Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
      for (int m = 1; m <= 5; ++m) {
        const double a = 0.01 * rng.normal(), b = 0.01 * rng.normal();
        for (int i = 0; i < n; ++i) {
          const double x = domain * i / n;
          u[i] += a * std::cos(2.0 * M_PI * m * x / domain) +
                  b * std::sin(2.0 * M_PI * m * x / domain);
        }
      }
      return u;
    }
    case ModelName::ornstein_uhlenbeck:
      return Eigen::VectorXd::Zero(model.dim);
  }
  throw ContractViolation("unreachable");
}

/// Long deterministic run; samples spaced enough to decorrelate.
AttractorPool build_pool(const ModelSystem& model, const StepperConfig& stepper,
                         std::uint64_t seed) {
  CounterRng rng(seed, {rng_stream::kAttractorPool});
  const bool ks = model.name == ModelName::kuramoto_sivashinsky;
  const double spin_time = ks ? 250.0 : 200.0;
  const double sample_gap = ks ? 5.0 : 1.0;
  const int n_samples = ks ? 200 : 300;
  // Quasiperiodic runs start in the far past so pool states are generic.
  const double t_start = model.name == ModelName::lorenz63_qp ? -700.0 : 0.0;

  Eigen::VectorXd state = canonical_init(model, rng);
  double t = t_start;
  const int spin_steps = int(std::lround(spin_time / stepper.dt));
  state = advance_state(model, stepper, state, t, spin_steps);
  t += spin_time;

  AttractorPool pool;
  pool.states.resize(n_samples, model.dim);
  const int gap_steps = int(std::lround(sample_gap / stepper.dt));
  for (int s = 0; s < n_samples; ++s) {
    state = advance_state(model, stepper, state, t, gap_steps);
    t += sample_gap;
    pool.states.row(s) = state.transpose();
  }
  const Eigen::RowVectorXd mean = pool.states.colwise().mean();
  pool.std_dev = ((pool.states.rowwise() - mean).colwise().squaredNorm() /
                  double(n_samples - 1))
                     .cwiseSqrt()
                     .transpose();
  return pool;
}

/// Gaussian ball around one random pool state (cold start).
Ensemble cold_start(const AttractorPool& pool, int members, double ball_frac,
                    CounterRng& rng) {
  const int d = int(pool.states.cols());
  const Eigen::RowVectorXd center = pool.states.row(int(rng.below(pool.states.rows())));
  Eigen::MatrixXd m(members, d);
  for (int j = 0; j < members; ++j)
    m.row(j) = center + (ball_frac * pool.std_dev.array() *
                         rng.normal_vector(d).array())
                            .matrix()
                            .transpose();
  return Ensemble(std::move(m));
}

/// Sample of the invariant measure: per-member pool centers, long integration.
Ensemble invariant_ensemble(const ModelSystem& model, const StepperConfig& stepper,
                            const AttractorPool& pool, int members, double spinup_time,
                            double ball_frac, std::uint64_t seed) {
  CounterRng rng(seed, {rng_stream::kReference, 1});
  const int d = model.dim;
  Eigen::MatrixXd m(members, d);
  for (int j = 0; j < members; ++j) {
    const Eigen::RowVectorXd center = pool.states.row(int(rng.below(pool.states.rows())));
    m.row(j) = center + (ball_frac * pool.std_dev.array() *
                         rng.normal_vector(d).array())
                            .matrix()
                            .transpose();
  }
  Ensemble ens(std::move(m));
  const int steps = int(std::lround(spinup_time / stepper.dt));
  const double t0 = model.name == ModelName::lorenz63_qp ? -spinup_time : 0.0;
  for (int j = 0; j < members; ++j)
    ens.members.row(j) =
        advance_state(model, stepper, ens.member(j), t0, steps, {}, j).transpose();
  return ens;
}

void advance_ensemble(const ModelSystem& model, const StepperConfig& stepper, Ensemble& ens,
                      double t0, int substeps) {
  for (int j = 0; j < ens.size(); ++j)
    ens.members.row(j) =
        advance_state(model, stepper, ens.member(j), t0, substeps, {}, j).transpose();
}

StatSeries drop_burn(const StatSeries& series, int burn) {
  StatSeries out;
  for (std::size_t i = burn; i < series.times.size(); ++i)
    out.append(series.times[i], series.values[i]);
  return out;
}

Ensemble subsample(const Ensemble& ens, int members, std::uint64_t seed) {
  if (ens.size() == members) return ens;
  if (ens.size() < members)
    throw ContractViolation("cannot subsample an ensemble below its size");
  std::vector<int> idx(ens.size());
  std::iota(idx.begin(), idx.end(), 0);
  CounterRng rng(seed, {rng_stream::kReference, 2});
  for (int i = int(idx.size()) - 1; i > 0; --i)
    std::swap(idx[i], idx[rng.below(i + 1)]);
  Eigen::MatrixXd m(members, ens.dim());
  for (int j = 0; j < members; ++j) m.row(j) = ens.members.row(idx[j]);
  return Ensemble(std::move(m));
}

struct NoiseStreams {
  std::uint64_t rep_seed;
  int p_max;

  Eigen::VectorXd obs_noise(int cycle) const {
    CounterRng rng(rep_seed, {rng_stream::kObservationNoise, std::uint64_t(cycle)});
    return rng.normal_vector(p_max);
  }
  CycleNoise cycle_noise(int cycle) const {
    CycleNoise n;
    const std::uint64_t rs = rep_seed;
    const int pm = p_max;
    n.predicted_obs = [rs, pm, cycle](int member) {
      CounterRng rng(rs, {rng_stream::kPredictedObsNoise, std::uint64_t(cycle),
                          std::uint64_t(member)});
      return rng.normal_vector(pm);
    };
    return n;
  }
};

/// Slice a cycle-noise stream generated at p_max down to the first p entries,
/// so arms with nested observation specs share draws.
CycleNoise head_noise(const CycleNoise& full, int p) {
  CycleNoise n;
  auto inner = full.predicted_obs;
  n.predicted_obs = [inner, p](int member) {
    return inner(member).head(p).eval();
  };
  n.state = full.state;
  return n;
}

struct ArmSpec {
  std::string name;
  bool filtered;
  bool use_score;
  ObservationSpec spec;  // with gamma_d set
};

Table mean_over(const std::vector<Table>& tables) { return Table::mean(tables); }

void write_outputs(const ExperimentConfig& config, const ExperimentResult& result,
                   const std::filesystem::path& out_root) {
  namespace fs = std::filesystem;
  const fs::path dir =
      out_root / to_string(config.experiment) / std::to_string(config.seed);
  fs::create_directories(dir);
  for (const auto& [arm, table] : result.series)
    table.write_file((dir / ("series_" + arm + ".csv")).string());
  {
    std::ofstream os(dir / "summary.csv");
    os << "key,value\n";
    os.precision(17);
    for (const auto& [k, v] : result.summary) os << k << "," << v << "\n";
  }
  std::ofstream echo(dir / "config.echo.json");
  echo << config_to_json(config) << "\n";
}

// ---------------------------------------------------------------------------
// track_stats: 10-member ensemble tracking the statistics of a concurrently
// evolved 100-member reference, with RMSE scored after a transient.
// ---------------------------------------------------------------------------
ExperimentResult run_track_stats(const ExperimentConfig& config, const ModelSystem& model,
                                 const StepperConfig& stepper, const AttractorPool& pool) {
  ExperimentResult result;
  const int substeps = int(std::lround(config.tau / config.dt));
  ObservationSpec spec = config.make_observation_spec(model);
  const int p = spec.p();
  const int n_means = p / 2;  // orders {1,2}: first half means, second half seconds

  std::map<std::string, std::vector<Table>> reps;
  std::vector<double> f_means_sq, f_sec_sq, u_means_sq, u_sec_sq;
  double gamma_sum_means = 0.0, gamma_sum_seconds = 0.0;

  for (int rep = 0; rep < config.replicates; ++rep) {
    const std::uint64_t rep_seed =
        derive_seed(config.seed, {rng_stream::kReplicate, std::uint64_t(rep)});

    // Concurrent truth ensemble and its statistics series.
    CounterRng ref_rng(rep_seed, {rng_stream::kReference});
    Ensemble reference = cold_start(pool, config.reference_size, config.init_ball_frac,
                                    ref_rng);
    StatSeries truth = ensemble_reference_series(model, stepper, spec, reference,
                                                 config.n_cycles, config.tau);
    spec.gamma_d = calibrate_gamma(drop_burn(truth, config.scoring_burn),
                                   config.gamma_fraction);
    gamma_sum_means = spec.gamma_d.diagonal().head(n_means).sum();
    gamma_sum_seconds = spec.gamma_d.diagonal().tail(p - n_means).sum();

    CounterRng init_rng(rep_seed, {rng_stream::kInitialEnsemble});
    const Ensemble start = cold_start(pool, config.ensemble_size, config.init_ball_frac,
                                      init_rng);
    NoiseStreams noise{rep_seed, p};
    FilterSettings settings{config.use_score,
                            config.gain_mode == "direct" ? GainMode::direct
                                                         : GainMode::square_root,
                            config.tau, substeps};

    for (const bool filtered : {true, false}) {
      Ensemble ens = start;
      Table table;
      table.columns = {"cycle", "t", "rmse_means", "rmse_seconds"};
      double t = 0.0;
      for (int cycle = 0; cycle < config.n_cycles; ++cycle) {
        const Eigen::VectorXd truth_stats = truth.values[cycle + 1];
        const bool active = filtered && cycle >= config.filter_window.first &&
                            cycle < config.filter_window.second;
        if (active) {
          const Eigen::VectorXd y = synthesize_observation(truth_stats, spec.gamma_d,
                                                           noise.obs_noise(cycle));
          ens = enfpf_cycle(ens, model, stepper, settings, spec, y, t,
                            noise.cycle_noise(cycle));
        } else {
          advance_ensemble(model, stepper, ens, t, substeps);
        }
        t += config.tau;
        const Eigen::VectorXd stats = ensemble_statistics(spec, ens);
        const double rm = stat_rmse(stats.head(n_means), truth_stats.head(n_means));
        const double rs =
            stat_rmse(stats.tail(p - n_means), truth_stats.tail(p - n_means));
        table.add_row({double(cycle + 1), t, rm, rs});
        if (cycle >= config.scoring_burn) {
          auto& ms = filtered ? f_means_sq : u_means_sq;
          auto& ss = filtered ? f_sec_sq : u_sec_sq;
          ms.push_back(rm * rm);
          ss.push_back(rs * rs);
        }
      }
      reps[filtered ? "filtered" : "unfiltered"].push_back(std::move(table));
    }
  }

  auto rms = [](const std::vector<double>& sq) {
    return std::sqrt(std::accumulate(sq.begin(), sq.end(), 0.0) / double(sq.size()));
  };
  result.summary["filtered_rmse_means"] = rms(f_means_sq);
  result.summary["filtered_rmse_seconds"] = rms(f_sec_sq);
  result.summary["unfiltered_rmse_means"] = rms(u_means_sq);
  result.summary["unfiltered_rmse_seconds"] = rms(u_sec_sq);
  result.summary["obs_error_means"] = std::sqrt(gamma_sum_means);
  result.summary["obs_error_seconds"] = std::sqrt(gamma_sum_seconds);
  for (auto& [arm, tables] : reps) result.series[arm] = mean_over(tables);
  return result;
}

// ---------------------------------------------------------------------------
// Acceleration experiments (invariant_accel, l96_accel, ks_accel): fixed
// invariant statistics assimilated into a cold-started ensemble; W1 to a
// stored invariant sample recorded per cycle.
// ---------------------------------------------------------------------------
ExperimentResult run_acceleration(const ExperimentConfig& config, const ModelSystem& model,
                                  const StepperConfig& stepper, const AttractorPool& pool) {
  ExperimentResult result;
  const int substeps = int(std::lround(config.tau / config.dt));
  ObservationSpec spec = config.make_observation_spec(model);
  const int p = spec.p();

  // Truth: invariant-measure statistics from a single long trajectory.
  CounterRng pool_rng(config.seed, {rng_stream::kReference, 7});
  const Eigen::VectorXd ergodic_init =
      pool.states.row(int(pool_rng.below(pool.states.rows()))).transpose();
  const Eigen::VectorXd truth_stats = ergodic_reference(
      model, stepper, spec, config.ergodic_time, 100.0, ergodic_init);

  // Observation covariance: time variability of the statistics over an
  // evolved reference ensemble.
  const std::uint64_t ref_seed = derive_seed(config.seed, {rng_stream::kReference});
  Ensemble gamma_ens = invariant_ensemble(model, stepper, pool, config.reference_size,
                                          config.spinup_time, config.init_ball_frac,
                                          ref_seed);
  const StatSeries ref_series = ensemble_reference_series(
      model, stepper, spec, gamma_ens, config.ref_cycles, config.tau);
  spec.gamma_d =
      calibrate_gamma(drop_burn(ref_series, config.ref_burn), config.gamma_fraction);

  // Invariant sample the W1 metric compares against.
  const Ensemble invariant = subsample(
      invariant_ensemble(model, stepper, pool, config.reference_size, config.spinup_time,
                         config.init_ball_frac,
                         derive_seed(config.seed, {rng_stream::kReference, 3})),
      config.ensemble_size, config.seed);

  const bool marginal_only = model.dim > 3;  // joint assignment on low-d models only

  std::vector<ArmSpec> arms;
  if (config.experiment == ExperimentKind::ks_accel) {
    arms.push_back({"unfiltered", false, false, spec});
    arms.push_back({"score_off", true, false, spec});
    arms.push_back({"score_on", true, true, spec});
  } else {
    arms.push_back({"unfiltered", false, false, spec});
    arms.push_back({"filtered", true, config.use_score, spec});
  }

  std::map<std::string, std::vector<Table>> reps;
  for (int rep = 0; rep < config.replicates; ++rep) {
    const std::uint64_t rep_seed =
        derive_seed(config.seed, {rng_stream::kReplicate, std::uint64_t(rep)});
    CounterRng init_rng(rep_seed, {rng_stream::kInitialEnsemble});
    const Ensemble start =
        cold_start(pool, config.ensemble_size, config.init_ball_frac, init_rng);
    NoiseStreams noise{rep_seed, p};
    FilterSettings settings{false,
                            config.gain_mode == "direct" ? GainMode::direct
                                                         : GainMode::square_root,
                            config.tau, substeps};

    for (const ArmSpec& arm : arms) {
      Ensemble ens = start;
      Table table;
      table.columns = marginal_only ? std::vector<std::string>{"cycle", "t", "w1_marginal"}
                                    : std::vector<std::string>{"cycle", "t", "w1_joint",
                                                               "w1_marginal"};
      double t = 0.0;
      FilterSettings arm_settings = settings;
      arm_settings.use_score = arm.use_score;
      for (int cycle = 0; cycle < config.n_cycles; ++cycle) {
        const bool active = arm.filtered && cycle >= config.filter_window.first &&
                            cycle < config.filter_window.second;
        if (active) {
          const Eigen::VectorXd y = synthesize_observation(truth_stats, arm.spec.gamma_d,
                                                           noise.obs_noise(cycle));
          ens = enfpf_cycle(ens, model, stepper, arm_settings, arm.spec, y, t,
                            noise.cycle_noise(cycle));
        } else {
          advance_ensemble(model, stepper, ens, t, substeps);
        }
        t += config.tau;
        const double wm = marginal_w1_mean(ens, invariant);
        if (marginal_only) {
          table.add_row({double(cycle + 1), t, wm});
        } else {
          table.add_row({double(cycle + 1), t,
                         w1_assignment(ens.members, invariant.members), wm});
        }
      }
      reps[arm.name].push_back(std::move(table));
    }
  }
  for (auto& [arm, tables] : reps) result.series[arm] = mean_over(tables);

  const std::string metric = marginal_only ? "w1_marginal" : "w1_joint";
  const int end_row = config.n_cycles - 1;
  for (const auto& [arm, table] : result.series) {
    result.summary[metric + "_final_" + arm] = table.at(end_row, metric);
    if (config.filter_window.second <= config.n_cycles && config.filter_window.second > 0)
      result.summary[metric + "_at_window_end_" + arm] =
          table.at(config.filter_window.second - 1, metric);
  }
  return result;
}

// ---------------------------------------------------------------------------
// moment_ablation: arms assimilate nested subsets of the marginal moments of
// x and y at every cycle; joint W1 to the invariant sample is recorded.
// ---------------------------------------------------------------------------
ExperimentResult run_moment_ablation(const ExperimentConfig& config,
                                     const ModelSystem& model,
                                     const StepperConfig& stepper,
                                     const AttractorPool& pool) {
  ExperimentResult result;
  const int substeps = int(std::lround(config.tau / config.dt));

  // Largest spec: moments 1..3 of the observed variables; arms use prefixes.
  ObservationSpec full = config.make_observation_spec(model);
  const int p_full = full.p();
  const int vars = int(config.observed_variables.size());

  CounterRng pool_rng(config.seed, {rng_stream::kReference, 7});
  const Eigen::VectorXd ergodic_init =
      pool.states.row(int(pool_rng.below(pool.states.rows()))).transpose();
  const Eigen::VectorXd truth_full = ergodic_reference(
      model, stepper, full, config.ergodic_time, 100.0, ergodic_init);

  Ensemble gamma_ens = invariant_ensemble(
      model, stepper, pool, config.reference_size, config.spinup_time,
      config.init_ball_frac, derive_seed(config.seed, {rng_stream::kReference}));
  const StatSeries ref_series = ensemble_reference_series(
      model, stepper, full, gamma_ens, config.ref_cycles, config.tau);
  full.gamma_d =
      calibrate_gamma(drop_burn(ref_series, config.ref_burn), config.gamma_fraction);

  const Ensemble invariant = subsample(
      invariant_ensemble(model, stepper, pool, config.reference_size, config.spinup_time,
                         config.init_ball_frac,
                         derive_seed(config.seed, {rng_stream::kReference, 3})),
      config.ensemble_size, config.seed);

  std::vector<ArmSpec> arms;
  arms.push_back({"unfiltered", false, false, full});
  const std::vector<std::pair<std::string, int>> arm_orders = {
      {"first", 1}, {"first_second", 2}, {"first_second_third", 3}};
  for (const auto& [name, max_order] : arm_orders) {
    ObservationSpec sub;
    const int pk = vars * max_order;
    sub.components.assign(full.components.begin(), full.components.begin() + pk);
    sub.gamma_d = full.gamma_d.topLeftCorner(pk, pk);
    arms.push_back({name, true, config.use_score, std::move(sub)});
  }

  std::map<std::string, std::vector<Table>> reps;
  for (int rep = 0; rep < config.replicates; ++rep) {
    const std::uint64_t rep_seed =
        derive_seed(config.seed, {rng_stream::kReplicate, std::uint64_t(rep)});
    CounterRng init_rng(rep_seed, {rng_stream::kInitialEnsemble});
    const Ensemble start =
        cold_start(pool, config.ensemble_size, config.init_ball_frac, init_rng);
    NoiseStreams noise{rep_seed, p_full};

    for (const ArmSpec& arm : arms) {
      const int pk = arm.spec.p();
      FilterSettings settings{arm.use_score,
                              config.gain_mode == "direct" ? GainMode::direct
                                                           : GainMode::square_root,
                              config.tau, substeps};
      Ensemble ens = start;
      Table table;
      table.columns = {"cycle", "t", "w1_joint"};
      double t = 0.0;
      for (int cycle = 0; cycle < config.n_cycles; ++cycle) {
        const bool active = arm.filtered && cycle >= config.filter_window.first &&
                            cycle < config.filter_window.second;
        if (active) {
          const Eigen::VectorXd y =
              synthesize_observation(truth_full.head(pk), arm.spec.gamma_d,
                                     noise.obs_noise(cycle).head(pk));
          ens = enfpf_cycle(ens, model, stepper, settings, arm.spec, y, t,
                            head_noise(noise.cycle_noise(cycle), pk));
        } else {
          advance_ensemble(model, stepper, ens, t, substeps);
        }
        t += config.tau;
        table.add_row(
            {double(cycle + 1), t, w1_assignment(ens.members, invariant.members)});
      }
      reps[arm.name].push_back(std::move(table));
    }
  }
  for (auto& [arm, tables] : reps) result.series[arm] = mean_over(tables);

  for (const auto& [arm, table] : result.series) {
    double acc = 0.0;
    int count = 0;
    for (int cycle = 10; cycle <= 50 && cycle <= config.n_cycles; ++cycle) {
      acc += table.at(cycle - 1, "w1_joint");
      ++count;
    }
    result.summary["mean_w1_10_50_" + arm] = acc / count;
  }
  return result;
}

// ---------------------------------------------------------------------------
// pullback: time-dependent invariant measures of the quasiperiodically forced
// system. A spun-up reference provides truth statistics and snapshots; a
// second spun-up ensemble provides the attainable W1 floor.
// ---------------------------------------------------------------------------
ExperimentResult run_pullback(const ExperimentConfig& config, const ModelSystem& model,
                              const StepperConfig& stepper, const AttractorPool& pool) {
  ExperimentResult result;
  const int substeps = int(std::lround(config.tau / config.dt));
  ObservationSpec spec = config.make_observation_spec(model);
  const int p = spec.p();
  const double t0 = 0.0;

  // Reference and floor ensembles, spun up from t0 - spinup_time.
  Ensemble reference = invariant_ensemble(model, stepper, pool, config.reference_size,
                                          config.spinup_time, config.init_ball_frac,
                                          derive_seed(config.seed, {rng_stream::kReference}));
  Ensemble floor_ens = invariant_ensemble(
      model, stepper, pool, config.reference_size, config.spinup_time,
      config.init_ball_frac, derive_seed(config.seed, {rng_stream::kReference, 3}));

  // Co-evolve both over [t0, t0 + n_cycles tau]; record snapshots, statistics
  // and the floor W1 series.
  std::vector<Ensemble> snapshots;
  StatSeries truth = ensemble_reference_series(model, stepper, spec, reference,
                                               config.n_cycles, config.tau, t0, 0,
                                               &snapshots);
  Table floor_table;
  floor_table.columns = {"cycle", "t", "w1_joint", "w1_marginal"};
  {
    Ensemble f = floor_ens;
    double t = t0;
    for (int cycle = 0; cycle < config.n_cycles; ++cycle) {
      advance_ensemble(model, stepper, f, t, substeps);
      t += config.tau;
      floor_table.add_row({double(cycle + 1), t,
                           w1_assignment(f.members, snapshots[cycle].members),
                           marginal_w1_mean(f, snapshots[cycle])});
    }
  }

  spec.gamma_d = calibrate_gamma(drop_burn(truth, 1), config.gamma_fraction);

  std::map<std::string, std::vector<Table>> reps;
  for (int rep = 0; rep < config.replicates; ++rep) {
    const std::uint64_t rep_seed =
        derive_seed(config.seed, {rng_stream::kReplicate, std::uint64_t(rep)});
    CounterRng init_rng(rep_seed, {rng_stream::kInitialEnsemble});
    const Ensemble start =
        cold_start(pool, config.ensemble_size, config.init_ball_frac, init_rng);
    NoiseStreams noise{rep_seed, p};
    FilterSettings settings{config.use_score,
                            config.gain_mode == "direct" ? GainMode::direct
                                                         : GainMode::square_root,
                            config.tau, substeps};

    for (const bool filtered : {true, false}) {
      Ensemble ens = start;
      Table table;
      table.columns = {"cycle", "t", "w1_joint", "w1_marginal"};
      double t = t0;
      for (int cycle = 0; cycle < config.n_cycles; ++cycle) {
        const bool active = filtered && cycle >= config.filter_window.first &&
                            cycle < config.filter_window.second;
        if (active) {
          const Eigen::VectorXd y = synthesize_observation(
              truth.values[cycle + 1], spec.gamma_d, noise.obs_noise(cycle));
          ens = enfpf_cycle(ens, model, stepper, settings, spec, y, t,
                            noise.cycle_noise(cycle));
        } else {
          advance_ensemble(model, stepper, ens, t, substeps);
        }
        t += config.tau;
        table.add_row({double(cycle + 1), t,
                       w1_assignment(ens.members, snapshots[cycle].members),
                       marginal_w1_mean(ens, snapshots[cycle])});
      }
      reps[filtered ? "filtered" : "unfiltered"].push_back(std::move(table));
    }
  }
  for (auto& [arm, tables] : reps) result.series[arm] = mean_over(tables);
  result.series["floor"] = floor_table;

  // Asymptotic floor over the last half, 1.2x threshold, sustained crossing.
  double floor_asym = 0.0;
  const int half = config.n_cycles / 2;
  for (int cycle = half; cycle < config.n_cycles; ++cycle)
    floor_asym += floor_table.at(cycle, "w1_joint");
  floor_asym /= (config.n_cycles - half);
  const double threshold = 1.2 * floor_asym;

  auto first_reach = [&](const Table& table) {
    constexpr int kSustain = 5;
    for (int c = 0; c + kSustain <= config.n_cycles; ++c) {
      bool ok = true;
      for (int k = 0; k < kSustain; ++k)
        if (table.at(c + k, "w1_joint") > threshold) {
          ok = false;
          break;
        }
      if (ok) return double(c + 1);
    }
    return double(config.n_cycles + 1);
  };
  result.summary["floor_asymptote"] = floor_asym;
  result.summary["threshold"] = threshold;
  result.summary["cycles_to_floor_filtered"] = first_reach(result.series["filtered"]);
  result.summary["cycles_to_floor_unfiltered"] = first_reach(result.series["unfiltered"]);
  return result;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config,
                                const std::filesystem::path* out_dir) {
  const auto start_time = std::chrono::steady_clock::now();
  ExperimentResult result;
  if (config.experiment == ExperimentKind::kb_verify) {
    result = run_kb_verify(config, nullptr);
  } else {
    const ModelSystem model = config.make_model();
    const StepperConfig stepper = StepperConfig::for_model(model, config.dt);
    const AttractorPool pool = build_pool(model, stepper, config.seed);
    switch (config.experiment) {
      case ExperimentKind::track_stats:
        result = run_track_stats(config, model, stepper, pool);
        break;
      case ExperimentKind::invariant_accel:
      case ExperimentKind::l96_accel:
      case ExperimentKind::ks_accel:
        result = run_acceleration(config, model, stepper, pool);
        break;
      case ExperimentKind::moment_ablation:
        result = run_moment_ablation(config, model, stepper, pool);
        break;
      case ExperimentKind::pullback:
        result = run_pullback(config, model, stepper, pool);
        break;
      case ExperimentKind::kb_verify:
        break;
    }
  }
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
  std::cerr << to_string(config.experiment) << " seed " << config.seed << ": "
            << wall << " s\n";

  if (out_dir) write_outputs(config, result, *out_dir);
  return result;
}

ExperimentResult run_kb_verify(const ExperimentConfig& config,
                               const std::filesystem::path* out_dir) {
  ExperimentResult result;
  const KbVerifyParams& kb = config.kb;

  // --- Theorem-1 arm: sigma = 0 dynamics, linear (or quadratic) observable,
  // grid KB filter vs moment-space filter under a shared dz stream.
  auto theorem_run = [&](int n) {
    const Grid1D grid = Grid1D::make(n, -8.0, 8.0);
    const Eigen::SparseMatrix<double> l_star =
        build_fp_operator_ou(grid, kb.theta, 0.0);
    Eigen::VectorXd phi = grid.centers;
    if (kb.observable == "quadratic") phi = grid.centers.cwiseAbs2();
    const Eigen::MatrixXd phi_mat = phi;
    const Eigen::MatrixXd gamma = Eigen::MatrixXd::Constant(1, 1, kb.gamma);

    GridDensityState grid_state =
        init_normalized(grid, 0.5, 1.2, kb.rank, 0.05, config.seed);
    // Truth density, same operator, drives the shared observation stream.
    Eigen::VectorXd rho_truth(grid.n);
    for (int i = 0; i < grid.n; ++i) {
      const double z = (grid.centers[i] + 0.5) / 1.0;
      rho_truth[i] = std::exp(-0.5 * z * z);
    }
    rho_truth /= rho_truth.sum() * grid.h;

    MomentFilterState moment_state;
    double hm0, hch0;
    project_grid(grid_state, phi, grid.h, &hm0, &hch0);
    moment_state.mean = Eigen::VectorXd::Constant(1, hm0);
    moment_state.cov = Eigen::MatrixXd::Constant(1, 1, hch0);
    const Eigen::MatrixXd l_mat = Eigen::MatrixXd::Constant(1, 1, -kb.theta);
    const Eigen::MatrixXd h_mat = Eigen::MatrixXd::Identity(1, 1);

    ProjectionSeries grid_series, moment_series;
    const int steps = int(std::lround(kb.t_final / kb.dt));
    const double sqrt_gamma = std::sqrt(kb.gamma);
    for (int s = 0; s <= steps; ++s) {
      double hm, hch;
      project_grid(grid_state, phi, grid.h, &hm, &hch);
      grid_series.times.push_back(s * kb.dt);
      grid_series.hm.push_back(hm);
      grid_series.hch.push_back(hch);
      moment_series.times.push_back(s * kb.dt);
      moment_series.hm.push_back(moment_state.mean[0]);
      moment_series.hch.push_back(moment_state.cov(0, 0));
      if (s == steps) break;

      CounterRng rng(config.seed, {rng_stream::kOracle, 2, std::uint64_t(s)});
      const double h_truth = grid.h * phi.dot(rho_truth);
      Eigen::VectorXd dz_over_dt(1);
      dz_over_dt[0] = h_truth + sqrt_gamma * rng.normal() / std::sqrt(kb.dt);

      grid_state = kb_filter_step(grid_state, l_star, phi_mat, grid.h, gamma, dz_over_dt,
                                  kb.dt);
      moment_state =
          moment_filter_step(moment_state, l_mat, h_mat, gamma, dz_over_dt, kb.dt);
      rho_truth = rk4_linear(l_star, rho_truth, kb.dt);
    }
    return std::make_pair(grid_series, moment_series);
  };

  auto max_rel_errors = [](const ProjectionSeries& g, const ProjectionSeries& m) {
    double scale_m = 0.0, scale_c = 0.0;
    for (std::size_t i = 0; i < m.times.size(); ++i) {
      scale_m = std::max(scale_m, std::abs(m.hm[i]));
      scale_c = std::max(scale_c, std::abs(m.hch[i]));
    }
    double em = 0.0, ec = 0.0;
    for (std::size_t i = 0; i < m.times.size(); ++i) {
      em = std::max(em, std::abs(g.hm[i] - m.hm[i]));
      ec = std::max(ec, std::abs(g.hch[i] - m.hch[i]));
    }
    return std::make_pair(em / scale_m, ec / scale_c);
  };

  const auto [grid_series, moment_series] = theorem_run(kb.n);
  const auto errs = max_rel_errors(grid_series, moment_series);
  result.summary["theorem1_max_rel_err_hm"] = errs.first;
  result.summary["theorem1_max_rel_err_hch"] = errs.second;

  const auto [grid_series2, moment_series2] = theorem_run(2 * kb.n);
  const auto errs2 = max_rel_errors(grid_series2, moment_series2);
  result.summary["theorem1_max_rel_err_hm_2n"] = errs2.first;
  result.summary["theorem1_max_rel_err_hch_2n"] = errs2.second;

  {
    Table eq;
    eq.columns = {"t", "Hm_grid", "Hm_moment", "HCH_grid", "HCH_moment", "err_m", "err_c"};
    for (const EquivalenceRecord& r : equivalence_report(grid_series, moment_series))
      eq.add_row({r.t, r.hm_grid, r.hm_moment, r.hch_grid, r.hch_moment, r.err_m, r.err_c});
    result.series["equivalence"] = std::move(eq);
  }

  // --- Lemma-1 / Remark-2 arm: diffusive dynamics, normalization tracking.
  {
    const double sigma = kb.lemma_sigma;
    const double stat_std = sigma / std::sqrt(2.0 * kb.theta);
    const Grid1D grid = Grid1D::make(kb.lemma_n, -8.0 * stat_std, 8.0 * stat_std);
    const Eigen::SparseMatrix<double> l_star =
        build_fp_operator_ou(grid, kb.theta, sigma);
    const double dt = 0.25 * grid.h * grid.h / (sigma * sigma);
    const Eigen::VectorXd phi = grid.centers;
    const Eigen::MatrixXd gamma = Eigen::MatrixXd::Constant(1, 1, kb.gamma);

    GridDensityState state =
        init_normalized(grid, 0.0, stat_std, kb.rank, 0.05, config.seed + 1);
    Eigen::VectorXd rho_truth(grid.n);
    for (int i = 0; i < grid.n; ++i) {
      const double z = (grid.centers[i] - 0.2 * stat_std) / stat_std;
      rho_truth[i] = std::exp(-0.5 * z * z);
    }
    rho_truth /= rho_truth.sum() * grid.h;

    Table norm_table;
    norm_table.columns = {"step", "t", "mass_err", "c_one_inf"};
    double mass_max = 0.0, cone_max = 0.0;
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(grid.n);
    for (int s = 0; s < kb.lemma_steps; ++s) {
      CounterRng rng(config.seed, {rng_stream::kOracle, 3, std::uint64_t(s)});
      Eigen::VectorXd dz_over_dt(1);
      dz_over_dt[0] = grid.h * phi.dot(rho_truth) +
                      std::sqrt(kb.gamma) * rng.normal() / std::sqrt(dt);
      state = kb_filter_step(state, l_star, phi, grid.h, gamma, dz_over_dt, dt);
      rho_truth = rk4_linear(l_star, rho_truth, dt);

      const double mass_err = std::abs(grid.h * state.m.sum() - 1.0);
      const double cone = (state.c * ones).cwiseAbs().maxCoeff();
      mass_max = std::max(mass_max, mass_err);
      cone_max = std::max(cone_max, cone);
      if (s % 50 == 0 || s == kb.lemma_steps - 1)
        norm_table.add_row({double(s), s * dt, mass_err, cone});
    }
    result.summary["lemma1_mass_err_max"] = mass_max;
    result.summary["lemma1_c_one_inf_max"] = cone_max;
    result.series["normalization"] = std::move(norm_table);

    // Remark 2: samples rho = m + sqrt(C) xi stay normalized.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(state.c);
    const Eigen::VectorXd evals = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    const Eigen::MatrixXd sqrt_c =
        eig.eigenvectors() * evals.asDiagonal() * eig.eigenvectors().transpose();
    CounterRng rng(config.seed, {rng_stream::kOracle, 4});
    double sample_mass_max = 0.0;
    for (int s = 0; s < kb.remark_samples; ++s) {
      const Eigen::VectorXd rho = state.m + sqrt_c * rng.normal_vector(grid.n);
      sample_mass_max =
          std::max(sample_mass_max, std::abs(grid.h * rho.sum() - 1.0));
    }
    result.summary["remark2_sample_mass_err_max"] = sample_mass_max;
  }

  if (out_dir) write_outputs(config, result, *out_dir);
  return result;
}

void emit_summary(const std::map<std::string, double>& summary, std::ostream& os) {
  std::size_t width = 0;
  for (const auto& [k, v] : summary) width = std::max(width, k.size());
  os.precision(6);
  for (const auto& [k, v] : summary) {
    os << k;
    for (std::size_t i = k.size(); i < width + 2; ++i) os << ' ';
    os << v << "\n";
  }
}

}  // namespace enfpf
