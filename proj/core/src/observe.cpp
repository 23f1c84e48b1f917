#include "enfpf/observe.hpp"

#include <cmath>
#include <ostream>

#include <Eigen/Cholesky>

namespace enfpf {

namespace {

double eval_component(const ObservableComponent& comp, const Eigen::VectorXd& state) {
  if (const auto* m = std::get_if<MonomialComponent>(&comp)) {
    if (m->index < 0 || m->index >= state.size())
      throw ContractViolation("observable index out of range");
    double x = state[m->index];
    switch (m->order) {
      case 1: return x;
      case 2: return x * x;
      case 3: return x * x * x;
      default: throw ContractViolation("monomial order must be 1, 2 or 3");
    }
  }
  const auto& c = std::get<CrossComponent>(comp);
  if (c.i < 0 || c.i >= state.size() || c.j < 0 || c.j >= state.size())
    throw ContractViolation("cross-moment index out of range");
  return state[c.i] * state[c.j];
}

}  // namespace

ObservationSpec ObservationSpec::moments(int dim, const std::vector<int>& orders) {
  std::vector<int> vars(dim);
  for (int i = 0; i < dim; ++i) vars[i] = i;
  return moments_of(vars, orders);
}

ObservationSpec ObservationSpec::moments_of(const std::vector<int>& variables,
                                            const std::vector<int>& orders) {
  ObservationSpec spec;
  for (int order : orders)
    for (int v : variables) spec.components.push_back(MonomialComponent{v, order});
  spec.gamma_d = Eigen::MatrixXd::Identity(spec.p(), spec.p());
  return spec;
}

Eigen::VectorXd apply_observable(const ObservationSpec& spec, const Eigen::VectorXd& state) {
  Eigen::VectorXd out(spec.p());
  for (int a = 0; a < spec.p(); ++a) out[a] = eval_component(spec.components[a], state);
  return out;
}

Eigen::VectorXd ensemble_statistics(const ObservationSpec& spec, const Ensemble& ensemble) {
  if (ensemble.size() < 1) throw ContractViolation("ensemble_statistics needs J >= 1");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(spec.p());
  for (int j = 0; j < ensemble.size(); ++j)
    acc += apply_observable(spec, ensemble.member(j));
  return acc / ensemble.size();
}

void StatSeries::append(double t, Eigen::VectorXd v) {
  if (!times.empty() && t <= times.back())
    throw ContractViolation("StatSeries times must be strictly increasing");
  times.push_back(t);
  values.push_back(std::move(v));
}

void StatSeries::to_csv(std::ostream& os) const {
  const int p = values.empty() ? 0 : int(values.front().size());
  os << "t";
  for (int a = 1; a <= p; ++a) os << ",s" << a;
  os << "\n";
  os.precision(17);
  for (std::size_t i = 0; i < times.size(); ++i) {
    os << times[i];
    for (int a = 0; a < p; ++a) os << "," << values[i][a];
    os << "\n";
  }
}

Eigen::VectorXd ergodic_reference(const ModelSystem& model, const StepperConfig& stepper,
                                  const ObservationSpec& spec, double t_total, double t_burn,
                                  const Eigen::VectorXd& init, std::uint64_t noise_seed) {
  if (!(t_total > t_burn) || t_burn < 0)
    throw ContractViolation("ergodic_reference needs t_total > t_burn >= 0");
  const long n_steps = std::lround(t_total / stepper.dt);
  const long burn_steps = std::lround(t_burn / stepper.dt);

  Eigen::VectorXd state = init;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(spec.p());
  long counted = 0;
  for (long s = 0; s < n_steps; ++s) {
    const double t = s * stepper.dt;
    SubstepNoiseFn noise;
    if (model.stochastic()) {
      noise = [&](int) {
        CounterRng rng(noise_seed, {rng_stream::kStateNoise, std::uint64_t(s)});
        return rng.normal_vector(model.dim);
      };
    }
    state = advance_state(model, stepper, state, t, 1, noise);
    if (s >= burn_steps) {
      acc += apply_observable(spec, state);
      ++counted;
    }
  }
  return acc / double(counted);
}

StatSeries ensemble_reference_series(const ModelSystem& model, const StepperConfig& stepper,
                                     const ObservationSpec& spec, Ensemble ensemble,
                                     int n_cycles, double tau, double t0,
                                     std::uint64_t noise_seed,
                                     std::vector<Ensemble>* snapshots) {
  if (ensemble.size() < 1) throw ContractViolation("reference ensemble must be non-empty");
  const int substeps = int(std::lround(tau / stepper.dt));
  if (substeps < 1 || std::abs(substeps * stepper.dt - tau) > 1e-9 * tau)
    throw ContractViolation("tau must be an integer multiple of the stepper dt");

  StatSeries series;
  series.append(t0, ensemble_statistics(spec, ensemble));
  double t = t0;
  for (int cycle = 0; cycle < n_cycles; ++cycle) {
    for (int j = 0; j < ensemble.size(); ++j) {
      SubstepNoiseFn noise;
      if (model.stochastic()) {
        noise = [&, j](int substep) {
          CounterRng rng(noise_seed, {rng_stream::kStateNoise, std::uint64_t(j),
                                      std::uint64_t(cycle), std::uint64_t(substep)});
          return rng.normal_vector(model.dim);
        };
      }
      ensemble.members.row(j) =
          advance_state(model, stepper, ensemble.member(j), t, substeps, noise, j)
              .transpose();
    }
    t += tau;
    series.append(t, ensemble_statistics(spec, ensemble));
    if (snapshots) snapshots->push_back(ensemble);
  }
  return series;
}

Eigen::MatrixXd calibrate_gamma(const StatSeries& reference, double fraction, bool* clamped) {
  if (reference.values.size() < 2)
    throw ContractViolation("calibrate_gamma needs at least two reference entries");
  if (fraction <= 0) throw ContractViolation("fraction must be positive");
  constexpr double kFloor = 1e-12;

  const int p = int(reference.values.front().size());
  const int n = int(reference.values.size());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(p);
  for (const auto& v : reference.values) mean += v;
  mean /= n;
  Eigen::VectorXd var = Eigen::VectorXd::Zero(p);
  for (const auto& v : reference.values) var += (v - mean).cwiseAbs2();
  var /= (n - 1);

  bool any_clamped = false;
  Eigen::MatrixXd gamma = Eigen::MatrixXd::Zero(p, p);
  for (int a = 0; a < p; ++a) {
    double entry = fraction * fraction * var[a];
    if (entry < kFloor) {
      entry = kFloor;
      any_clamped = true;
    }
    gamma(a, a) = entry;
  }
  if (clamped) *clamped = any_clamped;
  return gamma;
}

Eigen::VectorXd synthesize_observation(const Eigen::VectorXd& truth_stats,
                                       const Eigen::MatrixXd& gamma_d,
                                       const Eigen::VectorXd& noise_draw) {
  if (truth_stats.size() != gamma_d.rows() || gamma_d.rows() != gamma_d.cols() ||
      noise_draw.size() != truth_stats.size())
    throw ContractViolation("synthesize_observation dimension mismatch");
  Eigen::LLT<Eigen::MatrixXd> llt(gamma_d);
  if (llt.info() != Eigen::Success)
    throw ContractViolation("gamma_d is not positive definite");
  return truth_stats + llt.matrixL() * noise_draw;
}

}  // namespace enfpf
