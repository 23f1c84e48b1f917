#pragma once

#include <iosfwd>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "enfpf/dynamics.hpp"
#include "enfpf/filter_types.hpp"
#include "enfpf/rng.hpp"

namespace enfpf {

/// One uncentered monomial statistic: E[state[index]^order], order in {1,2,3}.
struct MonomialComponent {
  int index;
  int order;
};

/// One uncentered cross second moment: E[state[i] * state[j]].
struct CrossComponent {
  int i;
  int j;
};

using ObservableComponent = std::variant<MonomialComponent, CrossComponent>;

/// The statistic map 𝔥: ordered component list plus observation covariance.
struct ObservationSpec {
  std::vector<ObservableComponent> components;
  Eigen::MatrixXd gamma_d;  // p x p, symmetric positive definite (floored)

  int p() const { return static_cast<int>(components.size()); }

  /// Moments of the given orders for every variable of a d-dimensional state,
  /// ordered by order then variable: (x1..xd, x1^2..xd^2, ...).
  static ObservationSpec moments(int dim, const std::vector<int>& orders);
  /// Same but restricted to a subset of variables.
  static ObservationSpec moments_of(const std::vector<int>& variables,
                                    const std::vector<int>& orders);
};

Eigen::VectorXd apply_observable(const ObservationSpec& spec, const Eigen::VectorXd& state);

Eigen::VectorXd ensemble_statistics(const ObservationSpec& spec, const Ensemble& ensemble);

/// Statistic vectors along a time axis.
struct StatSeries {
  std::vector<double> times;
  std::vector<Eigen::VectorXd> values;

  void append(double t, Eigen::VectorXd v);
  /// CSV with header `t,s1,...,sp`.
  void to_csv(std::ostream& os) const;
};

/// Long-trajectory time average of the observables after a burn-in; the
/// invariant-measure statistics y-dagger for the acceleration experiments.
/// `noise_seed` feeds the Euler-Maruyama draws of stochastic models.
Eigen::VectorXd ergodic_reference(const ModelSystem& model, const StepperConfig& stepper,
                                  const ObservationSpec& spec, double t_total, double t_burn,
                                  const Eigen::VectorXd& init, std::uint64_t noise_seed = 0);

/// Evolve a reference ensemble and record its statistics every tau.
/// Records the initial statistic at t=0 and one entry per cycle.
StatSeries ensemble_reference_series(const ModelSystem& model, const StepperConfig& stepper,
                                     const ObservationSpec& spec, Ensemble ensemble,
                                     int n_cycles, double tau, double t0 = 0.0,
                                     std::uint64_t noise_seed = 0,
                                     std::vector<Ensemble>* snapshots = nullptr);

/// Diagonal Gamma_d with entries (fraction * temporal std of each statistic)^2,
/// clamped below at 1e-12. Sets *clamped if any entry hit the floor.
Eigen::MatrixXd calibrate_gamma(const StatSeries& reference, double fraction,
                                bool* clamped = nullptr);

/// truth + sqrt(Gamma_d) * noise_draw.
Eigen::VectorXd synthesize_observation(const Eigen::VectorXd& truth_stats,
                                       const Eigen::MatrixXd& gamma_d,
                                       const Eigen::VectorXd& noise_draw);

}  // namespace enfpf
