#pragma once

#include <functional>

#include <Eigen/Core>

#include "enfpf/dynamics.hpp"
#include "enfpf/filter_types.hpp"
#include "enfpf/observe.hpp"

namespace enfpf {

enum class GainMode { direct, square_root };

/// Per-cycle filter configuration. tau = substeps * stepper dt, exactly.
struct FilterSettings {
  bool use_score = false;
  GainMode gain_mode = GainMode::direct;
  double tau = 0.0;
  int substeps = 1;
};

struct GainResult {
  Eigen::MatrixXd gain;  // d x p
  Eigen::MatrixXd cvh;   // d x p
  Eigen::MatrixXd chh;   // p x p, symmetric PSD
};

Eigen::VectorXd ensemble_mean(const Ensemble& ensemble);

/// Sample cross-covariance C^{vh} and observable auto-covariance C^{hh},
/// both 1/(J-1)-normalized.
GainResult cross_covariances(const Ensemble& ensemble, const ObservationSpec& spec);

/// K = C^{vh} (C^{hh} + Gamma_d)^{-1} through a symmetric solve; a jitter of
/// 1e-10 trace/p is added once on factorization failure.
Eigen::MatrixXd gain_direct(const Eigen::MatrixXd& cvh, const Eigen::MatrixXd& chh,
                            const Eigen::MatrixXd& gamma_d);

/// Same gain computed in ensemble space: K = V Y^T (Gamma + Y Y^T)^{-1} via the
/// Woodbury identity, given the diagonal of Gamma_d^{-1}. Cost is
/// O(J^3 + J^2 p + J p^2 + d J p).
Eigen::MatrixXd gain_square_root(const Ensemble& ensemble, const ObservationSpec& spec,
                                 const Eigen::VectorXd& gamma_inv_diag);

/// Gaussian score approximation -(C^{vv})^{-1}(point - mean); requires J > d
/// in practice, throws SingularCovarianceError otherwise.
Eigen::VectorXd gaussian_score(const Ensemble& ensemble, const Eigen::VectorXd& point);

/// Standard normal draws for one cycle, indexed by member (and substep for the
/// forecast noise) so results do not depend on evaluation order.
struct CycleNoise {
  /// d-vector for (member, substep); only used when the model is stochastic.
  std::function<Eigen::VectorXd(int member, int substep)> state;
  /// p-vector for member; the predicted-observation perturbation eta^(j).
  std::function<Eigen::VectorXd(int member)> predicted_obs;
};

/// One forecast--analysis cycle of the discrete-time EnFPF: propagate each
/// member `substeps` steps from t0, form the Kalman-style gain from the
/// forecast ensemble, then update every member with the ensemble-mean
/// predicted statistic plus its own eta draw (and, optionally, the Gaussian
/// score correction evaluated at the forecast members).
Ensemble enfpf_cycle(const Ensemble& ensemble, const ModelSystem& model,
                     const StepperConfig& stepper, const FilterSettings& settings,
                     const ObservationSpec& spec, const Eigen::VectorXd& y_obs, double t0,
                     const CycleNoise& noise);

/// Analysis updates executed since process start or the last reset; lets
/// tests assert that unfiltered arms never run the analysis step.
std::uint64_t analysis_step_count();
void reset_analysis_step_count();

}  // namespace enfpf
