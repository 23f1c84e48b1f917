#include "enfpf/filter.hpp"

#include <atomic>
#include <cmath>

#include <Eigen/Cholesky>

namespace enfpf {

namespace {
std::atomic<std::uint64_t> g_analysis_steps{0};
}

std::uint64_t analysis_step_count() { return g_analysis_steps.load(); }
void reset_analysis_step_count() { g_analysis_steps.store(0); }

namespace {

/// Solve (S + jitter-on-retry) X = B for symmetric S via LDLT.
Eigen::MatrixXd spd_solve(Eigen::MatrixXd s, const Eigen::MatrixXd& b) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(s);
  if (ldlt.info() == Eigen::Success) {
    Eigen::MatrixXd x = ldlt.solve(b);
    if (x.allFinite()) return x;
  }
  const double jitter = 1e-10 * s.trace() / double(s.rows());
  s.diagonal().array() += jitter;
  ldlt.compute(s);
  if (ldlt.info() != Eigen::Success)
    throw SingularCovarianceError("symmetric solve failed after jitter retry");
  return ldlt.solve(b);
}

Eigen::MatrixXd anomalies(const Eigen::MatrixXd& rows) {
  return (rows.rowwise() - rows.colwise().mean()) / std::sqrt(double(rows.rows()) - 1.0);
}

Eigen::MatrixXd observable_rows(const ObservationSpec& spec, const Ensemble& ensemble) {
  Eigen::MatrixXd h(ensemble.size(), spec.p());
  for (int j = 0; j < ensemble.size(); ++j)
    h.row(j) = apply_observable(spec, ensemble.member(j)).transpose();
  return h;
}

}  // namespace

Eigen::VectorXd ensemble_mean(const Ensemble& ensemble) {
  if (ensemble.size() < 1) throw ContractViolation("ensemble_mean of empty ensemble");
  return ensemble.members.colwise().mean().transpose();
}

GainResult cross_covariances(const Ensemble& ensemble, const ObservationSpec& spec) {
  if (ensemble.size() < 2) throw ContractViolation("covariances need J >= 2");
  const Eigen::MatrixXd v = anomalies(ensemble.members);          // J x d, scaled
  const Eigen::MatrixXd y = anomalies(observable_rows(spec, ensemble));  // J x p
  GainResult result;
  result.cvh = v.transpose() * y;
  result.chh = y.transpose() * y;
  return result;
}

Eigen::MatrixXd gain_direct(const Eigen::MatrixXd& cvh, const Eigen::MatrixXd& chh,
                            const Eigen::MatrixXd& gamma_d) {
  if (!cvh.allFinite() || !chh.allFinite() || !gamma_d.allFinite())
    throw ContractViolation("gain_direct given non-finite input");
  // K^T solves (Chh + Gamma) K^T = Cvh^T; Chh + Gamma is symmetric.
  return spd_solve(chh + gamma_d, cvh.transpose()).transpose();
}

Eigen::MatrixXd gain_square_root(const Ensemble& ensemble, const ObservationSpec& spec,
                                 const Eigen::VectorXd& gamma_inv_diag) {
  if (ensemble.size() < 2) throw ContractViolation("gain_square_root needs J >= 2");
  if (gamma_inv_diag.size() != spec.p())
    throw ContractViolation("gamma_inv_diag has wrong length");
  const int big_j = ensemble.size();

  const Eigen::MatrixXd v = anomalies(ensemble.members).transpose();          // d x J
  const Eigen::MatrixXd y = anomalies(observable_rows(spec, ensemble)).transpose();  // p x J

  // K = V Y^T W with W = (Gamma + Y Y^T)^{-1}; by Woodbury,
  // Y^T W = (I_J + Y^T Gamma^{-1} Y)^{-1} Y^T Gamma^{-1}, all ops in ensemble space.
  const Eigen::MatrixXd z = gamma_inv_diag.asDiagonal() * y;    // p x J
  Eigen::MatrixXd small = y.transpose() * z;                    // J x J
  small += Eigen::MatrixXd::Identity(big_j, big_j);
  const Eigen::MatrixXd ytw = spd_solve(std::move(small), z.transpose());  // J x p
  Eigen::MatrixXd gain = v * ytw;                                          // d x p
  if (!gain.allFinite()) throw ContractViolation("square-root gain is non-finite");
  return gain;
}

Eigen::VectorXd gaussian_score(const Ensemble& ensemble, const Eigen::VectorXd& point) {
  if (point.size() != ensemble.dim()) throw ContractViolation("score point has wrong length");
  const Eigen::MatrixXd v = anomalies(ensemble.members);
  const Eigen::MatrixXd cvv = v.transpose() * v;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(cvv);
  const Eigen::VectorXd centered = point - ensemble_mean(ensemble);
  Eigen::VectorXd score = -ldlt.solve(centered);
  if (ldlt.info() != Eigen::Success || !score.allFinite())
    throw SingularCovarianceError(
        "empirical state covariance is singular (score needs J > d)");
  return score;
}

Ensemble enfpf_cycle(const Ensemble& ensemble, const ModelSystem& model,
                     const StepperConfig& stepper, const FilterSettings& settings,
                     const ObservationSpec& spec, const Eigen::VectorXd& y_obs, double t0,
                     const CycleNoise& noise) {
  if (ensemble.size() < 2) throw ContractViolation("enfpf_cycle needs J >= 2");
  if (y_obs.size() != spec.p()) throw ContractViolation("y_obs has wrong length");
  if (settings.substeps < 1) throw ContractViolation("substeps must be >= 1");
  g_analysis_steps.fetch_add(1);
  const int big_j = ensemble.size();

  // Forecast. Members propagate independently; draws are indexed, not sequential.
  Ensemble forecast = ensemble;
  for (int j = 0; j < big_j; ++j) {
    SubstepNoiseFn member_noise;
    if (model.stochastic() && noise.state)
      member_noise = [&, j](int substep) { return noise.state(j, substep); };
    forecast.members.row(j) =
        advance_state(model, stepper, ensemble.member(j), t0, settings.substeps,
                      member_noise, j)
            .transpose();
  }

  // Gain from forecast statistics.
  const GainResult cov = cross_covariances(forecast, spec);
  Eigen::MatrixXd gain;
  if (settings.gain_mode == GainMode::direct) {
    gain = gain_direct(cov.cvh, cov.chh, spec.gamma_d);
  } else {
    gain = gain_square_root(forecast, spec, spec.gamma_d.diagonal().cwiseInverse());
  }

  const Eigen::VectorXd mean_h = ensemble_statistics(spec, forecast);
  Eigen::LLT<Eigen::MatrixXd> gamma_llt(spec.gamma_d);
  if (gamma_llt.info() != Eigen::Success)
    throw ContractViolation("gamma_d is not positive definite");
  const Eigen::MatrixXd gamma_sqrt = gamma_llt.matrixL();

  // Score term: factor C^{vv} once, evaluate at all forecast members.
  Eigen::MatrixXd score_updates;  // J x d
  if (settings.use_score) {
    const Eigen::MatrixXd v = anomalies(forecast.members);
    Eigen::LDLT<Eigen::MatrixXd> cvv_ldlt(v.transpose() * v);
    const Eigen::MatrixXd centered =
        forecast.members.rowwise() - forecast.members.colwise().mean();
    const Eigen::MatrixXd scores = -cvv_ldlt.solve(centered.transpose());  // d x J
    if (cvv_ldlt.info() != Eigen::Success || !scores.allFinite())
      throw SingularCovarianceError(
          "empirical state covariance is singular (score needs J > d)");
    const Eigen::MatrixXd score_pre = gain * spec.gamma_d * gain.transpose();
    score_updates = (score_pre * scores).transpose();
  }

  // Analysis: v = vhat + K (y - (E[h] + eta_j)) (+ K Gamma K^T score(vhat_j)).
  Ensemble analysis = forecast;
  for (int j = 0; j < big_j; ++j) {
    Eigen::VectorXd eta = noise.predicted_obs
                              ? (gamma_sqrt * noise.predicted_obs(j)).eval()
                              : Eigen::VectorXd::Zero(spec.p());
    const Eigen::VectorXd innovation = y_obs - (mean_h + eta);
    Eigen::VectorXd update = gain * innovation;
    if (settings.use_score) update += score_updates.row(j).transpose();
    analysis.members.row(j) += update.transpose();
  }
  if (!analysis.members.allFinite())
    throw DivergenceError("analysis produced non-finite members",
                          t0 + settings.tau, -1, -1);
  return analysis;
}

}  // namespace enfpf
