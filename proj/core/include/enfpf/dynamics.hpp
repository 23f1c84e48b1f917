#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>

#include <Eigen/Core>

#include "enfpf/errors.hpp"

namespace enfpf {

enum class ModelName {
  lorenz63,
  lorenz63_qp,
  lorenz96,
  kuramoto_sivashinsky,
  ornstein_uhlenbeck,
};

enum class Scheme { rk4, etdrk4, euler_maruyama };

std::string to_string(ModelName name);
std::string to_string(Scheme scheme);

/// Drift/diffusion definition of one of the five test systems.
///
/// `diffusion` is the d-by-d matrix Sigma of the SDE dv = f dt + sqrt(Sigma) dW;
/// it is identically zero for the deterministic models.
struct ModelSystem {
  ModelName name;
  int dim;
  std::map<std::string, double> params;
  Eigen::MatrixXd diffusion;

  bool stochastic() const { return diffusion.size() > 0 && !diffusion.isZero(0.0); }
  double param(const std::string& key) const;

  static ModelSystem lorenz63(double sigma = 10.0, double r = 28.0, double beta = 8.0 / 3.0);
  static ModelSystem lorenz63_quasiperiodic(double sigma = 10.0, double beta = 8.0 / 3.0);
  static ModelSystem lorenz96(double forcing = 8.0, int dim = 40);
  static ModelSystem kuramoto_sivashinsky(double domain = 22.0, int n_modes = 64);
  static ModelSystem ornstein_uhlenbeck(double theta, double sigma_noise, int dim = 1);
};

/// Quasiperiodic Rayleigh forcing r(t) = 28 + sin(2 pi t) + sin(sqrt3 t) + sin(sqrt17 t).
double forcing_r(double t);

/// Instantaneous drift f(state, t).
Eigen::VectorXd drift_eval(const ModelSystem& model, const Eigen::VectorXd& state, double t);

/// Per-mode ETDRK4 coefficient tables on the half spectrum (n/2+1 modes).
/// phi-function values are averaged over 32 points of a unit contour around
/// each scaled eigenvalue, which is well conditioned near z = 0.
struct EtdrkCoeffs {
  int n = 0;          // physical grid size
  double dt = 0.0;
  Eigen::ArrayXd e_full;    // exp(dt L)
  Eigen::ArrayXd e_half;    // exp(dt L / 2)
  Eigen::ArrayXd q;
  Eigen::ArrayXd f1, f2, f3;
  Eigen::ArrayXd g_imag;    // Im of -0.5 i k, 2/3-rule dealiased, Nyquist zeroed
};

EtdrkCoeffs make_etdrk4_coeffs(const ModelSystem& ks_model, double dt);

/// Half-spectrum state of a real field (n/2+1 complex coefficients, unnormalized
/// forward-FFT convention). Conjugate symmetry of the full spectrum is implied by
/// the representation, so it cannot drift; see ks_to_spectral/ks_to_physical.
using SpectralState = Eigen::VectorXcd;

SpectralState ks_to_spectral(const Eigen::VectorXd& physical);
Eigen::VectorXd ks_to_physical(const SpectralState& spectral, int n);

/// One ETDRK4 step of u_t = -u_xxxx - u_xx - u u_x in Fourier space.
SpectralState etdrk4_step(const SpectralState& state, const EtdrkCoeffs& coeffs);

/// Time-stepper configuration bound to one model.
struct StepperConfig {
  Scheme scheme;
  double dt;
  std::optional<EtdrkCoeffs> etdrk4;

  /// Picks the scheme the model requires (KS -> etdrk4, Sigma != 0 -> Euler-Maruyama).
  static StepperConfig for_model(const ModelSystem& model, double dt);
};

/// Classical RK4 update; deterministic models only.
Eigen::VectorXd rk4_step(const ModelSystem& model, const Eigen::VectorXd& state, double t,
                         double dt);

/// Euler-Maruyama update with caller-supplied standard normal draw:
/// state + f dt + sqrt(Sigma dt) xi  (the discrete-time noise rescaling Sigma_d = Sigma dt).
Eigen::VectorXd em_step(const ModelSystem& model, const Eigen::VectorXd& state, double t,
                        double dt, const Eigen::VectorXd& noise_draw);

/// Standard normal d-vector for a given substep; only consulted for stochastic models.
using SubstepNoiseFn = std::function<Eigen::VectorXd(int substep)>;

/// Advance one state `substeps` steps from time t0 with the configured scheme.
/// Throws DivergenceError (with time stamp and substep) on non-finite output.
Eigen::VectorXd advance_state(const ModelSystem& model, const StepperConfig& stepper,
                              Eigen::VectorXd state, double t0, int substeps,
                              const SubstepNoiseFn& noise = {}, int member = -1);

}  // namespace enfpf
