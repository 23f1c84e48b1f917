#include "enfpf/dynamics.hpp"

#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <vector>

#include <Eigen/Cholesky>
#include <fftw3.h>

namespace enfpf {

namespace {

void check_dim(const ModelSystem& model, const Eigen::VectorXd& state) {
  if (state.size() != model.dim)
    throw ContractViolation("state has length " + std::to_string(state.size()) +
                            ", model " + to_string(model.name) + " expects " +
                            std::to_string(model.dim));
}

// FFTW plans for one grid size. Plans are created once and executed through the
// new-array interface on internal buffers; callers copy in/out (n is small).
class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    real_ = fftw_alloc_real(n);
    spec_ = fftw_alloc_complex(n / 2 + 1);
    fwd_ = fftw_plan_dft_r2c_1d(n, real_, spec_, FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_c2r_1d(n, spec_, real_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
    fftw_free(real_);
    fftw_free(spec_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  Eigen::VectorXcd forward(const Eigen::VectorXd& u) {
    std::lock_guard<std::mutex> lock(mu_);
    for (int i = 0; i < n_; ++i) real_[i] = u[i];
    fftw_execute(fwd_);
    Eigen::VectorXcd out(n_ / 2 + 1);
    for (int i = 0; i <= n_ / 2; ++i) out[i] = {spec_[i][0], spec_[i][1]};
    return out;
  }

  Eigen::VectorXd inverse(const Eigen::VectorXcd& v) {
    std::lock_guard<std::mutex> lock(mu_);
    for (int i = 0; i <= n_ / 2; ++i) {
      spec_[i][0] = v[i].real();
      spec_[i][1] = v[i].imag();
    }
    fftw_execute(inv_);
    Eigen::VectorXd out(n_);
    const double scale = 1.0 / n_;  // FFTW c2r is unnormalized
    for (int i = 0; i < n_; ++i) out[i] = real_[i] * scale;
    return out;
  }

 private:
  int n_;
  double* real_;
  fftw_complex* spec_;
  fftw_plan fwd_, inv_;
  std::mutex mu_;
};

RealFft& fft_for(int n) {
  static std::mutex registry_mu;
  static std::map<int, std::unique_ptr<RealFft>> registry;
  std::lock_guard<std::mutex> lock(registry_mu);
  auto it = registry.find(n);
  if (it == registry.end()) it = registry.emplace(n, std::make_unique<RealFft>(n)).first;
  return *it->second;
}

// Nonlinear term N(v) = -0.5 i k FFT(u^2), dealiased; computed on the half spectrum.
Eigen::VectorXcd ks_nonlinear(const Eigen::VectorXcd& v, const EtdrkCoeffs& c) {
  Eigen::VectorXd u = fft_for(c.n).inverse(v);
  Eigen::VectorXcd w = fft_for(c.n).forward(u.cwiseProduct(u));
  for (int i = 0; i < w.size(); ++i)
    w[i] = std::complex<double>(0.0, c.g_imag[i]) * w[i];
  return w;
}

}  // namespace

std::string to_string(ModelName name) {
  switch (name) {
    case ModelName::lorenz63: return "lorenz63";
    case ModelName::lorenz63_qp: return "lorenz63_qp";
    case ModelName::lorenz96: return "lorenz96";
    case ModelName::kuramoto_sivashinsky: return "kuramoto_sivashinsky";
    case ModelName::ornstein_uhlenbeck: return "ornstein_uhlenbeck";
  }
  return "?";
}

std::string to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::rk4: return "rk4";
    case Scheme::etdrk4: return "etdrk4";
    case Scheme::euler_maruyama: return "euler_maruyama";
  }
  return "?";
}

double ModelSystem::param(const std::string& key) const {
  auto it = params.find(key);
  if (it == params.end())
    throw ContractViolation("model " + to_string(name) + " has no parameter '" + key + "'");
  return it->second;
}

ModelSystem ModelSystem::lorenz63(double sigma, double r, double beta) {
  return {ModelName::lorenz63, 3, {{"sigma", sigma}, {"r", r}, {"beta", beta}},
          Eigen::MatrixXd::Zero(3, 3)};
}

ModelSystem ModelSystem::lorenz63_quasiperiodic(double sigma, double beta) {
  return {ModelName::lorenz63_qp, 3, {{"sigma", sigma}, {"beta", beta}},
          Eigen::MatrixXd::Zero(3, 3)};
}

ModelSystem ModelSystem::lorenz96(double forcing, int dim) {
  if (dim < 4) throw ContractViolation("lorenz96 needs dim >= 4");
  return {ModelName::lorenz96, dim, {{"F", forcing}, {"D", double(dim)}},
          Eigen::MatrixXd::Zero(dim, dim)};
}

ModelSystem ModelSystem::kuramoto_sivashinsky(double domain, int n_modes) {
  if (n_modes < 8 || (n_modes & (n_modes - 1)) != 0)
    throw ContractViolation("kuramoto_sivashinsky needs a power-of-two mode count >= 8");
  return {ModelName::kuramoto_sivashinsky, n_modes,
          {{"L", domain}, {"n_modes", double(n_modes)}},
          Eigen::MatrixXd::Zero(n_modes, n_modes)};
}

ModelSystem ModelSystem::ornstein_uhlenbeck(double theta, double sigma_noise, int dim) {
  Eigen::MatrixXd sig = Eigen::MatrixXd::Identity(dim, dim) * (sigma_noise * sigma_noise);
  return {ModelName::ornstein_uhlenbeck, dim,
          {{"theta", theta}, {"sigma_noise", sigma_noise}}, std::move(sig)};
}

double forcing_r(double t) {
  return 28.0 + std::sin(2.0 * M_PI * t) + std::sin(std::sqrt(3.0) * t) +
         std::sin(std::sqrt(17.0) * t);
}

Eigen::VectorXd drift_eval(const ModelSystem& model, const Eigen::VectorXd& state, double t) {
  check_dim(model, state);
  Eigen::VectorXd f(model.dim);
  switch (model.name) {
    case ModelName::lorenz63:
    case ModelName::lorenz63_qp: {
      const double sigma = model.param("sigma");
      const double beta = model.param("beta");
      const double r = model.name == ModelName::lorenz63_qp ? forcing_r(t) : model.param("r");
      const double x = state[0], y = state[1], z = state[2];
      f[0] = sigma * (y - x);
      f[1] = x * (r - z) - y;
      f[2] = x * y - beta * z;
      break;
    }
    case ModelName::lorenz96: {
      const double F = model.param("F");
      const int d = model.dim;
      for (int i = 0; i < d; ++i) {
        const double xm2 = state[(i - 2 + d) % d];
        const double xm1 = state[(i - 1 + d) % d];
        const double xp1 = state[(i + 1) % d];
        f[i] = xm1 * (xp1 - xm2) - state[i] + F;
      }
      break;
    }
    case ModelName::ornstein_uhlenbeck: {
      f = -model.param("theta") * state;
      break;
    }
    case ModelName::kuramoto_sivashinsky:
      throw ContractViolation("kuramoto_sivashinsky has no pointwise drift; use etdrk4_step");
  }
  return f;
}

EtdrkCoeffs make_etdrk4_coeffs(const ModelSystem& ks_model, double dt) {
  if (ks_model.name != ModelName::kuramoto_sivashinsky)
    throw ContractViolation("etdrk4 coefficients are specific to kuramoto_sivashinsky");
  if (dt <= 0) throw ContractViolation("dt must be positive");
  const int n = ks_model.dim;
  const double domain = ks_model.param("L");
  const int nh = n / 2 + 1;

  EtdrkCoeffs c;
  c.n = n;
  c.dt = dt;
  Eigen::ArrayXd k(nh);
  for (int i = 0; i < nh; ++i) k[i] = 2.0 * M_PI * i / domain;
  Eigen::ArrayXd lin = k.square() - k.square().square();

  c.e_full = (dt * lin).exp();
  c.e_half = (dt * lin / 2.0).exp();

  constexpr int kContourPoints = 32;
  c.q = Eigen::ArrayXd::Zero(nh);
  c.f1 = Eigen::ArrayXd::Zero(nh);
  c.f2 = Eigen::ArrayXd::Zero(nh);
  c.f3 = Eigen::ArrayXd::Zero(nh);
  for (int j = 0; j < kContourPoints; ++j) {
    const std::complex<double> r =
        std::exp(std::complex<double>(0.0, M_PI * (j + 0.5) / kContourPoints));
    for (int i = 0; i < nh; ++i) {
      const std::complex<double> z = dt * lin[i] + r;
      const std::complex<double> ez = std::exp(z);
      c.q[i] += ((std::exp(z / 2.0) - 1.0) / z).real();
      c.f1[i] += ((-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / (z * z * z)).real();
      c.f2[i] += ((2.0 + z + ez * (-2.0 + z)) / (z * z * z)).real();
      c.f3[i] += ((-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / (z * z * z)).real();
    }
  }
  const double scale = dt / kContourPoints;
  c.q *= scale;
  c.f1 *= scale;
  c.f2 *= scale;
  c.f3 *= scale;

  // -0.5 i k with the 2/3 rule: quadratic aliases of retained modes land in the
  // zeroed band. The Nyquist mode is also zeroed (odd derivative).
  c.g_imag = Eigen::ArrayXd::Zero(nh);
  const int cutoff = n / 3;
  for (int i = 0; i < nh; ++i)
    if (i <= cutoff && i != n / 2) c.g_imag[i] = -0.5 * k[i];
  return c;
}

SpectralState ks_to_spectral(const Eigen::VectorXd& physical) {
  return fft_for(int(physical.size())).forward(physical);
}

Eigen::VectorXd ks_to_physical(const SpectralState& spectral, int n) {
  if (spectral.size() != n / 2 + 1)
    throw ContractViolation("spectral state has wrong length for grid size");
  return fft_for(n).inverse(spectral);
}

SpectralState etdrk4_step(const SpectralState& state, const EtdrkCoeffs& coeffs) {
  if (coeffs.n == 0) throw ContractViolation("etdrk4_step called without coefficients");
  if (state.size() != coeffs.n / 2 + 1)
    throw ContractViolation("spectral state length does not match coefficient table");

  const Eigen::VectorXcd nv = ks_nonlinear(state, coeffs);
  const Eigen::VectorXcd a =
      (coeffs.e_half * state.array()).matrix() + (coeffs.q * nv.array()).matrix();
  const Eigen::VectorXcd na = ks_nonlinear(a, coeffs);
  const Eigen::VectorXcd b =
      (coeffs.e_half * state.array()).matrix() + (coeffs.q * na.array()).matrix();
  const Eigen::VectorXcd nb = ks_nonlinear(b, coeffs);
  const Eigen::VectorXcd cst =
      (coeffs.e_half * a.array()).matrix() + (coeffs.q * (2.0 * nb - nv).array()).matrix();
  const Eigen::VectorXcd nc = ks_nonlinear(cst, coeffs);

  return (coeffs.e_full * state.array() + coeffs.f1 * nv.array() +
          2.0 * coeffs.f2 * (na + nb).array() + coeffs.f3 * nc.array())
      .matrix();
}

StepperConfig StepperConfig::for_model(const ModelSystem& model, double dt) {
  if (dt <= 0) throw ContractViolation("dt must be positive");
  StepperConfig cfg;
  cfg.dt = dt;
  if (model.name == ModelName::kuramoto_sivashinsky) {
    cfg.scheme = Scheme::etdrk4;
    cfg.etdrk4 = make_etdrk4_coeffs(model, dt);
  } else if (model.stochastic()) {
    cfg.scheme = Scheme::euler_maruyama;
  } else {
    cfg.scheme = Scheme::rk4;
  }
  return cfg;
}

Eigen::VectorXd rk4_step(const ModelSystem& model, const Eigen::VectorXd& state, double t,
                         double dt) {
  if (model.stochastic())
    throw ContractViolation("rk4_step requires a deterministic model (Sigma = 0)");
  const Eigen::VectorXd k1 = drift_eval(model, state, t);
  const Eigen::VectorXd k2 = drift_eval(model, state + 0.5 * dt * k1, t + 0.5 * dt);
  const Eigen::VectorXd k3 = drift_eval(model, state + 0.5 * dt * k2, t + 0.5 * dt);
  const Eigen::VectorXd k4 = drift_eval(model, state + dt * k3, t + dt);
  return state + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Eigen::VectorXd em_step(const ModelSystem& model, const Eigen::VectorXd& state, double t,
                        double dt, const Eigen::VectorXd& noise_draw) {
  check_dim(model, state);
  if (noise_draw.size() != model.dim)
    throw ContractViolation("noise_draw has wrong length");
  Eigen::VectorXd out = state + drift_eval(model, state, t) * dt;
  if (model.stochastic()) {
    Eigen::LLT<Eigen::MatrixXd> llt(model.diffusion * dt);  // Sigma_d = Sigma dt
    if (llt.info() != Eigen::Success)
      throw ContractViolation("diffusion matrix is not positive semi-definite");
    out += llt.matrixL() * noise_draw;
  }
  return out;
}

Eigen::VectorXd advance_state(const ModelSystem& model, const StepperConfig& stepper,
                              Eigen::VectorXd state, double t0, int substeps,
                              const SubstepNoiseFn& noise, int member) {
  check_dim(model, state);
  if (stepper.scheme == Scheme::etdrk4) {
    if (!stepper.etdrk4) throw ContractViolation("etdrk4 scheme without coefficient table");
    SpectralState v = ks_to_spectral(state);
    for (int s = 0; s < substeps; ++s) {
      v = etdrk4_step(v, *stepper.etdrk4);
      if (!v.allFinite())
        throw DivergenceError("kuramoto_sivashinsky diverged", t0 + (s + 1) * stepper.dt,
                              member, s);
    }
    return ks_to_physical(v, model.dim);
  }
  for (int s = 0; s < substeps; ++s) {
    const double t = t0 + s * stepper.dt;
    if (stepper.scheme == Scheme::rk4) {
      state = rk4_step(model, state, t, stepper.dt);
    } else {
      Eigen::VectorXd draw = model.stochastic() && noise
                                 ? noise(s)
                                 : Eigen::VectorXd::Zero(model.dim);
      state = em_step(model, state, t, stepper.dt, draw);
    }
    if (!state.allFinite())
      throw DivergenceError(to_string(model.name) + " diverged", t + stepper.dt, member, s);
  }
  return state;
}

}  // namespace enfpf
