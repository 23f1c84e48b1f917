#include "enfpf/kb_oracle.hpp"

#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "enfpf/rng.hpp"

namespace enfpf {

Grid1D Grid1D::make(int n, double lo, double hi) {
  if (n < 50) throw ContractViolation("grid needs n >= 50");
  if (!(lo < hi)) throw ContractViolation("grid needs lo < hi");
  Grid1D g;
  g.n = n;
  g.lo = lo;
  g.hi = hi;
  g.h = (hi - lo) / n;
  g.centers.resize(n);
  for (int i = 0; i < n; ++i) g.centers[i] = lo + (i + 0.5) * g.h;
  return g;
}

Eigen::SparseMatrix<double> build_fp_operator_ou(const Grid1D& grid, double theta,
                                                 double sigma) {
  if (theta <= 0 || sigma < 0) throw ContractViolation("need theta > 0, sigma >= 0");
  const int n = grid.n;
  const double h = grid.h;
  const double diff = 0.5 * sigma * sigma;

  // Interior face i+1/2 carries flux
  //   J = -theta v_face (rho_i + rho_{i+1})/2 - diff (rho_{i+1} - rho_i)/h,
  // boundary fluxes are zero; d rho_i/dt = -(J_{i+1/2} - J_{i-1/2})/h.
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(3 * n);
  for (int f = 0; f < n - 1; ++f) {
    const double v_face = grid.lo + (f + 1) * h;
    const double adv = -theta * v_face * 0.5;
    // J_f = adv*(rho_f + rho_{f+1}) - diff*(rho_{f+1} - rho_f)/h
    const double c_low = adv + diff / h;
    const double c_high = adv - diff / h;
    // cell f gets -J_f/h, cell f+1 gets +J_f/h
    trips.emplace_back(f, f, -c_low / h);
    trips.emplace_back(f, f + 1, -c_high / h);
    trips.emplace_back(f + 1, f, c_low / h);
    trips.emplace_back(f + 1, f + 1, c_high / h);
  }
  Eigen::SparseMatrix<double> op(n, n);
  op.setFromTriplets(trips.begin(), trips.end());
  return op;
}

GridDensityState init_normalized(const Grid1D& grid, double m0_mean, double m0_std, int rank,
                                 double c_scale, std::uint64_t seed) {
  if (rank < 1 || rank >= grid.n) throw ContractViolation("need 1 <= rank < n");
  const int n = grid.n;
  const double h = grid.h;

  GridDensityState state;
  state.m.resize(n);
  for (int i = 0; i < n; ++i) {
    const double z = (grid.centers[i] - m0_mean) / m0_std;
    state.m[i] = std::exp(-0.5 * z * z);
  }
  state.m /= state.m.sum() * h;  // <m0, 1> = 1

  // Random columns, projected orthogonal to 1 and h-orthonormalized.
  CounterRng rng(seed, {rng_stream::kOracle});
  Eigen::MatrixXd q(n, rank);
  for (int r = 0; r < rank; ++r) {
    Eigen::VectorXd col = rng.normal_vector(n);
    col.array() -= col.mean();  // <col, 1>_h = 0
    for (int s = 0; s < r; ++s) col -= (h * q.col(s).dot(col)) * q.col(s);
    const double norm = std::sqrt(h * col.squaredNorm());
    if (norm < 1e-12) throw ContractViolation("degenerate random column in init_normalized");
    q.col(r) = col / norm;
  }
  Eigen::VectorXd s_diag(rank);
  for (int r = 0; r < rank; ++r) s_diag[r] = c_scale / (1.0 + r);
  state.c = q * s_diag.asDiagonal() * q.transpose();
  return state;
}

namespace {

struct GridRates {
  Eigen::VectorXd dm;
  Eigen::MatrixXd dc;
};

GridRates grid_rates(const GridDensityState& s, const Eigen::SparseMatrix<double>& l_star,
                     const Eigen::MatrixXd& phi, double h, const Eigen::MatrixXd& gamma_inv,
                     const Eigen::VectorXd& dz_over_dt) {
  GridRates r;
  const Eigen::VectorXd hm = h * (phi.transpose() * s.m);
  const Eigen::MatrixXd c_phi = s.c * phi;  // n x p
  r.dm = l_star * s.m + c_phi * (gamma_inv * (dz_over_dt - hm));
  const Eigen::MatrixXd hc = h * (phi.transpose() * s.c);  // p x n
  r.dc = l_star * s.c + (l_star * s.c.transpose()).transpose() -
         c_phi * gamma_inv * hc;
  return r;
}

}  // namespace

GridDensityState kb_filter_step(const GridDensityState& state,
                                const Eigen::SparseMatrix<double>& l_star,
                                const Eigen::MatrixXd& observable_values, double cell_width,
                                const Eigen::MatrixXd& gamma,
                                const Eigen::VectorXd& dz_over_dt, double dt) {
  const Eigen::MatrixXd gamma_inv = gamma.inverse();
  const auto rate = [&](const GridDensityState& s) {
    return grid_rates(s, l_star, observable_values, cell_width, gamma_inv, dz_over_dt);
  };

  const GridRates k1 = rate(state);
  GridDensityState tmp{state.m + 0.5 * dt * k1.dm, state.c + 0.5 * dt * k1.dc};
  const GridRates k2 = rate(tmp);
  tmp = {state.m + 0.5 * dt * k2.dm, state.c + 0.5 * dt * k2.dc};
  const GridRates k3 = rate(tmp);
  tmp = {state.m + dt * k3.dm, state.c + dt * k3.dc};
  const GridRates k4 = rate(tmp);

  GridDensityState out;
  out.m = state.m + dt / 6.0 * (k1.dm + 2.0 * k2.dm + 2.0 * k3.dm + k4.dm);
  out.c = state.c + dt / 6.0 * (k1.dc + 2.0 * k2.dc + 2.0 * k3.dc + k4.dc);

  const double before = state.m.norm() + state.c.norm();
  const double after = out.m.norm() + out.c.norm();
  if (!out.m.allFinite() || !out.c.allFinite() || after > 10.0 * before + 1e3)
    throw StabilityError("kb_filter_step unstable; reduce dt", dt / 4.0);
  return out;
}

MomentFilterState moment_filter_step(const MomentFilterState& state,
                                     const Eigen::MatrixXd& l_mat,
                                     const Eigen::MatrixXd& h_mat,
                                     const Eigen::MatrixXd& gamma,
                                     const Eigen::VectorXd& dz_over_dt, double dt) {
  const Eigen::MatrixXd gamma_inv = gamma.inverse();
  const Eigen::MatrixXd lt = l_mat.transpose();
  struct Rates {
    Eigen::VectorXd dm;
    Eigen::MatrixXd dc;
  };
  const auto rate = [&](const MomentFilterState& s) {
    Rates r;
    r.dm = lt * s.mean + s.cov * h_mat.transpose() * gamma_inv * (dz_over_dt - h_mat * s.mean);
    r.dc = lt * s.cov + s.cov * l_mat -
           s.cov * h_mat.transpose() * gamma_inv * h_mat * s.cov;
    return r;
  };

  const Rates k1 = rate(state);
  MomentFilterState tmp{state.mean + 0.5 * dt * k1.dm, state.cov + 0.5 * dt * k1.dc};
  const Rates k2 = rate(tmp);
  tmp = {state.mean + 0.5 * dt * k2.dm, state.cov + 0.5 * dt * k2.dc};
  const Rates k3 = rate(tmp);
  tmp = {state.mean + dt * k3.dm, state.cov + dt * k3.dc};
  const Rates k4 = rate(tmp);

  MomentFilterState out;
  out.mean = state.mean + dt / 6.0 * (k1.dm + 2.0 * k2.dm + 2.0 * k3.dm + k4.dm);
  out.cov = state.cov + dt / 6.0 * (k1.dc + 2.0 * k2.dc + 2.0 * k3.dc + k4.dc);
  return out;
}

void project_grid(const GridDensityState& state, const Eigen::VectorXd& observable_values,
                  double cell_width, double* hm, double* hch) {
  *hm = cell_width * observable_values.dot(state.m);
  *hch = cell_width * observable_values.dot(state.c * observable_values);
}

std::vector<EquivalenceRecord> equivalence_report(const ProjectionSeries& grid_run,
                                                  const ProjectionSeries& moment_run) {
  if (grid_run.times.size() != moment_run.times.size())
    throw ContractViolation("equivalence_report: series lengths differ");
  std::vector<EquivalenceRecord> records;
  records.reserve(grid_run.times.size());
  for (std::size_t i = 0; i < grid_run.times.size(); ++i) {
    if (std::abs(grid_run.times[i] - moment_run.times[i]) > 1e-12)
      throw ContractViolation("equivalence_report: time grids differ");
    EquivalenceRecord rec;
    rec.t = grid_run.times[i];
    rec.hm_grid = grid_run.hm[i];
    rec.hm_moment = moment_run.hm[i];
    rec.hch_grid = grid_run.hch[i];
    rec.hch_moment = moment_run.hch[i];
    rec.err_m = std::abs(rec.hm_grid - rec.hm_moment);
    rec.err_c = std::abs(rec.hch_grid - rec.hch_moment);
    records.push_back(rec);
  }
  return records;
}

}  // namespace enfpf
