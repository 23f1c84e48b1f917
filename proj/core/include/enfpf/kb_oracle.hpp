#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "enfpf/errors.hpp"

namespace enfpf {

/// Uniform 1-D cell-centered grid; the discrete L2 inner product is
/// <a,b> = h sum_i a_i b_i.
struct Grid1D {
  int n;
  double lo, hi;
  double h;
  Eigen::VectorXd centers;

  static Grid1D make(int n, double lo, double hi);
};

/// Conservative finite-volume discretization of the OU forward operator
///   L* rho = d/dv(theta v rho) + (sigma^2/2) d^2/dv^2 rho
/// with zero-flux boundaries. Column sums vanish to round-off, so total mass
/// is invariant under the semi-discrete flow.
Eigen::SparseMatrix<double> build_fp_operator_ou(const Grid1D& grid, double theta,
                                                 double sigma);

/// Mean function and covariance operator of the density-space filter.
/// C is the operator matrix (kernel values times cell width), so operator
/// application is the plain product C*u and self-adjointness is symmetry of C.
struct GridDensityState {
  Eigen::VectorXd m;  // n
  Eigen::MatrixXd c;  // n x n, symmetric
};

/// Normalized initialization: <m0, 1> = 1 and C0*1 = 0 by construction.
/// m0 is a discretized Gaussian bump; C0 = Q S Q^T with the columns of Q
/// random vectors projected orthogonal to 1 (in the h-weighted inner product)
/// and orthonormalized, S positive diagonal of the given rank and scale.
GridDensityState init_normalized(const Grid1D& grid, double m0_mean, double m0_std, int rank,
                                 double c_scale, std::uint64_t seed);

/// One explicit RK4 step of the density-space filter pair
///   dm = L* m + C Phi Gamma^{-1} (dz/dt - H m),      H m = h Phi^T m,
///   dC = L* C + C L*^T - C Phi Gamma^{-1} H C,       H* u = Phi u,
/// where Phi (n x p) holds the observable values at cell centers.
/// Throws StabilityError when a step grows a norm more than tenfold.
GridDensityState kb_filter_step(const GridDensityState& state,
                                const Eigen::SparseMatrix<double>& l_star,
                                const Eigen::MatrixXd& observable_values, double cell_width,
                                const Eigen::MatrixXd& gamma,
                                const Eigen::VectorXd& dz_over_dt, double dt);

/// Finite-dimensional mean/covariance pair of the moment-space filter.
struct MomentFilterState {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// One RK4 step of
///   dm = L^T m + C H^T Gamma^{-1} (dz/dt - H m),
///   dC = L^T C + C L - C H^T Gamma^{-1} H C        (no Sigma term).
MomentFilterState moment_filter_step(const MomentFilterState& state,
                                     const Eigen::MatrixXd& l_mat,
                                     const Eigen::MatrixXd& h_mat,
                                     const Eigen::MatrixXd& gamma,
                                     const Eigen::VectorXd& dz_over_dt, double dt);

/// Observation-space projections of one filter trajectory (scalar observable).
struct ProjectionSeries {
  std::vector<double> times;
  std::vector<double> hm;   // H m
  std::vector<double> hch;  // H C H*
};

struct EquivalenceRecord {
  double t;
  double hm_grid, hm_moment;
  double hch_grid, hch_moment;
  double err_m, err_c;  // absolute discrepancies
};

/// Pairs two projection series driven by the identical dz stream.
/// Throws on mismatched time grids.
std::vector<EquivalenceRecord> equivalence_report(const ProjectionSeries& grid_run,
                                                  const ProjectionSeries& moment_run);

/// H m and H C H* of a grid state (p = 1).
void project_grid(const GridDensityState& state, const Eigen::VectorXd& observable_values,
                  double cell_width, double* hm, double* hch);

}  // namespace enfpf
