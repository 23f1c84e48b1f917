#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "enfpf/filter_types.hpp"

namespace enfpf {

/// Exact W1 between two equal-size 1-D empirical measures:
/// mean absolute difference of sorted samples.
double w1_sorted(std::vector<double> samples_a, std::vector<double> samples_b);

/// Exact W1 between two equal-size d-dimensional point sets: minimal mean
/// Euclidean pairing cost, solved by shortest augmenting paths (O(n^3)).
double w1_assignment(const Eigen::MatrixXd& points_a, const Eigen::MatrixXd& points_b);

/// Mean over coordinates of the per-marginal 1-D W1.
double marginal_w1_mean(const Ensemble& a, const Ensemble& b);

/// Root mean square of component differences.
double stat_rmse(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Minimal assignment cost for an arbitrary square cost matrix (exposed for
/// testing against the brute-force permutation oracle).
double min_assignment_cost(const Eigen::MatrixXd& cost);

struct MetricSeries {
  std::vector<int> cycle;
  std::vector<double> value;
  std::string label;

  void append(int c, double v) {
    cycle.push_back(c);
    value.push_back(v);
  }
  /// CSV with header `cycle,value,label`.
  void to_csv(std::ostream& os) const;
};

}  // namespace enfpf
