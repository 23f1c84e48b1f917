#include "enfpf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace enfpf {

double w1_sorted(std::vector<double> samples_a, std::vector<double> samples_b) {
  if (samples_a.size() != samples_b.size() || samples_a.empty())
    throw ContractViolation("w1_sorted needs equal non-zero sample counts");
  std::sort(samples_a.begin(), samples_a.end());
  std::sort(samples_b.begin(), samples_b.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < samples_a.size(); ++i)
    acc += std::abs(samples_a[i] - samples_b[i]);
  return acc / double(samples_a.size());
}

// Jonker-Volgenant style shortest augmenting path with dual potentials.
double min_assignment_cost(const Eigen::MatrixXd& cost) {
  const int n = int(cost.rows());
  if (cost.cols() != n || n == 0) throw ContractViolation("cost matrix must be square");
  constexpr double kInf = std::numeric_limits<double>::infinity();

  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, n);  // match[col] = row, n = unassigned
  for (int row = 0; row < n; ++row) {
    std::vector<double> dist(n + 1, kInf);
    std::vector<int> prev(n + 1, -1);
    std::vector<char> done(n + 1, false);
    int col0 = n;
    match[n] = row;
    do {
      done[col0] = true;
      const int r = match[col0];
      double delta = kInf;
      int col1 = -1;
      for (int col = 0; col < n; ++col) {
        if (done[col]) continue;
        const double reduced = cost(r, col) - u[r] - v[col];
        if (reduced < dist[col]) {
          dist[col] = reduced;
          prev[col] = col0;
        }
        if (dist[col] < delta) {
          delta = dist[col];
          col1 = col;
        }
      }
      for (int col = 0; col <= n; ++col) {
        if (done[col]) {
          u[match[col]] += delta;
          v[col] -= delta;
        } else {
          dist[col] -= delta;
        }
      }
      col0 = col1;
    } while (match[col0] != n);
    while (col0 != n) {
      const int c = prev[col0];
      match[col0] = match[c];
      col0 = c;
    }
  }
  double total = 0.0;
  for (int col = 0; col < n; ++col)
    if (match[col] != n) total += cost(match[col], col);
  return total;
}

double w1_assignment(const Eigen::MatrixXd& points_a, const Eigen::MatrixXd& points_b) {
  const int n = int(points_a.rows());
  if (points_b.rows() != n || n == 0)
    throw ContractViolation("w1_assignment needs equal non-zero point counts");
  if (points_a.cols() != points_b.cols())
    throw ContractViolation("w1_assignment dimension mismatch");
  if (n > 2000) throw ContractViolation("w1_assignment is cubic; n must be <= 2000");

  Eigen::MatrixXd cost(n, n);
  for (int i = 0; i < n; ++i)
    cost.row(i) = (points_b.rowwise() - points_a.row(i)).rowwise().norm().transpose();
  return min_assignment_cost(cost) / double(n);
}

double marginal_w1_mean(const Ensemble& a, const Ensemble& b) {
  if (a.dim() != b.dim()) throw ContractViolation("marginal_w1_mean dimension mismatch");
  if (a.size() != b.size()) throw ContractViolation("marginal_w1_mean needs equal J");
  double acc = 0.0;
  for (int c = 0; c < a.dim(); ++c) {
    std::vector<double> col_a(a.size()), col_b(b.size());
    for (int j = 0; j < a.size(); ++j) {
      col_a[j] = a.members(j, c);
      col_b[j] = b.members(j, c);
    }
    acc += w1_sorted(std::move(col_a), std::move(col_b));
  }
  return acc / double(a.dim());
}

double stat_rmse(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw ContractViolation("stat_rmse dimension mismatch");
  return std::sqrt((a - b).squaredNorm() / double(a.size()));
}

void MetricSeries::to_csv(std::ostream& os) const {
  os << "cycle,value,label\n";
  os.precision(17);
  for (std::size_t i = 0; i < cycle.size(); ++i)
    os << cycle[i] << "," << value[i] << "," << label << "\n";
}

}  // namespace enfpf
