#pragma once

#include <Eigen/Core>

#include "enfpf/errors.hpp"

namespace enfpf {

/// Particle approximation of the filtered density: row j is member state v^(j).
struct Ensemble {
  Eigen::MatrixXd members;  // J x d

  Ensemble() = default;
  explicit Ensemble(Eigen::MatrixXd m) : members(std::move(m)) {
    if (!members.allFinite()) throw ContractViolation("ensemble has non-finite entries");
  }

  int size() const { return static_cast<int>(members.rows()); }
  int dim() const { return static_cast<int>(members.cols()); }

  Eigen::VectorXd member(int j) const { return members.row(j).transpose(); }
};

}  // namespace enfpf
