#pragma once

#include <Eigen/Dense>

namespace servicemonitor {

/// Dense row-major matrix; rows are samples (or source states).
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

}  // namespace servicemonitor
