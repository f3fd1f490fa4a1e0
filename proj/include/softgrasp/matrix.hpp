#pragma once

#include <Eigen/Core>

namespace softgrasp {

// Row-major so that per-node and per-edge rows are contiguous.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

}  // namespace softgrasp
