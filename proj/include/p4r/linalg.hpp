#pragma once

#include <Eigen/Core>

namespace p4r {

// Row per node / item; rows are contiguous so per-row axpy stays cache friendly.
template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

}  // namespace p4r
