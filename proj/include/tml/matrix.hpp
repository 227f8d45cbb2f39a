#pragma once

#include <Eigen/Dense>

namespace tml {

// Row-major: learners evaluate one example at a time.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

} // namespace tml
