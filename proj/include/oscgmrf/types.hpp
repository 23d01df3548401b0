#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <complex>

namespace oscgmrf {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;
using Triplet = Eigen::Triplet<double, int>;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Complex = std::complex<double>;

} // namespace oscgmrf
