#pragma once

// Extended-precision version of the marginal-density posterior, for
// parameter values where double-precision dense algebra breaks down. Takes
// the assembled FEM matrices as exact inputs.

#include "dense_oracle.hpp"
#include "oscgmrf/fem.hpp"

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <boost/multiprecision/eigen.hpp>

namespace oracle {

using Precise = boost::multiprecision::number<boost::multiprecision::cpp_bin_float<300>>;
using PreciseMatrix = Eigen::Matrix<Precise, Eigen::Dynamic, Eigen::Dynamic>;
using PreciseVector = Eigen::Matrix<Precise, Eigen::Dynamic, 1>;

inline PreciseMatrix precise_system_precision(const oscgmrf::FemMatrices& fem, const ModelSpec& m) {
    const Eigen::Index n = fem.stiffness.rows();
    const PreciseMatrix C = Dense(fem.mass_diagonal.asDiagonal()).cast<Precise>();
    const PreciseMatrix G = Dense(fem.stiffness).cast<Precise>();
    const PreciseMatrix Cinv = C.inverse();
    const auto& op = m.op;
    auto P = [](double v) { return Precise(v); };

    PreciseMatrix K = PreciseMatrix::Zero(2 * n, 2 * n);
    K.block(0, 0, n, n) = P(op.b11) * (P(op.h11) * C + G);
    K.block(n, 0, n, n) = op.variant == OperatorVariant::L2 ? PreciseMatrix(P(op.b21) * (P(op.h21) * C + G))
                                                             : PreciseMatrix(P(op.b21) * C);
    K.block(n, n, n, n) =
        op.variant == OperatorVariant::L3 ? PreciseMatrix(P(op.b22) * C) : PreciseMatrix(P(op.b22) * (P(op.h22) * C + G));

    auto noise = [&](const oscgmrf::NoiseSpec& s, Precise k2) -> PreciseMatrix {
        switch (s.kind) {
            case NoiseKind::white: return C;
            case NoiseKind::matern: {
                const PreciseMatrix A = k2 * C + G;
                return A * Cinv * A;
            }
            case NoiseKind::oscillating: {
                const Precise c = boost::multiprecision::cos(boost::math::constants::pi<Precise>() * P(s.omega));
                return k2 * k2 * C + 2 * c * k2 * G + G * Cinv * G;
            }
        }
        throw std::logic_error("kind");
    };
    const Precise k1 = m.lock1 && m.noise1.kind == NoiseKind::matern ? P(op.h11) : P(m.noise1.kappa_n) * P(m.noise1.kappa_n);
    const Precise k2 = m.lock2 && m.noise2.kind == NoiseKind::matern && op.variant != OperatorVariant::L3
                           ? P(op.h22)
                           : P(m.noise2.kappa_n) * P(m.noise2.kappa_n);
    PreciseMatrix Qe = PreciseMatrix::Zero(2 * n, 2 * n);
    Qe.block(0, 0, n, n) = noise(m.noise1, k1);
    Qe.block(n, n, n, n) = noise(m.noise2, k2);

    PreciseMatrix Ct = PreciseMatrix::Zero(2 * n, 2 * n);
    Ct.block(0, 0, n, n) = C;
    Ct.block(n, n, n, n) = C;
    const PreciseMatrix M = Ct.inverse() * K;
    return M.transpose() * Qe * M;
}

/// Marginal-density posterior as in marginal_log_posterior, in extended
/// precision throughout.
inline double precise_log_posterior(const oscgmrf::FemMatrices& fem, const ModelSpec& m, const Dense& A,
                                    const Eigen::VectorXd& qn, const Eigen::VectorXd& y, double log_prior) {
    const PreciseMatrix Q = precise_system_precision(fem, m);
    const PreciseMatrix Ap = A.cast<Precise>();
    const PreciseVector yp = y.cast<Precise>();
    const PreciseVector qp = qn.cast<Precise>();
    PreciseMatrix Sigma = Ap * Q.fullPivLu().solve(PreciseMatrix(Ap.transpose()));
    for (Eigen::Index i = 0; i < Sigma.rows(); ++i) Sigma(i, i) += 1 / qp[i];
    Sigma = (Sigma + Sigma.transpose().eval()) / 2;
    const Eigen::LDLT<PreciseMatrix> ldlt(Sigma);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) throw std::runtime_error("oracle: not positive definite");
    Precise log_det = 0;
    for (Eigen::Index i = 0; i < Sigma.rows(); ++i) log_det += boost::multiprecision::log(ldlt.vectorD()[i]);
    Precise log_qn = 0, yqy = 0;
    for (Eigen::Index i = 0; i < yp.size(); ++i) {
        log_qn += boost::multiprecision::log(qp[i]);
        yqy += qp[i] * yp[i] * yp[i];
    }
    // The 2 pi terms of the density and of the dropped constant cancel.
    const Precise value = -log_det / 2 - yp.dot(ldlt.solve(yp)) / 2 - log_qn / 2 + yqy / 2;
    return log_prior + static_cast<double>(value);
}

} // namespace oracle
