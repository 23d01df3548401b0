#pragma once

#include "oscgmrf/cholesky.hpp"
#include "oscgmrf/observations.hpp"
#include "oscgmrf/precision.hpp"
#include "oscgmrf/rng.hpp"
#include "oscgmrf/types.hpp"

#include <cstdint>
#include <random>
#include <utility>

namespace oscgmrf {

// One draw per row.
struct SampleBatch {
    Matrix draws;
    std::uint64_t seed = 0;

    [[nodiscard]] Eigen::Index count() const { return draws.rows(); }
};

// A^T Q_n A added to the prior precision.
inline SparseMatrix conditional_precision(const SparseMatrix& Q, const ObservationSet& obs) {
    if (obs.size() == 0) {
        SparseMatrix q = Q;
        q.makeCompressed();
        return q;
    }
    SparseMatrix qa = obs.noise_precision.asDiagonal() * obs.A;
    SparseMatrix At = obs.A.transpose();
    SparseMatrix ata = At * qa;
    SparseMatrix qc = Q + ata;
    qc.makeCompressed();
    return qc;
}

// Canonical mean parameter A^T Q_n y.
inline Vector canonical_shift(const ObservationSet& obs, Eigen::Index dimension) {
    if (obs.size() == 0) return Vector::Zero(dimension);
    Vector w = obs.noise_precision.cwiseProduct(obs.y);
    return obs.A.transpose() * w;
}

/// Draws mean + L^{-T} z for `count` independent standard normal vectors z.
/// Draw i uses its own stream derive_stream(seed, i).
template <typename Ordering>
SampleBatch sample(const BasicSparseCholesky<Ordering>& chol, const Vector& mean, std::size_t count,
                   std::uint64_t seed) {
    const Eigen::Index dim = chol.size();
    SampleBatch batch{Matrix(static_cast<Eigen::Index>(count), dim), seed};
    Vector z(dim);
    for (std::size_t i = 0; i < count; ++i) {
        auto gen = derive_stream(seed, i);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (Eigen::Index k = 0; k < dim; ++k) z[k] = normal(gen);
        batch.draws.row(static_cast<Eigen::Index>(i)) = (mean + chol.correlate(z)).transpose();
    }
    return batch;
}

template <typename Ordering = Eigen::AMDOrdering<int>>
SampleBatch sample(const Gmrf& gmrf, std::size_t count, std::uint64_t seed) {
    BasicSparseCholesky<Ordering> chol;
    if (!chol.try_factorize(gmrf.Q)) throw NotSpd("sample: precision matrix is not positive definite");
    return sample(chol, Vector::Zero(gmrf.dimension()), count, seed);
}

struct ConditionalDraws {
    Vector mean;
    SampleBatch batch;
};

/// Field given data: Q_c = Q + A^T Q_n A, mu_c = Q_c^{-1} A^T Q_n y, and
/// `count` draws from N(mu_c, Q_c^{-1}).
inline ConditionalDraws conditional_mean_and_sample(const Gmrf& gmrf, const ObservationSet& obs, std::size_t count,
                                                    std::uint64_t seed) {
    if (obs.size() > 0 && obs.A.cols() != gmrf.dimension()) {
        throw InvalidInput("conditional_mean_and_sample: observation matrix does not match the field dimension");
    }
    SparseCholesky chol;
    if (!chol.try_factorize(conditional_precision(gmrf.Q, obs))) {
        throw NotSpd("conditional precision is not positive definite");
    }
    Vector mu = chol.solve(canonical_shift(obs, gmrf.dimension()));
    SampleBatch batch = sample(chol, mu, count, seed);
    return {std::move(mu), std::move(batch)};
}

} // namespace oscgmrf
