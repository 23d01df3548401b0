#pragma once

#include "oscgmrf/error.hpp"
#include "oscgmrf/types.hpp"

#include <Eigen/OrderingMethods>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

namespace oscgmrf {

/// Sparse Cholesky factorization P Q P^T = L L^T of a symmetric positive
/// definite matrix, with the fill-reducing ordering chosen by `Ordering`.
/// Only the lower triangle of Q is read.
///
/// The symbolic analysis is kept between calls to try_factorize() and is
/// reused whenever the new matrix has the same sparsity pattern. A
/// factorization is never mutated by the const accessors, so one instance
/// may be shared read-only between threads.
template <typename Ordering = Eigen::AMDOrdering<int>>
class BasicSparseCholesky {
public:
    using Solver = Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Ordering>;

    BasicSparseCholesky() = default;
    explicit BasicSparseCholesky(const SparseMatrix& q) { factorize(q); }

    // Returns false when q is not numerically positive definite.
    bool try_factorize(const SparseMatrix& q) {
        ok_ = false;
        if (!solver_ || !same_pattern(q)) {
            solver_ = std::make_unique<Solver>();
            solver_->analyzePattern(q);
            if (solver_->info() != Eigen::Success) return false;
            remember_pattern(q);
        }
        solver_->factorize(q);
        if (solver_->info() != Eigen::Success) return false;
        const auto diag = solver_->matrixL().nestedExpression().diagonal();
        for (Eigen::Index i = 0; i < diag.size(); ++i) {
            if (!(diag[i] > 0.0) || !std::isfinite(diag[i])) return false;
        }
        ok_ = true;
        return true;
    }

    void factorize(const SparseMatrix& q) {
        if (!try_factorize(q)) throw NotSpd("sparse Cholesky factorization failed: matrix is not positive definite");
    }

    [[nodiscard]] bool ok() const { return ok_; }
    [[nodiscard]] Eigen::Index size() const { return solver_ ? solver_->rows() : 0; }

    // log |Q| = 2 sum log L_ii
    [[nodiscard]] double log_determinant() const {
        const auto diag = solver_->matrixL().nestedExpression().diagonal();
        return 2.0 * diag.array().log().sum();
    }

    template <typename Rhs>
    [[nodiscard]] auto solve(const Rhs& b) const {
        return solver_->solve(b).eval();
    }

    // x = P^T L^{-T} z. For z ~ N(0, I), x ~ N(0, Q^{-1}).
    [[nodiscard]] Vector correlate(const Vector& z) const {
        Vector v = solver_->matrixU().solve(z);
        if (solver_->permutationPinv().size() == 0) return v;
        return solver_->permutationPinv() * v;
    }

    // w = L^{-1} P b, so that b^T Q^{-1} b = |w|^2.
    [[nodiscard]] Vector whiten(const Vector& b) const {
        if (solver_->permutationP().size() == 0) return solver_->matrixL().solve(b);
        Vector pb = solver_->permutationP() * b;
        return solver_->matrixL().solve(pb);
    }

    /// Diagonal of Q^{-1} in the original ordering, by the Takahashi
    /// recursion over the sparsity pattern of L (no dense inverse).
    [[nodiscard]] Vector inverse_diagonal() const {
        const auto& L = solver_->matrixL().nestedExpression();
        const Eigen::Index n = L.rows();
        const int* outer = L.outerIndexPtr();
        const int* inner = L.innerIndexPtr();
        const double* val = L.valuePtr();
        // sigma shares the storage layout of L: column i holds Sigma_ki, k >= i.
        std::vector<double> sigma(static_cast<std::size_t>(L.nonZeros()), 0.0);
        // Position in val of each row of the current column, and the column
        // that last claimed the row.
        std::vector<int> where(static_cast<std::size_t>(n), 0);
        std::vector<Eigen::Index> owner(static_cast<std::size_t>(n), -1);
        std::vector<double> acc(static_cast<std::size_t>(n), 0.0);

        for (Eigen::Index i = n - 1; i >= 0; --i) {
            const int begin = outer[i];
            const int end = outer[i + 1];
            const double lii = val[begin];
            for (int q = begin + 1; q < end; ++q) {
                const auto r = static_cast<std::size_t>(inner[q]);
                where[r] = q;
                owner[r] = i;
                acc[r] = 0.0;
            }
            // acc_j = sum_q L_qi Sigma_qj over the pattern of column i. Each
            // pair k < r is read once from column k of sigma.
            for (int q = begin + 1; q < end; ++q) {
                const int k = inner[q];
                const double lk = val[q];
                acc[static_cast<std::size_t>(k)] += lk * sigma[static_cast<std::size_t>(outer[k])];
                for (int t = outer[k] + 1; t < outer[k + 1]; ++t) {
                    const auto r = static_cast<std::size_t>(inner[t]);
                    if (owner[r] != i) continue;
                    const double s = sigma[static_cast<std::size_t>(t)];
                    acc[r] += lk * s;
                    acc[static_cast<std::size_t>(k)] += val[where[r]] * s;
                }
            }
            double diag = 0.0;
            for (int q = begin + 1; q < end; ++q) {
                const double v = -acc[static_cast<std::size_t>(inner[q])] / lii;
                sigma[static_cast<std::size_t>(q)] = v;
                diag += val[q] * v;
            }
            sigma[static_cast<std::size_t>(begin)] = 1.0 / (lii * lii) - diag / lii;
        }

        Vector permuted(n);
        for (Eigen::Index i = 0; i < n; ++i) permuted[i] = sigma[static_cast<std::size_t>(outer[i])];
        const auto& perm = solver_->permutationP().indices();
        if (perm.size() == 0) return permuted;
        Vector out(n);
        for (Eigen::Index v = 0; v < n; ++v) out[v] = permuted[perm[v]];
        return out;
    }

    [[nodiscard]] Eigen::Index factor_nonzeros() const {
        return solver_ ? solver_->matrixL().nestedExpression().nonZeros() : 0;
    }

private:
    [[nodiscard]] bool same_pattern(const SparseMatrix& q) const {
        if (q.rows() != rows_ || q.nonZeros() != static_cast<Eigen::Index>(inner_.size())) return false;
        if (!q.isCompressed()) return false;
        for (Eigen::Index k = 0; k <= q.outerSize(); ++k) {
            if (q.outerIndexPtr()[k] != outer_[static_cast<std::size_t>(k)]) return false;
        }
        for (std::size_t k = 0; k < inner_.size(); ++k) {
            if (q.innerIndexPtr()[k] != inner_[k]) return false;
        }
        return true;
    }

    void remember_pattern(const SparseMatrix& q) {
        rows_ = q.rows();
        outer_.clear();
        inner_.clear();
        if (!q.isCompressed()) return;
        outer_.assign(q.outerIndexPtr(), q.outerIndexPtr() + q.outerSize() + 1);
        inner_.assign(q.innerIndexPtr(), q.innerIndexPtr() + q.nonZeros());
    }

    std::unique_ptr<Solver> solver_;
    Eigen::Index rows_ = -1;
    std::vector<int> outer_;
    std::vector<int> inner_;
    bool ok_ = false;
};

using SparseCholesky = BasicSparseCholesky<>;
using NaturalOrderCholesky = BasicSparseCholesky<Eigen::NaturalOrdering<int>>;

} // namespace oscgmrf
