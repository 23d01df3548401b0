#pragma once

#include "oscgmrf/error.hpp"
#include "oscgmrf/mesh.hpp"
#include "oscgmrf/types.hpp"

#include <string>
#include <vector>

namespace oscgmrf {

/// Piecewise-linear finite element matrices on a triangulation.
///
/// `mass` is the lumped (diagonal) mass matrix, C_ii = <psi_i, 1>, kept both
/// as a sparse diagonal and as a plain vector. `stiffness` is
/// G_ij = <grad psi_i, grad psi_j>.
struct FemMatrices {
    SparseMatrix mass;
    SparseMatrix stiffness;
    Vector mass_diagonal;

    [[nodiscard]] Eigen::Index size() const { return mass_diagonal.size(); }
    [[nodiscard]] Vector inverse_mass_diagonal() const { return mass_diagonal.cwiseInverse(); }
};

inline FemMatrices assemble(const Mesh& mesh, double min_area = 1e-14) {
    const auto n = static_cast<int>(mesh.num_vertices());
    Vector c = Vector::Zero(n);
    std::vector<Triplet> g;
    g.reserve(9 * mesh.num_triangles());

    const auto& verts = mesh.vertices();
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        const auto& tri = mesh.triangles()[t];
        const double area = mesh.triangle_area(t);
        if (!(area >= min_area)) {
            throw AssemblyError("assemble: triangle " + std::to_string(t) + " is degenerate (area " +
                                std::to_string(area) + ")");
        }
        // Gradient of the hat function of local vertex k is the inward normal
        // of the opposite edge scaled by 1 / (2 area).
        Point grad[3];
        for (int k = 0; k < 3; ++k) {
            Point e = verts[tri[(k + 2) % 3]] - verts[tri[(k + 1) % 3]];
            grad[k] = {-e.y / (2.0 * area), e.x / (2.0 * area)};
        }
        for (int a = 0; a < 3; ++a) {
            c[static_cast<int>(tri[a])] += area / 3.0;
            for (int b = 0; b < 3; ++b) {
                g.emplace_back(static_cast<int>(tri[a]), static_cast<int>(tri[b]), area * dot(grad[a], grad[b]));
            }
        }
    }

    FemMatrices fem;
    fem.mass_diagonal = c;
    fem.mass.resize(n, n);
    std::vector<Triplet> ct;
    ct.reserve(n);
    for (int i = 0; i < n; ++i) ct.emplace_back(i, i, c[i]);
    fem.mass.setFromTriplets(ct.begin(), ct.end());
    fem.stiffness.resize(n, n);
    fem.stiffness.setFromTriplets(g.begin(), g.end());
    fem.stiffness.makeCompressed();
    return fem;
}

} // namespace oscgmrf
