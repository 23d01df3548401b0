#pragma once

#include "oscgmrf/fem.hpp"
#include "oscgmrf/mesh.hpp"
#include "oscgmrf/model.hpp"
#include "oscgmrf/observations.hpp"
#include "oscgmrf/precision.hpp"
#include "oscgmrf/rng.hpp"
#include "oscgmrf/sampler.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace oscgmrf {

// `per_field` sites per field, uniform over `region`; stream kObservationSiteStream.
inline std::vector<Site> uniform_sites(const Rect& region, std::size_t per_field, std::size_t fields,
                                       std::uint64_t seed) {
    auto gen = derive_stream(seed, kObservationSiteStream);
    std::uniform_real_distribution<double> ux(region.xmin, region.xmax);
    std::uniform_real_distribution<double> uy(region.ymin, region.ymax);
    std::vector<Site> out;
    out.reserve(per_field * fields);
    for (std::size_t f = 1; f <= fields; ++f) {
        for (std::size_t i = 0; i < per_field; ++i) {
            Site s;
            s.field = f;
            s.location.x = ux(gen);
            s.location.y = uy(gen);
            out.push_back(s);
        }
    }
    return out;
}

struct SimulatedData {
    Vector truth;              // stacked field weights
    std::vector<Site> sites;   // with observed values
    ObservationSet obs;
};

/// One draw of the field (draw 0 of `seed`) observed at `per_field` uniform
/// sites per field in the mesh core, with Gaussian measurement error of
/// precision `noise_precision`.
inline SimulatedData simulate_observations(const Mesh& mesh, const FemMatrices& fem, const ModelSpec& model,
                                           std::size_t per_field, double noise_precision, std::uint64_t seed) {
    const Gmrf g = system_precision(fem, model);
    SimulatedData out;
    out.truth = sample(g, 1, seed).draws.row(0).transpose();
    out.sites = uniform_sites(mesh.core(), per_field, g.fields, seed);
    const SparseMatrix A = interpolation_matrix(mesh, out.sites, g.fields);
    const Vector clean = A * out.truth;
    auto gen = derive_stream(seed, kObservationNoiseStream);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double sd = 1.0 / std::sqrt(noise_precision);
    for (std::size_t r = 0; r < out.sites.size(); ++r) {
        out.sites[r].value = clean[static_cast<Eigen::Index>(r)] + sd * normal(gen);
    }
    out.obs = make_observations(mesh, out.sites, std::vector<double>(g.fields, noise_precision));
    return out;
}

} // namespace oscgmrf
