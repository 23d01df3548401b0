#pragma once

#include "oscgmrf/error.hpp"
#include "oscgmrf/mesh.hpp"
#include "oscgmrf/types.hpp"

#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace oscgmrf {

// One observed (or requested) site. `field` is 1-based.
struct Site {
    std::size_t field = 1;
    Point location;
    double value = std::nan("");
};

/// Observations linked to the stacked field weights.
///
/// Row r of A holds the barycentric weights of site r in the block of its
/// field; noise_precision is the diagonal of Q_n.
struct ObservationSet {
    Vector y;
    SparseMatrix A;
    Vector noise_precision;
    std::vector<std::size_t> field_index;
    std::vector<Point> locations;

    [[nodiscard]] Eigen::Index size() const { return y.size(); }
};

// Sparse t x (fields n) interpolation matrix for `sites`.
inline SparseMatrix interpolation_matrix(const Mesh& mesh, const std::vector<Site>& sites, std::size_t fields) {
    const auto n = static_cast<int>(mesh.num_vertices());
    std::vector<Triplet> trip;
    trip.reserve(3 * sites.size());
    for (std::size_t r = 0; r < sites.size(); ++r) {
        const auto& s = sites[r];
        if (s.field < 1 || s.field > fields) {
            throw InvalidInput("observation " + std::to_string(r) + ": field index " + std::to_string(s.field) +
                               " out of range");
        }
        auto loc = mesh.locate(s.location);
        const auto& tri = mesh.triangles()[loc.triangle_index];
        const int off = static_cast<int>(s.field - 1) * n;
        for (int k = 0; k < 3; ++k) {
            if (loc.barycentric[k] != 0.0) {
                trip.emplace_back(static_cast<int>(r), off + static_cast<int>(tri[k]), loc.barycentric[k]);
            }
        }
    }
    SparseMatrix A(static_cast<int>(sites.size()), static_cast<int>(fields) * n);
    A.setFromTriplets(trip.begin(), trip.end());
    A.makeCompressed();
    return A;
}

/// Builds an observation set. `precision_per_field[f-1]` is the known
/// measurement-error precision of field f.
inline ObservationSet make_observations(const Mesh& mesh, const std::vector<Site>& sites,
                                        const std::vector<double>& precision_per_field) {
    const std::size_t fields = precision_per_field.size();
    for (double p : precision_per_field) {
        if (!(p > 0.0) || !std::isfinite(p)) throw InvalidInput("observation noise precision must be positive");
    }
    ObservationSet obs;
    const auto t = static_cast<Eigen::Index>(sites.size());
    obs.y.resize(t);
    obs.noise_precision.resize(t);
    for (Eigen::Index r = 0; r < t; ++r) {
        const auto& s = sites[static_cast<std::size_t>(r)];
        if (!std::isfinite(s.value)) {
            throw InvalidInput("observation " + std::to_string(r) + " has no finite value");
        }
        obs.y[r] = s.value;
        obs.field_index.push_back(s.field);
        obs.locations.push_back(s.location);
        if (s.field >= 1 && s.field <= fields) obs.noise_precision[r] = precision_per_field[s.field - 1];
    }
    obs.A = interpolation_matrix(mesh, sites, fields);
    return obs;
}

inline ObservationSet empty_observations(Eigen::Index dimension) {
    ObservationSet obs;
    obs.y.resize(0);
    obs.noise_precision.resize(0);
    obs.A.resize(0, static_cast<int>(dimension));
    return obs;
}

// CSV with header, then field_index,x,y[,value] rows. A missing value column
// (targets without truth) leaves value as NaN.
inline std::vector<Site> read_sites_csv(std::istream& is, const std::string& name = "<csv>") {
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(is, line)) throw ParseError(name, 1, "missing header line");
    ++lineno;
    std::vector<Site> out;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cols.push_back(cell);
        if (cols.size() < 3 || cols.size() > 4) {
            throw ParseError(name, lineno, "expected 3 or 4 comma-separated columns, got " + std::to_string(cols.size()));
        }
        Site s;
        try {
            std::size_t used = 0;
            long f = std::stol(cols[0], &used);
            if (used != cols[0].size() || f < 1) throw std::invalid_argument("field");
            s.field = static_cast<std::size_t>(f);
            s.location.x = std::stod(cols[1], &used);
            if (used != cols[1].size()) throw std::invalid_argument("x");
            s.location.y = std::stod(cols[2], &used);
            if (used != cols[2].size()) throw std::invalid_argument("y");
            if (cols.size() == 4 && !cols[3].empty()) {
                s.value = std::stod(cols[3], &used);
                if (used != cols[3].size()) throw std::invalid_argument("value");
            }
        } catch (const std::logic_error&) {
            throw ParseError(name, lineno, "malformed row '" + line + "'");
        }
        out.push_back(s);
    }
    return out;
}

inline std::vector<Site> read_sites_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return read_sites_csv(in, path);
}

inline void write_sites_csv(std::ostream& os, const std::vector<Site>& sites) {
    os << "field_index,x,y,value\n" << std::setprecision(17);
    for (const auto& s : sites) {
        os << s.field << ',' << s.location.x << ',' << s.location.y << ',' << s.value << '\n';
    }
}

} // namespace oscgmrf
