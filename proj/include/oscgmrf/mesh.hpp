#pragma once

#include "oscgmrf/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace oscgmrf {

struct Point {
    double x = 0.0;
    double y = 0.0;

    friend Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
    friend Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
    friend Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }
    friend bool operator==(Point a, Point b) = default;
};

inline double cross(Point a, Point b) { return a.x * b.y - a.y * b.x; }
inline double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }
inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

// Twice the signed area; positive for counter-clockwise a, b, c.
inline double orient(Point a, Point b, Point c) { return cross(b - a, c - a); }

struct Rect {
    double xmin = 0.0;
    double ymin = 0.0;
    double xmax = 0.0;
    double ymax = 0.0;

    [[nodiscard]] double width() const { return xmax - xmin; }
    [[nodiscard]] double height() const { return ymax - ymin; }
    [[nodiscard]] double area() const { return width() * height(); }
    [[nodiscard]] Point center() const { return {0.5 * (xmin + xmax), 0.5 * (ymin + ymax)}; }
    [[nodiscard]] bool contains(Point p, double tol = 0.0) const {
        return p.x >= xmin - tol && p.x <= xmax + tol && p.y >= ymin - tol && p.y <= ymax + tol;
    }
};

using Triangle = std::array<std::size_t, 3>;

struct PointLocation {
    std::size_t triangle_index = 0;
    std::array<double, 3> barycentric{};
};

/// Planar triangulation with counter-clockwise triangles.
///
/// Immutable after construction. The constructor checks the structural
/// invariants (positive areas, valid distinct indices, every edge shared by
/// at most two consistently oriented triangles) and builds a bucket index
/// used by locate().
class Mesh {
public:
    Mesh(std::vector<Point> vertices, std::vector<Triangle> triangles,
         std::vector<bool> boundary_flags, Rect core)
        : vertices_(std::move(vertices)),
          triangles_(std::move(triangles)),
          boundary_(std::move(boundary_flags)),
          core_(core) {
        if (boundary_.size() != vertices_.size()) {
            throw InvalidInput("mesh: boundary flag count does not match vertex count");
        }
        validate();
        build_index();
    }

    [[nodiscard]] std::size_t num_vertices() const { return vertices_.size(); }
    [[nodiscard]] std::size_t num_triangles() const { return triangles_.size(); }
    [[nodiscard]] const std::vector<Point>& vertices() const { return vertices_; }
    [[nodiscard]] const std::vector<Triangle>& triangles() const { return triangles_; }
    [[nodiscard]] const std::vector<bool>& boundary_flags() const { return boundary_; }
    [[nodiscard]] Point vertex(std::size_t i) const { return vertices_.at(i); }
    [[nodiscard]] bool is_boundary(std::size_t i) const { return boundary_.at(i); }

    // Unpadded region of interest. Vertices outside it belong to the padding.
    [[nodiscard]] const Rect& core() const { return core_; }
    [[nodiscard]] const Rect& bounds() const { return bounds_; }

    [[nodiscard]] double triangle_area(std::size_t t) const {
        const auto& tri = triangles_.at(t);
        return 0.5 * orient(vertices_[tri[0]], vertices_[tri[1]], vertices_[tri[2]]);
    }

    [[nodiscard]] double total_area() const {
        double a = 0.0;
        for (std::size_t t = 0; t < triangles_.size(); ++t) a += triangle_area(t);
        return a;
    }

    // Unique undirected edges, each as (lo, hi).
    [[nodiscard]] std::vector<std::pair<std::size_t, std::size_t>> edges() const {
        std::vector<std::pair<std::size_t, std::size_t>> out;
        out.reserve(3 * triangles_.size());
        for (const auto& tri : triangles_) {
            for (int k = 0; k < 3; ++k) {
                auto a = tri[k];
                auto b = tri[(k + 1) % 3];
                out.emplace_back(std::min(a, b), std::max(a, b));
            }
        }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    // Median edge length; for uniform grids this is the grid spacing.
    [[nodiscard]] double typical_edge_length() const {
        auto e = edges();
        if (e.empty()) return 0.0;
        std::vector<double> len;
        len.reserve(e.size());
        for (auto [a, b] : e) len.push_back(distance(vertices_[a], vertices_[b]));
        std::nth_element(len.begin(), len.begin() + len.size() / 2, len.end());
        return len[len.size() / 2];
    }

    // Vertex nearest to p (ties broken by lowest index).
    [[nodiscard]] std::size_t nearest_vertex(Point p) const {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < vertices_.size(); ++i) {
            double d = distance(vertices_[i], p);
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        return best;
    }

    /// Finds the triangle containing p and its barycentric coordinates.
    /// Throws OutOfDomain when p lies outside the triangulated hull.
    [[nodiscard]] PointLocation locate(Point p) const {
        const double tol = 1e-12;
        if (!bounds_.contains(p, tol * std::max(1.0, bounds_.width() + bounds_.height()))) {
            throw OutOfDomain(out_of_domain_message(p));
        }
        auto [cx, cy] = bucket_of(p);
        const auto& cand = buckets_[cy * bucket_nx_ + cx];

        std::size_t best_t = triangles_.size();
        std::array<double, 3> best_w{};
        double best_min = -std::numeric_limits<double>::infinity();
        for (auto t : cand) {
            auto w = barycentric(t, p);
            double m = std::min({w[0], w[1], w[2]});
            if (m > best_min) {
                best_min = m;
                best_t = t;
                best_w = w;
            }
            if (m >= 0.0) break;
        }
        if (best_t == triangles_.size() || best_min < -1e-10) {
            throw OutOfDomain(out_of_domain_message(p));
        }
        double s = 0.0;
        for (auto& w : best_w) {
            w = std::clamp(w, 0.0, 1.0);
            s += w;
        }
        for (auto& w : best_w) w /= s;
        return {best_t, best_w};
    }

    [[nodiscard]] std::array<double, 3> barycentric(std::size_t t, Point p) const {
        const auto& tri = triangles_[t];
        Point a = vertices_[tri[0]];
        Point b = vertices_[tri[1]];
        Point c = vertices_[tri[2]];
        double det = orient(a, b, c);
        double wb = cross(p - a, c - a) / det;
        double wc = cross(b - a, p - a) / det;
        return {1.0 - wb - wc, wb, wc};
    }

private:
    void validate() {
        const std::size_t nv = vertices_.size();
        if (nv < 3 || triangles_.empty()) {
            throw InvalidInput("mesh: need at least 3 vertices and one triangle");
        }
        std::map<std::pair<std::size_t, std::size_t>, int> directed;
        for (std::size_t t = 0; t < triangles_.size(); ++t) {
            const auto& tri = triangles_[t];
            for (auto v : tri) {
                if (v >= nv) {
                    throw InvalidInput("mesh: triangle " + std::to_string(t) +
                                       " references vertex out of range");
                }
            }
            if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) {
                throw InvalidInput("mesh: triangle " + std::to_string(t) + " has repeated vertices");
            }
            if (!(triangle_area(t) > 0.0)) {
                throw InvalidInput("mesh: triangle " + std::to_string(t) +
                                   " is not counter-clockwise with positive area");
            }
            for (int k = 0; k < 3; ++k) {
                auto key = std::make_pair(tri[k], tri[(k + 1) % 3]);
                if (++directed[key] > 1) {
                    throw InvalidInput("mesh: non-conforming triangulation at triangle " +
                                       std::to_string(t));
                }
            }
        }
        bounds_ = {vertices_[0].x, vertices_[0].y, vertices_[0].x, vertices_[0].y};
        for (const auto& p : vertices_) {
            bounds_.xmin = std::min(bounds_.xmin, p.x);
            bounds_.ymin = std::min(bounds_.ymin, p.y);
            bounds_.xmax = std::max(bounds_.xmax, p.x);
            bounds_.ymax = std::max(bounds_.ymax, p.y);
        }
    }

    void build_index() {
        auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(triangles_.size()))));
        bucket_nx_ = std::max<std::size_t>(1, side);
        bucket_ny_ = bucket_nx_;
        buckets_.assign(bucket_nx_ * bucket_ny_, {});
        for (std::size_t t = 0; t < triangles_.size(); ++t) {
            const auto& tri = triangles_[t];
            Rect box{vertices_[tri[0]].x, vertices_[tri[0]].y, vertices_[tri[0]].x, vertices_[tri[0]].y};
            for (auto v : tri) {
                box.xmin = std::min(box.xmin, vertices_[v].x);
                box.ymin = std::min(box.ymin, vertices_[v].y);
                box.xmax = std::max(box.xmax, vertices_[v].x);
                box.ymax = std::max(box.ymax, vertices_[v].y);
            }
            auto [x0, y0] = bucket_of({box.xmin, box.ymin});
            auto [x1, y1] = bucket_of({box.xmax, box.ymax});
            for (auto y = y0; y <= y1; ++y)
                for (auto x = x0; x <= x1; ++x) buckets_[y * bucket_nx_ + x].push_back(t);
        }
    }

    [[nodiscard]] std::pair<std::size_t, std::size_t> bucket_of(Point p) const {
        auto cell = [](double v, double lo, double span, std::size_t n) {
            if (span <= 0.0) return std::size_t{0};
            double f = (v - lo) / span * static_cast<double>(n);
            auto i = static_cast<long long>(std::floor(f));
            return static_cast<std::size_t>(std::clamp<long long>(i, 0, static_cast<long long>(n) - 1));
        };
        return {cell(p.x, bounds_.xmin, bounds_.width(), bucket_nx_),
                cell(p.y, bounds_.ymin, bounds_.height(), bucket_ny_)};
    }

    static std::string out_of_domain_message(Point p) {
        std::ostringstream os;
        os << "point (" << p.x << ", " << p.y << ") lies outside the mesh";
        return os.str();
    }

    std::vector<Point> vertices_;
    std::vector<Triangle> triangles_;
    std::vector<bool> boundary_;
    Rect core_;
    Rect bounds_;
    std::size_t bucket_nx_ = 1;
    std::size_t bucket_ny_ = 1;
    std::vector<std::vector<std::size_t>> buckets_;
};

// Number of whole grid cells needed to cover `padding` at spacing `step`.
inline std::size_t padding_cells(double padding, double step) {
    if (padding <= 0.0) return 0;
    return static_cast<std::size_t>(std::ceil(padding / step - 1e-9));
}

/// Structured triangulation of `extent` with nx x ny vertices, extended on
/// every side by whole cells until at least `padding` is covered. Each cell
/// is split along its (lower-left, upper-right) diagonal.
///
/// Boundary flags mark vertices on the outer hull and vertices in the
/// padding; vertices of the closed unpadded rectangle are unflagged when
/// padding is present.
inline Mesh build_regular_mesh(std::size_t nx, std::size_t ny, Rect extent, double padding = 0.0) {
    if (nx < 2 || ny < 2) throw InvalidInput("build_regular_mesh: nx and ny must be at least 2");
    if (!(padding >= 0.0)) throw InvalidInput("build_regular_mesh: padding must be nonnegative");
    if (!(extent.width() > 0.0) || !(extent.height() > 0.0)) {
        throw InvalidInput("build_regular_mesh: degenerate extent");
    }
    const double dx = extent.width() / static_cast<double>(nx - 1);
    const double dy = extent.height() / static_cast<double>(ny - 1);
    const std::size_t px = padding_cells(padding, dx);
    const std::size_t py = padding_cells(padding, dy);
    const std::size_t NX = nx + 2 * px;
    const std::size_t NY = ny + 2 * py;

    std::vector<Point> verts;
    std::vector<bool> flags;
    verts.reserve(NX * NY);
    flags.reserve(NX * NY);
    for (std::size_t j = 0; j < NY; ++j) {
        for (std::size_t i = 0; i < NX; ++i) {
            double x = extent.xmin + (static_cast<double>(i) - static_cast<double>(px)) * dx;
            double y = extent.ymin + (static_cast<double>(j) - static_cast<double>(py)) * dy;
            // Snap the core rectangle exactly onto the requested extent.
            if (i == px) x = extent.xmin;
            if (i == px + nx - 1) x = extent.xmax;
            if (j == py) y = extent.ymin;
            if (j == py + ny - 1) y = extent.ymax;
            verts.push_back({x, y});
            bool hull = i == 0 || j == 0 || i == NX - 1 || j == NY - 1;
            bool padded = i < px || i >= px + nx || j < py || j >= py + ny;
            flags.push_back(hull || padded);
        }
    }
    std::vector<Triangle> tris;
    tris.reserve(2 * (NX - 1) * (NY - 1));
    for (std::size_t j = 0; j + 1 < NY; ++j) {
        for (std::size_t i = 0; i + 1 < NX; ++i) {
            std::size_t v00 = j * NX + i;
            std::size_t v10 = v00 + 1;
            std::size_t v01 = v00 + NX;
            std::size_t v11 = v01 + 1;
            tris.push_back({v00, v10, v11});
            tris.push_back({v00, v11, v01});
        }
    }
    return Mesh(std::move(verts), std::move(tris), std::move(flags), extent);
}

namespace detail {

inline bool in_circumcircle(Point a, Point b, Point c, Point p) {
    // a, b, c counter-clockwise.
    double adx = a.x - p.x, ady = a.y - p.y;
    double bdx = b.x - p.x, bdy = b.y - p.y;
    double cdx = c.x - p.x, cdy = c.y - p.y;
    double ad = adx * adx + ady * ady;
    double bd = bdx * bdx + bdy * bdy;
    double cd = cdx * cdx + cdy * cdy;
    double det = adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx);
    return det > 0.0;
}

} // namespace detail

/// Bowyer-Watson Delaunay triangulation of scattered points. Quadratic in
/// the number of points; intended for user-supplied vertex sets of modest
/// size. Hull vertices are flagged as boundary.
inline Mesh delaunay_triangulate(const std::vector<Point>& points) {
    const std::size_t n = points.size();
    if (n < 3) throw InvalidInput("delaunay_triangulate: need at least 3 points");
    Rect box{points[0].x, points[0].y, points[0].x, points[0].y};
    for (const auto& p : points) {
        box.xmin = std::min(box.xmin, p.x);
        box.ymin = std::min(box.ymin, p.y);
        box.xmax = std::max(box.xmax, p.x);
        box.ymax = std::max(box.ymax, p.y);
    }
    const double span = std::max(box.width(), box.height());
    if (!(span > 0.0)) throw InvalidInput("delaunay_triangulate: degenerate point set");

    std::vector<Point> pts = points;
    Point c = box.center();
    const double big = 64.0 * span;
    pts.push_back({c.x - 2.0 * big, c.y - big});
    pts.push_back({c.x + 2.0 * big, c.y - big});
    pts.push_back({c.x, c.y + 2.0 * big});

    std::vector<Triangle> tris{{n, n + 1, n + 2}};
    for (std::size_t i = 0; i < n; ++i) {
        const Point p = pts[i];
        std::vector<Triangle> keep;
        std::map<std::pair<std::size_t, std::size_t>, int> boundary;
        keep.reserve(tris.size() + 2);
        for (const auto& t : tris) {
            if (detail::in_circumcircle(pts[t[0]], pts[t[1]], pts[t[2]], p)) {
                for (int k = 0; k < 3; ++k) {
                    auto a = t[k];
                    auto b = t[(k + 1) % 3];
                    auto rev = boundary.find({b, a});
                    if (rev != boundary.end()) {
                        boundary.erase(rev);
                    } else {
                        boundary[{a, b}] = 1;
                    }
                }
            } else {
                keep.push_back(t);
            }
        }
        for (const auto& [edge, unused] : boundary) {
            Triangle t{edge.first, edge.second, i};
            if (orient(pts[t[0]], pts[t[1]], pts[t[2]]) > 0.0) keep.push_back(t);
        }
        tris = std::move(keep);
    }

    std::vector<Triangle> out;
    for (const auto& t : tris) {
        if (t[0] < n && t[1] < n && t[2] < n) out.push_back(t);
    }
    if (out.empty()) throw InvalidInput("delaunay_triangulate: points are collinear");

    std::map<std::pair<std::size_t, std::size_t>, int> edge_count;
    for (const auto& t : out) {
        for (int k = 0; k < 3; ++k) {
            auto a = t[k];
            auto b = t[(k + 1) % 3];
            ++edge_count[{std::min(a, b), std::max(a, b)}];
        }
    }
    std::vector<bool> flags(n, false);
    for (const auto& [e, cnt] : edge_count) {
        if (cnt == 1) {
            flags[e.first] = true;
            flags[e.second] = true;
        }
    }
    return Mesh(points, std::move(out), std::move(flags), box);
}

// Plain-text mesh format:
//
//   # oscgmrf mesh: <V> vertices, <T> triangles
//   core <xmin> <ymin> <xmax> <ymax>
//   vertices <V>
//   <index> <x> <y> <boundary 0|1>        (V lines)
//   triangles <T>
//   <a> <b> <c>                           (T lines, counter-clockwise)
inline void write_mesh(std::ostream& os, const Mesh& mesh) {
    os << "# oscgmrf mesh: " << mesh.num_vertices() << " vertices, " << mesh.num_triangles()
       << " triangles\n";
    os << std::setprecision(17);
    const auto& c = mesh.core();
    os << "core " << c.xmin << ' ' << c.ymin << ' ' << c.xmax << ' ' << c.ymax << '\n';
    os << "vertices " << mesh.num_vertices() << '\n';
    for (std::size_t i = 0; i < mesh.num_vertices(); ++i) {
        auto p = mesh.vertex(i);
        os << i << ' ' << p.x << ' ' << p.y << ' ' << (mesh.is_boundary(i) ? 1 : 0) << '\n';
    }
    os << "triangles " << mesh.num_triangles() << '\n';
    for (const auto& t : mesh.triangles()) os << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
}

inline Mesh read_mesh(std::istream& is, const std::string& name = "<mesh>") {
    std::string line;
    std::size_t lineno = 0;
    auto next = [&]() -> std::istringstream {
        while (std::getline(is, line)) {
            ++lineno;
            if (line.empty() || line[0] == '#') continue;
            return std::istringstream(line);
        }
        throw ParseError(name, lineno, "unexpected end of file");
    };
    auto expect_keyword = [&](std::istringstream& ss, const std::string& kw) {
        std::string word;
        ss >> word;
        if (word != kw) throw ParseError(name, lineno, "expected '" + kw + "'");
    };

    auto ss = next();
    expect_keyword(ss, "core");
    Rect core;
    if (!(ss >> core.xmin >> core.ymin >> core.xmax >> core.ymax)) {
        throw ParseError(name, lineno, "malformed core line");
    }
    ss = next();
    expect_keyword(ss, "vertices");
    std::size_t nv = 0;
    if (!(ss >> nv)) throw ParseError(name, lineno, "malformed vertex count");
    std::vector<Point> verts(nv);
    std::vector<bool> flags(nv);
    for (std::size_t k = 0; k < nv; ++k) {
        ss = next();
        std::size_t idx = 0;
        int flag = 0;
        Point p;
        if (!(ss >> idx >> p.x >> p.y >> flag) || idx >= nv) {
            throw ParseError(name, lineno, "malformed vertex row");
        }
        verts[idx] = p;
        flags[idx] = flag != 0;
    }
    ss = next();
    expect_keyword(ss, "triangles");
    std::size_t nt = 0;
    if (!(ss >> nt)) throw ParseError(name, lineno, "malformed triangle count");
    std::vector<Triangle> tris(nt);
    for (std::size_t k = 0; k < nt; ++k) {
        ss = next();
        if (!(ss >> tris[k][0] >> tris[k][1] >> tris[k][2])) {
            throw ParseError(name, lineno, "malformed triangle row");
        }
    }
    return Mesh(std::move(verts), std::move(tris), std::move(flags), core);
}

} // namespace oscgmrf
