#pragma once

#include "oscgmrf/error.hpp"
#include "oscgmrf/types.hpp"

#include <algorithm>
#include <cctype>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace oscgmrf {

// Matrix Market coordinate format, real values. With `symmetric` only the
// lower triangle is written and the header says so.
inline void write_matrix_market(std::ostream& os, const SparseMatrix& m, bool symmetric) {
    if (symmetric && m.rows() != m.cols()) {
        throw InvalidInput("write_matrix_market: symmetric storage needs a square matrix");
    }
    std::size_t nnz = 0;
    for (int k = 0; k < m.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(m, k); it; ++it)
            if (!symmetric || it.row() >= it.col()) ++nnz;

    os << "%%MatrixMarket matrix coordinate real " << (symmetric ? "symmetric" : "general") << '\n';
    os << m.rows() << ' ' << m.cols() << ' ' << nnz << '\n';
    os << std::setprecision(17);
    for (int k = 0; k < m.outerSize(); ++k) {
        for (SparseMatrix::InnerIterator it(m, k); it; ++it) {
            if (symmetric && it.row() < it.col()) continue;
            os << it.row() + 1 << ' ' << it.col() + 1 << ' ' << it.value() << '\n';
        }
    }
}

inline SparseMatrix read_matrix_market(std::istream& is, const std::string& name = "<matrix>") {
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(is, line)) throw ParseError(name, 1, "empty file");
    ++lineno;
    std::string lower = line;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    std::istringstream header(lower);
    std::string banner, object, format, field, symmetry;
    header >> banner >> object >> format >> field >> symmetry;
    if (banner != "%%matrixmarket" || object != "matrix" || format != "coordinate") {
        throw ParseError(name, lineno, "expected a Matrix Market coordinate header");
    }
    if (field != "real" && field != "integer") {
        throw ParseError(name, lineno, "unsupported field type '" + field + "'");
    }
    const bool symmetric = symmetry == "symmetric";
    if (!symmetric && symmetry != "general") {
        throw ParseError(name, lineno, "unsupported symmetry '" + symmetry + "'");
    }

    long rows = -1, cols = -1, nnz = -1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '%') continue;
        std::istringstream ss(line);
        if (!(ss >> rows >> cols >> nnz) || rows < 0 || cols < 0 || nnz < 0) {
            throw ParseError(name, lineno, "malformed size line");
        }
        break;
    }
    if (rows < 0) throw ParseError(name, lineno, "missing size line");

    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(symmetric ? 2 * nnz : nnz));
    long seen = 0;
    while (seen < nnz && std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '%') continue;
        std::istringstream ss(line);
        long i = 0, j = 0;
        double v = 0.0;
        if (!(ss >> i >> j >> v) || i < 1 || j < 1 || i > rows || j > cols) {
            throw ParseError(name, lineno, "malformed entry");
        }
        t.emplace_back(static_cast<int>(i - 1), static_cast<int>(j - 1), v);
        if (symmetric && i != j) t.emplace_back(static_cast<int>(j - 1), static_cast<int>(i - 1), v);
        ++seen;
    }
    if (seen != nnz) throw ParseError(name, lineno, "fewer entries than declared");
    SparseMatrix m(static_cast<int>(rows), static_cast<int>(cols));
    m.setFromTriplets(t.begin(), t.end());
    return m;
}

} // namespace oscgmrf
