#pragma once

// File formats: CSV grids with a one-line geometry header, binary PGM
// ingestion with affine rescale, and the CSV/JSON export helpers shared by
// the CLI and the test fixtures. All floating-point output uses 17
// significant digits so round-trips are exact.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "otlab/common.hpp"
#include "otlab/grid.hpp"

namespace otlab {

inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// CSV density grids
// Header: d,nx[,ny],origin_x[,origin_y],h   then nx*ny values, row-major.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> parse_numbers(std::istream& in) {
    std::vector<double> out;
    std::string tok;
    while (in) {
        int c = in.get();
        if (c == EOF) break;
        if (c == ',' || c == '\n' || c == '\r' || c == ' ' || c == '\t') {
            if (!tok.empty()) {
                out.push_back(std::stod(tok));
                tok.clear();
            }
        } else {
            tok.push_back(static_cast<char>(c));
        }
    }
    if (!tok.empty()) out.push_back(std::stod(tok));
    return out;
}

}  // namespace detail

template <int D>
inline void write_density_csv(const std::string& path, const GridDensity<D>& rho) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot open " + path + " for writing");
    out << D << "," << rho.geom.n[0];
    if constexpr (D == 2) out << "," << rho.geom.n[1];
    out << "," << fmt17(rho.geom.origin[0]);
    if constexpr (D == 2) out << "," << fmt17(rho.geom.origin[1]);
    out << "," << fmt17(rho.geom.h) << "\n";
    const int nx = rho.geom.n[0];
    for (std::size_t i = 0; i < rho.cells.size(); ++i) {
        out << fmt17(rho.cells[i]);
        out << (((static_cast<int>(i) % nx) == nx - 1) ? '\n' : ',');
    }
}

template <int D>
inline GridDensity<D> read_density_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    std::string header;
    if (!std::getline(in, header)) throw Error(ErrorCode::IoError, "empty file " + path);
    std::stringstream hs(header);
    auto fields = detail::parse_numbers(hs);
    if (fields.size() < 4) throw Error(ErrorCode::IoError, "bad grid header in " + path);
    int d = static_cast<int>(fields[0]);
    if (d != D) throw Error(ErrorCode::IoError, "grid dimension mismatch in " + path);
    GridGeom<D> g;
    std::size_t k = 1;
    for (int i = 0; i < D; ++i) g.n[i] = static_cast<int>(fields[k++]);
    for (int i = 0; i < D; ++i) g.origin[i] = fields[k++];
    if (k >= fields.size()) throw Error(ErrorCode::IoError, "bad grid header in " + path);
    g.h = fields[k];
    auto values = detail::parse_numbers(in);
    if (static_cast<int>(values.size()) != g.num_cells())
        throw Error(ErrorCode::IoError, "cell count mismatch in " + path);
    return GridDensity<D>(g, std::move(values));
}

// ---------------------------------------------------------------------------
// PGM (P5, 8- or 16-bit) interpreted as density after affine rescale of the
// sample range [0, maxval] onto [lo, hi].
// ---------------------------------------------------------------------------

inline GridDensity<2> read_density_pgm(const std::string& path, double lo, double hi,
                                       Vec<2> origin, double h) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    auto next_token = [&in, &path]() {
        std::string tok;
        for (;;) {
            int c = in.get();
            if (c == EOF) throw Error(ErrorCode::IoError, "truncated PGM header in " + path);
            if (c == '#') {  // comment to end of line
                while (c != EOF && c != '\n') c = in.get();
                continue;
            }
            if (std::isspace(c)) {
                if (!tok.empty()) return tok;
                continue;
            }
            tok.push_back(static_cast<char>(c));
        }
    };
    if (next_token() != "P5") throw Error(ErrorCode::IoError, "not a binary PGM: " + path);
    int w = std::stoi(next_token());
    int ht = std::stoi(next_token());
    int maxval = std::stoi(next_token());
    if (w <= 0 || ht <= 0 || maxval <= 0 || maxval > 65535)
        throw Error(ErrorCode::IoError, "bad PGM dimensions in " + path);
    const int bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * ht * bytes);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size()))
        throw Error(ErrorCode::IoError, "truncated PGM data in " + path);

    GridGeom<2> g;
    g.n = {w, ht};
    g.origin = origin;
    g.h = h;
    std::vector<double> cells(static_cast<std::size_t>(w) * ht);
    // PGM rows run top-to-bottom; grid rows run bottom-to-top.
    for (int row = 0; row < ht; ++row) {
        for (int col = 0; col < w; ++col) {
            std::size_t src = (static_cast<std::size_t>(row) * w + col) * bytes;
            int v = bytes == 1 ? raw[src] : (raw[src] << 8) | raw[src + 1];  // big-endian
            double t = static_cast<double>(v) / maxval;
            cells[static_cast<std::size_t>(ht - 1 - row) * w + col] = lo + (hi - lo) * t;
        }
    }
    return GridDensity<2>(g, std::move(cells));
}

}  // namespace otlab
