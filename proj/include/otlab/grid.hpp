#pragma once

// Gridded densities on regular Cartesian grids (d = 1 or 2), balls, and the
// localized quantities built from them: restriction, data term, ball means.
//
// Conventions used throughout the lab:
//   - a cell belongs to a ball iff its center does (O(h) geometric error,
//     dominated by solver error and consistent across all modules);
//   - ball averages use the discrete volume h^d * (#cells), so the mean of a
//     constant field is that constant exactly;
//   - all reductions run in fixed cell order via pairwise summation.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "otlab/common.hpp"

namespace otlab {

inline constexpr double kMassTolExact = 1e-8;     // relative, exact solves
inline constexpr double kMassTolEntropic = 1e-6;  // relative, entropic solves

// Volume of the unit ball.
template <int D>
inline constexpr double unit_ball_volume() {
    if constexpr (D == 1) return 2.0;
    else return 3.14159265358979323846;
}

template <int D>
struct Ball {
    Vec<D> center{};
    double radius = 0.0;

    Ball() = default;
    Ball(const Vec<D>& c, double r) : center(c), radius(r) {
        if (!(r > 0.0)) throw Error(ErrorCode::ConfigError, "ball radius must be > 0");
    }

    bool contains(const Vec<D>& p) const { return norm2<D>(p - center) <= radius * radius; }
};

template <int D>
inline double ball_volume(const Ball<D>& b) {
    double v = unit_ball_volume<D>();
    for (int i = 0; i < D; ++i) v *= b.radius;
    return v;
}

// Geometry of a regular grid: shape, corner, cell edge length.
template <int D>
struct GridGeom {
    std::array<int, D> n{};
    Vec<D> origin{};
    double h = 1.0;

    int num_cells() const {
        int c = 1;
        for (int i = 0; i < D; ++i) c *= n[i];
        return c;
    }

    // Row-major with axis 0 fastest: idx = ix + nx*iy.
    int index(const std::array<int, D>& c) const {
        int idx = 0, stride = 1;
        for (int i = 0; i < D; ++i) {
            idx += c[i] * stride;
            stride *= n[i];
        }
        return idx;
    }

    std::array<int, D> coords(int idx) const {
        std::array<int, D> c{};
        for (int i = 0; i < D; ++i) {
            c[i] = idx % n[i];
            idx /= n[i];
        }
        return c;
    }

    Vec<D> center(int idx) const {
        auto c = coords(idx);
        Vec<D> p;
        for (int i = 0; i < D; ++i) p[i] = origin[i] + (c[i] + 0.5) * h;
        return p;
    }

    double cell_volume() const {
        double v = 1.0;
        for (int i = 0; i < D; ++i) v *= h;
        return v;
    }

    Vec<D> min_corner() const { return origin; }
    Vec<D> max_corner() const {
        Vec<D> p;
        for (int i = 0; i < D; ++i) p[i] = origin[i] + n[i] * h;
        return p;
    }

    bool contains_point(const Vec<D>& p) const {
        for (int i = 0; i < D; ++i)
            if (p[i] < origin[i] || p[i] > origin[i] + n[i] * h) return false;
        return true;
    }

    bool same_geometry(const GridGeom& o) const {
        return n == o.n && origin == o.origin && h == o.h;
    }
};

// Scalar field sampled at cell centers; no sign constraint.
template <int D>
struct GridScalar {
    GridGeom<D> geom;
    std::vector<double> values;

    GridScalar() = default;
    GridScalar(const GridGeom<D>& g, std::vector<double> v) : geom(g), values(std::move(v)) {
        if (static_cast<int>(values.size()) != geom.num_cells())
            throw Error(ErrorCode::ConfigError, "field size does not match grid");
    }
    GridScalar(const GridGeom<D>& g, double fill)
        : geom(g), values(static_cast<std::size_t>(g.num_cells()), fill) {}
};

// Nonnegative density (mass per unit volume) at cell centers.
template <int D>
struct GridDensity {
    GridGeom<D> geom;
    std::vector<double> cells;

    GridDensity() = default;
    GridDensity(const GridGeom<D>& g, std::vector<double> v) : geom(g), cells(std::move(v)) {
        if (static_cast<int>(cells.size()) != geom.num_cells())
            throw Error(ErrorCode::ConfigError, "density size does not match grid");
        for (double c : cells)
            if (!(c >= 0.0) || !std::isfinite(c))
                throw Error(ErrorCode::ConfigError, "density cells must be finite and >= 0");
    }
    GridDensity(const GridGeom<D>& g, double fill)
        : geom(g), cells(static_cast<std::size_t>(g.num_cells()), fill) {
        if (!(fill >= 0.0)) throw Error(ErrorCode::ConfigError, "density fill must be >= 0");
    }

    double total_mass() const { return geom.cell_volume() * pairwise_sum(cells); }

    double cell_mass(int idx) const { return geom.cell_volume() * cells[idx]; }

    GridScalar<D> as_scalar() const { return GridScalar<D>(geom, cells); }
};

// ---------------------------------------------------------------------------
// Cell / ball iteration
// ---------------------------------------------------------------------------

// Indices of cells whose centers lie in B, in increasing index order.
template <int D>
inline std::vector<int> cells_in_ball(const GridGeom<D>& g, const Ball<D>& b) {
    std::vector<int> out;
    // Bounding box in cell coordinates.
    std::array<int, D> lo{}, hi{};
    for (int i = 0; i < D; ++i) {
        lo[i] = std::max(0, static_cast<int>(std::floor((b.center[i] - b.radius - g.origin[i]) / g.h - 0.5)));
        hi[i] = std::min(g.n[i] - 1, static_cast<int>(std::ceil((b.center[i] + b.radius - g.origin[i]) / g.h - 0.5)));
        if (lo[i] > hi[i]) return out;
    }
    if constexpr (D == 1) {
        for (int i = lo[0]; i <= hi[0]; ++i) {
            int idx = i;
            if (b.contains(g.center(idx))) out.push_back(idx);
        }
    } else {
        for (int j = lo[1]; j <= hi[1]; ++j)
            for (int i = lo[0]; i <= hi[0]; ++i) {
                int idx = i + g.n[0] * j;
                if (b.contains(g.center(idx))) out.push_back(idx);
            }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// Density equal to rho on cells with center in B, zero elsewhere.
template <int D>
inline GridDensity<D> restrict_to_ball(const GridDensity<D>& rho, const Ball<D>& b) {
    auto idx = cells_in_ball(rho.geom, b);
    if (idx.empty())
        throw Error(ErrorCode::EmptyRestriction, "ball contains no cell centers");
    GridDensity<D> out(rho.geom, 0.0);
    for (int i : idx) out.cells[i] = rho.cells[i];
    return out;
}

// D := ||1-rho0||^2_{Linf(B)} + ||1-rho1||^2_{Linf(B)}.
template <int D>
inline double data_term(const GridDensity<D>& rho0, const GridDensity<D>& rho1,
                        const Ball<D>& b) {
    double out = 0.0;
    for (const GridDensity<D>* rho : {&rho0, &rho1}) {
        auto idx = cells_in_ball(rho->geom, b);
        if (idx.empty())
            throw Error(ErrorCode::EmptyRestriction, "ball contains no cell centers");
        double sup = 0.0;
        for (int i : idx) sup = std::max(sup, std::abs(1.0 - rho->cells[i]));
        out += sup * sup;
    }
    return out;
}

// Volume-weighted average of f over cells with center in B (discrete volume).
template <int D>
inline double mean_over_ball(const GridScalar<D>& f, const Ball<D>& b) {
    auto idx = cells_in_ball(f.geom, b);
    if (idx.empty())
        throw Error(ErrorCode::EmptyRestriction, "ball contains no cell centers");
    std::vector<double> vals;
    vals.reserve(idx.size());
    for (int i : idx) vals.push_back(f.values[i]);
    return pairwise_sum(vals) / static_cast<double>(idx.size());
}

// Mass of rho carried by cells with center in B. substeps > 1 splits each
// cell into substeps^d equal sub-particles (piecewise-constant density) and
// counts those; boundary quantization then drops below the cell scale.
template <int D>
inline double mass_in_ball(const GridDensity<D>& rho, const Ball<D>& b, int substeps = 1) {
    if (substeps <= 1) {
        auto idx = cells_in_ball(rho.geom, b);
        std::vector<double> vals;
        vals.reserve(idx.size());
        for (int i : idx) vals.push_back(rho.cells[i]);
        return rho.geom.cell_volume() * pairwise_sum(vals);
    }
    const auto& g = rho.geom;
    const double sub_h = g.h / substeps;
    const double sub_frac = 1.0 / std::pow(substeps, D);
    // Only cells near the boundary need splitting.
    const Ball<D> outer(b.center, b.radius + g.h);
    std::vector<double> vals;
    for (int i : cells_in_ball(g, outer)) {
        if (rho.cells[i] == 0.0) continue;
        const Vec<D> c = g.center(i);
        const double dist = norm<D>(c - b.center);
        if (dist + 0.71 * g.h * std::sqrt(static_cast<double>(D)) <= b.radius) {
            vals.push_back(rho.cells[i]);  // fully inside
            continue;
        }
        int inside = 0;
        const int s2 = (D == 2) ? substeps : 1;
        for (int q2 = 0; q2 < s2; ++q2)
            for (int q1 = 0; q1 < substeps; ++q1) {
                Vec<D> p = c;
                p[0] += (q1 + 0.5) * sub_h - 0.5 * g.h;
                if constexpr (D == 2) p[1] += (q2 + 0.5) * sub_h - 0.5 * g.h;
                if (b.contains(p)) ++inside;
            }
        if (inside > 0) vals.push_back(rho.cells[i] * inside * sub_frac);
    }
    return rho.geom.cell_volume() * pairwise_sum(vals);
}

// ---------------------------------------------------------------------------
// Interpolation and analytic-field sampling
// ---------------------------------------------------------------------------

// Bilinear interpolation of a cell-centered field, clamped at the boundary
// (constant extrapolation outside the outermost cell centers).
template <int D>
inline double interpolate_clamped(const GridScalar<D>& f, const Vec<D>& p) {
    const auto& g = f.geom;
    std::array<int, D> i0{};
    std::array<double, D> w{};
    for (int a = 0; a < D; ++a) {
        double t = (p[a] - g.origin[a]) / g.h - 0.5;
        double fl = std::floor(t);
        i0[a] = static_cast<int>(fl);
        w[a] = t - fl;
        if (i0[a] < 0) { i0[a] = 0; w[a] = 0.0; }
        if (i0[a] > g.n[a] - 2) { i0[a] = std::max(0, g.n[a] - 2); w[a] = 1.0; }
        if (g.n[a] == 1) { i0[a] = 0; w[a] = 0.0; }
    }
    if constexpr (D == 1) {
        int j = std::min(i0[0] + 1, g.n[0] - 1);
        return (1.0 - w[0]) * f.values[i0[0]] + w[0] * f.values[j];
    } else {
        int x0 = i0[0], y0 = i0[1];
        int x1 = std::min(x0 + 1, g.n[0] - 1), y1 = std::min(y0 + 1, g.n[1] - 1);
        double v00 = f.values[x0 + g.n[0] * y0], v10 = f.values[x1 + g.n[0] * y0];
        double v01 = f.values[x0 + g.n[0] * y1], v11 = f.values[x1 + g.n[0] * y1];
        return (1.0 - w[1]) * ((1.0 - w[0]) * v00 + w[0] * v10) +
               w[1] * ((1.0 - w[0]) * v01 + w[0] * v11);
    }
}

// Sample an analytic function at all cell centers.
template <int D>
inline GridScalar<D> sample_on_grid(const GridGeom<D>& g,
                                    const std::function<double(const Vec<D>&)>& f) {
    GridScalar<D> out(g, 0.0);
    for (int i = 0; i < g.num_cells(); ++i) out.values[i] = f(g.center(i));
    return out;
}

template <int D>
inline GridDensity<D> sample_density(const GridGeom<D>& g,
                                     const std::function<double(const Vec<D>&)>& f) {
    std::vector<double> v(static_cast<std::size_t>(g.num_cells()));
    for (int i = 0; i < g.num_cells(); ++i) v[i] = f(g.center(i));
    return GridDensity<D>(g, std::move(v));
}

// Quadrature nodes covering a ball with at least `min_across` points across
// the diameter; falls back to the grid resolution when that is finer.
// Used where ball radii shrink below a few grid cells and cell-center
// quadrature would be dominated by geometry error.
template <int D>
struct BallQuadrature {
    std::vector<Vec<D>> points;
    double weight = 0.0;  // equal weight per node (sub-cell volume)
};

template <int D>
inline BallQuadrature<D> ball_quadrature(const Ball<D>& b, double h_data, int min_across) {
    double h = std::min(h_data, 2.0 * b.radius / static_cast<double>(min_across));
    BallQuadrature<D> q;
    int m = static_cast<int>(std::ceil(2.0 * b.radius / h));
    Vec<D> corner;
    for (int i = 0; i < D; ++i) corner[i] = b.center[i] - 0.5 * m * h;
    if constexpr (D == 1) {
        for (int i = 0; i < m; ++i) {
            Vec<1> p{corner[0] + (i + 0.5) * h};
            if (b.contains(p)) q.points.push_back(p);
        }
    } else {
        for (int j = 0; j < m; ++j)
            for (int i = 0; i < m; ++i) {
                Vec<2> p{corner[0] + (i + 0.5) * h, corner[1] + (j + 0.5) * h};
                if (b.contains(p)) q.points.push_back(p);
            }
    }
    double vol = 1.0;
    for (int i = 0; i < D; ++i) vol *= h;
    q.weight = vol;
    return q;
}

// ---------------------------------------------------------------------------
// Mass normalization for transport solves
// ---------------------------------------------------------------------------

struct MassRenormalization {
    double mass0 = 0.0;
    double mass1 = 0.0;
    double rescale = 1.0;  // factor applied to rho1
    double relative_defect = 0.0;
};

// Rescale rho1 so both marginals carry exactly equal mass; errors out when
// the defect exceeds the tolerance. The applied factor is returned so
// callers can log it.
template <int D>
inline MassRenormalization renormalize_masses(const GridDensity<D>& rho0,
                                              GridDensity<D>& rho1,
                                              double mass_tol) {
    MassRenormalization r;
    r.mass0 = rho0.total_mass();
    r.mass1 = rho1.total_mass();
    if (!(r.mass0 > 0.0) || !(r.mass1 > 0.0))
        throw Error(ErrorCode::MassMismatch, "marginal with nonpositive mass");
    r.relative_defect = std::abs(r.mass0 - r.mass1) / std::max(r.mass0, r.mass1);
    if (r.relative_defect > mass_tol)
        throw Error(ErrorCode::MassMismatch,
                    "marginal masses differ beyond tolerance", r.relative_defect);
    r.rescale = r.mass0 / r.mass1;
    for (double& c : rho1.cells) c *= r.rescale;
    return r;
}

}  // namespace otlab
