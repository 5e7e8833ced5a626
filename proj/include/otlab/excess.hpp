#pragma once

// The excess energy E(rho0, rho1, T, R) = R^{-2} avg_{B_R} |T-x|^2 rho0 and
// the localized smallness quantities paired with it. E and D are reported
// separately: the downstream improvement and iteration bounds weight them
// differently.

#include <functional>
#include <string>

#include "otlab/common.hpp"
#include "otlab/grid.hpp"
#include "otlab/io.hpp"
#include "otlab/transport.hpp"

namespace otlab {

template <int D>
struct ExcessReport {
    Vec<D> center{};
    double R = 0.0;
    double E = 0.0;
    double D_term = 0.0;

    std::string to_json() const {
        std::string s = "{\"center\":[";
        for (int a = 0; a < D; ++a) s += (a ? "," : "") + fmt17(center[a]);
        s += "],\"R\":" + fmt17(R);
        s += ",\"E\":" + fmt17(E);
        s += ",\"D\":" + fmt17(D_term);
        s += "}";
        return s;
    }
};

// E = R^{-2} * (1/#cells) * sum_{cells in B} |T(x)-x|^2 rho0(x), cell-center
// membership and discrete ball volume as everywhere else.
template <int D>
inline double excess_energy(const TransportMap<D>& T, const GridDensity<D>& rho0,
                            const Ball<D>& b) {
    auto idx = cells_in_ball(rho0.geom, b);
    if (idx.empty()) throw Error(ErrorCode::EmptyRestriction, "ball contains no cell centers");
    std::vector<double> terms;
    terms.reserve(idx.size());
    for (int i : idx) {
        const double w = rho0.cells[i];
        if (w <= 0.0) {
            terms.push_back(0.0);
            continue;
        }
        if (!T.defined[i])
            throw Error(ErrorCode::DomainExceeded, "map undefined on a support cell in ball");
        terms.push_back(norm2<D>(T.displacement(i)) * w);
    }
    return pairwise_sum(terms) / static_cast<double>(idx.size()) / (b.radius * b.radius);
}

// Same quantity evaluated by quadrature of arbitrary displacement/density
// callables; used where balls shrink below a few grid cells.
template <int D>
inline double excess_energy_quadrature(const std::function<Vec<D>(const Vec<D>&)>& displacement,
                                       const std::function<double(const Vec<D>&)>& rho0,
                                       const Ball<D>& b, double h_data, int min_across = 24) {
    auto q = ball_quadrature<D>(b, h_data, min_across);
    if (q.points.empty())
        throw Error(ErrorCode::EmptyRestriction, "quadrature ball is empty");
    std::vector<double> terms;
    terms.reserve(q.points.size());
    for (const auto& p : q.points) terms.push_back(norm2<D>(displacement(p)) * rho0(p));
    return pairwise_sum(terms) / static_cast<double>(q.points.size()) / (b.radius * b.radius);
}

template <int D>
inline ExcessReport<D> hypothesis_quantity(const TransportMap<D>& T, const GridDensity<D>& rho0,
                                           const GridDensity<D>& rho1, const Ball<D>& b) {
    ExcessReport<D> r;
    r.center = b.center;
    r.R = b.radius;
    r.E = excess_energy(T, rho0, b);
    r.D_term = data_term(rho0, rho1, b);
    return r;
}

// ---------------------------------------------------------------------------
// W^2 distance of a restricted density to the uniform density of equal mass
// on the same ball, plus the squared mean-deviation term. Together these are
// bounded by a constant times ||1-rho||^2_inf; the constant is measured.
// ---------------------------------------------------------------------------

template <int D>
struct WassersteinToUniform {
    double w2 = 0.0;
    double mean_dev_sq = 0.0;
    bool used_entropic = false;

    double total() const { return w2 + mean_dev_sq; }
};

template <int D>
inline WassersteinToUniform<D> wasserstein_to_uniform(const GridDensity<D>& rho,
                                                      const Ball<D>& b,
                                                      int exact_cap = 4096,
                                                      double entropic_reg_rel = 1e-3) {
    auto restricted = restrict_to_ball(rho, b);
    auto idx = cells_in_ball(rho.geom, b);
    const double mass = restricted.total_mass();
    if (!(mass > 0.0))
        throw Error(ErrorCode::EmptyRestriction, "restricted density carries no mass");

    // Uniform competitor on the same cell set, equal mass by construction.
    const double discrete_volume = static_cast<double>(idx.size()) * rho.geom.cell_volume();
    const double rho_bar = mass / discrete_volume;
    GridDensity<D> uniform(rho.geom, 0.0);
    for (int i : idx) uniform.cells[i] = rho_bar;

    WassersteinToUniform<D> out;
    const double dev = rho_bar - 1.0;
    out.mean_dev_sq = dev * dev;
    if (static_cast<int>(idx.size()) <= exact_cap) {
        ExactSolveOptions opts;
        opts.size_cap = exact_cap;
        opts.mass_tol = 1e-6;
        out.w2 = solve_exact(restricted, uniform, opts).cost;
    } else {
        const double reg = entropic_reg_rel * (2.0 * b.radius) * (2.0 * b.radius);
        out.w2 = solve_entropic(restricted, uniform, reg).cost;
        out.used_entropic = true;
    }
    return out;
}

}  // namespace otlab
