#pragma once

// Deterministic test instances.
//
// Density families (all 1 + perturbation, clipped at 0.1):
//   uniform, sinusoidal(delta, frequency), bump(delta, width),
//   jump(delta, line, width)  -- a mean-corrected strip, so the jump is
//   localized and the far field stays near 1.
//
// Transport fixtures: analytic optimal triples (rho0, rho1, T) built as
// T = grad(|x|^2/2 + eta) with a small perturbation potential eta and
// rho1 = T#rho0 evaluated by Newton inversion of T. Convexity of the
// potential makes T the exact optimal map for its own marginals at any grid
// resolution, with no solver error in the fixture itself. eta mixes a
// curl-free sinusoidal part (drives the densities away from 1) and a
// harmonic part (drives excess without density distortion), and is cut off
// smoothly so T = id near the domain boundary and masses match exactly.

#include <cmath>
#include <functional>
#include <string>

#include "otlab/common.hpp"
#include "otlab/grid.hpp"
#include "otlab/io.hpp"
#include "otlab/transport.hpp"

namespace otlab {

inline constexpr double kDensityFloor = 0.1;

template <int D>
inline GridGeom<D> centered_grid(int n, double half_width) {
    GridGeom<D> g;
    for (int a = 0; a < D; ++a) {
        g.n[a] = n;
        g.origin[a] = -half_width;
    }
    g.h = 2.0 * half_width / n;
    return g;
}

// ---------------------------------------------------------------------------
// Density families
// ---------------------------------------------------------------------------

template <int D>
inline GridDensity<D> synth_uniform(const GridGeom<D>& g) {
    return GridDensity<D>(g, 1.0);
}

template <int D>
inline GridDensity<D> synth_sinusoidal(const GridGeom<D>& g, double delta, double frequency) {
    const double L = 0.5 * (g.max_corner()[0] - g.min_corner()[0]);
    const double a = M_PI * frequency / L;
    return sample_density<D>(g, [=](const Vec<D>& p) {
        double s = 1.0;
        for (int ax = 0; ax < D; ++ax) s *= std::sin(a * p[ax]);
        return std::max(kDensityFloor, 1.0 + delta * s);
    });
}

// Gaussian bump, mean-corrected on the grid so total mass stays |domain|.
template <int D>
inline GridDensity<D> synth_bump(const GridGeom<D>& g, double delta, double width,
                                 Vec<D> at = vec_zero<D>()) {
    std::vector<double> raw(static_cast<std::size_t>(g.num_cells()));
    for (int i = 0; i < g.num_cells(); ++i)
        raw[i] = std::exp(-norm2<D>(g.center(i) - at) / (width * width));
    const double mean = pairwise_sum(raw) / g.num_cells();
    std::vector<double> cells(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i)
        cells[i] = std::max(kDensityFloor, 1.0 + delta * (raw[i] - mean));
    return GridDensity<D>(g, std::move(cells));
}

// Density jump along the line x_0 = line (a strip of the given width),
// mean-corrected so the far field deviates only by O(delta * strip fraction).
template <int D>
inline GridDensity<D> synth_jump(const GridGeom<D>& g, double delta, double line,
                                 double width = 0.3) {
    std::vector<double> raw(static_cast<std::size_t>(g.num_cells()));
    for (int i = 0; i < g.num_cells(); ++i)
        raw[i] = std::abs(g.center(i)[0] - line) < 0.5 * width ? 1.0 : 0.0;
    const double mean = pairwise_sum(raw) / g.num_cells();
    std::vector<double> cells(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i)
        cells[i] = std::max(kDensityFloor, 1.0 + delta * (raw[i] - mean));
    return GridDensity<D>(g, std::move(cells));
}

template <int D>
inline GridDensity<D> synth_density(const std::string& family, const GridGeom<D>& g,
                                    double delta, double param) {
    if (family == "uniform") return synth_uniform<D>(g);
    if (family == "sinusoidal") return synth_sinusoidal<D>(g, delta, param);
    if (family == "bump") return synth_bump<D>(g, delta, param);
    if (family == "jump") return synth_jump<D>(g, delta, param);
    throw Error(ErrorCode::ConfigError, "unknown density family: " + family);
}

// Canonical content hash of a density (geometry + 17-digit cell values).
template <int D>
inline std::uint64_t density_hash(const GridDensity<D>& rho) {
    std::string s;
    s += std::to_string(D);
    for (int a = 0; a < D; ++a) s += "," + std::to_string(rho.geom.n[a]);
    for (int a = 0; a < D; ++a) s += "," + fmt17(rho.geom.origin[a]);
    s += "," + fmt17(rho.geom.h);
    for (double c : rho.cells) {
        s += ";";
        s += fmt17(c);
    }
    return fnv1a(s);
}

// ---------------------------------------------------------------------------
// Analytic transport fixtures
// ---------------------------------------------------------------------------

template <int D>
struct AnalyticPerturbation {
    std::function<double(const Vec<D>&)> value;
    std::function<Vec<D>(const Vec<D>&)> gradient;
    std::function<Mat<D>(const Vec<D>&)> hessian;
};

struct SinusoidalFixtureParams {
    double delta = 0.05;      // density amplitude of the curl-free part
    double frequency = 2.0;   // periods of the sin pattern across the domain
    double harm_amp = 0.0;    // displacement scale of the harmonic part
    double harm_freq = 1.0;   // wavenumber scale of the harmonic part
    double rho0_delta = 0.0;  // optional sinusoidal perturbation of rho0
    double cutoff_inner = 1.1;   // displacement untouched for |x| <= inner
    double cutoff_outer = 1.22;  // displacement zero for |x| >= outer
};

namespace detail {

// Quintic smoothstep: C^2, s(0)=1, s(1)=0.
inline void smoothstep5(double t, double& s, double& ds, double& dds) {
    if (t <= 0.0) { s = 1.0; ds = 0.0; dds = 0.0; return; }
    if (t >= 1.0) { s = 0.0; ds = 0.0; dds = 0.0; return; }
    const double t2 = t * t, t3 = t2 * t;
    s = 1.0 - (10.0 * t3 - 15.0 * t2 * t2 + 6.0 * t2 * t3);
    ds = -(30.0 * t2 - 60.0 * t3 + 30.0 * t2 * t2);
    dds = -(60.0 * t - 180.0 * t2 + 120.0 * t3);
}

}  // namespace detail

// eta with radial cutoff: chi(|x|) * eta_raw(x); gradient and Hessian carry
// the cutoff derivatives so the pushforward stays exact everywhere.
template <int D>
inline AnalyticPerturbation<D> apply_radial_cutoff(const AnalyticPerturbation<D>& raw,
                                                   double inner, double outer) {
    auto chi = [inner, outer](const Vec<D>& p, double& s, Vec<D>& grad, Mat<D>& hess) {
        const double r = norm<D>(p);
        const double w = outer - inner;
        double v, dv, ddv;
        detail::smoothstep5((r - inner) / w, v, dv, ddv);
        dv /= w;
        ddv /= w * w;
        s = v;
        grad = vec_zero<D>();
        hess = Mat<D>{};
        if (r > 1e-12) {
            for (int a = 0; a < D; ++a) grad[a] = dv * p[a] / r;
            for (int a = 0; a < D; ++a)
                for (int b = 0; b < D; ++b) {
                    const double xhat = p[a] * p[b] / (r * r);
                    hess(a, b) = ddv * xhat + dv * (((a == b) ? 1.0 : 0.0) - xhat) / r;
                }
        }
    };
    AnalyticPerturbation<D> out;
    out.value = [raw, chi](const Vec<D>& p) {
        double s; Vec<D> gs; Mat<D> hs;
        chi(p, s, gs, hs);
        return s * raw.value(p);
    };
    out.gradient = [raw, chi](const Vec<D>& p) {
        double s; Vec<D> gs; Mat<D> hs;
        chi(p, s, gs, hs);
        return s * raw.gradient(p) + raw.value(p) * gs;
    };
    out.hessian = [raw, chi](const Vec<D>& p) {
        double s; Vec<D> gs; Mat<D> hs;
        chi(p, s, gs, hs);
        const double v = raw.value(p);
        const Vec<D> gv = raw.gradient(p);
        Mat<D> out_h = s * raw.hessian(p) + v * hs;
        for (int a = 0; a < D; ++a)
            for (int b = 0; b < D; ++b)
                out_h(a, b) += gv[a] * gs[b] + gs[a] * gv[b];
        return out_h;
    };
    return out;
}

// The mixed sinusoidal perturbation potential (d = 2):
//   eta = As sin(a x1) sin(a x2)
//       + Ah [ sin(b x1) sinh(b x2) + sinh(b x1) sin(b x2) ]
// The first part has Laplacian -2 As a^2 sin sin and perturbs the target
// density by ~delta; the second is harmonic, so it contributes excess while
// leaving the densities near 1.
inline AnalyticPerturbation<2> sinusoidal_eta(const SinusoidalFixtureParams& prm,
                                              double half_width) {
    const double a = M_PI * prm.frequency / half_width;
    const double As = prm.delta / (2.0 * a * a);
    const double b = M_PI * prm.harm_freq / half_width;
    // Normalize so |grad eta_h| ~ harm_amp at |x| ~ 1.
    const double Ah = prm.harm_amp / (b * std::cosh(b));
    AnalyticPerturbation<2> raw;
    raw.value = [=](const Vec<2>& p) {
        const double s1 = std::sin(a * p[0]), s2 = std::sin(a * p[1]);
        const double hs = std::sin(b * p[0]) * std::sinh(b * p[1]) +
                          std::sinh(b * p[0]) * std::sin(b * p[1]);
        return As * s1 * s2 + Ah * hs;
    };
    raw.gradient = [=](const Vec<2>& p) {
        Vec<2> g;
        g[0] = As * a * std::cos(a * p[0]) * std::sin(a * p[1]) +
               Ah * b * (std::cos(b * p[0]) * std::sinh(b * p[1]) +
                         std::cosh(b * p[0]) * std::sin(b * p[1]));
        g[1] = As * a * std::sin(a * p[0]) * std::cos(a * p[1]) +
               Ah * b * (std::sin(b * p[0]) * std::cosh(b * p[1]) +
                         std::sinh(b * p[0]) * std::cos(b * p[1]));
        return g;
    };
    raw.hessian = [=](const Vec<2>& p) {
        Mat<2> h;
        const double s1 = std::sin(a * p[0]), c1 = std::cos(a * p[0]);
        const double s2 = std::sin(a * p[1]), c2 = std::cos(a * p[1]);
        const double sb1 = std::sin(b * p[0]), cb1 = std::cos(b * p[0]);
        const double sh1 = std::sinh(b * p[0]), ch1 = std::cosh(b * p[0]);
        const double sb2 = std::sin(b * p[1]), cb2 = std::cos(b * p[1]);
        const double sh2 = std::sinh(b * p[1]), ch2 = std::cosh(b * p[1]);
        h(0, 0) = -As * a * a * s1 * s2 + Ah * b * b * (-sb1 * sh2 + sh1 * sb2);
        h(1, 1) = -As * a * a * s1 * s2 + Ah * b * b * (sb1 * sh2 - sh1 * sb2);
        h(0, 1) = h(1, 0) = As * a * a * c1 * c2 + Ah * b * b * (cb1 * ch2 + ch1 * cb2);
        return h;
    };
    return raw;
}

inline AnalyticPerturbation<1> sinusoidal_eta_1d(const SinusoidalFixtureParams& prm,
                                                 double half_width) {
    const double a = M_PI * prm.frequency / half_width;
    const double As = prm.delta / (a * a);
    AnalyticPerturbation<1> raw;
    raw.value = [=](const Vec<1>& p) { return As * std::sin(a * p[0]); };
    raw.gradient = [=](const Vec<1>& p) { return Vec<1>{As * a * std::cos(a * p[0])}; };
    raw.hessian = [=](const Vec<1>& p) {
        Mat<1> h;
        h(0, 0) = -As * a * a * std::sin(a * p[0]);
        return h;
    };
    return raw;
}

// An exactly-optimal transport triple.
template <int D>
struct TransportFixture {
    GridDensity<D> rho0;
    GridDensity<D> rho1;
    TransportMap<D> map;               // T sampled at rho0 cell centers
    AnalyticPerturbation<D> eta;       // with cutoff applied
    std::function<Vec<D>(const Vec<D>&)> T_exact;
    std::function<double(const Vec<D>&)> rho0_exact;
    double min_dt_eigenvalue = 1.0;    // convexity margin of the potential
};

template <int D>
inline Vec<D> fixture_newton_invert(const TransportFixture<D>& fx, const Vec<D>& y) {
    Vec<D> x = y;
    for (int it = 0; it < 50; ++it) {
        const Vec<D> r = fx.T_exact(x) - y;
        if (norm2<D>(r) < 1e-28) break;
        Mat<D> dt = fx.eta.hessian(x);
        for (int a = 0; a < D; ++a) dt(a, a) += 1.0;
        x = x - inverse(dt) * r;
    }
    return x;
}

template <int D>
inline TransportFixture<D> make_sinusoidal_fixture(const GridGeom<D>& g,
                                                   const SinusoidalFixtureParams& prm) {
    const double L = 0.5 * (g.max_corner()[0] - g.min_corner()[0]);
    TransportFixture<D> fx;
    AnalyticPerturbation<D> raw;
    if constexpr (D == 2) raw = sinusoidal_eta(prm, L);
    else raw = sinusoidal_eta_1d(prm, L);
    fx.eta = apply_radial_cutoff<D>(raw, prm.cutoff_inner, prm.cutoff_outer);
    fx.T_exact = [eta = fx.eta](const Vec<D>& p) { return p + eta.gradient(p); };

    const double a0 = M_PI * prm.frequency / L;
    fx.rho0_exact = [=](const Vec<D>& p) {
        double s = 1.0;
        for (int ax = 0; ax < D; ++ax) s *= std::sin(a0 * p[ax] + 1.0);
        return std::max(kDensityFloor, 1.0 + prm.rho0_delta * s);
    };

    fx.rho0 = sample_density<D>(g, fx.rho0_exact);

    // Convexity margin of |x|^2/2 + eta over the grid.
    double min_eig = std::numeric_limits<double>::infinity();
    for (int i = 0; i < g.num_cells(); ++i) {
        Mat<D> dt = fx.eta.hessian(g.center(i));
        for (int ax = 0; ax < D; ++ax) dt(ax, ax) += 1.0;
        auto e = sym_eig<D>(0.5 * (dt + transpose(dt)));
        min_eig = std::min(min_eig, e.eigenvalues[0]);
    }
    fx.min_dt_eigenvalue = min_eig;
    if (!(min_eig > 0.0))
        throw Error(ErrorCode::ConfigError,
                    "fixture potential is not convex; reduce amplitudes", min_eig);

    // rho1 = T#rho0: rho1(y) = rho0(x) / det DT(x) at x = T^{-1}(y).
    std::vector<double> cells1(static_cast<std::size_t>(g.num_cells()));
    for (int j = 0; j < g.num_cells(); ++j) {
        const Vec<D> y = g.center(j);
        const Vec<D> x = fixture_newton_invert(fx, y);
        Mat<D> dt = fx.eta.hessian(x);
        for (int ax = 0; ax < D; ++ax) dt(ax, ax) += 1.0;
        cells1[j] = fx.rho0_exact(x) / det(dt);
    }
    fx.rho1 = GridDensity<D>(g, std::move(cells1));

    // Sample T (and psi) on the rho0 grid.
    const int nc = g.num_cells();
    fx.map.source = fx.rho0;
    fx.map.target_point.resize(nc);
    fx.map.defined.assign(nc, 1);
    fx.map.spread.assign(nc, 0.0);
    fx.map.psi.resize(nc);
    fx.map.has_psi = true;
    for (int i = 0; i < nc; ++i) {
        const Vec<D> x = g.center(i);
        fx.map.target_point[i] = fx.T_exact(x);
        fx.map.psi[i] = 0.5 * norm2<D>(x) + fx.eta.value(x);
    }
    return fx;
}

}  // namespace otlab
