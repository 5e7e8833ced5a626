#pragma once

// The constructive machinery behind the harmonic approximation step:
//   - time_integrated_flux: net signed mass carried across a sphere by the
//     straight-line trajectories x -> T(x), binned into angular sectors;
//   - compatibility_constant: c = avg_{B}(rho0 - rho1), forced by the
//     divergence theorem;
//   - solve_neumann: finite-volume Poisson solve on a polar grid of the disk
//     (d=2) or the closed form on a segment (d=1), with mean-zero
//     normalization, the corrected part phi = Phi - (c/2d)|x|^2, and its
//     degree-2 harmonic jet at the ball center;
//   - check_gradient_bound: empirical sup |grad Phi|^2 / ||g||_inf^2.
//
// The polar grid represents the boundary exactly, which keeps embedded-
// boundary flux errors out of the jet.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <functional>
#include <string>
#include <vector>

#include "otlab/common.hpp"
#include "otlab/grid.hpp"
#include "otlab/io.hpp"
#include "otlab/transport.hpp"

namespace otlab {

// ---------------------------------------------------------------------------
// Boundary flux
// ---------------------------------------------------------------------------

// Signed mass-flux per unit surface area in angular sectors of a sphere.
// d=2: bin k covers angles [2 pi k / n, 2 pi (k+1) / n); d=1: two endpoint
// values, index 0 = left, 1 = right, each with outward-normal sign.
template <int D>
struct BoundaryFlux {
    Ball<D> ball;
    int n_bins = 0;
    std::vector<double> values;
    int degenerate_count = 0;        // near-tangential crossings, midpoint rule
    double applied_correction = 0.0; // uniform compatibility projection

    double bin_area() const {
        if constexpr (D == 1) return 1.0;
        else return 2.0 * M_PI * ball.radius / n_bins;
    }

    double net_flux() const {
        std::vector<double> terms(values.begin(), values.end());
        return pairwise_sum(terms) * bin_area();
    }
};

namespace detail {

template <int D>
inline int flux_bin_of_point(const Ball<D>& ball, int n_bins, const Vec<D>& p) {
    if constexpr (D == 1) {
        return p[0] >= ball.center[0] ? 1 : 0;
    } else {
        double ang = std::atan2(p[1] - ball.center[1], p[0] - ball.center[0]);
        if (ang < 0.0) ang += 2.0 * M_PI;
        int k = static_cast<int>(ang / (2.0 * M_PI) * n_bins);
        return std::min(k, n_bins - 1);
    }
}

}  // namespace detail

// For every source particle x with mass m, the segment [x, T(x)] is
// intersected with the sphere; each crossing deposits +-m per unit bin area
// (+ outward). Endpoint indicators pin the parity, so the net flux identity
//   net = rho0-mass inside - (T#rho0)-mass inside
// holds exactly however the roots fall numerically.
//
// substeps > 1 splits every cell into substeps^d sub-particles with
// interpolated displacements, which pushes the cell-quantization noise of
// the binned flux (and of the conservation identity) below the h scale.
template <int D>
inline BoundaryFlux<D> time_integrated_flux(const TransportMap<D>& T,
                                            const GridDensity<D>& rho0, const Ball<D>& b,
                                            int n_bins, int substeps = 1) {
    if constexpr (D == 1) n_bins = 2;
    if (n_bins < (D == 1 ? 2 : 8))
        throw Error(ErrorCode::ConfigError, "flux binning needs n_bins >= 8");
    if (substeps < 1) substeps = 1;
    BoundaryFlux<D> flux;
    flux.ball = b;
    flux.n_bins = n_bins;
    flux.values.assign(static_cast<std::size_t>(n_bins), 0.0);
    const double inv_area = 1.0 / flux.bin_area();
    const double R2 = b.radius * b.radius;

    std::array<GridScalar<D>, D> disp;
    if (substeps > 1) disp = displacement_fields(T);

    auto deposit = [&](const Vec<D>& x_abs, const Vec<D>& y_abs, double m) {
        const Vec<D> x = x_abs - b.center;
        const Vec<D> y = y_abs - b.center;
        const Vec<D> d = y - x;
        const bool in0 = norm2<D>(x) <= R2;
        const bool in1 = norm2<D>(y) <= R2;
        const int parity = (in0 ? 1 : 0) - (in1 ? 1 : 0);

        const double a = norm2<D>(d);
        if (a < 1e-300) return;  // zero-length trajectory
        const double bq = 2.0 * dot<D>(x, d);
        const double cq = norm2<D>(x) - R2;
        const double disc = bq * bq - 4.0 * a * cq;

        int crossings = 0;
        double ts[2];
        int sign[2];
        if (disc > 0.0) {
            const double sq = std::sqrt(disc);
            for (double t : {(-bq - sq) / (2.0 * a), (-bq + sq) / (2.0 * a)}) {
                if (t <= 0.0 || t >= 1.0) continue;
                const Vec<D> p = x + t * d;
                ts[crossings] = t;
                sign[crossings] = dot<D>(p, d) > 0.0 ? 1 : -1;
                ++crossings;
            }
        }
        int signed_sum = 0;
        for (int k = 0; k < crossings; ++k) signed_sum += sign[k];
        if (signed_sum != parity) {
            // Tangential or endpoint-grazing segment: resolve by the
            // midpoint rule using the exact endpoint parity.
            ++flux.degenerate_count;
            crossings = 0;
            if (parity != 0) {
                ts[0] = std::clamp(-bq / (2.0 * a), 0.0, 1.0);
                sign[0] = parity;
                crossings = 1;
            }
        }
        for (int k = 0; k < crossings; ++k) {
            const Vec<D> p = b.center + (x + ts[k] * d);
            flux.values[static_cast<std::size_t>(
                detail::flux_bin_of_point<D>(b, n_bins, p))] += sign[k] * m * inv_area;
        }
    };

    const auto& g = rho0.geom;
    for (int i = 0; i < g.num_cells(); ++i) {
        const double m = rho0.cell_mass(i);
        if (m <= 0.0) continue;
        if (!T.defined[i]) continue;  // recorded at map extraction
        if (substeps == 1) {
            deposit(g.center(i), T.target_point[i], m);
            continue;
        }
        const double sub_m = m / std::pow(substeps, D);
        const double sub_h = g.h / substeps;
        const Vec<D> corner = g.center(i);
        const int s1 = substeps, s2 = (D == 2) ? substeps : 1;
        for (int q2 = 0; q2 < s2; ++q2)
            for (int q1 = 0; q1 < s1; ++q1) {
                Vec<D> x = corner;
                x[0] += (q1 + 0.5) * sub_h - 0.5 * g.h;
                if constexpr (D == 2) x[1] += (q2 + 0.5) * sub_h - 0.5 * g.h;
                Vec<D> u;
                for (int a = 0; a < D; ++a) u[a] = interpolate_clamped(disp[a], x);
                deposit(x, x + u, sub_m);
            }
    }
    return flux;
}

// c = avg_{B}(rho0 - rho1); the grids may differ (e.g. translated targets).
template <int D>
inline double compatibility_constant(const GridDensity<D>& rho0, const GridDensity<D>& rho1,
                                     const Ball<D>& b) {
    return mean_over_ball(rho0.as_scalar(), b) - mean_over_ball(rho1.as_scalar(), b);
}

template <int D>
inline std::string flux_to_csv(const BoundaryFlux<D>& flux) {
    std::string s = "bin_angle_start,bin_angle_end,flux_density\n";
    for (int k = 0; k < flux.n_bins; ++k) {
        double a0, a1;
        if constexpr (D == 1) {
            a0 = k == 0 ? M_PI : 0.0;  // left endpoint labeled by angle pi
            a1 = a0;
        } else {
            a0 = 2.0 * M_PI * k / flux.n_bins;
            a1 = 2.0 * M_PI * (k + 1) / flux.n_bins;
        }
        s += fmt17(a0) + "," + fmt17(a1) + "," + fmt17(flux.values[k]) + "\n";
    }
    return s;
}

// ---------------------------------------------------------------------------
// Neumann solve
// ---------------------------------------------------------------------------

struct NeumannOptions {
    int nr = 64;
    int ntheta = 64;
    double compat_tol = -1.0;   // absolute; < 0 means 1e-3 * |B| (unit density)
    double r_fit_factor = 0.5;  // jet fit on B_{r_fit_factor * R}
    double fit_cond_cap = 1e8;
    // Extrapolate the jet from a half-resolution companion solve; the grid
    // truncation is cleanly O(h^2), so this buys about two extra digits.
    bool jet_richardson = true;
};

// Solved potential on the polar grid, its harmonic correction and jet.
template <int D>
struct HarmonicPotential {
    Ball<D> ball;
    int nr = 0, ntheta = 0;           // d=1: ntheta == 1, nodes along the axis
    std::vector<double> Phi;          // node values, mean zero
    std::vector<double> phi;          // Phi - (c/2d)|x - center|^2
    double c = 0.0;                   // compatibility constant used
    Vec<D> jet_b{};                   // grad phi(center)
    Mat<D> jet_A{};                   // hess phi(center), trace-free
    std::vector<Vec<D>> grad_Phi;     // nodal gradients (finite differences)
    double flux_correction = 0.0;     // uniform projection applied to the data
    double fit_condition = 0.0;
    double solve_residual = 0.0;      // linear-system residual, max norm

    double node_r(int i) const { return (i + 0.5) * ball.radius / nr; }
    double node_theta(int j) const { return (j + 0.5) * 2.0 * M_PI / ntheta; }

    Vec<D> node_point(int i, int j) const {
        if constexpr (D == 1) {
            return Vec<1>{ball.center[0] - ball.radius + (i + 0.5) * 2.0 * ball.radius / nr};
        } else {
            const double r = node_r(i), th = node_theta(j);
            return Vec<2>{ball.center[0] + r * std::cos(th),
                          ball.center[1] + r * std::sin(th)};
        }
    }

    // grad phi at an arbitrary interior point: bilinear interpolation of the
    // nodal grad Phi in (r, theta) minus the radial correction; inside the
    // first ring the fitted jet is the accurate evaluation.
    Vec<D> grad_phi_at(const Vec<D>& p) const {
        const Vec<D> rel = p - ball.center;
        if constexpr (D == 1) {
            return Vec<1>{jet_b[0]};  // phi is affine in 1-D
        } else {
            const double r = norm<2>(rel);
            const double dr = ball.radius / nr;
            if (r < 0.5 * dr) return jet_b + jet_A * rel;
            Vec<2> gPhi = interpolate_grad_polar(rel, r);
            return gPhi - (c / 2.0) * rel;  // d = 2: (c/d) rel
        }
    }

    Vec<D> grad_Phi_at(const Vec<D>& p) const {
        const Vec<D> rel = p - ball.center;
        if constexpr (D == 1) {
            return Vec<1>{jet_b[0] + c * rel[0]};
        } else {
            const double r = norm<2>(rel);
            const double dr = ball.radius / nr;
            if (r < 0.5 * dr) return jet_b + jet_A * rel + (c / 2.0) * rel;
            return interpolate_grad_polar(rel, r);
        }
    }

  private:
    Vec<2> interpolate_grad_polar(const Vec<2>& rel, double r) const {
        const double dr = ball.radius / nr;
        const double dth = 2.0 * M_PI / ntheta;
        double th = std::atan2(rel[1], rel[0]);
        if (th < 0.0) th += 2.0 * M_PI;
        double ri = std::clamp(r / dr - 0.5, 0.0, static_cast<double>(nr - 1));
        double tj = th / dth - 0.5;
        if (tj < 0.0) tj += ntheta;
        const int i0 = std::min(static_cast<int>(ri), nr - 2);
        const int j0 = static_cast<int>(tj) % ntheta;
        const double wi = std::clamp(ri - i0, 0.0, 1.0);
        const double wj = tj - std::floor(tj);
        const int i1 = i0 + 1;
        const int j1 = (j0 + 1) % ntheta;
        Vec<2> out{};
        for (int a = 0; a < 2; ++a) {
            const double v00 = grad_Phi[static_cast<std::size_t>(j0) * nr + i0][a];
            const double v10 = grad_Phi[static_cast<std::size_t>(j0) * nr + i1][a];
            const double v01 = grad_Phi[static_cast<std::size_t>(j1) * nr + i0][a];
            const double v11 = grad_Phi[static_cast<std::size_t>(j1) * nr + i1][a];
            out[a] = (1.0 - wj) * ((1.0 - wi) * v00 + wi * v10) +
                     wj * ((1.0 - wi) * v01 + wi * v11);
        }
        return out;
    }
};

namespace detail {

// Least-squares fit of a degree-2 harmonic polynomial on nodes within the
// fit ball. d=2 basis: {1, x, y, x^2 - y^2, xy} (relative to the center).
inline void fit_harmonic_jet_2d(const std::vector<Vec<2>>& pts,
                                const std::vector<double>& vals, double cond_cap,
                                Vec<2>& b_out, Mat<2>& A_out, double& cond_out) {
    const int n = static_cast<int>(pts.size());
    if (n < 5) throw Error(ErrorCode::FitDegenerate, "too few nodes for jet fit");
    Eigen::MatrixXd B(n, 5);
    Eigen::VectorXd f(n);
    for (int k = 0; k < n; ++k) {
        const double x = pts[k][0], y = pts[k][1];
        B(k, 0) = 1.0;
        B(k, 1) = x;
        B(k, 2) = y;
        B(k, 3) = x * x - y * y;
        B(k, 4) = x * y;
        f(k) = vals[k];
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(B, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const double smin = svd.singularValues().minCoeff();
    const double smax = svd.singularValues().maxCoeff();
    cond_out = smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
    if (!(cond_out < cond_cap))
        throw Error(ErrorCode::FitDegenerate, "ill-conditioned jet fit", cond_out);
    Eigen::VectorXd coef = svd.solve(f);
    b_out = Vec<2>{coef(1), coef(2)};
    A_out(0, 0) = 2.0 * coef(3);
    A_out(1, 1) = -2.0 * coef(3);
    A_out(0, 1) = A_out(1, 0) = coef(4);
}

}  // namespace detail

// Public fit entry point (samples given as points relative to the center).
template <int D>
inline void fit_harmonic_jet(const std::vector<Vec<D>>& pts, const std::vector<double>& vals,
                             Vec<D>& b_out, Mat<D>& A_out, double cond_cap = 1e8) {
    if constexpr (D == 2) {
        double cond;
        detail::fit_harmonic_jet_2d(pts, vals, cond_cap, b_out, A_out, cond);
    } else {
        // Harmonic in 1-D means affine: LS line fit.
        const int n = static_cast<int>(pts.size());
        if (n < 2) throw Error(ErrorCode::FitDegenerate, "too few nodes for jet fit");
        double sx = 0, sxx = 0, sv = 0, sxv = 0;
        for (int k = 0; k < n; ++k) {
            sx += pts[k][0];
            sxx += pts[k][0] * pts[k][0];
            sv += vals[k];
            sxv += pts[k][0] * vals[k];
        }
        const double denom = n * sxx - sx * sx;
        if (std::abs(denom) < 1e-30) throw Error(ErrorCode::FitDegenerate, "degenerate 1-D fit");
        b_out[0] = (n * sxv - sx * sv) / denom;
        A_out(0, 0) = 0.0;
    }
}

// d = 2 solve on the polar grid. The FV discretization is conservative and
// symmetric; the singular constant mode is handled by a bordered Lagrange
// system enforcing the area-weighted mean to vanish.
inline HarmonicPotential<2> solve_neumann(const std::function<double(const Vec<2>&)>& g_rhs,
                                          const BoundaryFlux<2>& flux,
                                          const NeumannOptions& opts = {}) {
    const int nr = opts.nr, nth = opts.ntheta;
    if (nr < 4 || nth < 8 || nth % 2 != 0)
        throw Error(ErrorCode::ConfigError, "polar grid needs nr >= 4 and even ntheta >= 8");
    const Ball<2>& ball = flux.ball;
    const double R = ball.radius;
    const double dr = R / nr;
    const double dth = 2.0 * M_PI / nth;

    HarmonicPotential<2> pot;
    pot.ball = ball;
    pot.nr = nr;
    pot.ntheta = nth;

    auto node = [&](int i, int j) { return j * nr + i; };
    const int N = nr * nth;

    // RHS integrals and total for compatibility.
    std::vector<double> rhs_cell(static_cast<std::size_t>(N));
    std::vector<double> area(static_cast<std::size_t>(N));
    for (int j = 0; j < nth; ++j)
        for (int i = 0; i < nr; ++i) {
            const double r = (i + 0.5) * dr;
            area[node(i, j)] = r * dr * dth;
            rhs_cell[node(i, j)] = g_rhs(pot.node_point(i, j)) * area[node(i, j)];
        }
    const double rhs_total = pairwise_sum(rhs_cell);

    // Boundary data per boundary face: the face average of the piecewise
    // constant bin function (so refining the grid preserves the flux total
    // exactly); project out the compatibility defect uniformly.
    std::vector<double> bflux(static_cast<std::size_t>(nth));
    {
        const double bin_w = 2.0 * M_PI / flux.n_bins;
        for (int j = 0; j < nth; ++j) {
            const double a0 = j * dth, a1 = (j + 1) * dth;
            double acc = 0.0;
            int k0 = static_cast<int>(std::floor(a0 / bin_w));
            int k1 = static_cast<int>(std::ceil(a1 / bin_w));
            for (int k = k0; k < k1; ++k) {
                const double lo = std::max(a0, k * bin_w);
                const double hi = std::min(a1, (k + 1) * bin_w);
                if (hi <= lo) continue;
                const int kk = ((k % flux.n_bins) + flux.n_bins) % flux.n_bins;
                acc += flux.values[static_cast<std::size_t>(kk)] * (hi - lo);
            }
            bflux[j] = acc / dth;
        }
    }
    const double flux_total = pairwise_sum(bflux) * R * dth;
    const double defect = flux_total - rhs_total;
    const double compat_tol = opts.compat_tol > 0.0 ? opts.compat_tol : 1e-3 * M_PI * R * R;
    if (std::abs(defect) > 10.0 * compat_tol)
        throw Error(ErrorCode::IncompatibleData, "flux/rhs compatibility defect too large",
                    std::abs(defect));
    const double correction = defect / (2.0 * M_PI * R);
    for (int j = 0; j < nth; ++j) bflux[j] -= correction;
    pot.flux_correction = correction;

    // Assemble the bordered system.
    using Trip = Eigen::Triplet<double>;
    std::vector<Trip> trips;
    trips.reserve(static_cast<std::size_t>(N) * 6 + 2 * N);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(N + 1);
    for (int j = 0; j < nth; ++j) {
        const int jm = (j + nth - 1) % nth;
        const int jp = (j + 1) % nth;
        for (int i = 0; i < nr; ++i) {
            const int row = node(i, j);
            const double r = (i + 0.5) * dr;
            double diag = 0.0;
            if (i + 1 < nr) {
                const double cf = (i + 1) * dr * dth / dr;  // outer face
                trips.emplace_back(row, node(i + 1, j), cf);
                diag -= cf;
            } else {
                rhs(row) -= bflux[j] * R * dth;  // given boundary flux
            }
            if (i > 0) {
                const double cf = i * dr * dth / dr;  // inner face
                trips.emplace_back(row, node(i - 1, j), cf);
                diag -= cf;
            }
            const double ca = dr / (r * dth);  // angular faces
            trips.emplace_back(row, node(i, jm), ca);
            trips.emplace_back(row, node(i, jp), ca);
            diag -= 2.0 * ca;
            trips.emplace_back(row, row, diag);
            rhs(row) += rhs_cell[row];
        }
    }
    for (int k = 0; k < N; ++k) {
        trips.emplace_back(k, N, area[k]);
        trips.emplace_back(N, k, area[k]);
    }
    Eigen::SparseMatrix<double> A(N + 1, N + 1);
    A.setFromTriplets(trips.begin(), trips.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(A);
    if (lu.info() != Eigen::Success)
        throw Error(ErrorCode::SolverFailure, "Neumann system factorization failed");
    Eigen::VectorXd sol = lu.solve(rhs);
    if (lu.info() != Eigen::Success)
        throw Error(ErrorCode::SolverFailure, "Neumann system solve failed");
    pot.solve_residual = (A * sol - rhs).cwiseAbs().maxCoeff();

    pot.Phi.assign(sol.data(), sol.data() + N);
    // Exact mean-zero normalization (the multiplier already enforces it up
    // to roundoff; re-subtract to pin it).
    {
        std::vector<double> weighted(static_cast<std::size_t>(N));
        for (int k = 0; k < N; ++k) weighted[k] = pot.Phi[k] * area[k];
        const double mean = pairwise_sum(weighted) / pairwise_sum(area);
        for (double& v : pot.Phi) v -= mean;
    }

    // c for the harmonic correction: the ball average of g.
    pot.c = rhs_total / (M_PI * R * R);
    pot.phi.resize(static_cast<std::size_t>(N));
    for (int j = 0; j < nth; ++j)
        for (int i = 0; i < nr; ++i) {
            const double r = (i + 0.5) * dr;
            pot.phi[node(i, j)] = pot.Phi[node(i, j)] - pot.c / 4.0 * r * r;  // c/(2d), d=2
        }

    // Nodal gradients of Phi: centered in theta, centered in r with the
    // across-center trick at the first ring and one-sided at the boundary.
    pot.grad_Phi.assign(static_cast<std::size_t>(N), Vec<2>{});
    for (int j = 0; j < nth; ++j) {
        const int jm = (j + nth - 1) % nth;
        const int jp = (j + 1) % nth;
        const int jop = (j + nth / 2) % nth;
        for (int i = 0; i < nr; ++i) {
            const double r = (i + 0.5) * dr;
            const double th = (j + 0.5) * dth;
            double dPdr;
            if (i == 0) {
                // Node across the center: Phi(-r, th) = Phi(r, th + pi).
                dPdr = (pot.Phi[node(1, j)] - pot.Phi[node(0, jop)]) / (2.0 * dr);
            } else if (i + 1 < nr) {
                dPdr = (pot.Phi[node(i + 1, j)] - pot.Phi[node(i - 1, j)]) / (2.0 * dr);
            } else {
                dPdr = (3.0 * pot.Phi[node(i, j)] - 4.0 * pot.Phi[node(i - 1, j)] +
                        pot.Phi[node(i - 2, j)]) / (2.0 * dr);
            }
            const double dPdt =
                (pot.Phi[node(i, jp)] - pot.Phi[node(i, jm)]) / (2.0 * dth) / r;
            pot.grad_Phi[node(i, j)] = Vec<2>{dPdr * std::cos(th) - dPdt * std::sin(th),
                                              dPdr * std::sin(th) + dPdt * std::cos(th)};
        }
    }

    // Jet of phi on the fit ball.
    std::vector<Vec<2>> pts;
    std::vector<double> vals;
    const double r_fit = opts.r_fit_factor * R;
    for (int j = 0; j < nth; ++j)
        for (int i = 0; i < nr; ++i) {
            if ((i + 0.5) * dr > r_fit) continue;
            pts.push_back(pot.node_point(i, j) - ball.center);
            vals.push_back(pot.phi[node(i, j)]);
        }
    detail::fit_harmonic_jet_2d(pts, vals, opts.fit_cond_cap, pot.jet_b, pot.jet_A,
                                pot.fit_condition);

    if (opts.jet_richardson && nr >= 8 && nth >= 16 && nth % 4 == 0) {
        NeumannOptions half = opts;
        half.nr = nr / 2;
        half.ntheta = nth / 2;
        half.jet_richardson = false;
        auto coarse = solve_neumann(g_rhs, flux, half);
        pot.jet_b = (1.0 / 3.0) * (4.0 * pot.jet_b - coarse.jet_b);
        pot.jet_A = (1.0 / 3.0) * (4.0 * pot.jet_A - coarse.jet_A);
    }
    return pot;
}

inline HarmonicPotential<2> solve_neumann(double c_rhs, const BoundaryFlux<2>& flux,
                                          const NeumannOptions& opts = {}) {
    return solve_neumann([c_rhs](const Vec<2>&) { return c_rhs; }, flux, opts);
}

// d = 1 closed form on [center-R, center+R]: Phi = c s^2/2 + a s + C with
// s = x - center, a = (v_R - v_L)/2 after compatibility projection.
inline HarmonicPotential<1> solve_neumann(double c_rhs, const BoundaryFlux<1>& flux,
                                          const NeumannOptions& opts = {}) {
    const Ball<1>& ball = flux.ball;
    const double R = ball.radius;
    HarmonicPotential<1> pot;
    pot.ball = ball;
    pot.nr = std::max(8, opts.nr);
    pot.ntheta = 1;
    double vl = flux.values[0], vr = flux.values[1];
    const double defect = (vr + vl) - 2.0 * R * c_rhs;
    const double compat_tol = opts.compat_tol > 0.0 ? opts.compat_tol : 1e-3 * 2.0 * R;
    if (std::abs(defect) > 10.0 * compat_tol)
        throw Error(ErrorCode::IncompatibleData, "flux/rhs compatibility defect too large",
                    std::abs(defect));
    vl -= defect / 2.0;
    vr -= defect / 2.0;
    pot.flux_correction = defect / 2.0;
    const double a = (vr - vl) / 2.0;

    pot.c = c_rhs;
    pot.jet_b = Vec<1>{a};
    pot.jet_A = Mat<1>{};
    const int n = pot.nr;
    pot.Phi.resize(static_cast<std::size_t>(n));
    pot.phi.resize(static_cast<std::size_t>(n));
    pot.grad_Phi.assign(static_cast<std::size_t>(n), Vec<1>{});
    // Mean over [-R, R] of c s^2/2 is c R^2 / 6.
    const double C0 = -c_rhs * R * R / 6.0;
    for (int i = 0; i < n; ++i) {
        const double s = pot.node_point(i, 0)[0] - ball.center[0];
        pot.Phi[i] = 0.5 * c_rhs * s * s + a * s + C0;
        pot.phi[i] = a * s + C0;
        pot.grad_Phi[i][0] = c_rhs * s + a;
    }
    return pot;
}

// Max-norm of the interior FV Laplacian of phi (harmonicity check). The FV
// stencil reproduces the |x|^2 correction exactly, so this is the linear
// solver residual plus roundoff.
inline double discrete_laplacian_max(const HarmonicPotential<2>& pot) {
    const int nr = pot.nr, nth = pot.ntheta;
    const double R = pot.ball.radius;
    const double dr = R / nr, dth = 2.0 * M_PI / nth;
    auto node = [&](int i, int j) { return j * nr + i; };
    double worst = 0.0;
    for (int j = 0; j < nth; ++j) {
        const int jm = (j + nth - 1) % nth;
        const int jp = (j + 1) % nth;
        for (int i = 0; i + 1 < nr; ++i) {
            const double r = (i + 0.5) * dr;
            double acc = 0.0;
            acc += (i + 1) * dr * dth / dr *
                   (pot.phi[node(i + 1, j)] - pot.phi[node(i, j)]);
            if (i > 0)
                acc += i * dr * dth / dr * (pot.phi[node(i - 1, j)] - pot.phi[node(i, j)]);
            acc += dr / (r * dth) *
                   (pot.phi[node(i, jp)] + pot.phi[node(i, jm)] - 2.0 * pot.phi[node(i, j)]);
            worst = std::max(worst, std::abs(acc / (r * dr * dth)));
        }
    }
    return worst;
}

// Empirical Schauder-type diagnostic: sup |grad Phi|^2 / ||g||_inf^2 over the
// solved Lemma system (constant boundary flux). Returns 0 with the flag set
// when g vanishes.
template <int D>
struct GradientBoundCheck {
    double ratio = 0.0;
    bool zero_rhs = false;
};

template <int D>
inline GradientBoundCheck<D> check_gradient_bound(const HarmonicPotential<D>& pot,
                                                  double g_sup_norm) {
    GradientBoundCheck<D> out;
    if (g_sup_norm == 0.0) {
        out.zero_rhs = true;
        return out;
    }
    double sup = 0.0;
    for (const auto& gv : pot.grad_Phi) sup = std::max(sup, norm2<D>(gv));
    out.ratio = sup / (g_sup_norm * g_sup_norm);
    return out;
}

// Jet export: {c, b, A}.
template <int D>
inline std::string jet_to_json(const HarmonicPotential<D>& pot) {
    std::string s = "{\"c\":" + fmt17(pot.c) + ",\"b\":[";
    for (int a = 0; a < D; ++a) s += (a ? "," : "") + fmt17(pot.jet_b[a]);
    s += "],\"A\":[";
    for (int i = 0; i < D; ++i) {
        s += i ? ",[" : "[";
        for (int j = 0; j < D; ++j) s += (j ? "," : "") + fmt17(pot.jet_A(i, j));
        s += "]";
    }
    s += "]}";
    return s;
}

}  // namespace otlab
