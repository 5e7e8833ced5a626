#pragma once

// One step of excess improvement by tilting: build the affine frame
// (M, b) = (exp(-A/2), grad phi(0)) from the harmonic jet, transform
// (rho0, rho1, T) by  x = M xhat, yhat = M (y - b), and measure the excess
// of the transformed problem at the shrunken radius theta R.
//
// Tilted problems always live in coordinates centered at the ball center;
// tilt_step recenters its inputs first (a pure origin shift, no resampling).

#include <cstdint>
#include <string>

#include "otlab/common.hpp"
#include "otlab/excess.hpp"
#include "otlab/grid.hpp"
#include "otlab/io.hpp"
#include "otlab/poisson.hpp"
#include "otlab/transport.hpp"

namespace otlab {

inline constexpr double kDetTol = 1e-12;
inline constexpr double kTraceTol = 1e-9;

template <int D>
struct TiltFrame {
    Mat<D> M = Mat<D>::identity();
    Vec<D> b{};

    bool is_identity() const {
        return b == vec_zero<D>() && M.m == Mat<D>::identity().m;
    }
};

// M = exp(-A/2) for symmetric trace-free A via eigendecomposition, so that
// det M = e^{-tr(A)/2} = 1. The trace is projected out first (the continuous
// A is trace-free by harmonicity; discretely only approximately so) and the
// correction magnitude is reported.
template <int D>
struct SymExpResult {
    Mat<D> M;
    double trace_correction = 0.0;
    double det_defect = 0.0;
};

template <int D>
inline SymExpResult<D> sym_exp_neg_half(Mat<D> A, double symmetry_tol = 1e-9) {
    const double scale = 1.0 + max_abs_entry(A);
    double asym = 0.0;
    for (int i = 0; i < D; ++i)
        for (int j = i + 1; j < D; ++j) asym = std::max(asym, std::abs(A(i, j) - A(j, i)));
    if (asym > symmetry_tol * scale)
        throw Error(ErrorCode::NotSymmetric, "matrix is not symmetric", asym);
    A = 0.5 * (A + transpose(A));

    SymExpResult<D> out;
    const double tr = trace(A);
    out.trace_correction = std::abs(tr);
    for (int i = 0; i < D; ++i) A(i, i) -= tr / D;

    auto eig = sym_eig<D>(A);
    Mat<D> expd{};
    for (int i = 0; i < D; ++i) expd(i, i) = std::exp(-0.5 * eig.eigenvalues[i]);
    out.M = eig.eigenvectors * expd * transpose(eig.eigenvectors);
    // Pin det exactly to 1 (it already is up to roundoff).
    const double dt = det(out.M);
    out.det_defect = std::abs(dt - 1.0);
    const double fix = std::pow(dt, -1.0 / D);
    out.M = fix * out.M;
    if (std::abs(det(out.M) - 1.0) > kDetTol)
        throw Error(ErrorCode::SolverFailure, "unit determinant not achieved",
                    std::abs(det(out.M) - 1.0));
    return out;
}

template <int D>
struct TiltedProblem {
    GridDensity<D> rho0_hat;
    GridDensity<D> rho1_hat;
    TransportMap<D> T_hat;
    TiltFrame<D> frame;
    double radius = 0.0;          // theta * R
    double monotone_worst = 0.0;  // spot-check diagnostic on T_hat
};

struct ApplyFrameOptions {
    double cover = 1.25;      // output grid covers cover * theta * R
    int min_cells = 48;       // lower bound on output cells across
    int max_cells = 192;      // upper bound (resampling cost cap)
    int monotone_pairs = 512;
    std::uint64_t seed = 0x07171717u;
};

namespace detail {

// Shift a problem so the ball center becomes the origin. Pure coordinate
// relabeling: grids move their origin, the map moves its targets.
template <int D>
inline void recenter(GridDensity<D>& rho0, GridDensity<D>& rho1, TransportMap<D>& T,
                     const Vec<D>& x0) {
    rho0.geom.origin = rho0.geom.origin - x0;
    rho1.geom.origin = rho1.geom.origin - x0;
    T.source.geom.origin = T.source.geom.origin - x0;
    for (auto& y : T.target_point) y = y - x0;
}

template <int D>
inline GridGeom<D> centered_square(double half_width, int cells_across) {
    GridGeom<D> g;
    for (int a = 0; a < D; ++a) {
        g.n[a] = cells_across;
        g.origin[a] = -half_width;
    }
    g.h = 2.0 * half_width / cells_across;
    return g;
}

}  // namespace detail

// Transform (T, rho0, rho1) by the frame on the ball B = B_R(0):
//   That(xhat) = M (T(M xhat) - b),  rho0hat(xhat) = rho0(M xhat),
//   rho1hat(yhat) = rho1(M^{-1} yhat + b),
// resampled onto a fresh grid covering B_{theta R} (bilinear displacement
// interpolation with nearest-neighbor fallback at support boundaries).
// The identity frame is a fast path that leaves all fields bit-identical.
template <int D>
inline TiltedProblem<D> apply_frame(const TransportMap<D>& T, const GridDensity<D>& rho0,
                                    const GridDensity<D>& rho1, const TiltFrame<D>& frame,
                                    const Ball<D>& ball, double theta,
                                    const ApplyFrameOptions& opts = {}) {
    if (norm2<D>(ball.center) != 0.0)
        throw Error(ErrorCode::ConfigError, "apply_frame expects a centered problem");
    if (std::abs(det(frame.M) - 1.0) > 1e-9)
        throw Error(ErrorCode::ConfigError, "frame determinant must be 1");

    const double R = ball.radius;
    const double rout = theta * R;

    TiltedProblem<D> out;
    out.frame = frame;
    out.radius = rout;

    if (frame.is_identity()) {
        out.rho0_hat = rho0;
        out.rho1_hat = rho1;
        out.T_hat = T;
        out.monotone_worst = 0.0;
        return out;
    }

    const Mat<D> Minv = inverse(frame.M);
    // Containment: M B_{theta R} inside B_R, and the pulled-back grids must
    // stay inside the data domain.
    if (spectral_norm(frame.M) * rout > R * (1.0 + 1e-12))
        throw Error(ErrorCode::DomainExceeded, "M B_{theta R} exits B_R",
                    spectral_norm(frame.M) * rout);

    const double half = opts.cover * rout;
    const int n_native = static_cast<int>(std::ceil(2.0 * half / rho0.geom.h));
    const int n_out = std::clamp(n_native, opts.min_cells, opts.max_cells);
    const GridGeom<D> gout = detail::centered_square<D>(half, n_out);

    auto inside = [](const GridGeom<D>& g, const Vec<D>& p) { return g.contains_point(p); };
    // Corner check on the pulled-back output grid.
    for (int corner = 0; corner < (1 << D); ++corner) {
        Vec<D> c;
        for (int a = 0; a < D; ++a) c[a] = (corner >> a) & 1 ? half : -half;
        if (!inside(rho0.geom, frame.M * c))
            throw Error(ErrorCode::DomainExceeded, "pulled-back source grid exits data domain");
        if (!inside(rho1.geom, (Minv * c) + frame.b))
            throw Error(ErrorCode::DomainExceeded, "pulled-back target grid exits data domain");
    }

    const auto disp = displacement_fields(T);
    const GridScalar<D> rho0_field(rho0.geom, rho0.cells);
    const GridScalar<D> rho1_field(rho1.geom, rho1.cells);

    out.rho0_hat = GridDensity<D>(gout, 0.0);
    out.rho1_hat = GridDensity<D>(gout, 0.0);
    out.T_hat.source = out.rho0_hat;
    const int nc = gout.num_cells();
    out.T_hat.target_point.assign(nc, vec_zero<D>());
    out.T_hat.defined.assign(nc, 1);
    out.T_hat.spread.assign(nc, 0.0);
    const bool carry_psi = T.has_psi;
    GridScalar<D> psi_field;
    if (carry_psi) {
        psi_field = GridScalar<D>(T.source.geom, T.psi);
        out.T_hat.psi.assign(nc, 0.0);
        out.T_hat.has_psi = true;
    }

    for (int i = 0; i < nc; ++i) {
        const Vec<D> xh = gout.center(i);
        const Vec<D> x = frame.M * xh;
        Vec<D> u;
        for (int a = 0; a < D; ++a) u[a] = interpolate_clamped(disp[a], x);
        const Vec<D> Tx = x + u;
        out.T_hat.target_point[i] = frame.M * (Tx - frame.b);
        out.rho0_hat.cells[i] = std::max(0.0, interpolate_clamped(rho0_field, x));
        const Vec<D> y = (Minv * xh) + frame.b;
        out.rho1_hat.cells[i] = std::max(0.0, interpolate_clamped(rho1_field, y));
        if (carry_psi)
            out.T_hat.psi[i] = interpolate_clamped(psi_field, x) - dot<D>(frame.b, x);
    }
    out.T_hat.source = out.rho0_hat;
    out.monotone_worst = monotonicity_spot_check(out.T_hat, opts.monotone_pairs, opts.seed);
    return out;
}

// ---------------------------------------------------------------------------
// tilt_step
// ---------------------------------------------------------------------------

struct TiltConfig {
    double theta = 0.25;
    double beta = 0.5;
    double eps_step = 0.1;            // smallness threshold on E + D
    int n_bins = 64;
    int flux_substeps = 4;  // sub-particles per cell axis for flux binning
    double neumann_radius_factor = 0.775;  // R in (3/4, 4/5), fixed midpoint
    NeumannOptions neumann{};
    ApplyFrameOptions resample{};
    bool check_monotonicity = true;
};

template <int D>
struct TiltStepRecord {
    double E_in = 0.0;
    double D_in = 0.0;
    double E_out = 0.0;
    double theta = 0.0;
    double beta = 0.0;
    Mat<D> M;
    Vec<D> b{};
    double det_defect = 0.0;
    double trace_correction = 0.0;
    double flux_defect = 0.0;       // |net flux - (rho0(Bn) - rho1(Bn))|
    double flux_correction = 0.0;   // uniform compatibility projection
    double compat_constant = 0.0;
    double frame_ratio = 0.0;       // (|M-Id|^2 + |b|^2/R^2) / (E_in + D_in)
    double improvement_ratio = 0.0; // (E_out - theta^{2beta} E_in) / D_in
    double monotone_worst = 0.0;
    int flux_degenerate = 0;
    double map_spread_max = 0.0;

    std::string to_json() const {
        std::string s = "{";
        s += "\"E_in\":" + fmt17(E_in) + ",\"D_in\":" + fmt17(D_in);
        s += ",\"E_out\":" + fmt17(E_out);
        s += ",\"theta\":" + fmt17(theta) + ",\"beta\":" + fmt17(beta);
        s += ",\"M\":[";
        for (int i = 0; i < D; ++i) {
            s += i ? ",[" : "[";
            for (int j = 0; j < D; ++j) s += (j ? "," : "") + fmt17(M(i, j));
            s += "]";
        }
        s += "],\"b\":[";
        for (int a = 0; a < D; ++a) s += (a ? "," : "") + fmt17(b[a]);
        s += "],\"det_defect\":" + fmt17(det_defect);
        s += ",\"trace_correction\":" + fmt17(trace_correction);
        s += ",\"flux_defect\":" + fmt17(flux_defect);
        s += ",\"flux_correction\":" + fmt17(flux_correction);
        s += ",\"frame_ratio\":" + fmt17(frame_ratio);
        s += ",\"improvement_ratio\":" + fmt17(improvement_ratio);
        s += "}";
        return s;
    }
};

template <int D>
struct TiltStepResult {
    TiltedProblem<D> tilted;
    TiltStepRecord<D> record;
    HarmonicPotential<D> potential;
};

// The full pipeline: smallness check, flux, Neumann, jet, frame, transform.
// Inputs may be centered anywhere; the output problem is centered at 0.
template <int D>
inline TiltStepResult<D> tilt_step(const TransportMap<D>& T_in, const GridDensity<D>& rho0_in,
                                   const GridDensity<D>& rho1_in, const Ball<D>& ball,
                                   const TiltConfig& cfg = {}) {
    TransportMap<D> T = T_in;
    GridDensity<D> rho0 = rho0_in;
    GridDensity<D> rho1 = rho1_in;
    detail::recenter(rho0, rho1, T, ball.center);
    const Ball<D> B0(vec_zero<D>(), ball.radius);
    const double R = ball.radius;

    TiltStepResult<D> out;
    auto& rec = out.record;
    rec.theta = cfg.theta;
    rec.beta = cfg.beta;

    rec.E_in = excess_energy(T, rho0, B0);
    rec.D_in = data_term(rho0, rho1, B0);
    if (rec.E_in + rec.D_in > cfg.eps_step)
        throw Error(ErrorCode::SmallnessViolated, "E + D exceeds the step threshold",
                    rec.E_in + rec.D_in);
    rec.map_spread_max = T.max_spread();

    // Flux through the Neumann sphere and the compatibility constant.
    const Ball<D> Bn(vec_zero<D>(), cfg.neumann_radius_factor * R);
    auto flux = time_integrated_flux(T, rho0, Bn, cfg.n_bins, cfg.flux_substeps);
    rec.flux_degenerate = flux.degenerate_count;
    const double mass_bn = mass_in_ball(rho0, Bn, cfg.flux_substeps);
    rec.flux_defect = std::abs(
        flux.net_flux() - (mass_bn - mass_in_ball(rho1, Bn, cfg.flux_substeps)));
    rec.compat_constant = compatibility_constant(rho0, rho1, Bn);

    NeumannOptions nopts = cfg.neumann;
    if (nopts.compat_tol <= 0.0) nopts.compat_tol = 1e-3 * mass_bn;
    out.potential = solve_neumann(rec.compat_constant, flux, nopts);
    rec.flux_correction = out.potential.flux_correction;

    auto sym = sym_exp_neg_half<D>(out.potential.jet_A);
    rec.trace_correction = sym.trace_correction;
    rec.det_defect = sym.det_defect;
    TiltFrame<D> frame{sym.M, out.potential.jet_b};
    rec.M = frame.M;
    rec.b = frame.b;

    const Mat<D> dM = frame.M - Mat<D>::identity();
    const double fnorm = frobenius_norm(dM);
    rec.frame_ratio = (fnorm * fnorm + norm2<D>(frame.b) / (R * R)) /
                      std::max(rec.E_in + rec.D_in, 1e-300);

    out.tilted = apply_frame(T, rho0, rho1, frame, B0, cfg.theta, cfg.resample);
    rec.monotone_worst = out.tilted.monotone_worst;

    rec.E_out = excess_energy(out.tilted.T_hat, out.tilted.rho0_hat,
                              Ball<D>(vec_zero<D>(), cfg.theta * R));
    rec.improvement_ratio =
        (rec.E_out - std::pow(cfg.theta, 2.0 * cfg.beta) * rec.E_in) /
        std::max(rec.D_in, 1e-300);
    return out;
}

}  // namespace otlab
