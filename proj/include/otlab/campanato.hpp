#pragma once

// The Campanato iteration: run tilt steps at geometrically shrinking radii,
// maintain the composed frames A_k = M_k ... M_1 and d_k = sum M_k...M_i b_i
// (so T_k(x) = A_k T(A_k^* x) - d_k on the original map), verify the decay
// and frame-growth bounds, and estimate the Holder exponent.
//
// The iteration transforms the problem by resampling at every step; the
// composed frames are maintained algebraically in parallel so the Holder
// residuals can be evaluated on the original map, where resampling error
// does not compound.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "otlab/common.hpp"
#include "otlab/excess.hpp"
#include "otlab/grid.hpp"
#include "otlab/tilt.hpp"
#include "otlab/transport.hpp"

namespace otlab {

struct IterationConfig {
    int K = 3;
    TiltConfig tilt{};
    double alpha = 0.5;
    double min_cells_across = 8.0;  // radius floor, in original-data cells
};

template <int D>
struct IterationState {
    int k = 0;                         // completed steps
    std::vector<TiltFrame<D>> frames;  // M_k, b_k (normalized units)
    Mat<D> composed_A = Mat<D>::identity();
    Vec<D> composed_d{};
    std::vector<double> E_trace;  // E_0 .. E_k
    std::vector<double> D_trace;  // data term at each level
    std::vector<TiltStepRecord<D>> records;
    std::vector<double> data_cells_across;  // original-resolution diagnostic
    std::string early_stop_reason;          // empty when all K steps ran
    IterationConfig config;

    // Normalization applied to the inputs: x -> (x - center) / R0.
    Vec<D> center{};
    double R0 = 1.0;

    // Normalized original problem (for holder_estimate).
    TransportMap<D> T0;
    GridDensity<D> rho0_0;
    double eps0 = 0.0;  // E_0 + D_0

    std::string trace_csv() const {
        std::string s = "k,E_k,D_k,normM,normb,normA,normAinv\n";
        Mat<D> A = Mat<D>::identity();
        for (std::size_t i = 0; i < E_trace.size(); ++i) {
            double nm = 0.0, nb = 0.0;
            if (i > 0 && i <= frames.size()) {
                nm = frobenius_norm(frames[i - 1].M - Mat<D>::identity());
                nb = norm<D>(frames[i - 1].b);
                A = frames[i - 1].M * A;
            }
            s += std::to_string(i) + "," + fmt17(E_trace[i]) + "," +
                 fmt17(i < D_trace.size() ? D_trace[i] : 0.0) + "," + fmt17(nm) + "," +
                 fmt17(nb) + "," + fmt17(spectral_norm(A)) + "," +
                 fmt17(spectral_norm(inverse(A))) + "\n";
        }
        return s;
    }
};

// Composed frames recomputed from scratch; matches the incrementally
// maintained values bit-for-bit (same fold order).
template <int D>
inline std::pair<Mat<D>, Vec<D>> recompose_frames(const std::vector<TiltFrame<D>>& frames) {
    Mat<D> A = Mat<D>::identity();
    Vec<D> d{};
    for (const auto& f : frames) {
        A = f.M * A;
        d = f.M * (d + f.b);
    }
    return {A, d};
}

// ---------------------------------------------------------------------------
// iterate
// ---------------------------------------------------------------------------

// Run up to K tilt steps at radii theta^k, coordinates normalized so the
// starting ball is B_1(0). Step-level errors become early-stop records,
// never exceptions.
template <int D>
inline IterationState<D> iterate(const TransportMap<D>& T_in, const GridDensity<D>& rho0_in,
                                 const GridDensity<D>& rho1_in, const Ball<D>& ball,
                                 const IterationConfig& cfg = {}) {
    if (cfg.K < 1) throw Error(ErrorCode::ConfigError, "iteration needs K >= 1");
    IterationState<D> st;
    st.config = cfg;
    st.center = ball.center;
    st.R0 = ball.radius;

    // Normalize: x -> (x - center)/R0. Pure relabeling of coordinates.
    auto scale_geom = [&](GridGeom<D> g) {
        g.origin = (1.0 / st.R0) * (g.origin - st.center);
        g.h /= st.R0;
        return g;
    };
    GridDensity<D> rho0 = rho0_in;
    GridDensity<D> rho1 = rho1_in;
    TransportMap<D> T = T_in;
    rho0.geom = scale_geom(rho0.geom);
    rho1.geom = scale_geom(rho1.geom);
    T.source.geom = scale_geom(T.source.geom);
    for (auto& y : T.target_point) y = (1.0 / st.R0) * (y - st.center);

    st.T0 = T;
    st.rho0_0 = rho0;
    const double h_orig = rho0.geom.h;

    const Ball<D> B1(vec_zero<D>(), 1.0);
    st.E_trace.push_back(excess_energy(T, rho0, B1));
    st.D_trace.push_back(data_term(rho0, rho1, B1));
    st.eps0 = st.E_trace[0] + st.D_trace[0];
    st.data_cells_across.push_back(2.0 / h_orig);

    const double theta = cfg.tilt.theta;
    double radius = 1.0;
    for (int k = 1; k <= cfg.K; ++k) {
        // Ball containment in the current frame: M_{k-1} B_{theta^k} must
        // stay inside B_{theta^{k-1}}.
        if (!st.frames.empty() &&
            spectral_norm(st.frames.back().M) * theta > 1.0 + 1e-12) {
            st.early_stop_reason = "containment: M_k B_{theta^k} exits B_{theta^{k-1}}";
            break;
        }
        // Radius floor: the output ball pulled back through the composed
        // frame must still span min_cells_across cells of the original data.
        const double cells_across =
            2.0 * theta * radius / (spectral_norm(st.composed_A) * h_orig);
        if (cells_across < cfg.min_cells_across) {
            st.early_stop_reason = "radius floor: output ball below data resolution";
            break;
        }

        try {
            auto step = tilt_step(T, rho0, rho1, Ball<D>(vec_zero<D>(), radius), cfg.tilt);
            st.frames.push_back({step.record.M, step.record.b});
            st.composed_A = step.record.M * st.composed_A;
            st.composed_d = step.record.M * (st.composed_d + step.record.b);
            st.records.push_back(step.record);
            st.E_trace.push_back(step.record.E_out);
            st.D_trace.push_back(step.record.D_in);
            st.data_cells_across.push_back(cells_across);
            T = std::move(step.tilted.T_hat);
            rho0 = std::move(step.tilted.rho0_hat);
            rho1 = std::move(step.tilted.rho1_hat);
            radius *= theta;
            st.k = k;
        } catch (const Error& e) {
            st.early_stop_reason = std::string(error_code_name(e.code())) + ": " + e.what();
            break;
        }
    }
    return st;
}

// ---------------------------------------------------------------------------
// Campanato seminorm
// ---------------------------------------------------------------------------

template <int D>
struct SeminormResult {
    double value = 0.0;
    Vec<D> arg_center{};
    double arg_radius = 0.0;

    // Per-radius partial suprema, largest radius first (diagnostics).
    std::vector<double> per_radius;
    std::vector<double> radii;
};

// sup over centers x0 in the domain ball and dyadic radii r in [r_min, R/2]
// of r^{-2 alpha} min_b avg_{B_r(x0)} |T - b|^2 (Lebesgue measure, min at
// b = mean). Centers live on a grid of spacing r/2 per radius level.
template <int D>
inline SeminormResult<D> campanato_seminorm(const TransportMap<D>& T,
                                            const Ball<D>& domain, double alpha,
                                            double r_min) {
    const auto& g = T.source.geom;
    if (r_min < 2.0 * g.h)
        throw Error(ErrorCode::ConfigError, "r_min below 2h is unreliable", r_min);
    // T must be defined on the domain ball dilated by 1/2.
    {
        const Ball<D> big(domain.center, 1.5 * domain.radius);
        for (int i : cells_in_ball(g, big))
            if (!T.defined[i])
                throw Error(ErrorCode::DomainExceeded,
                            "map undefined on the dilated domain ball");
        Vec<D> lo = g.min_corner(), hi = g.max_corner();
        for (int a = 0; a < D; ++a)
            if (domain.center[a] - 1.5 * domain.radius < lo[a] - 1e-12 ||
                domain.center[a] + 1.5 * domain.radius > hi[a] + 1e-12)
                throw Error(ErrorCode::DomainExceeded, "domain ball exceeds the grid");
    }

    SeminormResult<D> out;
    for (double r = 0.5 * domain.radius; r >= r_min * (1.0 - 1e-12); r *= 0.5) {
        double level_sup = 0.0;
        // Center grid with spacing r/2 covering the domain ball.
        const double spacing = 0.5 * r;
        const int m = static_cast<int>(std::floor(domain.radius / spacing));
        std::array<int, D> c{};
        auto visit_center = [&](const Vec<D>& x0) {
            if (norm2<D>(x0 - domain.center) > domain.radius * domain.radius) return;
            auto idx = cells_in_ball(g, Ball<D>(x0, r));
            if (idx.empty()) return;
            Vec<D> mean{};
            for (int i : idx) mean = mean + T.target_point[i];
            mean = (1.0 / static_cast<double>(idx.size())) * mean;
            std::vector<double> terms;
            terms.reserve(idx.size());
            for (int i : idx) terms.push_back(norm2<D>(T.target_point[i] - mean));
            const double avg = pairwise_sum(terms) / static_cast<double>(idx.size());
            const double val = avg / std::pow(r, 2.0 * alpha);
            if (val > level_sup) level_sup = val;
            if (val > out.value) {
                out.value = val;
                out.arg_center = x0;
                out.arg_radius = r;
            }
        };
        if constexpr (D == 1) {
            for (c[0] = -m; c[0] <= m; ++c[0])
                visit_center(Vec<1>{domain.center[0] + c[0] * spacing});
        } else {
            for (c[1] = -m; c[1] <= m; ++c[1])
                for (c[0] = -m; c[0] <= m; ++c[0])
                    visit_center(Vec<2>{domain.center[0] + c[0] * spacing,
                                        domain.center[1] + c[1] * spacing});
        }
        out.per_radius.push_back(level_sup);
        out.radii.push_back(r);
    }
    if (out.radii.empty())
        throw Error(ErrorCode::ConfigError, "no radii between r_min and R/2");
    return out;
}

// ---------------------------------------------------------------------------
// Holder exponent from an iteration trace
// ---------------------------------------------------------------------------

template <int D>
struct HolderEstimate {
    double alpha_hat = 0.0;
    bool exact_fit = false;  // all residuals at rounding level
    double C_growth = 0.0;   // measured constant in (1 + C sqrt(eps))^k
    bool containment_ok = true;      // B_{s_k} inside A_k^*(B_{theta^k}) for all k
    bool exponent_condition_ok = true;
    std::vector<double> radii;       // s_k
    std::vector<double> residuals;   // min_b avg_{B_{s_k}} |T - b|^2
};

// Convert the trace into Campanato residuals of the ORIGINAL map on the
// shrunken balls B_{s_k}, s_k = ((theta/(1+C sqrt(eps)))^k)/2, evaluated at
// b = -A_k^{-1} d_k, and fit the exponent: log residual ~ 2 alpha log s.
template <int D>
inline HolderEstimate<D> holder_estimate(const IterationState<D>& st) {
    if (st.k < 3)
        throw Error(ErrorCode::InsufficientTrace, "need >= 3 completed steps",
                    static_cast<double>(st.k));
    HolderEstimate<D> out;

    const double theta = st.config.tilt.theta;
    const double sqrt_eps = std::sqrt(std::max(st.eps0, 1e-300));

    // Measured growth constant: max over k of (max(|A_k|,|A_k^{-1}|)^{1/k}-1)/sqrt(eps).
    {
        Mat<D> A = Mat<D>::identity();
        for (int k = 1; k <= st.k; ++k) {
            A = st.frames[k - 1].M * A;
            const double gk = std::max(spectral_norm(A), spectral_norm(inverse(A)));
            out.C_growth = std::max(
                out.C_growth, (std::pow(gk, 1.0 / k) - 1.0) / sqrt_eps);
        }
    }
    const double shrink = theta / (1.0 + out.C_growth * sqrt_eps);

    const auto disp = displacement_fields(st.T0);
    const double h0 = st.T0.source.geom.h;
    auto T_at = [&](const Vec<D>& p) {
        Vec<D> u;
        for (int a = 0; a < D; ++a) u[a] = interpolate_clamped(disp[a], p);
        return p + u;
    };

    Mat<D> A = Mat<D>::identity();
    Vec<D> d{};
    for (int k = 0; k <= st.k; ++k) {
        if (k > 0) {
            A = st.frames[k - 1].M * A;
            d = st.frames[k - 1].M * (d + st.frames[k - 1].b);
        }
        const double sk = 0.5 * std::pow(shrink, k);
        const Vec<D> b_fixed = (-1.0) * (inverse(A) * d);
        auto q = ball_quadrature<D>(Ball<D>(vec_zero<D>(), sk), h0, 24);
        std::vector<double> terms;
        terms.reserve(q.points.size());
        for (const auto& p : q.points) terms.push_back(norm2<D>(T_at(p) - b_fixed));
        out.radii.push_back(sk);
        out.residuals.push_back(pairwise_sum(terms) / static_cast<double>(q.points.size()));

        // Containment: B_{s_k} inside A_k^*(B_{theta^k}).
        if (min_singular_value(A) * std::pow(theta, k) < sk * (1.0 - 1e-9))
            out.containment_ok = false;
    }

    // Exponent condition from the proof: 1 + C sqrt(eps) <= theta^{-2(1-a)/(d+2(1+a))}.
    const double a = st.config.alpha;
    out.exponent_condition_ok =
        1.0 + out.C_growth * sqrt_eps <=
        std::pow(theta, -2.0 * (1.0 - a) / (D + 2.0 * (1.0 + a)));

    // Least-squares slope of log residual vs log s.
    double floor_sq = 1e-20;
    bool all_tiny = true;
    for (double r : out.residuals) all_tiny = all_tiny && r < floor_sq;
    if (all_tiny) {
        out.exact_fit = true;
        out.alpha_hat = std::numeric_limits<double>::infinity();
        return out;
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const int n = static_cast<int>(out.radii.size());
    for (int i = 0; i < n; ++i) {
        const double x = std::log(out.radii[i]);
        const double y = std::log(std::max(out.residuals[i], 1e-300));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    out.alpha_hat = 0.5 * slope;
    return out;
}

// Least-squares decay exponent of log E_k vs k (natural log); the paper's
// bound predicts at least 2 beta log(1/theta).
inline double fitted_decay_exponent(const std::vector<double>& E_trace) {
    const int n = static_cast<int>(E_trace.size());
    if (n < 2) throw Error(ErrorCode::InsufficientTrace, "trace too short");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int i = 0; i < n; ++i) {
        const double y = std::log(std::max(E_trace[i], 1e-300));
        sx += i;
        sy += y;
        sxx += static_cast<double>(i) * i;
        sxy += i * y;
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    return -slope;
}

}  // namespace otlab
