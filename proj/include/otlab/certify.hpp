#pragma once

// Epsilon-regularity certification: evaluate the hypothesis quantity
//   (2R)^{-(d+2)} int_{B_2R} |T-x|^2 rho0  +  ||1-rho0||^2_inf + ||1-rho1||^2_inf
// at a point and scale, compare against a calibrated threshold, and scan a
// domain to produce the discrete analogue of the regular set.
//
// The (2R)^{-(d+2)} integral normalization converts to the excess-energy
// normalization through the volume of the unit ball:
//   (2R)^{-(d+2)} int_{B_2R} |T-x|^2 rho0 = omega_d * E(2R),
// since int = |B_2R| (2R)^2 E = omega_d (2R)^{d+2} E. The conversion happens
// here, once.

#include <string>
#include <vector>

#include "otlab/campanato.hpp"
#include "otlab/excess.hpp"
#include "otlab/grid.hpp"
#include "otlab/transport.hpp"

namespace otlab {

template <int D>
struct Certificate {
    Vec<D> center{};
    double R = 0.0;
    double hypothesis_value = 0.0;
    double E2R = 0.0;     // excess at B_2R (def:excess normalization)
    double D2R = 0.0;     // data term at B_2R
    double eps_cal = 0.0;
    bool pass = false;
    bool has_trace = false;
    double alpha_hat = 0.0;
    bool alpha_exact_fit = false;
    int trace_steps = 0;
    std::string early_stop_reason;

    std::string to_json() const {
        std::string s = "{\"center\":[";
        for (int a = 0; a < D; ++a) s += (a ? "," : "") + fmt17(center[a]);
        s += "],\"R\":" + fmt17(R);
        s += ",\"hypothesis_value\":" + fmt17(hypothesis_value);
        s += ",\"E\":" + fmt17(E2R) + ",\"D\":" + fmt17(D2R);
        s += ",\"eps_cal\":" + fmt17(eps_cal);
        s += std::string(",\"verdict\":\"") + (pass ? "pass" : "fail") + "\"";
        if (has_trace) {
            s += ",\"trace\":{\"steps\":" + std::to_string(trace_steps);
            s += ",\"alpha_hat\":" + (alpha_exact_fit ? std::string("\"exact\"")
                                                      : fmt17(alpha_hat));
            if (!early_stop_reason.empty())
                s += ",\"early_stop\":\"" + early_stop_reason + "\"";
            s += "}";
        }
        s += "}";
        return s;
    }
};

struct CertifyConfig {
    bool attach_trace = true;
    IterationConfig iteration{};
};

template <int D>
inline Certificate<D> certify_point(const TransportMap<D>& T, const GridDensity<D>& rho0,
                                    const GridDensity<D>& rho1, const Vec<D>& x0, double R,
                                    double alpha, double eps_cal,
                                    const CertifyConfig& cfg = {}) {
    Certificate<D> cert;
    cert.center = x0;
    cert.R = R;
    cert.eps_cal = eps_cal;

    const Ball<D> b2(x0, 2.0 * R);
    const auto& g = rho0.geom;
    for (int a = 0; a < D; ++a)
        if (x0[a] - 2.0 * R < g.min_corner()[a] - 1e-12 ||
            x0[a] + 2.0 * R > g.max_corner()[a] + 1e-12)
            throw Error(ErrorCode::DomainExceeded, "B_2R exceeds the data domain");

    cert.E2R = excess_energy(T, rho0, b2);
    cert.D2R = data_term(rho0, rho1, b2);
    cert.hypothesis_value = unit_ball_volume<D>() * cert.E2R + cert.D2R;
    cert.pass = cert.hypothesis_value <= eps_cal;

    if (cert.pass && cfg.attach_trace) {
        IterationConfig icfg = cfg.iteration;
        icfg.alpha = alpha;
        auto st = iterate(T, rho0, rho1, Ball<D>(x0, R), icfg);
        cert.has_trace = true;
        cert.trace_steps = st.k;
        cert.early_stop_reason = st.early_stop_reason;
        if (st.k >= 3) {
            auto he = holder_estimate(st);
            cert.alpha_hat = he.alpha_hat;
            cert.alpha_exact_fit = he.exact_fit;
        }
    }
    return cert;
}

// ---------------------------------------------------------------------------
// Regular-set scan
// ---------------------------------------------------------------------------

template <int D>
struct ScanEntry {
    Vec<D> center{};
    double radius = 0.0;  // largest certified radius; 0 when none passed
    double hypothesis_value = 0.0;
    bool excluded_support = false;
};

template <int D>
struct ScanResult {
    std::vector<ScanEntry<D>> entries;
    double coverage_fraction = 0.0;  // of eligible domain cells
    std::vector<std::uint8_t> covered;  // raster on the rho0 grid
    GridGeom<D> raster_geom;
    int eligible_cells = 0;

    std::string raster_csv() const {
        std::string s = "ix[,iy],covered\n";
        for (int i = 0; i < raster_geom.num_cells(); ++i) {
            auto c = raster_geom.coords(i);
            s += std::to_string(c[0]);
            if constexpr (D == 2) s += "," + std::to_string(c[1]);
            s += "," + std::to_string(static_cast<int>(covered[i])) + "\n";
        }
        return s;
    }
};

// For each center on a grid of spacing R_top/2, certify at the largest
// radius of the descending ladder that fits the domain; balls meeting the
// support boundary (cells of zero density) are excluded and recorded.
// Certification inside the scan is hypothesis-only (no attached traces).
template <int D>
inline ScanResult<D> scan_regular_set(const TransportMap<D>& T, const GridDensity<D>& rho0,
                                      const GridDensity<D>& rho1, double alpha,
                                      const std::vector<double>& radius_ladder,
                                      double eps_cal) {
    if (radius_ladder.empty())
        throw Error(ErrorCode::ConfigError, "radius ladder must be nonempty");
    for (std::size_t i = 0; i + 1 < radius_ladder.size(); ++i)
        if (radius_ladder[i] <= radius_ladder[i + 1])
            throw Error(ErrorCode::ConfigError, "radius ladder must be descending");
    const auto& g = rho0.geom;
    for (double r : radius_ladder)
        if (r < 8.0 * g.h)
            throw Error(ErrorCode::ConfigError, "ladder radius below 8h", r);

    const double r_top = radius_ladder.front();
    const double spacing = 0.5 * r_top;
    const Vec<D> lo = g.min_corner(), hi = g.max_corner();

    ScanResult<D> out;
    out.raster_geom = g;
    out.covered.assign(static_cast<std::size_t>(g.num_cells()), 0);

    auto ball_in_domain = [&](const Vec<D>& c, double r) {
        for (int a = 0; a < D; ++a)
            if (c[a] - r < lo[a] - 1e-12 || c[a] + r > hi[a] + 1e-12) return false;
        return true;
    };
    auto ball_meets_support_boundary = [&](const Vec<D>& c, double r) {
        for (int i : cells_in_ball(g, Ball<D>(c, r)))
            if (rho0.cells[i] <= 0.0 || rho1.cells[i] <= 0.0) return true;
        return false;
    };

    // Fixed-order center enumeration keeps scans bit-identical.
    std::array<int, D> steps{};
    for (int a = 0; a < D; ++a)
        steps[a] = static_cast<int>(std::floor((hi[a] - lo[a]) / spacing)) + 1;
    std::vector<Vec<D>> centers;
    if constexpr (D == 1) {
        for (int i = 0; i < steps[0]; ++i) centers.push_back(Vec<1>{lo[0] + i * spacing});
    } else {
        for (int j = 0; j < steps[1]; ++j)
            for (int i = 0; i < steps[0]; ++i)
                centers.push_back(Vec<2>{lo[0] + i * spacing, lo[1] + j * spacing});
    }

    CertifyConfig ccfg;
    ccfg.attach_trace = false;
    for (const auto& c : centers) {
        ScanEntry<D> entry;
        entry.center = c;
        bool any_eligible = false;
        for (double r : radius_ladder) {
            if (!ball_in_domain(c, 2.0 * r)) continue;
            if (ball_meets_support_boundary(c, 2.0 * r)) {
                entry.excluded_support = true;
                continue;
            }
            any_eligible = true;
            auto cert = certify_point(T, rho0, rho1, c, r, alpha, eps_cal, ccfg);
            entry.hypothesis_value = cert.hypothesis_value;
            if (cert.pass) {
                entry.radius = r;
                break;  // ladder is descending: first hit is the largest
            }
        }
        if (any_eligible || entry.excluded_support) out.entries.push_back(entry);
        if (entry.radius > 0.0)
            for (int i : cells_in_ball(g, Ball<D>(c, entry.radius))) out.covered[i] = 1;
    }

    // Coverage over cells that could participate at the smallest radius.
    int eligible = 0, covered_count = 0;
    const double r_min = radius_ladder.back();
    for (int i = 0; i < g.num_cells(); ++i) {
        if (!ball_in_domain(g.center(i), 2.0 * r_min)) continue;
        ++eligible;
        if (out.covered[i]) ++covered_count;
    }
    out.eligible_cells = eligible;
    out.coverage_fraction = eligible > 0 ? static_cast<double>(covered_count) / eligible : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Threshold calibration
// ---------------------------------------------------------------------------

template <int D>
struct CalibrationFixture {
    TransportMap<D> T;
    GridDensity<D> rho0;
    GridDensity<D> rho1;
    bool singular = false;
    // Known bad set of a singular fixture: strip |x_0 - line| <= half_width.
    double bad_line = 0.0;
    double bad_half_width = 0.0;
};

struct CalibrationResult {
    double eps_cal = 0.0;
    double eps_false_pass = 0.0;  // largest eps with zero false passes
    double eps_coverage = 0.0;    // smallest eps reaching the coverage target
    bool feasible = false;
};

// Bisect the threshold: false passes (certified balls touching a known bad
// strip) are monotone increasing in eps, smooth-fixture coverage is monotone
// increasing as well. Feasible iff the coverage target is reached before the
// first false pass; ship the geometric mean.
template <int D>
inline CalibrationResult calibrate_epsilon(const std::vector<CalibrationFixture<D>>& fixtures,
                                           double alpha,
                                           const std::vector<double>& radius_ladder,
                                           double coverage_target = 0.95,
                                           double eps_lo = 1e-4, double eps_hi = 1.0,
                                           int bisection_steps = 24) {
    auto false_pass = [&](double eps) {
        for (const auto& fx : fixtures) {
            if (!fx.singular) continue;
            auto scan = scan_regular_set(fx.T, fx.rho0, fx.rho1, alpha, radius_ladder, eps);
            for (const auto& e : scan.entries) {
                if (e.radius <= 0.0) continue;
                if (std::abs(e.center[0] - fx.bad_line) <= e.radius + fx.bad_half_width)
                    return true;
            }
        }
        return false;
    };
    auto coverage_ok = [&](double eps) {
        for (const auto& fx : fixtures) {
            if (fx.singular) continue;
            auto scan = scan_regular_set(fx.T, fx.rho0, fx.rho1, alpha, radius_ladder, eps);
            if (scan.coverage_fraction < coverage_target) return false;
        }
        return true;
    };

    CalibrationResult out;
    // Largest eps with no false pass.
    double lo = eps_lo, hi = eps_hi;
    if (false_pass(lo)) {
        out.feasible = false;
        return out;
    }
    if (!false_pass(hi)) {
        out.eps_false_pass = hi;
    } else {
        for (int it = 0; it < bisection_steps; ++it) {
            const double mid = std::sqrt(lo * hi);
            (false_pass(mid) ? hi : lo) = mid;
        }
        out.eps_false_pass = lo;
    }
    // Smallest eps reaching coverage.
    lo = eps_lo;
    hi = eps_hi;
    if (coverage_ok(lo)) {
        out.eps_coverage = lo;
    } else if (!coverage_ok(hi)) {
        out.feasible = false;
        return out;
    } else {
        for (int it = 0; it < bisection_steps; ++it) {
            const double mid = std::sqrt(lo * hi);
            (coverage_ok(mid) ? hi : lo) = mid;
        }
        out.eps_coverage = hi;
    }
    out.feasible = out.eps_coverage <= out.eps_false_pass;
    if (out.feasible) out.eps_cal = std::sqrt(out.eps_coverage * out.eps_false_pass);
    return out;
}

}  // namespace otlab
