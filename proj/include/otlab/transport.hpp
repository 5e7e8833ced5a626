#pragma once

// Discrete optimal transport for the squared Euclidean cost between gridded
// densities:
//   - solve_exact:     network simplex on the dense bipartite cell graph,
//                      exact LP vertex, deterministic tie-breaking;
//   - solve_entropic:  log-domain Sinkhorn scaling with eps-scaling and a
//                      separable kernel (|x-y|^2 splits per axis, so one
//                      iteration costs O(n^{3/2}) instead of O(n^2));
//   - extract_map:     barycentric projection with per-cell spread;
//   - monotone_1d_oracle: CDF inversion, the independent 1-D answer.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "otlab/common.hpp"
#include "otlab/grid.hpp"

namespace otlab {

struct ExactSolveOptions {
    int size_cap = 4096;  // max source (and target) cells
    double mass_tol = kMassTolExact;
    std::int64_t max_pivots = 4000000;
};

struct EntropicSolveOptions {
    double mass_tol = kMassTolEntropic;
    int max_iter = 20000;          // scaling iterations, all eps levels combined
    double tol = 1e-7;             // relative L1 marginal defect
    double plan_keep_rel = 1e-13;  // per-row relative mass floor when sparsifying
};

template <int D>
struct TransportPlan {
    struct Entry {
        int src;
        int dst;
        double mass;
    };

    GridDensity<D> source;
    GridDensity<D> target;            // after mass renormalization
    std::vector<Entry> entries;       // sorted by (src, dst)
    double cost = 0.0;                // sum mass * |x-y|^2, canonical order
    double mass_rescale = 1.0;        // factor applied to target marginal
    double max_dual_violation = 0.0;  // exact solver optimality certificate
    double marginal_defect = 0.0;     // entropic solver residual (relative L1)
    double reg = 0.0;                 // entropic regularization (0 for exact)
};

template <int D>
struct TransportMap {
    GridDensity<D> source;
    std::vector<Vec<D>> target_point;   // T(x) per source cell
    std::vector<std::uint8_t> defined;  // 1 where T is defined
    std::vector<double> spread;         // mass-weighted variance of targets
    std::vector<double> psi;            // optional Kantorovich potential sample
    bool has_psi = false;
    std::vector<int> skipped_cells;     // zero-mass cells without a map value

    Vec<D> displacement(int idx) const {
        return target_point[idx] - source.geom.center(idx);
    }

    double max_spread() const {
        double s = 0.0;
        for (std::size_t i = 0; i < spread.size(); ++i)
            if (defined[i]) s = std::max(s, spread[i]);
        return s;
    }
};

// Canonical plan cost: entries sorted by (src, dst), pairwise summation, so
// costs are reproducible bit-for-bit across runs.
template <int D>
inline double plan_cost(const std::vector<typename TransportPlan<D>::Entry>& entries,
                        const std::vector<Vec<D>>& xs, const std::vector<Vec<D>>& ys) {
    std::vector<double> terms;
    terms.reserve(entries.size());
    for (const auto& e : entries) terms.push_back(e.mass * norm2<D>(xs[e.src] - ys[e.dst]));
    return pairwise_sum(terms);
}

// ---------------------------------------------------------------------------
// Exact solver: network simplex on the complete bipartite transportation
// graph. Cells with zero mass are excluded. Deterministic: block pricing in
// fixed arc order, ties resolved toward the lowest cell index.
// ---------------------------------------------------------------------------

namespace detail {

template <int D>
class TransportationSimplex {
  public:
    TransportationSimplex(const std::vector<Vec<D>>& xs, std::vector<double> supply,
                          const std::vector<Vec<D>>& ys, std::vector<double> demand,
                          std::int64_t max_pivots)
        : xs_(xs), ys_(ys), s_(std::move(supply)), d_(std::move(demand)),
          m_(static_cast<int>(xs.size())), n_(static_cast<int>(ys.size())),
          max_pivots_(max_pivots) {}

    void run() {
        balance();
        northwest_basis();
        build_tree();
        const std::int64_t num_arcs = static_cast<std::int64_t>(m_) * n_;
        const std::int64_t block = std::max<std::int64_t>(
            64, static_cast<std::int64_t>(std::sqrt(static_cast<double>(num_arcs))));
        double cscale = 1.0;
        for (int i = 0; i < m_; ++i) cscale = std::max(cscale, norm2<D>(xs_[i]));
        for (int j = 0; j < n_; ++j) cscale = std::max(cscale, norm2<D>(ys_[j]));
        const double rc_eps = 4.0 * cscale * 1e-14;

        std::int64_t cursor = 0;
        std::int64_t pivots = 0;
        for (;;) {
            // Block search for the most negative reduced cost.
            std::int64_t best_arc = -1;
            double best_rc = -rc_eps;
            std::int64_t scanned = 0;
            while (scanned < num_arcs) {
                const std::int64_t stop = std::min<std::int64_t>(block, num_arcs - scanned);
                for (std::int64_t k = 0; k < stop; ++k) {
                    std::int64_t a = cursor + k;
                    if (a >= num_arcs) a -= num_arcs;
                    const int i = static_cast<int>(a / n_);
                    const int j = static_cast<int>(a % n_);
                    const double rc = cost(i, j) - pi_[i] - pi_[m_ + j];
                    if (rc < best_rc) {
                        best_rc = rc;
                        best_arc = a;
                    }
                }
                scanned += stop;
                cursor += stop;
                if (cursor >= num_arcs) cursor -= num_arcs;
                if (best_arc >= 0) break;
            }
            if (best_arc < 0) break;  // dual feasible -> optimal
            pivot(static_cast<int>(best_arc / n_), static_cast<int>(best_arc % n_));
            if (++pivots > max_pivots_)
                throw Error(ErrorCode::SolverFailure, "network simplex pivot cap exceeded",
                            static_cast<double>(pivots));
        }
    }

    // Basic arcs with positive flow, sorted by (src, dst).
    std::vector<typename TransportPlan<D>::Entry> entries() const {
        std::vector<typename TransportPlan<D>::Entry> out;
        for (int v = 0; v < m_ + n_; ++v) {
            if (parent_[v] < 0) continue;
            const double f = flow_up_[v];
            if (f <= 0.0) continue;
            int a = v, b = parent_[v];
            if (a >= m_) std::swap(a, b);
            out.push_back({a, b - m_, f});
        }
        std::sort(out.begin(), out.end(), [](const auto& l, const auto& r) {
            return l.src != r.src ? l.src < r.src : l.dst < r.dst;
        });
        return out;
    }

    double max_dual_violation() const {
        double worst = 0.0;
        for (int i = 0; i < m_; ++i)
            for (int j = 0; j < n_; ++j)
                worst = std::max(worst, pi_[i] + pi_[m_ + j] - cost(i, j));
        return worst;
    }

  private:
    double cost(int i, int j) const { return norm2<D>(xs_[i] - ys_[j]); }

    // Force exact supply/demand balance by absorbing the (tiny,
    // renormalization-level) residual into the largest demand.
    void balance() {
        const double total_s = pairwise_sum(s_);
        const double total_d = pairwise_sum(d_);
        std::size_t jmax = 0;
        for (std::size_t j = 1; j < d_.size(); ++j)
            if (d_[j] > d_[jmax]) jmax = j;
        d_[jmax] += total_s - total_d;
        if (d_[jmax] <= 0.0)
            throw Error(ErrorCode::MassMismatch, "mass residual exceeds largest cell");
    }

    void northwest_basis() {
        basis_.clear();
        basis_.reserve(static_cast<std::size_t>(m_) + n_ - 1);
        std::vector<double> s = s_, d = d_;
        int i = 0, j = 0;
        while (i < m_ && j < n_) {
            if (s[i] <= d[j]) {
                basis_.push_back({i, j, s[i]});
                d[j] -= s[i];
                s[i] = 0.0;
                ++i;
            } else {
                basis_.push_back({i, j, d[j]});
                s[i] -= d[j];
                d[j] = 0.0;
                ++j;
            }
        }
        // Exact mid-stream ties can exhaust one side early; pad with
        // degenerate arcs so the basis stays a spanning tree.
        while (static_cast<int>(basis_.size()) < m_ + n_ - 1) {
            if (i >= m_) {
                basis_.push_back({m_ - 1, j, 0.0});
                ++j;
            } else {
                basis_.push_back({i, n_ - 1, 0.0});
                ++i;
            }
        }
    }

    void build_tree() {
        const int N = m_ + n_;
        parent_.assign(N, -1);
        depth_.assign(N, 0);
        pi_.assign(N, 0.0);
        flow_up_.assign(N, 0.0);
        children_.assign(N, {});

        std::vector<std::vector<std::pair<int, double>>> adj(N);
        for (const auto& b : basis_) {
            adj[b.i].push_back({m_ + b.j, b.flow});
            adj[m_ + b.j].push_back({b.i, b.flow});
        }
        std::vector<int> stack{0};
        std::vector<char> seen(N, 0);
        seen[0] = 1;
        pi_[0] = 0.0;
        while (!stack.empty()) {
            const int v = stack.back();
            stack.pop_back();
            for (auto [w, f] : adj[v]) {
                if (seen[w]) continue;
                seen[w] = 1;
                parent_[w] = v;
                depth_[w] = depth_[v] + 1;
                flow_up_[w] = f;
                children_[v].push_back(w);
                const int si = v < m_ ? v : w;
                const int tj = v < m_ ? w - m_ : v - m_;
                pi_[w] = cost(si, tj) - pi_[v];
                stack.push_back(w);
            }
        }
    }

    // Entering arc (es, jt) with negative reduced cost; push flow around the
    // unique tree cycle, drop the blocking arc, re-hang the cut subtree.
    void pivot(int es, int jt) {
        const int et = m_ + jt;

        // Tree paths from both endpoints up to their lowest common ancestor.
        int a = et, b = es;
        path_up_t_.clear();
        path_up_s_.clear();
        while (depth_[a] > depth_[b]) {
            path_up_t_.push_back(a);
            a = parent_[a];
        }
        while (depth_[b] > depth_[a]) {
            path_up_s_.push_back(b);
            b = parent_[b];
        }
        while (a != b) {
            path_up_t_.push_back(a);
            a = parent_[a];
            path_up_s_.push_back(b);
            b = parent_[b];
        }

        // Pushing delta along es -> et: a tree edge crossed (in cycle
        // direction) from its target endpoint loses flow, from its source
        // endpoint it gains. The bipartite cycle alternates, so at least one
        // edge decreases.
        double delta = std::numeric_limits<double>::infinity();
        int leave = -1;  // node whose parent link leaves the basis
        auto consider = [&](int node, bool decreases) {
            if (!decreases) return;
            const double f = flow_up_[node];
            if (leave < 0 || f < delta) {
                delta = f;
                leave = node;
            } else if (f == delta && edge_key(node) < edge_key(leave)) {
                leave = node;
            }
        };
        for (int v : path_up_t_) consider(v, v >= m_);           // crossed child -> parent
        for (int v : path_up_s_) consider(v, parent_[v] >= m_);  // crossed parent -> child
        if (leave < 0) throw Error(ErrorCode::SolverFailure, "pivot cycle without blocker");

        for (int v : path_up_t_) flow_up_[v] += (v >= m_) ? -delta : delta;
        for (int v : path_up_s_) flow_up_[v] += (parent_[v] >= m_) ? -delta : delta;

        // Entering endpoint inside the cut subtree (decided on the old tree).
        const int e_in = in_subtree(es, leave) ? es : et;
        const int e_out = e_in == es ? et : es;

        // Cut the leaving edge.
        detach_child(parent_[leave], leave);
        parent_[leave] = -1;

        // Re-root the cut component at e_in: reverse the chain e_in -> leave.
        chain_.clear();
        for (int v = e_in; v != -1; v = parent_[v]) chain_.push_back(v);
        for (std::size_t k = 0; k + 1 < chain_.size(); ++k)
            detach_child(chain_[k + 1], chain_[k]);
        for (std::size_t k = chain_.size(); k-- > 1;) {
            const int lo = chain_[k - 1], up = chain_[k];
            parent_[up] = lo;
            flow_up_[up] = flow_up_[lo];
            children_[lo].push_back(up);
        }
        parent_[e_in] = e_out;
        flow_up_[e_in] = delta;
        children_[e_out].push_back(e_in);

        // Refresh potentials and depths in the re-hung component.
        scratch_stack_.clear();
        scratch_stack_.push_back(e_in);
        while (!scratch_stack_.empty()) {
            const int v = scratch_stack_.back();
            scratch_stack_.pop_back();
            const int p = parent_[v];
            depth_[v] = depth_[p] + 1;
            const int si = v < m_ ? v : p;
            const int tj = v < m_ ? p - m_ : v - m_;
            pi_[v] = cost(si, tj) - pi_[p];
            for (int w : children_[v]) scratch_stack_.push_back(w);
        }
    }

    bool in_subtree(int v, int root) const {
        while (v != -1) {
            if (v == root) return true;
            v = parent_[v];
        }
        return false;
    }

    void detach_child(int p, int c) {
        if (p < 0) return;
        auto& ch = children_[p];
        for (std::size_t k = 0; k < ch.size(); ++k) {
            if (ch[k] == c) {
                ch[k] = ch.back();
                ch.pop_back();
                return;
            }
        }
    }

    // Lexicographic (source, target) key of a node's parent edge.
    std::int64_t edge_key(int node) const {
        const int p = parent_[node];
        const int s = node < m_ ? node : p;
        const int t = node < m_ ? p : node;
        return static_cast<std::int64_t>(s) * (m_ + n_) + t;
    }

    struct BasisArc {
        int i, j;
        double flow;
    };

    const std::vector<Vec<D>>& xs_;
    const std::vector<Vec<D>>& ys_;
    std::vector<double> s_, d_;
    int m_, n_;
    std::int64_t max_pivots_;

    std::vector<BasisArc> basis_;
    std::vector<int> parent_, depth_;
    std::vector<double> pi_, flow_up_;
    std::vector<std::vector<int>> children_;
    std::vector<int> path_up_t_, path_up_s_, chain_, scratch_stack_;
};

}  // namespace detail

template <int D>
inline TransportPlan<D> solve_exact(const GridDensity<D>& rho0, const GridDensity<D>& rho1,
                                    const ExactSolveOptions& opts = {}) {
    GridDensity<D> src = rho0;
    GridDensity<D> tgt = rho1;
    auto renorm = renormalize_masses(src, tgt, opts.mass_tol);

    std::vector<int> src_cells, tgt_cells;
    std::vector<Vec<D>> xs, ys;
    std::vector<double> supply, demand;
    for (int i = 0; i < src.geom.num_cells(); ++i)
        if (src.cells[i] > 0.0) {
            src_cells.push_back(i);
            xs.push_back(src.geom.center(i));
            supply.push_back(src.cell_mass(i));
        }
    for (int j = 0; j < tgt.geom.num_cells(); ++j)
        if (tgt.cells[j] > 0.0) {
            tgt_cells.push_back(j);
            ys.push_back(tgt.geom.center(j));
            demand.push_back(tgt.cell_mass(j));
        }
    if (src_cells.empty() || tgt_cells.empty())
        throw Error(ErrorCode::MassMismatch, "empty marginal");
    if (static_cast<int>(src_cells.size()) > opts.size_cap ||
        static_cast<int>(tgt_cells.size()) > opts.size_cap)
        throw Error(ErrorCode::ProblemTooLarge, "cell count exceeds exact-solver cap",
                    static_cast<double>(std::max(src_cells.size(), tgt_cells.size())));

    detail::TransportationSimplex<D> simplex(xs, supply, ys, demand, opts.max_pivots);
    simplex.run();

    TransportPlan<D> plan;
    plan.source = std::move(src);
    plan.target = std::move(tgt);
    plan.mass_rescale = renorm.rescale;
    plan.max_dual_violation = simplex.max_dual_violation();
    auto local = simplex.entries();
    plan.cost = plan_cost<D>(local, xs, ys);
    plan.entries.reserve(local.size());
    for (auto& e : local)
        plan.entries.push_back({src_cells[e.src], tgt_cells[e.dst], e.mass});
    return plan;
}

// ---------------------------------------------------------------------------
// Entropic solver
// ---------------------------------------------------------------------------

// Scaling-form solution: pi_ij = mu_i nu_j exp((f_i + g_j - c_ij) / reg) with
// mu, nu the marginals normalized to unit total mass.
template <int D>
struct ScalingSolution {
    GridDensity<D> source;
    GridDensity<D> target;
    std::vector<double> f;  // source potential (0 on massless cells)
    std::vector<double> g;  // target potential
    double reg = 0.0;
    double marginal_defect = 0.0;  // relative L1 defect of the source marginal
    double cost = 0.0;             // transport part only (no entropy)
    double mass_rescale = 1.0;
    int iterations = 0;
};

namespace detail {

template <int D>
inline std::array<std::vector<double>, D> axis_coords(const GridGeom<D>& g) {
    std::array<std::vector<double>, D> out;
    for (int a = 0; a < D; ++a) {
        out[a].resize(g.n[a]);
        for (int i = 0; i < g.n[a]; ++i) out[a][i] = g.origin[a] + (i + 0.5) * g.h;
    }
    return out;
}

// Given t_j (a value per target cell, -inf on massless cells), compute for
// every source cell i the log-sum  out_i = LSE_j [ t_j - c_ij / eps ] using
// the per-axis factorization of c. For D == 2 this runs two passes of cost
// nb1*na2*nb2 and na1*na2*nb1.
template <int D>
struct SeparableLse {
    const std::array<std::vector<double>, D>& xs;
    const std::array<std::vector<double>, D>& ys;
    double inv_eps;

    mutable std::vector<double> inner;  // scratch, D == 2 only

    void apply(const std::vector<double>& t, std::vector<double>& out) const {
        constexpr double neg_inf = -std::numeric_limits<double>::infinity();
        if constexpr (D == 1) {
            const int na = static_cast<int>(xs[0].size());
            const int nb = static_cast<int>(ys[0].size());
            for (int i = 0; i < na; ++i) {
                double m = neg_inf;
                for (int j = 0; j < nb; ++j) {
                    const double dx = xs[0][i] - ys[0][j];
                    const double v = t[j] - dx * dx * inv_eps;
                    if (v > m) m = v;
                }
                double s = 0.0;
                if (m > neg_inf) {
                    for (int j = 0; j < nb; ++j) {
                        const double dx = xs[0][i] - ys[0][j];
                        s += std::exp(t[j] - dx * dx * inv_eps - m);
                    }
                }
                out[i] = s > 0.0 ? m + std::log(s) : neg_inf;
            }
        } else {
            const int na1 = static_cast<int>(xs[0].size());
            const int na2 = static_cast<int>(xs[1].size());
            const int nb1 = static_cast<int>(ys[0].size());
            const int nb2 = static_cast<int>(ys[1].size());
            inner.assign(static_cast<std::size_t>(nb1) * na2, 0.0);
            for (int j1 = 0; j1 < nb1; ++j1) {
                for (int i2 = 0; i2 < na2; ++i2) {
                    double m = neg_inf;
                    for (int j2 = 0; j2 < nb2; ++j2) {
                        const double dy = xs[1][i2] - ys[1][j2];
                        const double v = t[static_cast<std::size_t>(j2) * nb1 + j1] -
                                         dy * dy * inv_eps;
                        if (v > m) m = v;
                    }
                    double s = 0.0;
                    if (m > neg_inf) {
                        for (int j2 = 0; j2 < nb2; ++j2) {
                            const double dy = xs[1][i2] - ys[1][j2];
                            s += std::exp(t[static_cast<std::size_t>(j2) * nb1 + j1] -
                                          dy * dy * inv_eps - m);
                        }
                    }
                    inner[static_cast<std::size_t>(j1) * na2 + i2] =
                        s > 0.0 ? m + std::log(s) : neg_inf;
                }
            }
            for (int i2 = 0; i2 < na2; ++i2) {
                for (int i1 = 0; i1 < na1; ++i1) {
                    double m = neg_inf;
                    for (int j1 = 0; j1 < nb1; ++j1) {
                        const double dx = xs[0][i1] - ys[0][j1];
                        const double v = inner[static_cast<std::size_t>(j1) * na2 + i2] -
                                         dx * dx * inv_eps;
                        if (v > m) m = v;
                    }
                    double s = 0.0;
                    if (m > neg_inf) {
                        for (int j1 = 0; j1 < nb1; ++j1) {
                            const double dx = xs[0][i1] - ys[0][j1];
                            s += std::exp(inner[static_cast<std::size_t>(j1) * na2 + i2] -
                                          dx * dx * inv_eps - m);
                        }
                    }
                    out[static_cast<std::size_t>(i2) * na1 + i1] =
                        s > 0.0 ? m + std::log(s) : neg_inf;
                }
            }
        }
    }
};

}  // namespace detail

// Per-source-row moments of the entropic plan: row mass, E[y], E[|y|^2].
// These come straight from the potentials, so no plan materialization and no
// truncation error beyond the solver's own.
template <int D>
struct EntropicRowMoments {
    std::vector<double> row_mass;
    std::vector<Vec<D>> mean_y;
    std::vector<double> mean_y2;
};

template <int D>
inline EntropicRowMoments<D> entropic_row_moments(const ScalingSolution<D>& sol) {
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();
    const auto& gs = sol.source.geom;
    const auto& gt = sol.target.geom;
    const int ns = gs.num_cells();
    const int nt = gt.num_cells();
    const double eps = sol.reg;
    auto xs = detail::axis_coords(gs);
    auto ys = detail::axis_coords(gt);
    const double total = sol.source.total_mass();

    EntropicRowMoments<D> out;
    out.row_mass.assign(ns, 0.0);
    out.mean_y.assign(ns, vec_zero<D>());
    out.mean_y2.assign(ns, 0.0);

    std::vector<double> t(nt, neg_inf);
    for (int j = 0; j < nt; ++j)
        if (sol.target.cells[j] > 0.0)
            t[j] = std::log(sol.target.cell_mass(j) / total) + sol.g[j] / eps;

    if constexpr (D == 1) {
        for (int i = 0; i < ns; ++i) {
            if (sol.source.cells[i] <= 0.0) continue;
            double m = neg_inf;
            for (int j = 0; j < nt; ++j) {
                if (t[j] == neg_inf) continue;
                const double dx = xs[0][i] - ys[0][j];
                const double v = t[j] - dx * dx / eps;
                if (v > m) m = v;
            }
            double s0 = 0.0, s1 = 0.0, s2 = 0.0;
            for (int j = 0; j < nt; ++j) {
                if (t[j] == neg_inf) continue;
                const double dx = xs[0][i] - ys[0][j];
                const double w = std::exp(t[j] - dx * dx / eps - m);
                s0 += w;
                s1 += w * ys[0][j];
                s2 += w * ys[0][j] * ys[0][j];
            }
            if (s0 <= 0.0) continue;
            out.row_mass[i] = sol.source.cell_mass(i);
            out.mean_y[i][0] = s1 / s0;
            out.mean_y2[i] = s2 / s0;
        }
    } else {
        const int na1 = gs.n[0], na2 = gs.n[1];
        const int nb1 = gt.n[0], nb2 = gt.n[1];
        // Pass 1, per (j1, i2): log partial sum over axis-2 targets plus the
        // conditional first/second moments of y2 (stored as stable ratios).
        std::vector<double> l0(static_cast<std::size_t>(nb1) * na2);
        std::vector<double> r1(static_cast<std::size_t>(nb1) * na2);
        std::vector<double> r2(static_cast<std::size_t>(nb1) * na2);
        for (int j1 = 0; j1 < nb1; ++j1) {
            for (int i2 = 0; i2 < na2; ++i2) {
                double m = neg_inf;
                for (int j2 = 0; j2 < nb2; ++j2) {
                    const double tv = t[static_cast<std::size_t>(j2) * nb1 + j1];
                    if (tv == neg_inf) continue;
                    const double dy = xs[1][i2] - ys[1][j2];
                    const double v = tv - dy * dy / eps;
                    if (v > m) m = v;
                }
                double s0 = 0.0, s1 = 0.0, s2 = 0.0;
                if (m > neg_inf) {
                    for (int j2 = 0; j2 < nb2; ++j2) {
                        const double tv = t[static_cast<std::size_t>(j2) * nb1 + j1];
                        if (tv == neg_inf) continue;
                        const double dy = xs[1][i2] - ys[1][j2];
                        const double w = std::exp(tv - dy * dy / eps - m);
                        s0 += w;
                        s1 += w * ys[1][j2];
                        s2 += w * ys[1][j2] * ys[1][j2];
                    }
                }
                const std::size_t k = static_cast<std::size_t>(j1) * na2 + i2;
                l0[k] = s0 > 0.0 ? m + std::log(s0) : neg_inf;
                r1[k] = s0 > 0.0 ? s1 / s0 : 0.0;
                r2[k] = s0 > 0.0 ? s2 / s0 : 0.0;
            }
        }
        for (int i2 = 0; i2 < na2; ++i2) {
            for (int i1 = 0; i1 < na1; ++i1) {
                const int i = i1 + na1 * i2;
                if (sol.source.cells[i] <= 0.0) continue;
                double m = neg_inf;
                for (int j1 = 0; j1 < nb1; ++j1) {
                    const double lv = l0[static_cast<std::size_t>(j1) * na2 + i2];
                    if (lv == neg_inf) continue;
                    const double dx = xs[0][i1] - ys[0][j1];
                    const double v = lv - dx * dx / eps;
                    if (v > m) m = v;
                }
                double s0 = 0.0, sy1 = 0.0, sy1sq = 0.0, sy2 = 0.0, sy2sq = 0.0;
                for (int j1 = 0; j1 < nb1; ++j1) {
                    const std::size_t k = static_cast<std::size_t>(j1) * na2 + i2;
                    if (l0[k] == neg_inf) continue;
                    const double dx = xs[0][i1] - ys[0][j1];
                    const double w = std::exp(l0[k] - dx * dx / eps - m);
                    s0 += w;
                    sy1 += w * ys[0][j1];
                    sy1sq += w * ys[0][j1] * ys[0][j1];
                    sy2 += w * r1[k];
                    sy2sq += w * r2[k];
                }
                if (s0 <= 0.0) continue;
                out.row_mass[i] = sol.source.cell_mass(i);
                out.mean_y[i][0] = sy1 / s0;
                out.mean_y[i][1] = sy2 / s0;
                out.mean_y2[i] = (sy1sq + sy2sq) / s0;
            }
        }
    }
    return out;
}

template <int D>
inline ScalingSolution<D> solve_entropic_potentials(const GridDensity<D>& rho0,
                                                    const GridDensity<D>& rho1, double reg,
                                                    const EntropicSolveOptions& opts = {}) {
    if (!(reg > 0.0)) throw Error(ErrorCode::ConfigError, "entropic reg must be > 0");
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();
    ScalingSolution<D> sol;
    sol.source = rho0;
    sol.target = rho1;
    auto renorm = renormalize_masses(sol.source, sol.target, opts.mass_tol);
    sol.mass_rescale = renorm.rescale;
    sol.reg = reg;

    const auto& gs = sol.source.geom;
    const auto& gt = sol.target.geom;
    const int ns = gs.num_cells();
    const int nt = gt.num_cells();
    const double total = sol.source.total_mass();

    std::vector<double> log_mu(ns, neg_inf), log_nu(nt, neg_inf);
    for (int i = 0; i < ns; ++i)
        if (sol.source.cells[i] > 0.0) log_mu[i] = std::log(sol.source.cell_mass(i) / total);
    for (int j = 0; j < nt; ++j)
        if (sol.target.cells[j] > 0.0) log_nu[j] = std::log(sol.target.cell_mass(j) / total);

    auto xs = detail::axis_coords(gs);
    auto ys = detail::axis_coords(gt);

    sol.f.assign(ns, 0.0);
    sol.g.assign(nt, 0.0);
    std::vector<double> t_tgt(nt), t_src(ns), lse_src(ns), lse_tgt(nt);

    double diam2 = 0.0;
    for (int a = 0; a < D; ++a) {
        const double lo = std::min(xs[a].front(), ys[a].front());
        const double hi = std::max(xs[a].back(), ys[a].back());
        diam2 += (hi - lo) * (hi - lo);
    }
    // eps-scaling: start coarse, halve down to the requested reg.
    std::vector<double> levels;
    for (double e = std::max(reg, 0.05 * diam2); e > reg * 1.5; e *= 0.5) levels.push_back(e);
    levels.push_back(reg);

    int iter_total = 0;
    double defect = std::numeric_limits<double>::infinity();
    for (std::size_t lv = 0; lv < levels.size(); ++lv) {
        const double eps = levels[lv];
        const bool last = (lv + 1 == levels.size());
        const double level_tol = last ? opts.tol : std::max(opts.tol, 1e-4);
        detail::SeparableLse<D> to_src{xs, ys, 1.0 / eps, {}};
        detail::SeparableLse<D> to_tgt{ys, xs, 1.0 / eps, {}};
        for (;;) {
            // Row log-sums with the current g; this both measures the row
            // defect of the previous state and feeds the f-update.
            for (int j = 0; j < nt; ++j)
                t_tgt[j] = log_nu[j] == neg_inf ? neg_inf : log_nu[j] + sol.g[j] / eps;
            to_src.apply(t_tgt, lse_src);
            double err = 0.0;
            for (int i = 0; i < ns; ++i)
                if (log_mu[i] != neg_inf)
                    err += std::abs(std::exp(lse_src[i] + sol.f[i] / eps) - 1.0) *
                           std::exp(log_mu[i]);
            defect = err;
            for (int i = 0; i < ns; ++i)
                if (log_mu[i] != neg_inf) sol.f[i] = -eps * lse_src[i];
            if (defect <= level_tol && iter_total > 0) break;

            for (int i = 0; i < ns; ++i)
                t_src[i] = log_mu[i] == neg_inf ? neg_inf : log_mu[i] + sol.f[i] / eps;
            to_tgt.apply(t_src, lse_tgt);
            for (int j = 0; j < nt; ++j)
                if (log_nu[j] != neg_inf) sol.g[j] = -eps * lse_tgt[j];

            if (++iter_total > opts.max_iter)
                throw Error(ErrorCode::ConvergenceFailure,
                            "entropic solver exceeded max_iter", defect);
        }
    }
    sol.marginal_defect = defect;
    sol.iterations = iter_total;

    // Transport cost from row moments: E[c] = |x|^2 - 2 x.E[y] + E[|y|^2].
    auto mom = entropic_row_moments(sol);
    std::vector<double> terms;
    terms.reserve(static_cast<std::size_t>(ns));
    for (int i = 0; i < ns; ++i) {
        if (mom.row_mass[i] <= 0.0) continue;
        const Vec<D> x = gs.center(i);
        terms.push_back(mom.row_mass[i] *
                        (norm2<D>(x) - 2.0 * dot<D>(x, mom.mean_y[i]) + mom.mean_y2[i]));
    }
    sol.cost = pairwise_sum(terms);
    return sol;
}

// Sparsify the entropic plan: keep, per source row, entries above a relative
// floor inside the Gaussian window, then rescale rows to exact cell masses.
template <int D>
inline TransportPlan<D> entropic_plan(const ScalingSolution<D>& sol, double keep_rel = 1e-13) {
    const auto& gs = sol.source.geom;
    const auto& gt = sol.target.geom;
    const double eps = sol.reg;
    const double total = sol.source.total_mass();
    const double cut = std::sqrt(eps * std::log(1.0 / keep_rel));  // |x - y| window

    TransportPlan<D> plan;
    plan.source = sol.source;
    plan.target = sol.target;
    plan.mass_rescale = sol.mass_rescale;
    plan.marginal_defect = sol.marginal_defect;
    plan.reg = eps;

    for (int i = 0; i < gs.num_cells(); ++i) {
        if (sol.source.cells[i] <= 0.0) continue;
        const Vec<D> x = gs.center(i);
        std::array<int, D> lo{}, hi{};
        for (int a = 0; a < D; ++a) {
            lo[a] = std::max(0, static_cast<int>(std::floor((x[a] - cut - gt.origin[a]) / gt.h - 0.5)));
            hi[a] = std::min(gt.n[a] - 1, static_cast<int>(std::ceil((x[a] + cut - gt.origin[a]) / gt.h - 0.5)));
        }
        std::vector<std::pair<int, double>> row;
        double row_sum = 0.0;
        auto visit = [&](int j) {
            if (sol.target.cells[j] <= 0.0) return;
            const Vec<D> y = gt.center(j);
            // Relative in-row weight; rows are rescaled to exact mass below.
            const double w = std::exp(std::log(sol.target.cell_mass(j) / total) +
                                      (sol.f[i] + sol.g[j] - norm2<D>(x - y)) / eps);
            if (w > 0.0) {
                row.push_back({j, w});
                row_sum += w;
            }
        };
        if constexpr (D == 1) {
            for (int j = lo[0]; j <= hi[0]; ++j) visit(j);
        } else {
            for (int j2 = lo[1]; j2 <= hi[1]; ++j2)
                for (int j1 = lo[0]; j1 <= hi[0]; ++j1) visit(j1 + gt.n[0] * j2);
        }
        if (row.empty() || row_sum <= 0.0) continue;
        const double scale = sol.source.cell_mass(i) / row_sum;
        const double floor = keep_rel * row_sum;
        for (auto& [j, w] : row)
            if (w >= floor) plan.entries.push_back({i, j, w * scale});
    }
    std::sort(plan.entries.begin(), plan.entries.end(), [](const auto& l, const auto& r) {
        return l.src != r.src ? l.src < r.src : l.dst < r.dst;
    });
    std::vector<double> terms;
    terms.reserve(plan.entries.size());
    for (const auto& e : plan.entries)
        terms.push_back(e.mass * norm2<D>(gs.center(e.src) - gt.center(e.dst)));
    plan.cost = pairwise_sum(terms);
    return plan;
}

template <int D>
inline TransportPlan<D> solve_entropic(const GridDensity<D>& rho0, const GridDensity<D>& rho1,
                                       double reg, const EntropicSolveOptions& opts = {}) {
    auto sol = solve_entropic_potentials(rho0, rho1, reg, opts);
    return entropic_plan(sol, opts.plan_keep_rel);
}

// ---------------------------------------------------------------------------
// Map extraction (barycentric projection)
// ---------------------------------------------------------------------------

template <int D>
inline TransportMap<D> extract_map(const TransportPlan<D>& plan) {
    const auto& gs = plan.source.geom;
    const int ns = gs.num_cells();
    TransportMap<D> map;
    map.source = plan.source;
    map.target_point.assign(ns, vec_zero<D>());
    map.defined.assign(ns, 0);
    map.spread.assign(ns, 0.0);

    std::vector<double> mass(ns, 0.0);
    std::vector<Vec<D>> first(ns, vec_zero<D>());
    std::vector<int> count(ns, 0), only_dst(ns, -1);
    for (const auto& e : plan.entries) {
        mass[e.src] += e.mass;
        first[e.src] = first[e.src] + e.mass * plan.target.geom.center(e.dst);
        count[e.src] += 1;
        only_dst[e.src] = e.dst;
    }
    for (int i = 0; i < ns; ++i) {
        if (mass[i] > 0.0) {
            // Single-target rows reproduce the bijection exactly.
            map.target_point[i] = count[i] == 1 ? plan.target.geom.center(only_dst[i])
                                                : (1.0 / mass[i]) * first[i];
            map.defined[i] = 1;
        } else {
            map.skipped_cells.push_back(i);
        }
    }
    // Second pass for the spread: centered form, exact zero on deterministic rows.
    for (const auto& e : plan.entries)
        map.spread[e.src] += e.mass / mass[e.src] *
                             norm2<D>(plan.target.geom.center(e.dst) - map.target_point[e.src]);
    return map;
}

// Direct map extraction from an entropic solution, no plan materialization.
template <int D>
inline TransportMap<D> extract_map(const ScalingSolution<D>& sol) {
    auto mom = entropic_row_moments(sol);
    const int ns = sol.source.geom.num_cells();
    TransportMap<D> map;
    map.source = sol.source;
    map.target_point.assign(ns, vec_zero<D>());
    map.defined.assign(ns, 0);
    map.spread.assign(ns, 0.0);
    for (int i = 0; i < ns; ++i) {
        if (mom.row_mass[i] > 0.0) {
            map.target_point[i] = mom.mean_y[i];
            map.defined[i] = 1;
            map.spread[i] = std::max(0.0, mom.mean_y2[i] - norm2<D>(mom.mean_y[i]));
        } else {
            map.skipped_cells.push_back(i);
        }
    }
    return map;
}

// ---------------------------------------------------------------------------
// 1-D monotone rearrangement oracle: T = F1^{-1} o F0 with piecewise-linear
// CDFs of the cell densities. Independent of the LP/entropic solvers.
// ---------------------------------------------------------------------------

inline TransportMap<1> monotone_1d_oracle(const GridDensity<1>& rho0,
                                          const GridDensity<1>& rho1,
                                          double mass_tol = kMassTolExact) {
    GridDensity<1> src = rho0;
    GridDensity<1> tgt = rho1;
    renormalize_masses(src, tgt, mass_tol);

    const int n0 = src.geom.num_cells();
    const int n1 = tgt.geom.num_cells();
    std::vector<double> cum1(static_cast<std::size_t>(n1) + 1, 0.0);
    for (int j = 0; j < n1; ++j) cum1[j + 1] = cum1[j] + tgt.cell_mass(j);

    auto invert_cdf = [&](double q) -> double {
        int lo = 0, hi = n1 - 1;
        while (lo < hi) {
            const int mid = (lo + hi) / 2;
            if (cum1[mid + 1] < q) lo = mid + 1;
            else hi = mid;
        }
        while (lo < n1 - 1 && tgt.cell_mass(lo) <= 0.0) ++lo;
        const double m = tgt.cell_mass(lo);
        const double left = tgt.geom.origin[0] + lo * tgt.geom.h;
        if (m <= 0.0) return left;
        const double t = std::clamp((q - cum1[lo]) / m, 0.0, 1.0);
        return left + t * tgt.geom.h;
    };

    TransportMap<1> map;
    map.source = src;
    map.target_point.assign(n0, vec_zero<1>());
    map.defined.assign(n0, 0);
    map.spread.assign(n0, 0.0);
    double cum0 = 0.0;
    for (int i = 0; i < n0; ++i) {
        const double m = src.cell_mass(i);
        if (m > 0.0) {
            map.target_point[i][0] = invert_cdf(cum0 + 0.5 * m);
            map.defined[i] = 1;
        } else {
            map.skipped_cells.push_back(i);
        }
        cum0 += m;
    }
    return map;
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

// Cyclical monotonicity spot-check over sampled pairs of positive-mass cells:
// (T(x) - T(y)) . (x - y) >= -tol. Returns the worst sampled value.
template <int D>
inline double monotonicity_spot_check(const TransportMap<D>& map, int n_pairs,
                                      std::uint64_t seed) {
    std::vector<int> live;
    for (int i = 0; i < map.source.geom.num_cells(); ++i)
        if (map.defined[i] && map.source.cells[i] > 0.0) live.push_back(i);
    if (live.size() < 2) return 0.0;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, live.size() - 1);
    double worst = std::numeric_limits<double>::infinity();
    for (int k = 0; k < n_pairs; ++k) {
        const int a = live[pick(rng)], b = live[pick(rng)];
        if (a == b) continue;
        const Vec<D> dx = map.source.geom.center(a) - map.source.geom.center(b);
        const Vec<D> dT = map.target_point[a] - map.target_point[b];
        worst = std::min(worst, dot<D>(dT, dx));
    }
    return std::isfinite(worst) ? worst : 0.0;
}

template <int D>
inline double default_monotone_tol(const GridGeom<D>& g) {
    const Vec<D> ext = g.max_corner() - g.min_corner();
    return 1e-6 * norm2<D>(ext);
}

// Displacement field of a map as per-component grid scalars with undefined
// cells filled from the nearest defined cell (support-boundary fallback for
// the bilinear resampling done by the tilt machinery).
template <int D>
inline std::array<GridScalar<D>, D> displacement_fields(const TransportMap<D>& map) {
    const auto& g = map.source.geom;
    std::array<GridScalar<D>, D> out;
    for (int a = 0; a < D; ++a) out[a] = GridScalar<D>(g, 0.0);
    const int nc = g.num_cells();
    for (int i = 0; i < nc; ++i) {
        if (!map.defined[i]) continue;
        const Vec<D> disp = map.target_point[i] - g.center(i);
        for (int a = 0; a < D; ++a) out[a].values[i] = disp[a];
    }
    std::vector<int> frontier;
    std::vector<std::uint8_t> filled(map.defined.begin(), map.defined.end());
    for (int i = 0; i < nc; ++i)
        if (filled[i]) frontier.push_back(i);
    while (!frontier.empty()) {
        std::vector<int> next;
        for (int idx : frontier) {
            const auto c = g.coords(idx);
            for (int a = 0; a < D; ++a) {
                for (int s : {-1, 1}) {
                    auto cc = c;
                    cc[a] += s;
                    if (cc[a] < 0 || cc[a] >= g.n[a]) continue;
                    const int nb = g.index(cc);
                    if (filled[nb]) continue;
                    filled[nb] = 1;
                    for (int ax = 0; ax < D; ++ax) out[ax].values[nb] = out[ax].values[idx];
                    next.push_back(nb);
                }
            }
        }
        frontier = std::move(next);
    }
    return out;
}

}  // namespace otlab
