#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "otlab/transport.hpp"

using namespace otlab;

namespace {

GridGeom<2> square_grid(int n, double half_width) {
    GridGeom<2> g;
    g.n = {n, n};
    g.h = 2.0 * half_width / n;
    g.origin = {-half_width, -half_width};
    return g;
}

GridGeom<1> line_grid(int n, double lo, double hi) {
    GridGeom<1> g;
    g.n = {n};
    g.h = (hi - lo) / n;
    g.origin = {lo};
    return g;
}

GridDensity<2> dirac_cell(Vec<2> at, double value) {
    GridGeom<2> g;
    g.n = {1, 1};
    g.h = 1.0;
    g.origin = {at[0] - 0.5, at[1] - 0.5};
    return GridDensity<2>(g, value);
}

// Equal-mass support on `k` random cells of an n x n grid.
GridDensity<2> random_support(int n, int k, std::mt19937_64& rng) {
    auto g = square_grid(n, 1.0);
    std::vector<int> cells(static_cast<std::size_t>(g.num_cells()));
    std::iota(cells.begin(), cells.end(), 0);
    std::shuffle(cells.begin(), cells.end(), rng);
    GridDensity<2> rho(g, 0.0);
    for (int i = 0; i < k; ++i) rho.cells[cells[i]] = 1.0;
    return rho;
}

// Brute force over assignments on equal-mass unit cells: the optimal plan is
// a permutation, so exhaustive enumeration is the exact LP optimum. Terms are
// summed in source order to match the canonical plan-cost order.
double brute_force_assignment(const std::vector<Vec<2>>& xs, const std::vector<Vec<2>>& ys,
                              double mass) {
    const int n = static_cast<int>(xs.size());
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        std::vector<double> terms(n);
        for (int i = 0; i < n; ++i) terms[i] = mass * norm2<2>(xs[i] - ys[perm[i]]);
        best = std::min(best, pairwise_sum(terms));
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

std::vector<Vec<2>> positive_cell_centers(const GridDensity<2>& rho) {
    std::vector<Vec<2>> out;
    for (int i = 0; i < rho.geom.num_cells(); ++i)
        if (rho.cells[i] > 0.0) out.push_back(rho.geom.center(i));
    return out;
}

}  // namespace

TEST_CASE("two-Dirac problem: unique plan, cost 1") {
    auto rho0 = dirac_cell({0.0, 0.0}, 1.0);
    auto rho1 = dirac_cell({1.0, 0.0}, 1.0);
    auto plan = solve_exact(rho0, rho1);
    REQUIRE(plan.entries.size() == 1);
    CHECK(plan.entries[0].mass == Catch::Approx(1.0));
    CHECK(plan.cost == Catch::Approx(1.0));

    SECTION("entropic cost is the same for any reg (only one feasible plan)") {
        for (double reg : {0.5, 0.1, 0.01}) {
            auto ent = solve_entropic(rho0, rho1, reg);
            CHECK(ent.cost == Catch::Approx(1.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("translation instance: plan is the cell bijection, map is x+v") {
    auto g = square_grid(16, 0.75);
    GridDensity<2> rho0(g, 1.0);
    const Vec<2> v{0.1, -0.05};
    auto g1 = g;
    g1.origin = g.origin + v;
    GridDensity<2> rho1(g1, 1.0);

    auto plan = solve_exact(rho0, rho1);
    const double mass = rho0.total_mass();
    CHECK(plan.cost == Catch::Approx(mass * norm2<2>(v)).epsilon(1e-13));
    for (const auto& e : plan.entries) CHECK(e.src == e.dst);

    auto map = extract_map(plan);
    CHECK(map.max_spread() == 0.0);
    for (int i = 0; i < g.num_cells(); ++i) {
        REQUIRE(map.defined[i]);
        CHECK(norm<2>(map.displacement(i) - v) < 1e-13);
    }
}

TEST_CASE("random equal-mass instances match the brute-force assignment optimum") {
    std::mt19937_64 rng(20240811u);
    for (int rep = 0; rep < 10; ++rep) {
        auto rho0 = random_support(4, 4, rng);
        auto rho1 = random_support(4, 4, rng);
        auto plan = solve_exact(rho0, rho1);
        const double cell_mass = rho0.geom.cell_volume();
        const double oracle =
            brute_force_assignment(positive_cell_centers(rho0), positive_cell_centers(rho1),
                                   cell_mass);
        CHECK(plan.cost == oracle);  // exact LP vertex, canonical summation
        CHECK(plan.max_dual_violation < 1e-12);
    }
    SECTION("also on 6-point supports") {
        for (int rep = 0; rep < 3; ++rep) {
            auto rho0 = random_support(6, 6, rng);
            auto rho1 = random_support(6, 6, rng);
            auto plan = solve_exact(rho0, rho1);
            const double oracle = brute_force_assignment(
                positive_cell_centers(rho0), positive_cell_centers(rho1),
                rho0.geom.cell_volume());
            CHECK(plan.cost == oracle);
        }
    }
}

TEST_CASE("exact cost is symmetric under swapping the marginals") {
    auto g = square_grid(8, 1.0);
    auto rho0 = sample_density<2>(g, [](const Vec<2>& p) {
        return 1.0 + 0.4 * std::sin(2.0 * p[0]) * std::cos(p[1]);
    });
    auto rho1 = sample_density<2>(g, [](const Vec<2>& p) {
        return 1.0 + 0.4 * std::cos(2.0 * p[0]) * std::sin(p[1]);
    });
    // Equalize masses first so both solves see the same pair.
    renormalize_masses(rho0, rho1, 1.0);
    auto a = solve_exact(rho0, rho1);
    auto b = solve_exact(rho1, rho0);
    CHECK(a.cost == Catch::Approx(b.cost).epsilon(1e-12));
}

TEST_CASE("plan pushforward matches the target marginal on test functions") {
    auto g = square_grid(8, 1.0);
    auto rho0 = sample_density<2>(g, [](const Vec<2>& p) {
        return 1.0 + 0.3 * std::sin(p[0] + p[1]);
    });
    auto rho1 = sample_density<2>(g, [](const Vec<2>& p) {
        return 1.0 + 0.3 * std::cos(p[0] - p[1]);
    });
    renormalize_masses(rho0, rho1, 1.0);
    auto plan = solve_exact(rho0, rho1);

    auto phi = [](const Vec<2>& y) { return std::sin(3.0 * y[0]) + y[1] * y[1]; };
    double lhs = 0.0;
    for (const auto& e : plan.entries) lhs += e.mass * phi(plan.target.geom.center(e.dst));
    double rhs = 0.0;
    for (int j = 0; j < g.num_cells(); ++j)
        rhs += plan.target.cell_mass(j) * phi(plan.target.geom.center(j));
    CHECK(lhs == Catch::Approx(rhs).margin(kMassTolExact * 10.0));
}

TEST_CASE("size cap and mass mismatch raise typed errors") {
    auto g = square_grid(8, 1.0);
    GridDensity<2> rho0(g, 1.0);
    GridDensity<2> rho1(g, 1.0);
    ExactSolveOptions opts;
    opts.size_cap = 16;
    CHECK_THROWS_MATCHES(solve_exact(rho0, rho1, opts), Error, Catch::Matchers::Predicate<Error>(
        [](const Error& e) { return e.code() == ErrorCode::ProblemTooLarge; }));

    GridDensity<2> heavy(g, 2.0);
    CHECK_THROWS_MATCHES(solve_exact(rho0, heavy), Error, Catch::Matchers::Predicate<Error>(
        [](const Error& e) { return e.code() == ErrorCode::MassMismatch; }));
}

TEST_CASE("entropic solver tracks the exact cost on 8x8 random marginals") {
    std::mt19937_64 rng(7u);
    auto g = square_grid(8, 1.0);
    std::uniform_real_distribution<double> u(0.5, 1.5);
    GridDensity<2> rho0(g, 0.0), rho1(g, 0.0);
    for (int i = 0; i < g.num_cells(); ++i) {
        rho0.cells[i] = u(rng);
        rho1.cells[i] = u(rng);
    }
    renormalize_masses(rho0, rho1, 1.0);

    auto exact = solve_exact(rho0, rho1);
    const double diam2 = 8.0;
    auto ent = solve_entropic(rho0, rho1, 1e-3 * diam2);
    CHECK(ent.cost == Catch::Approx(exact.cost).epsilon(0.02));
    CHECK(exact.cost <= ent.cost + 1e-9);
    CHECK(ent.marginal_defect < kMassTolEntropic * 10.0);

    SECTION("plan marginals hold within tolerance") {
        std::vector<double> row(g.num_cells(), 0.0), col(g.num_cells(), 0.0);
        for (const auto& e : ent.entries) {
            row[e.src] += e.mass;
            col[e.dst] += e.mass;
            CHECK(e.mass >= 0.0);
        }
        const double total = rho0.total_mass();
        double row_err = 0.0, col_err = 0.0;
        for (int i = 0; i < g.num_cells(); ++i) {
            row_err += std::abs(row[i] - ent.source.cell_mass(i));
            col_err += std::abs(col[i] - ent.target.cell_mass(i));
        }
        CHECK(row_err / total < 1e-12);  // rows rescaled exactly
        CHECK(col_err / total < 10.0 * kMassTolEntropic);
    }
}

TEST_CASE("entropic cost vanishes with reg for identical marginals") {
    auto g = square_grid(12, 1.0);
    auto rho = sample_density<2>(g, [](const Vec<2>& p) {
        return 1.0 + 0.2 * std::sin(2.0 * p[0]) * std::sin(p[1]);
    });
    double prev = std::numeric_limits<double>::infinity();
    for (double reg : {8e-2, 8e-3, 8e-4}) {
        auto ent = solve_entropic(rho, rho, reg);
        CHECK(ent.cost < prev);
        prev = ent.cost;
    }
    CHECK(prev < 5e-3);
}

TEST_CASE("extract_map on a bijective plan reproduces the bijection") {
    auto rho0 = dirac_cell({0.0, 0.0}, 1.0);
    auto rho1 = dirac_cell({0.3, 0.4}, 1.0);
    auto map = extract_map(solve_exact(rho0, rho1));
    REQUIRE(map.defined[0]);
    CHECK(map.target_point[0][0] == Catch::Approx(0.3));
    CHECK(map.target_point[0][1] == Catch::Approx(0.4));
    CHECK(map.spread[0] == 0.0);
}

TEST_CASE("monotone 1-D oracle basics") {
    auto g = line_grid(64, 0.0, 1.0);
    auto rho = sample_density<1>(g, [](const Vec<1>& p) { return 1.0 + 0.5 * p[0]; });

    SECTION("identity for equal marginals") {
        auto map = monotone_1d_oracle(rho, rho);
        for (int i = 0; i < g.num_cells(); ++i)
            CHECK(std::abs(map.displacement(i)[0]) < 1e-12);
    }

    SECTION("translation") {
        auto g1 = g;
        g1.origin[0] += 0.25;
        GridDensity<1> rho1(g1, rho.cells);
        auto map = monotone_1d_oracle(rho, rho1);
        for (int i = 0; i < g.num_cells(); ++i)
            CHECK(map.displacement(i)[0] == Catch::Approx(0.25).margin(1e-10));
    }

    SECTION("uniform [0,1] to uniform [0,2] is x -> 2x") {
        GridDensity<1> rho0(g, 1.0);
        GridDensity<1> rho1(line_grid(64, 0.0, 2.0), 0.5);
        auto map = monotone_1d_oracle(rho0, rho1);
        for (int i = 0; i < g.num_cells(); ++i) {
            const double x = g.center(i)[0];
            CHECK(map.target_point[i][0] == Catch::Approx(2.0 * x).margin(1e-10));
        }
    }
}

TEST_CASE("1-D exact solve agrees with the monotone oracle within h") {
    auto g = line_grid(64, 0.0, 1.0);
    auto rho0 = sample_density<1>(g, [](const Vec<1>& p) {
        return 1.0 + 0.3 * std::sin(6.28318530717958648 * p[0]);
    });
    auto rho1 = sample_density<1>(g, [](const Vec<1>& p) {
        return 1.0 + 0.3 * std::cos(6.28318530717958648 * p[0]);
    });
    renormalize_masses(rho0, rho1, 1.0);
    auto map = extract_map(solve_exact(rho0, rho1));
    auto oracle = monotone_1d_oracle(rho0, rho1);
    for (int i = 0; i < g.num_cells(); ++i) {
        if (!map.defined[i] || rho0.cells[i] <= 0.0) continue;
        CHECK(std::abs(map.target_point[i][0] - oracle.target_point[i][0]) <= g.h);
    }
}

TEST_CASE("1-D entropic map approaches the CDF oracle as reg shrinks") {
    auto g = line_grid(64, 0.0, 1.0);
    auto rho0 = sample_density<1>(g, [](const Vec<1>& p) {
        return 1.0 + 0.4 * std::sin(3.0 * p[0]);
    });
    GridDensity<1> rho1(g, 1.0);
    renormalize_masses(rho0, rho1, 1.0);
    auto oracle = monotone_1d_oracle(rho0, rho1);

    double prev = std::numeric_limits<double>::infinity();
    for (double reg : {1e-2, 1e-3, 1e-4}) {
        auto map = extract_map(solve_entropic_potentials(rho0, rho1, reg));
        double worst = 0.0;
        for (int i = 0; i < g.num_cells(); ++i)
            worst = std::max(worst, std::abs(map.target_point[i][0] - oracle.target_point[i][0]));
        // O(sqrt(reg) * scale) with scale = domain width 1, plus a cell.
        CHECK(worst <= 3.0 * std::sqrt(reg) + 2.0 * g.h);
        CHECK(worst <= prev + 1e-12);
        prev = worst;
    }
}

TEST_CASE("cyclical monotonicity spot-check on an exact 2-D map") {
    auto g = square_grid(16, 1.0);
    auto rho0 = sample_density<2>(g, [](const Vec<2>& p) {
        return 1.0 + 0.2 * std::sin(2.0 * p[0]) * std::sin(2.0 * p[1]);
    });
    GridDensity<2> rho1(g, 1.0);
    renormalize_masses(rho0, rho1, 1.0);
    auto map = extract_map(solve_exact(rho0, rho1));
    const double worst = monotonicity_spot_check(map, 2000, 99u);
    CHECK(worst >= -default_monotone_tol(g));
}
