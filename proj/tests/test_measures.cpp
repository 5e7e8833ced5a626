#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "otlab/grid.hpp"
#include "otlab/io.hpp"

using namespace otlab;

namespace {

GridGeom<2> square_grid(int n, double half_width) {
    GridGeom<2> g;
    g.n = {n, n};
    g.h = 2.0 * half_width / n;
    g.origin = {-half_width, -half_width};
    return g;
}

}  // namespace

TEST_CASE("restrict keeps ball mass of a uniform density") {
    auto g = square_grid(64, 1.0);
    GridDensity<2> rho(g, 1.0);
    Ball<2> b({0.0, 0.0}, 1.0);
    auto r = restrict_to_ball(rho, b);
    // |B_1| = pi, cell-center membership gives an O(h) perimeter error.
    CHECK(r.total_mass() == Catch::Approx(M_PI).margin(4.0 * g.h));
    // Geometry unchanged, zero outside.
    CHECK(r.geom.same_geometry(g));
    CHECK(r.cells[0] == 0.0);
}

TEST_CASE("restrict on a disjoint ball raises EmptyRestriction") {
    auto g = square_grid(16, 1.0);
    GridDensity<2> rho(g, 1.0);
    Ball<2> b({10.0, 10.0}, 0.5);
    CHECK_THROWS_MATCHES(restrict_to_ball(rho, b), Error, Catch::Matchers::Predicate<Error>(
        [](const Error& e) { return e.code() == ErrorCode::EmptyRestriction; }));
}

TEST_CASE("restrict checkerboard mass matches the direct summation oracle") {
    auto g = square_grid(64, 1.0);
    std::vector<double> cells(static_cast<std::size_t>(g.num_cells()));
    for (int i = 0; i < g.num_cells(); ++i) {
        auto c = g.coords(i);
        cells[i] = ((c[0] + c[1]) % 2 == 0) ? 0.0 : 2.0;
    }
    GridDensity<2> rho(g, cells);
    Ball<2> b({0.0, 0.0}, 0.5);

    // Independent oracle: plain loop over all cells, center-in-ball test.
    double oracle = 0.0;
    for (int i = 0; i < g.num_cells(); ++i)
        if (b.contains(g.center(i))) oracle += cells[i] * g.cell_volume();

    auto r = restrict_to_ball(rho, b);
    CHECK(r.total_mass() == Catch::Approx(oracle).epsilon(1e-12));
    // Checkerboard averages to 1, so the mass is ~|B_1/2|.
    CHECK(r.total_mass() == Catch::Approx(ball_volume(b)).margin(6.0 * g.h * b.radius));
}

TEST_CASE("restrict is idempotent") {
    auto g = square_grid(32, 1.0);
    GridDensity<2> rho(g, 1.0);
    Ball<2> b({0.1, -0.2}, 0.6);
    auto once = restrict_to_ball(rho, b);
    auto twice = restrict_to_ball(once, b);
    CHECK(twice.cells == once.cells);
}

TEST_CASE("data_term basics") {
    auto g = square_grid(32, 1.0);
    Ball<2> b({0.0, 0.0}, 0.8);

    GridDensity<2> ones(g, 1.0);
    CHECK(data_term(ones, ones, b) == 0.0);

    const double delta = 0.07;
    GridDensity<2> bumped(g, 1.0 + delta);
    CHECK(data_term(bumped, ones, b) == Catch::Approx(delta * delta).epsilon(1e-12));

    SECTION("swapping the marginals does not change it") {
        CHECK(data_term(bumped, ones, b) == data_term(ones, bumped, b));
    }

    SECTION("cells outside the ball are irrelevant") {
        auto relabeled = bumped;
        for (int i = 0; i < g.num_cells(); ++i)
            if (!b.contains(g.center(i))) relabeled.cells[i] = 17.0;
        CHECK(data_term(relabeled, ones, b) == data_term(bumped, ones, b));
    }
}

TEST_CASE("data_term against a direct scan oracle on a sin pattern") {
    auto g = square_grid(48, 1.0);
    auto rho0 = sample_density<2>(g, [](const Vec<2>& p) {
        return 1.0 + 0.1 * std::sin(3.0 * p[0]) * std::sin(2.0 * p[1]);
    });
    GridDensity<2> rho1(g, 1.0);
    Ball<2> b({0.15, -0.1}, 0.7);

    double sup = 0.0;
    for (int i = 0; i < g.num_cells(); ++i)
        if (b.contains(g.center(i))) sup = std::max(sup, std::abs(1.0 - rho0.cells[i]));

    CHECK(data_term(rho0, rho1, b) == Catch::Approx(sup * sup).epsilon(1e-14));
}

TEST_CASE("mean_over_ball") {
    auto g = square_grid(64, 1.0);
    Ball<2> b({0.0, 0.0}, 1.0);

    SECTION("constant field is exact") {
        GridScalar<2> f(g, 3.25);
        CHECK(mean_over_ball(f, b) == 3.25);
    }

    SECTION("odd field averages to ~0") {
        auto f = sample_on_grid<2>(g, [](const Vec<2>& p) { return p[0]; });
        CHECK(std::abs(mean_over_ball(f, b)) < g.h);
    }

    SECTION("|x|^2 ball moment: R^2 d/(d+2)") {
        auto f = sample_on_grid<2>(g, [](const Vec<2>& p) { return norm2<2>(p); });
        CHECK(mean_over_ball(f, b) == Catch::Approx(0.5).margin(3.0 * g.h));
    }

    SECTION("linearity to machine precision") {
        auto f = sample_on_grid<2>(g, [](const Vec<2>& p) { return std::cos(p[0] + 2 * p[1]); });
        auto h2 = sample_on_grid<2>(g, [](const Vec<2>& p) { return p[1] * p[1]; });
        GridScalar<2> combo(g, 0.0);
        const double alpha = 0.7, beta = -2.3;
        for (int i = 0; i < g.num_cells(); ++i)
            combo.values[i] = alpha * f.values[i] + beta * h2.values[i];
        const double lhs = mean_over_ball(combo, b);
        const double rhs = alpha * mean_over_ball(f, b) + beta * mean_over_ball(h2, b);
        CHECK(lhs == Catch::Approx(rhs).margin(1e-14));
    }
}

TEST_CASE("mass renormalization rescales the target and logs the factor") {
    auto g = square_grid(16, 1.0);
    GridDensity<2> a(g, 1.0);
    GridDensity<2> b(g, 1.0 + 3e-9);
    auto r = renormalize_masses(a, b, kMassTolExact);
    CHECK(r.relative_defect < kMassTolExact);
    CHECK(b.total_mass() == Catch::Approx(a.total_mass()).epsilon(1e-15));

    GridDensity<2> far(g, 1.5);
    CHECK_THROWS_AS(renormalize_masses(a, far, kMassTolExact), Error);
}

TEST_CASE("density CSV round-trip") {
    auto g = square_grid(9, 1.25);
    auto rho = sample_density<2>(g, [](const Vec<2>& p) {
        return 1.0 + 0.3 * std::sin(p[0]) * std::cos(p[1]);
    });
    const std::string path = "measures_roundtrip.csv";
    write_density_csv(path, rho);
    auto back = read_density_csv<2>(path);
    CHECK(back.geom.same_geometry(rho.geom));
    CHECK(back.cells == rho.cells);  // 17 digits => bit-exact
    std::remove(path.c_str());
}

TEST_CASE("PGM ingestion with affine rescale") {
    const std::string path = "measures_test.pgm";
    {
        std::ofstream out(path, std::ios::binary);
        out << "P5\n# test fixture\n4 2\n255\n";
        const unsigned char data[8] = {0, 51, 102, 153, 204, 255, 128, 64};
        out.write(reinterpret_cast<const char*>(data), 8);
    }
    auto rho = read_density_pgm(path, 0.5, 1.5, {0.0, 0.0}, 0.25);
    CHECK(rho.geom.n[0] == 4);
    CHECK(rho.geom.n[1] == 2);
    // Bottom-left grid cell is the last PGM row's first sample (204).
    CHECK(rho.cells[0] == Catch::Approx(0.5 + 204.0 / 255.0).epsilon(1e-12));
    // Value 255 maps to the top of the range.
    CHECK(rho.cells[1] == Catch::Approx(1.5).epsilon(1e-12));
    std::remove(path.c_str());
}
