#include <doctest.h>

#include <cmath>
#include <set>

#include "parcelse/aggregate.hpp"
#include "parcelse/error.hpp"
#include "parcelse/synth.hpp"
#include "test_support.hpp"

using namespace parcelse;

namespace {

const VariogramModel ref_model{VariogramFamily::exponential, 199.0, 1253.0, 1025.0};

FieldSpec spec_for(const VariogramModel& m, std::int32_t side, std::uint64_t seed) {
    FieldSpec s;
    s.geometry = {0.0, 0.0, 30.0, side, side};
    s.model = m;
    s.seed = seed;
    return s;
}

}  // namespace

TEST_CASE("nugget-only field is white noise") {
    const VariogramModel nug{VariogramFamily::exponential, 100.0, 100.0, 300.0};
    const SimulatedField f = simulate_field(spec_for(nug, 100, 1));
    CHECK(f.method == SimMethod::iid);
    std::vector<ResidualPoint> pts;
    for (std::int32_t r = 0; r < 100; ++r) {
        for (std::int32_t c = 0; c < 100; ++c) {
            pts.push_back({30.0 * c, 30.0 * r, f.raster[{r, c}]});
        }
    }
    for (const auto& b : empirical_variogram(pts, 30.0, 600.0).bins) {
        CHECK(std::abs(b.semivariance - 100.0) < 10.0);
    }
}

TEST_CASE("zero sill gives a zero field plus the mean surface") {
    FieldSpec s = spec_for({VariogramFamily::spherical, 0.0, 0.0, 300.0}, 20, 2);
    s.mean = 50.0;
    s.gradient_x = 0.1;
    const SimulatedField f = simulate_field(s);
    CHECK(f.method == SimMethod::none);
    const double x0 = 300.0;
    for (std::int32_t c = 0; c < 20; ++c) {
        const double x = 30.0 * c + 15.0;
        CHECK(f.raster[{5, c}] == doctest::Approx(50.0 + 0.1 * (x - x0)).epsilon(1e-12));
    }
}

TEST_CASE("pixel variance across realizations is the sill") {
    const FieldSimulator sim(GridGeometry{0.0, 0.0, 30.0, 32, 32}, ref_model);
    CHECK(sim.method() == SimMethod::circulant);
    const std::size_t n = 3000;
    const std::size_t probe[] = {0, 500, 1023};
    for (std::size_t p : probe) {
        double s = 0.0;
        double s2 = 0.0;
        double s4 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double v = sim.realization(3, i)[p];
            s += v;
            s2 += v * v;
        }
        const double mean = s / n;
        const double var = (s2 - n * mean * mean) / (n - 1);
        for (std::size_t i = 0; i < n; ++i) {
            const double d = sim.realization(3, i)[p] - mean;
            s4 += d * d * d * d;
        }
        const double m4 = s4 / n;
        const double se = std::sqrt((m4 - var * var) / n);
        CHECK(std::abs(var - 1253.0) < 3.0 * se);
    }
}

TEST_CASE("realizations are deterministic per seed and index") {
    const FieldSimulator sim(GridGeometry{0.0, 0.0, 30.0, 16, 16}, ref_model);
    CHECK(sim.realization(5, 7) == sim.realization(5, 7));
    CHECK(sim.realization(5, 7) != sim.realization(5, 8));
    CHECK(sim.realization(5, 7) != sim.realization(6, 7));
}

TEST_CASE("Cholesky fallback agrees with the circulant method in distribution") {
    const VariogramModel g{VariogramFamily::gaussian, 10.0, 500.0, 600.0};
    const FieldSimulator sim(GridGeometry{0.0, 0.0, 30.0, 12, 12}, g);
    CHECK((sim.method() == SimMethod::circulant || sim.method() == SimMethod::cholesky));
    const std::size_t n = 2000;
    double s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        s2 += sim.realization(9, i)[70] * sim.realization(9, i)[70];
    }
    CHECK(std::abs(s2 / n - 500.0) < 4.0 * 500.0 * std::sqrt(2.0 / n));
}

TEST_CASE("parcel-mean variance oracle") {
    const VariogramModel nug{VariogramFamily::exponential, 400.0, 400.0, 100.0};
    const Parcel p = testsupport::square_parcel(2, 2, 5);
    const McVariance iid = mc_parcel_variance(spec_for(nug, 16, 4), p, 4000);
    CHECK(std::abs(iid.variance - 400.0 / 25.0) < 3.0 * iid.mc_se);

    const McVariance exp64 = mc_parcel_variance(spec_for(ref_model, 32, 5), testsupport::square_parcel(8, 8, 8), 2000);
    const double analytic = var_res(testsupport::square_parcel(8, 8, 8), GridRaster(GridGeometry{0.0, 0.0, 30.0, 32, 32}, 1253.0),
                               ref_model);
    CHECK(std::abs(exp64.variance - analytic) < 3.0 * exp64.mc_se);

    // A range far beyond the parcel makes rho nearly constant.
    const VariogramModel wide{VariogramFamily::spherical, 100.0, 1100.0, 1e6};
    const Parcel q = testsupport::square_parcel(0, 0, 4);
    const McVariance w = mc_parcel_variance(spec_for(wide, 8, 6), q, 3000);
    const double closed = 1000.0 + 100.0 / 16.0;
    CHECK(std::abs(w.variance - closed) < 3.0 * w.mc_se);
}

TEST_CASE("MC standard error shrinks like one over root n") {
    const Parcel p = testsupport::square_parcel(0, 0, 3);
    const McVariance a = mc_parcel_variance(spec_for(ref_model, 16, 7), p, 500);
    const McVariance b = mc_parcel_variance(spec_for(ref_model, 16, 7), p, 2000);
    const double ratio = a.mc_se / b.mc_se;
    CHECK(ratio > 1.5);
    CHECK(ratio < 2.7);
}

TEST_CASE("landscape and inventory") {
    LandscapeSpec spec;
    spec.geometry = {0.0, 0.0, 30.0, 40, 40};
    spec.parcel_max_pixels = 50;
    const Landscape l = simulate_landscape(spec);
    std::size_t covered = 0;
    std::set<PixelIndex> seen;
    for (const auto& p : l.parcels) {
        CHECK(p.size() <= 50);
        CHECK(p.size() >= spec.parcel_min_pixels);
        for (const auto& px : p.pixels) {
            CHECK(seen.insert(px).second);
        }
        covered += p.size();
    }
    CHECK(covered <= 1600);
    std::size_t forest = 0;
    for (double v : l.lc_primary.values()) {
        forest += landcover::is_forest(static_cast<int>(v));
    }
    const double share = spec.tree_cover + spec.grass_shrub + spec.wetland;
    CHECK(std::abs(forest / 1600.0 - share) < 0.05);

    const AllometricTables tables = AllometricTables::toy();
    CHECK(simulate_inventory(l, 0, {}, tables, 1).empty());
    TreeModelSpec exact;
    exact.plot_noise_sd = 0.0;
    const auto plots = simulate_inventory(l, 30, exact, tables, 2);
    REQUIRE(plots.size() == 30);
    for (const auto& p : plots) {
        const double want = footprint_mean(l.true_agb, p.center);
        CHECK(std::abs(plot_agb(p, tables) - want) <= 1e-9 * std::max(1.0, want));
        if (want > 0.0) {
            CHECK(p.trees.size() >= exact.min_trees);
            CHECK(p.trees.size() <= exact.max_trees);
        } else {
            CHECK(p.trees.empty());
        }
    }
}

TEST_CASE("synthetic residual library has capped TAB ratios") {
    const ResidualLibrary lib = synthetic_residual_library(3);
    CHECK(lib.filtered_tab_ratios() > 0);
    Rng rng(3);
    for (int i = 0; i < 500; ++i) {
        CHECK(sample_allometric_residual(lib.get(component::tab_ratio, WoodType::softwood), rng) <= 0.5);
    }
}

TEST_CASE("field spec validation") {
    FieldSpec s = spec_for(ref_model, 8, 1);
    s.model.nugget = 5000.0;
    CHECK_THROWS_AS(simulate_field(s), Error);
}
