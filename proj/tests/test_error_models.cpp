#include <doctest.h>

#include <cmath>
#include <numbers>

#include "parcelse/error.hpp"
#include "parcelse/error_models.hpp"
#include "test_support.hpp"

using namespace parcelse;

namespace {

struct Moments {
    double mean = 0.0;
    double sd = 0.0;
};

template <class F>
Moments moments(std::size_t n, F&& draw) {
    double s = 0.0;
    double s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double v = draw();
        s += v;
        s2 += v * v;
    }
    const double m = s / static_cast<double>(n);
    return {m, std::sqrt((s2 - static_cast<double>(n) * m * m) / static_cast<double>(n - 1))};
}

}  // namespace

TEST_CASE("diameter error has the tabulated bias") {
    const ErrorModelSet set = ErrorModelSet::defaults();
    const NormalErrorSpec& dia = set.spec("dia");
    CHECK(dia.mean == -0.004);
    CHECK(dia.sd == 0.55);
    Rng rng(1);
    const std::size_t n = 100000;
    const Moments m = moments(n, [&] { return draw_normal_error(dia, 30.0, rng); });
    CHECK(std::abs(m.mean - 29.996) < 3.0 * 0.55 / std::sqrt(static_cast<double>(n)));
    CHECK(std::abs(m.sd - 0.55) < 0.01);
}

TEST_CASE("zero sd adds the mean exactly") {
    Rng rng(2);
    const NormalErrorSpec s{"x", 0.25, 0.0, false, "", std::nullopt};
    CHECK(draw_normal_error(s, 10.0, rng) == 10.25);
}

TEST_CASE("relative error scales with the observed value") {
    const ErrorModelSet set = ErrorModelSet::defaults();
    const NormalErrorSpec& sg = set.spec("wood_sg");
    CHECK(sg.relative);
    Rng rng(3);
    const std::size_t n = 100000;
    const Moments m = moments(n, [&] { return draw_normal_error(sg, 0.5, rng); });
    // sd of a sample sd is about sigma / sqrt(2n).
    CHECK(std::abs(m.sd - 0.05) < 3.0 * 0.05 / std::sqrt(2.0 * n));
}

TEST_CASE("clamps keep perturbed fields physical") {
    const ErrorModelSet set = ErrorModelSet::defaults();
    Rng rng(4);
    for (int i = 0; i < 20000; ++i) {
        CHECK(draw_normal_error(set.spec("dia"), 0.2, rng) >= 0.1);
        const double cull = draw_normal_error(set.spec("cull"), 1.0, rng);
        CHECK((cull >= 0.0 && cull <= 100.0));
    }
}

TEST_CASE("decay class perturbation") {
    Rng rng(5);
    for (int c = 1; c <= 5; ++c) {
        CHECK(perturb_decay_class(c, 1.0, rng) == c);
    }
    CHECK_THROWS_AS(perturb_decay_class(0, 0.59, rng), Error);
    CHECK_THROWS_AS(perturb_decay_class(6, 0.59, rng), Error);
    // Accuracy 0 always moves; from class 5 an upward move is clamped back
    // to 5, so every outcome is 4 or 5 and both signs occur.
    int stays = 0;
    int down = 0;
    for (int i = 0; i < 2000; ++i) {
        const int v = perturb_decay_class(5, 0.0, rng);
        CHECK((v == 4 || v == 5));
        stays += v == 5;
        down += v == 4;
    }
    CHECK(stays > 0);
    CHECK(down > 0);
    std::size_t changed = 0;
    const std::size_t n = 100000;
    for (std::size_t i = 0; i < n; ++i) {
        const int v = perturb_decay_class(3, 0.59, rng);
        CHECK((v >= 1 && v <= 5));
        changed += v != 3;
    }
    const double rate = static_cast<double>(changed) / n;
    CHECK(std::abs(rate - 0.41) < 3.0 * std::sqrt(0.41 * 0.59 / n));
}

TEST_CASE("empirical residual sampling") {
    Rng rng(6);
    EmpiricalDistribution one{"total", WoodType::pooled, {0.1}};
    for (int i = 0; i < 10; ++i) {
        CHECK(sample_allometric_residual(one, rng) == 0.1);
    }
    EmpiricalDistribution empty{"total", WoodType::pooled, {}};
    CHECK_THROWS_AS(sample_allometric_residual(empty, rng), Error);

    EmpiricalDistribution big{"total", WoodType::pooled, {}};
    for (int i = 0; i < 1000; ++i) {
        big.samples.push_back(rng.normal(0.02, 0.15));
    }
    const double mean = big.mean();
    double var = 0.0;
    for (double v : big.samples) {
        var += (v - mean) * (v - mean);
    }
    var /= static_cast<double>(big.samples.size());
    const std::size_t n = 100000;
    const Moments m = moments(n, [&] { return sample_allometric_residual(big, rng); });
    CHECK(std::abs(m.mean - mean) < 3.0 * std::sqrt(var / n));
}

TEST_CASE("top-and-branch ratios above the cap are dropped") {
    ResidualLibrary lib;
    lib.add({std::string(component::tab_ratio), WoodType::pooled, {0.1, 0.3, 0.6, 0.5, 0.9}});
    CHECK(lib.filtered_tab_ratios() == 2);
    Rng rng(7);
    const auto& d = lib.get(component::tab_ratio, WoodType::hardwood);
    for (int i = 0; i < 1000; ++i) {
        CHECK(sample_allometric_residual(d, rng) <= 0.5);
    }
}

TEST_CASE("plot location jitter") {
    Rng rng(8);
    const MapPoint c{100.0, 200.0};
    const MapPoint same = jitter_plot_location(c, 0.0, rng);
    CHECK(same.x == c.x);
    CHECK(same.y == c.y);

    const std::size_t n = 100000;
    double sum_d = 0.0;
    std::vector<std::size_t> bins(36, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const MapPoint p = jitter_plot_location(c, 7.05, rng);
        const double dx = p.x - c.x;
        const double dy = p.y - c.y;
        sum_d += std::hypot(dx, dy);
        double az = std::atan2(dx, dy) * 180.0 / std::numbers::pi;
        if (az < 0.0) {
            az += 360.0;
        }
        bins[std::min<std::size_t>(35, static_cast<std::size_t>(az / 10.0))]++;
    }
    const double half_normal_mean = 7.05 * std::sqrt(2.0 / std::numbers::pi);
    const double half_normal_sd = 7.05 * std::sqrt(1.0 - 2.0 / std::numbers::pi);
    CHECK(std::abs(sum_d / n - half_normal_mean) < 3.0 * half_normal_sd / std::sqrt(static_cast<double>(n)));
    double chi2 = 0.0;
    const double expected = static_cast<double>(n) / 36.0;
    for (auto b : bins) {
        chi2 += (static_cast<double>(b) - expected) * (static_cast<double>(b) - expected) / expected;
    }
    // Upper 1 % point of chi-square with 35 degrees of freedom.
    CHECK(chi2 < 57.34);
}

TEST_CASE("land-cover perturbation") {
    const GridGeometry g{0.0, 0.0, 30.0, 200, 500};
    GridRaster primary(g, landcover::tree_cover);
    GridRaster secondary(g, landcover::grass_shrub);
    ClassAccuracyTable identity = ClassAccuracyTable::lcmap_defaults();
    for (auto& [c, a] : identity.accuracy) {
        a = 1.0;
    }
    Rng rng(9);
    const GridRaster same = perturb_landcover(primary, secondary, identity, rng);
    for (std::size_t i = 0; i < g.size(); ++i) {
        CHECK_EQ(same.values()[i], primary.values()[i]);
    }

    const ClassAccuracyTable table = ClassAccuracyTable::lcmap_defaults();
    const GridRaster out = perturb_landcover(primary, secondary, table, rng);
    std::size_t flips = 0;
    for (double v : out.values()) {
        flips += v == landcover::grass_shrub;
    }
    const double n = static_cast<double>(g.size());
    CHECK(std::abs(flips / n - 0.08) < 3.0 * std::sqrt(0.08 * 0.92 / n));

    GridRaster barren(g, landcover::barren);
    const GridRaster b = perturb_landcover(barren, secondary, table, rng);
    std::size_t kept = 0;
    for (double v : b.values()) {
        kept += v == landcover::barren;
    }
    CHECK(std::abs(kept / n - 0.01) < 3.0 * std::sqrt(0.01 * 0.99 / n));

    GridRaster water(g, landcover::water);
    CHECK_THROWS_AS(perturb_landcover(water, secondary, table, rng), Error);
}

TEST_CASE("same seed and stream reproduce the same draws") {
    const ErrorModelSet set = ErrorModelSet::defaults();
    Rng a(42, {key(Stream::reference), 3, 7});
    Rng b(42, {key(Stream::reference), 3, 7});
    Rng c(42, {key(Stream::reference), 3, 8});
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
        const double x = draw_normal_error(set.spec("dia"), 25.0, a);
        CHECK(x == draw_normal_error(set.spec("dia"), 25.0, b));
        differs |= x != draw_normal_error(set.spec("dia"), 25.0, c);
    }
    CHECK(differs);
}

TEST_CASE("error spec and accuracy files round trip") {
    const std::string dir = testsupport::temp_dir("error_models");
    const ErrorModelSet set = ErrorModelSet::defaults();
    set.write_csv(dir + "/specs.csv");
    const ErrorModelSet back = ErrorModelSet::read_csv(dir + "/specs.csv");
    CHECK(back.specs.size() == set.specs.size());
    CHECK(back.spec("location").sd == 7.05);
    CHECK(back.spec("wood_sg").relative);
    const ClassAccuracyTable t = ClassAccuracyTable::lcmap_defaults();
    t.write_csv(dir + "/acc.csv");
    const ClassAccuracyTable tb = ClassAccuracyTable::read_csv(dir + "/acc.csv");
    CHECK(tb.accuracy_of(landcover::grass_shrub) == 0.37);
    CHECK(tb.accuracy_of(landcover::barren) == 0.01);
}
