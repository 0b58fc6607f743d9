#include <doctest.h>

#include <cmath>

#include "parcelse/allometry.hpp"
#include "parcelse/error.hpp"
#include "parcelse/synth.hpp"
#include "test_support.hpp"

using namespace parcelse;
using testsupport::rel_close;

namespace {

TreeRecord live_tree(double dia, int group = 1) {
    TreeRecord t;
    t.id = "t";
    t.dia_cm = dia;
    t.boleht_m = 12.0;
    t.cull_pct = 5.0;
    t.wood_sg = 0.55;
    t.bark_sg = 0.60;
    t.species_group = group;
    t.wood = group == 2 ? WoodType::softwood : WoodType::hardwood;
    return t;
}

ResidualLibrary degenerate_library(double tab_ratio) {
    ResidualLibrary lib;
    for (auto c : {component::bole_volume, component::bole_bark, component::bole_wood, component::foliage,
                   component::total}) {
        lib.add({std::string(c), WoodType::pooled, {0.0}});
    }
    lib.add({std::string(component::tab_ratio), WoodType::pooled, {tab_ratio}});
    return lib;
}

}  // namespace

TEST_CASE("error-free prediction on the linear test group") {
    const AllometricTables tables = AllometricTables::toy();
    Rng rng(1);
    const ComponentBreakdown b = predict_tree_agb(live_tree(50.0, 3), tables, nullptr, rng);
    CHECK(rel_close(b.total, 100.0, 1e-12));
    CHECK(rel_close(b.component_sum(), 100.0, 1e-12));
}

TEST_CASE("degenerate residuals give TAB = r * (total - stump) before reconciliation") {
    const AllometricTables tables = AllometricTables::toy();
    const ResidualLibrary lib = degenerate_library(0.25);
    const CrmErrorSources src{nullptr, &lib};
    Rng rng(2);
    CrmTrace trace;
    const ComponentBreakdown b = predict_tree_agb(live_tree(30.0), tables, &src, rng, &trace);
    const ComponentBreakdown& u = trace.unreconciled;
    CHECK(u.top_and_branch == 0.25 * (u.total - u.stump));
    CHECK(rel_close(b.component_sum(), b.total, 1e-9));
}

TEST_CASE("reconciliation identity holds under every error source") {
    const AllometricTables tables = AllometricTables::toy();
    const ErrorModelSet errors = ErrorModelSet::defaults();
    const ResidualLibrary lib = synthetic_residual_library(3);
    const CrmErrorSources src{&errors, &lib};
    Rng rng(3);
    for (int i = 0; i < 5000; ++i) {
        TreeRecord t = live_tree(rng.uniform(5.0, 80.0), 1 + static_cast<int>(rng.index(3)));
        t.decaycd = rng.coin() ? 0 : 1 + static_cast<int>(rng.index(5));
        const ComponentBreakdown b = predict_tree_agb(t, tables, &src, rng);
        for (double c : {b.total, b.bole_wood, b.bole_bark, b.stump, b.foliage, b.top_and_branch}) {
            CHECK(c >= 0.0);
        }
        CHECK(std::abs(b.component_sum() - b.total) <= 1e-9 * std::max(1.0, b.total));
    }
}

TEST_CASE("error-free prediction is pure") {
    const AllometricTables tables = AllometricTables::toy();
    Rng a(4);
    Rng b(5);
    const TreeRecord t = live_tree(33.0, 2);
    const ComponentBreakdown x = predict_tree_agb(t, tables, nullptr, a);
    const ComponentBreakdown y = predict_tree_agb(t, tables, nullptr, b);
    CHECK(x.total == y.total);
    CHECK(x.top_and_branch == y.top_and_branch);
    CHECK(a.next_u64() == Rng(4).next_u64());
}

TEST_CASE("standing dead trees are scaled by the decay ratio") {
    const AllometricTables tables = AllometricTables::toy();
    Rng rng(6);
    TreeRecord t = live_tree(40.0);
    const double live = predict_tree_agb(t, tables, nullptr, rng).total;
    t.decaycd = 3;
    const double dead = predict_tree_agb(t, tables, nullptr, rng).total;
    CHECK(rel_close(dead, live * tables.decay_ratio_for(WoodType::hardwood, 3), 1e-12));
}

TEST_CASE("tree-level CV under error injection is tens of percent") {
    const AllometricTables tables = AllometricTables::toy();
    const ErrorModelSet errors = ErrorModelSet::defaults();
    const ResidualLibrary lib = synthetic_residual_library(7);
    const CrmErrorSources src{&errors, &lib};
    Rng rng(7);
    const TreeRecord t = live_tree(25.0);
    const std::size_t n = 100000;
    double s = 0.0;
    double s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double v = predict_tree_agb(t, tables, &src, rng).total;
        s += v;
        s2 += v * v;
    }
    const double mean = s / n;
    const double cv = std::sqrt(s2 / n - mean * mean) / mean;
    CHECK(cv > 0.05);
    CHECK(cv < 0.9);
}

TEST_CASE("plot AGB density arithmetic") {
    CHECK(plot_agb_density({}, {}, 0.067) == 0.0);
    ComponentBreakdown one;
    one.total = 670.0;
    const std::vector<ComponentBreakdown> a = {one};
    const std::vector<double> ea = {1.0};
    CHECK(rel_close(plot_agb_density(a, ea, 0.067), 10.0, 1e-12));
    const std::vector<ComponentBreakdown> two = {one, one};
    const std::vector<double> e2 = {1.0, 1.0};
    CHECK(plot_agb_density(two, e2, 0.067) == 2.0 * plot_agb_density(a, ea, 0.067));
}

TEST_CASE("unknown species group is an error") {
    const AllometricTables tables = AllometricTables::toy();
    Rng rng(8);
    CHECK_THROWS_AS(predict_tree_agb(live_tree(20.0, 99), tables, nullptr, rng), Error);
}

TEST_CASE("plot-level CV is below the tree-level CV") {
    const AllometricTables tables = AllometricTables::toy();
    const ErrorModelSet errors = ErrorModelSet::defaults();
    const ResidualLibrary lib = synthetic_residual_library(9);
    const CrmErrorSources src{&errors, &lib};
    PlotRecord plot;
    plot.id = "p";
    Rng gen(9);
    for (int i = 0; i < 15; ++i) {
        plot.trees.push_back(live_tree(gen.uniform(10.0, 60.0), 1 + static_cast<int>(gen.index(2))));
    }
    const std::size_t n = 2000;
    std::vector<std::vector<double>> tree_totals(plot.trees.size(), std::vector<double>(n));
    std::vector<double> plot_totals(n);
    for (std::size_t it = 0; it < n; ++it) {
        Rng rng(10, {it});
        double kg = 0.0;
        for (std::size_t t = 0; t < plot.trees.size(); ++t) {
            tree_totals[t][it] = predict_tree_agb(plot.trees[t], tables, &src, rng).total;
            kg += tree_totals[t][it];
        }
        plot_totals[it] = kg;
    }
    auto cv = [](const std::vector<double>& v) {
        double s = 0.0;
        double s2 = 0.0;
        for (double x : v) {
            s += x;
            s2 += x * x;
        }
        const double m = s / static_cast<double>(v.size());
        return std::sqrt(s2 / static_cast<double>(v.size()) - m * m) / m;
    };
    double tree_cv = 0.0;
    for (const auto& v : tree_totals) {
        tree_cv += cv(v);
    }
    tree_cv /= static_cast<double>(tree_totals.size());
    CHECK(cv(plot_totals) < tree_cv);
}

TEST_CASE("four-subplot layout") {
    const auto c = subplot_centers({0.0, 0.0});
    CHECK(c[0].x == 0.0);
    CHECK(c[0].y == 0.0);
    for (std::size_t i = 1; i < 4; ++i) {
        CHECK(rel_close(std::hypot(c[i].x, c[i].y), subplot_offset_m, 1e-12));
    }
    CHECK(std::abs(c[1].x) < 1e-9);
    CHECK(c[1].y > 0.0);
    CHECK(rel_close(plot_area_ha, 4.0 * std::numbers::pi * 7.32 * 7.32 / 1e4, 1e-15));
}

TEST_CASE("plot and tree files round trip") {
    const std::string dir = testsupport::temp_dir("allometry_plots");
    PlotRecord p;
    p.id = "PL1";
    p.center = {150.5, 99.25};
    TreeRecord t = live_tree(21.5, 2);
    t.id = "T1";
    t.decaycd = 2;
    t.expansion = 3.5;
    p.trees = {t};
    write_plots(dir + "/plots.csv", dir + "/trees.csv", {p});
    const auto back = read_plots(dir + "/plots.csv", dir + "/trees.csv");
    REQUIRE(back.size() == 1);
    REQUIRE(back[0].trees.size() == 1);
    CHECK(back[0].center.x == 150.5);
    CHECK(back[0].trees[0].dia_cm == 21.5);
    CHECK(back[0].trees[0].wood == WoodType::softwood);
    CHECK(back[0].trees[0].expansion == 3.5);
    const AllometricTables tables = AllometricTables::toy();
    tables.write_csv(dir + "/coef.csv", dir + "/decay.csv");
    const AllometricTables tb = AllometricTables::read_csv(dir + "/coef.csv", dir + "/decay.csv");
    CHECK(tb.groups.size() == 3);
    CHECK(tb.decay_ratio_for(WoodType::softwood, 4) == tables.decay_ratio_for(WoodType::softwood, 4));
}
