#include <doctest.h>

#include <cmath>
#include <limits>

#include "parcelse/error.hpp"
#include "parcelse/synth.hpp"
#include "parcelse/variogram.hpp"
#include "test_support.hpp"

using namespace parcelse;
using testsupport::rel_close;

namespace {

const VariogramModel ref_model{VariogramFamily::exponential, 199.0, 1253.0, 1025.0};

// Model-generated bins every 30 m out to 3 km.
EmpiricalVariogram model_bins(const VariogramModel& m) {
    EmpiricalVariogram emp;
    for (int k = 1; k <= 100; ++k) {
        emp.bins.push_back({30.0 * k, m.gamma(30.0 * k), 1000});
    }
    return emp;
}

std::vector<ResidualPoint> white_noise_points(Rng& rng, std::size_t side, double sd) {
    std::vector<ResidualPoint> pts;
    for (std::size_t r = 0; r < side; ++r) {
        for (std::size_t c = 0; c < side; ++c) {
            pts.push_back({30.0 * static_cast<double>(c), 30.0 * static_cast<double>(r), rng.normal(0.0, sd)});
        }
    }
    return pts;
}

}  // namespace

TEST_CASE("residual field is the pointwise difference") {
    const GridGeometry g{0.0, 0.0, 30.0, 10, 12};
    Rng rng(1);
    GridRaster a(g);
    GridRaster b(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
        a.values()[i] = rng.uniform(0.0, 300.0);
        b.values()[i] = rng.uniform(0.0, 300.0);
    }
    const GridRaster zero = residual_field(a, a);
    for (double v : zero.values()) {
        CHECK(v == 0.0);
    }
    GridRaster shifted = a;
    for (auto& v : shifted.values()) {
        v += 5.0;
    }
    const GridRaster five = residual_field(shifted, a);
    for (double v : five.values()) {
        CHECK(v == doctest::Approx(5.0).epsilon(1e-12));
    }
    b.values()[3] = b.nodata();
    const GridRaster e = residual_field(a, b);
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (i == 3) {
            CHECK(e.is_nodata(e.values()[i]));
        } else {
            CHECK(e.values()[i] == a.values()[i] - b.values()[i]);
        }
    }
    CHECK_THROWS_AS(residual_field(a, GridRaster(GridGeometry{0.0, 0.0, 30.0, 10, 11})), Error);
}

TEST_CASE("empirical variogram of simple inputs") {
    const std::vector<ResidualPoint> two = {{0.0, 0.0, 0.0}, {30.0, 0.0, 2.0}};
    const EmpiricalVariogram e = empirical_variogram(two, 30.0, 1000.0);
    REQUIRE(e.bins.size() == 1);
    CHECK(e.bins[0].semivariance == 2.0);
    CHECK(e.bins[0].pairs == 1);
    CHECK(e.bins[0].distance == 30.0);

    std::vector<ResidualPoint> flat;
    for (int i = 0; i < 200; ++i) {
        flat.push_back({30.0 * (i % 20), 30.0 * (i / 20), 4.0});
    }
    for (const auto& b : empirical_variogram(flat, 30.0, 600.0).bins) {
        CHECK(b.semivariance == 0.0);
    }
    CHECK_THROWS_AS(empirical_variogram(std::vector<ResidualPoint>{{0.0, 0.0, 1.0}}, 30.0, 100.0), Error);
}

TEST_CASE("empirical variogram matches a brute-force oracle") {
    Rng rng(2);
    std::vector<ResidualPoint> pts;
    for (int i = 0; i < 300; ++i) {
        pts.push_back({rng.uniform(0.0, 2000.0), rng.uniform(0.0, 2000.0), rng.normal(0.0, 10.0)});
    }
    const double w = 30.0;
    const double max_lag = 900.0;
    std::vector<double> sum(30, 0.0);
    std::vector<double> dsum(30, 0.0);
    std::vector<std::size_t> cnt(30, 0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        for (std::size_t j = i + 1; j < pts.size(); ++j) {
            const double d = std::hypot(pts[i].x - pts[j].x, pts[i].y - pts[j].y);
            if (d <= 0.0 || d > max_lag) {
                continue;
            }
            const auto k = static_cast<std::size_t>(std::ceil(d / w)) - 1;
            sum[k] += (pts[i].e - pts[j].e) * (pts[i].e - pts[j].e);
            dsum[k] += d;
            cnt[k]++;
        }
    }
    const EmpiricalVariogram e = empirical_variogram(pts, w, max_lag);
    std::size_t b = 0;
    for (std::size_t k = 0; k < 30; ++k) {
        if (cnt[k] == 0) {
            continue;
        }
        REQUIRE(b < e.bins.size());
        CHECK(e.bins[b].pairs == cnt[k]);
        CHECK(rel_close(e.bins[b].semivariance, sum[k] / (2.0 * cnt[k]), 1e-10));
        CHECK(rel_close(e.bins[b].distance, dsum[k] / cnt[k], 1e-10));
        ++b;
    }
    CHECK(b == e.bins.size());
    for (std::size_t k = 1; k < e.bins.size(); ++k) {
        CHECK(e.bins[k].distance > e.bins[k - 1].distance);
    }
}

TEST_CASE("white noise gives a flat variogram at its variance") {
    Rng rng(3);
    const auto pts = white_noise_points(rng, 100, 6.0);
    const EmpiricalVariogram e = empirical_variogram(pts, 30.0, 600.0);
    REQUIRE(e.bins.size() >= 10);
    for (const auto& b : e.bins) {
        CHECK(std::abs(b.semivariance - 36.0) < 0.1 * 36.0);
    }
}

TEST_CASE("a linear trend has a quadratic variogram") {
    std::vector<ResidualPoint> pts;
    for (int c = 0; c < 200; ++c) {
        pts.push_back({30.0 * c, 0.0, 0.5 * 30.0 * c});
    }
    for (const auto& b : empirical_variogram(pts, 30.0, 1500.0).bins) {
        CHECK(rel_close(b.semivariance, 0.5 * 0.25 * b.distance * b.distance, 1e-9));
    }
}

TEST_CASE("rho at the reference parameters") {
    CHECK(ref_model.rho(1e-9) == doctest::Approx((1253.0 - 199.0) / 1253.0).epsilon(1e-6));
    CHECK(std::abs(ref_model.rho(1e-9) - 0.8412) < 5e-5);
    CHECK(ref_model.rho(0.0) == 1.0);
    const VariogramModel sph{VariogramFamily::spherical, 199.0, 1253.0, 1025.0};
    CHECK(sph.rho(1025.0) == 0.0);
    CHECK(sph.rho(5000.0) == 0.0);
    CHECK(ref_model.rho(1025.0) <= 0.05 * (1.0 - 199.0 / 1253.0) + 1e-12);
    const VariogramModel pure{VariogramFamily::gaussian, 50.0, 50.0, 300.0};
    for (double h : {1.0, 30.0, 1000.0}) {
        CHECK(pure.rho(h) == 0.0);
    }
}

TEST_CASE("model curves are monotone with the right limits") {
    Rng rng(4);
    for (int rep = 0; rep < 200; ++rep) {
        const auto fam = static_cast<VariogramFamily>(rng.index(3));
        const double nugget = rng.uniform(0.0, 500.0);
        const VariogramModel m{fam, nugget, nugget + rng.uniform(0.0, 2000.0), rng.uniform(30.0, 3000.0)};
        double prev_g = 0.0;
        double prev_r = 1.0;
        for (double h = 1e-6; h < 5.0 * m.range; h += m.range / 37.0) {
            const double g = m.gamma(h);
            const double r = m.rho(h);
            CHECK(g >= prev_g - 1e-9);
            CHECK(r <= prev_r + 1e-12);
            CHECK((r >= 0.0 && r <= 1.0));
            prev_g = g;
            prev_r = r;
        }
        CHECK(std::abs(m.gamma(1e-9) - m.nugget) < 1e-3 * std::max(1.0, m.sill));
        CHECK(std::abs(m.gamma(1e9) - m.sill) < 1e-9 * std::max(1.0, m.sill));
        if (m.sill > 0.0) {
            CHECK(std::abs(m.rho(1e-9) - (1.0 - m.nugget / m.sill)) < 1e-6);
        }
    }
}

TEST_CASE("noise-free bins are recovered exactly") {
    for (const auto fam : {VariogramFamily::exponential, VariogramFamily::spherical, VariogramFamily::gaussian}) {
        const VariogramModel truth{fam, 199.0, 1253.0, 1025.0};
        const VariogramFit f = fit_model(model_bins(truth), fam);
        CHECK(rel_close(f.model.nugget, truth.nugget, 1e-6));
        CHECK(rel_close(f.model.sill, truth.sill, 1e-6));
        CHECK(rel_close(f.model.range, truth.range, 1e-6));
        CHECK(f.criterion < 1e-10);
    }
}

TEST_CASE("pure nugget data fits a flat model") {
    Rng rng(5);
    const auto pts = white_noise_points(rng, 80, 10.0);
    const EmpiricalVariogram e = empirical_variogram(pts, 30.0, 900.0);
    const VariogramFit f = fit_model(e, VariogramFamily::exponential);
    // A short partial-sill range is not identifiable from lags >= 30 m, so
    // only the fitted curve over the observed lags is checked.
    for (const auto& b : e.bins) {
        CHECK(std::abs(f.model.gamma(b.distance) - 100.0) < 10.0);
        if (b.distance > 30.0) {
            CHECK(f.model.rho(b.distance) < 0.1);
        }
    }
}

TEST_CASE("model selection") {
    const VariogramModel truth = ref_model;
    const EmpiricalVariogram e = model_bins(truth);
    const std::vector<VariogramFamily> all = {VariogramFamily::gaussian, VariogramFamily::spherical,
                                              VariogramFamily::exponential};
    CHECK(model_selection(e, all).best.model.family == VariogramFamily::exponential);
    const std::vector<VariogramFamily> one = {VariogramFamily::gaussian};
    CHECK(model_selection(e, one).best.model.family == VariogramFamily::gaussian);

    // A flat variogram is fit perfectly by every family, so the SSE ties.
    EmpiricalVariogram flat;
    for (int k = 1; k <= 20; ++k) {
        flat.bins.push_back({30.0 * k, 100.0, 500});
    }
    const VariogramSelection s = model_selection(flat, all);
    CHECK(s.best.criterion == 0.0);
    CHECK(s.best.model.family == VariogramFamily::exponential);
}

TEST_CASE("exponential fields select the exponential family") {
    const GridGeometry g{0.0, 0.0, 30.0, 256, 256};
    const FieldSimulator sim(g, {VariogramFamily::exponential, 199.0, 1253.0, 1025.0});
    const std::vector<VariogramFamily> families = {VariogramFamily::exponential, VariogramFamily::spherical,
                                                   VariogramFamily::gaussian};
    std::size_t wins = 0;
    for (std::uint64_t rep = 0; rep < 100; ++rep) {
        const std::vector<double> field = sim.realization(41, rep);
        GridRaster raster(g);
        std::copy(field.begin(), field.end(), raster.values().begin());
        Rng rng(42, {rep});
        const auto pts = sample_residuals(raster, 20000, rng);
        wins += model_selection(empirical_variogram(pts, 30.0, 1200.0), families).best.model.family ==
                VariogramFamily::exponential;
    }
    CHECK(wins >= 95);
}

TEST_CASE("too few bins is an error and is reported by selection") {
    EmpiricalVariogram e;
    for (int k = 1; k <= 3; ++k) {
        e.bins.push_back({30.0 * k, 10.0 * k, 10});
    }
    CHECK_THROWS_AS(fit_model(e, VariogramFamily::spherical), Error);
    const std::vector<VariogramFamily> all = {VariogramFamily::exponential};
    CHECK_THROWS_AS(model_selection(e, all), Error);
}

TEST_CASE("residual sampling and model records") {
    const GridGeometry g{0.0, 0.0, 30.0, 20, 20};
    GridRaster r(g, 1.0);
    r.values()[0] = r.nodata();
    Rng rng(6);
    CHECK(sample_residuals(r, 0, rng).size() == 399);
    const auto s = sample_residuals(r, 50, rng);
    CHECK(s.size() == 50);
    std::set<std::pair<double, double>> where;
    for (const auto& p : s) {
        where.insert({p.x, p.y});
    }
    CHECK(where.size() == 50);

    const VariogramModel back = VariogramModel::from_record(ref_model.to_record());
    CHECK(back.family == ref_model.family);
    CHECK(back.nugget == 199.0);
    CHECK(back.sill == 1253.0);
    CHECK(back.range == 1025.0);
    VariogramModel bad = ref_model;
    bad.nugget = 2000.0;
    CHECK_THROWS_AS(bad.validate(), Error);

    const std::string dir = testsupport::temp_dir("variogram");
    write_residual_points(dir + "/pts.csv", s);
    CHECK(read_residual_points(dir + "/pts.csv").size() == 50);
    const EmpiricalVariogram e = model_bins(ref_model);
    e.write_csv(dir + "/emp.csv");
    CHECK(EmpiricalVariogram::read_csv(dir + "/emp.csv").bins.size() == e.bins.size());
}

TEST_CASE("default max lag is twice the largest pixel-center span") {
    const std::vector<Parcel> parcels = {testsupport::square_parcel(0, 0, 3), testsupport::square_parcel(10, 10, 5)};
    CHECK(rel_close(default_max_lag(parcels, 30.0), 2.0 * std::hypot(120.0, 120.0), 1e-12));
}
