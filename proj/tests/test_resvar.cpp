#include <doctest.h>

#include <cmath>

#include <Eigen/Dense>

#include "parcelse/error.hpp"
#include "parcelse/error_models.hpp"
#include "parcelse/resvar.hpp"
#include "test_support.hpp"

using namespace parcelse;
using testsupport::rel_close;

namespace {

std::vector<VarianceBin> bins_from(const std::vector<double>& x, const std::vector<double>& s2) {
    std::vector<VarianceBin> b;
    for (std::size_t i = 0; i < x.size(); ++i) {
        b.push_back({x[i] - 1.0, x[i] + 1.0, x[i], s2[i], 10});
    }
    return b;
}

std::vector<double> linspace(double lo, double hi, std::size_t n) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
        v[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    }
    return v;
}

}  // namespace

TEST_CASE("binning of simple layouts") {
    std::vector<AssessmentPlot> same(10, AssessmentPlot{50.0, 1.0});
    for (std::size_t i = 0; i < same.size(); ++i) {
        same[i].residual = static_cast<double>(i);
    }
    const auto one = bin_assessment(same);
    REQUIRE(one.size() == 1);
    CHECK(one[0].count == 10);
    CHECK(one[0].mean_agb == 50.0);
    CHECK(one[0].variance == doctest::Approx(55.0 / 6.0).epsilon(1e-12));

    std::vector<AssessmentPlot> uniform;
    for (int k = 0; k < 30; ++k) {
        for (int m = 0; m < 10; ++m) {
            uniform.push_back({10.0 * k + m + 0.5, 0.1 * m});
        }
    }
    const auto thirty = bin_assessment(uniform);
    REQUIRE(thirty.size() == 30);
    for (const auto& b : thirty) {
        CHECK(b.count == 10);
    }

    CHECK_THROWS_AS(bin_assessment(std::vector<AssessmentPlot>(9, AssessmentPlot{1.0, 0.0})), Error);
}

TEST_CASE("binning conserves plots and meets the minimum count") {
    Rng rng(1);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = 10 + rng.index(600);
        std::vector<AssessmentPlot> plots(n);
        for (auto& p : plots) {
            p.predicted = std::exp(rng.normal(4.0, 0.7));
            p.residual = rng.normal(0.0, 20.0);
        }
        const auto bins = bin_assessment(plots);
        std::size_t total = 0;
        for (std::size_t k = 0; k < bins.size(); ++k) {
            CHECK(bins[k].count >= 10);
            CHECK(bins[k].variance >= 0.0);
            if (k > 0) {
                CHECK(bins[k].mean_agb > bins[k - 1].mean_agb);
            }
            total += bins[k].count;
        }
        CHECK(total == n);
    }
}

TEST_CASE("a skewed assessment set of 545 plots gives about twenty bins") {
    Rng rng(2);
    std::vector<AssessmentPlot> plots(545);
    for (auto& p : plots) {
        // Gamma(4, 38) as a sum of four exponentials, plus a near-zero cluster.
        double g = 0.0;
        for (int k = 0; k < 4; ++k) {
            g -= 38.0 * std::log(1.0 - rng.uniform());
        }
        p.predicted = rng.uniform() < 0.15 ? rng.uniform(0.0, 5.0) : g;
        p.residual = rng.normal(0.0, 25.0);
    }
    const auto bins = bin_assessment(plots);
    CHECK(bins.size() >= 16);
    CHECK(bins.size() <= 26);
}

TEST_CASE("bins on a line fit the linear form exactly") {
    const auto x = linspace(5.0, 250.0, 12);
    std::vector<double> s2;
    for (double v : x) {
        s2.push_back(40.0 + 3.0 * v);
    }
    const ResVarModel m = fit_resvar(bins_from(x, s2), ResVarForm::linear);
    CHECK(m.r2 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m.cf == 1.0);
    CHECK(m.evaluate(100.0) == doctest::Approx(340.0).epsilon(1e-10));
}

TEST_CASE("log-log recovery and the bias correction") {
    const double a = 8.0;
    const double b = 0.9;
    const double s = 0.5;
    Rng rng(3);
    double bias_cf = 0.0;
    double bias_raw = 0.0;
    std::size_t cf_wins = 0;
    const int reps = 100;
    for (int rep = 0; rep < reps; ++rep) {
        const auto x = linspace(10.0, 300.0, 40);
        std::vector<double> s2;
        for (double v : x) {
            s2.push_back(a * std::pow(v + 0.1, b) * std::exp(rng.normal(0.0, s)));
        }
        const auto bins = bins_from(x, s2);
        const ResVarModel with = fit_resvar(bins, ResVarForm::log_log);
        const ResVarModel without = fit_resvar(bins, ResVarForm::log_log, {false, 0.1});
        CHECK(with.cf > 1.0);
        CHECK(without.cf == 1.0);
        if (rep == 0) {
            Eigen::MatrixXd d(40, 2);
            Eigen::VectorXd y(40);
            for (int i = 0; i < 40; ++i) {
                d(i, 0) = 1.0;
                d(i, 1) = std::log(x[static_cast<std::size_t>(i)] + 0.1);
                y(i) = std::log(s2[static_cast<std::size_t>(i)]);
            }
            const Eigen::VectorXd beta = d.colPivHouseholderQr().solve(y);
            const double sig2 = (y - d * beta).squaredNorm() / 38.0;
            const double se_b = std::sqrt(sig2 * (d.transpose() * d).inverse()(1, 1));
            CHECK(std::abs(with.coefficients[1] - b) < 2.0 * se_b);
            CHECK(with.cf == doctest::Approx(std::exp(sig2 / 2.0)).epsilon(1e-10));
        }
        double rel_cf = 0.0;
        double rel_raw = 0.0;
        for (double v : x) {
            const double truth = a * std::pow(v + 0.1, b) * std::exp(s * s / 2.0);
            rel_cf += (with.evaluate(v) - truth) / truth;
            rel_raw += (without.evaluate(v) - truth) / truth;
        }
        rel_cf /= 40.0;
        rel_raw /= 40.0;
        cf_wins += std::abs(rel_cf) < std::abs(rel_raw);
        bias_cf += rel_cf;
        bias_raw += rel_raw;
    }
    bias_cf /= reps;
    bias_raw /= reps;
    CHECK(std::abs(bias_cf) <= 0.02);
    CHECK(std::abs(bias_cf) < std::abs(bias_raw));
    CHECK(cf_wins > reps / 2);
}

TEST_CASE("log transforms reject nonpositive bin variances") {
    const auto x = linspace(5.0, 200.0, 8);
    std::vector<double> s2(8, 10.0);
    s2[3] = 0.0;
    CHECK_THROWS_WITH_AS(fit_resvar(bins_from(x, s2), ResVarForm::log_log), doctest::Contains("bin"), Error);
    CHECK_NOTHROW(fit_resvar(bins_from(x, s2), ResVarForm::linear));
}

TEST_CASE("too few bins for the form") {
    const auto x = linspace(5.0, 200.0, 4);
    const std::vector<double> s2 = {1.0, 2.0, 3.0, 5.0};
    CHECK_THROWS_AS(fit_resvar(bins_from(x, s2), ResVarForm::spline), Error);
    CHECK_THROWS_AS(fit_resvar(bins_from(x, s2), ResVarForm::cubic), Error);
    CHECK_NOTHROW(fit_resvar(bins_from(x, s2), ResVarForm::linear));
}

TEST_CASE("spline is smooth across its knots and flat beyond the data") {
    Rng rng(4);
    const auto x = linspace(2.0, 280.0, 21);
    std::vector<double> s2;
    for (double v : x) {
        s2.push_back(150.0 + 0.02 * v * v + rng.normal(0.0, 40.0));
    }
    const ResVarModel m = fit_resvar(bins_from(x, s2), ResVarForm::spline);
    REQUIRE(m.knots.size() == 4);
    const double h = 1e-4;
    for (std::size_t k = 1; k < 3; ++k) {
        const double t = m.knots[k];
        CHECK(std::abs(m.evaluate(t - 1e-9) - m.evaluate(t + 1e-9)) < 1e-6 * std::max(1.0, m.evaluate(t)));
        const double left = (m.evaluate(t) - m.evaluate(t - h)) / h;
        const double right = (m.evaluate(t + h) - m.evaluate(t)) / h;
        CHECK(std::abs(left - right) < 1e-3 * std::max(1.0, std::abs(left)));
    }
    CHECK(m.evaluate(1e6) == m.evaluate(m.x_max));
}

TEST_CASE("form selection") {
    const auto x = linspace(5.0, 250.0, 12);
    std::vector<double> lin;
    for (double v : x) {
        lin.push_back(40.0 + 3.0 * v);
    }
    const auto lb = bins_from(x, lin);
    const ResVarSelection s = select_form(lb, all_resvar_forms);
    const ResVarModel l = fit_resvar(lb, ResVarForm::linear);
    CHECK(s.best.r2 >= l.r2);
    CHECK(s.best.form == ResVarForm::linear);
    const std::vector<ResVarForm> only = {ResVarForm::log_linear};
    CHECK(select_form(lb, only).best.form == ResVarForm::log_linear);

    // Bins taken from a spline curve with a convex rise are matched exactly
    // only by the spline form.
    std::vector<double> shape;
    for (double v : x) {
        shape.push_back(v < 120.0 ? 200.0 + 0.5 * v : 260.0 + 0.002 * std::pow(v - 120.0, 2.5));
    }
    const ResVarModel gen = fit_resvar(bins_from(x, shape), ResVarForm::spline);
    std::vector<double> exact;
    for (double v : x) {
        exact.push_back(gen.evaluate(v));
    }
    const ResVarSelection sp = select_form(bins_from(x, exact), all_resvar_forms);
    CHECK(sp.best.form == ResVarForm::spline);
    CHECK(sp.best.r2 == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("sigma raster evaluation") {
    const GridGeometry g{0.0, 0.0, 30.0, 15, 15};
    const auto x = linspace(5.0, 250.0, 12);
    std::vector<double> s2;
    for (double v : x) {
        s2.push_back(40.0 + 3.0 * v + 0.001 * v * v);
    }
    const ResVarModel m = fit_resvar(bins_from(x, s2), ResVarForm::cubic);
    GridRaster agb(g);
    Rng rng(5);
    for (auto& v : agb.values()) {
        v = rng.uniform(0.0, 300.0);
    }
    GridRaster none(g, 0.0);
    for (double v : predict_sigma(m, agb, none).values()) {
        CHECK(v == 0.0);
    }
    GridRaster all(g, 1.0);
    const GridRaster flat = predict_sigma(m, GridRaster(g, 80.0), all);
    for (double v : flat.values()) {
        CHECK(v == m.evaluate(80.0));
    }
    GridRaster mask(g, 1.0);
    for (std::size_t i = 0; i < g.size(); i += 3) {
        mask.values()[i] = 0.0;
    }
    const GridRaster sig = predict_sigma(m, agb, mask);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double want = mask.values()[i] == 0.0 ? 0.0 : m.evaluate(agb.values()[i]);
        CHECK(std::abs(sig.values()[i] - want) <= 1e-12 * std::max(1.0, want));
        CHECK(sig.values()[i] >= 0.0);
    }
    CHECK_THROWS_AS(predict_sigma(m, agb, GridRaster(GridGeometry{0.0, 0.0, 30.0, 15, 14}, 1.0)), Error);
}

TEST_CASE("forest mask from land-cover classes") {
    const GridGeometry g{0.0, 0.0, 30.0, 1, 8};
    GridRaster lc(g);
    for (std::int32_t c = 0; c < 8; ++c) {
        lc[{0, c}] = c + 1;
    }
    const GridRaster m = forest_mask_from_classes(lc);
    const double want[] = {0, 0, 1, 1, 0, 1, 0, 0};
    for (std::int32_t c = 0; c < 8; ++c) {
        CHECK(m[{0, c}] == want[c]);
    }
}

TEST_CASE("model, bin and assessment files round trip") {
    const auto x = linspace(2.0, 280.0, 21);
    std::vector<double> s2;
    for (double v : x) {
        s2.push_back(150.0 + 0.02 * v * v);
    }
    const auto bins = bins_from(x, s2);
    const ResVarModel m = fit_resvar(bins, ResVarForm::spline);
    const ResVarModel back = ResVarModel::from_record(m.to_record());
    for (double v : {0.0, 17.0, 140.0, 279.0, 500.0}) {
        CHECK(back.evaluate(v) == m.evaluate(v));
    }
    const std::string dir = testsupport::temp_dir("resvar");
    write_bins(dir + "/bins.csv", bins);
    CHECK(read_bins(dir + "/bins.csv").size() == bins.size());
    const std::vector<AssessmentPlot> plots = {{10.0, 1.5}, {20.0, -2.0}};
    write_assessment(dir + "/a.csv", plots);
    const auto pb = read_assessment(dir + "/a.csv");
    REQUIRE(pb.size() == 2);
    CHECK(pb[1].residual == -2.0);
}
