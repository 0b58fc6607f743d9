#include <doctest.h>

#include <cmath>
#include <numbers>

#include "parcelse/aggregate.hpp"
#include "parcelse/error.hpp"
#include "test_support.hpp"

using namespace parcelse;
using testsupport::rel_close;

namespace {

const GridGeometry g30{0.0, 0.0, 30.0, 80, 80};
const VariogramModel ref_model{VariogramFamily::exponential, 199.0, 1253.0, 1025.0};

GridRaster random_sigma2(Rng& rng) {
    GridRaster s(g30);
    for (auto& v : s.values()) {
        v = rng.uniform(10.0, 2000.0);
    }
    return s;
}

VariogramModel random_model(Rng& rng) {
    const auto fam = static_cast<VariogramFamily>(rng.index(3));
    const double nugget = rng.uniform(0.0, 400.0);
    return {fam, nugget, nugget + rng.uniform(1.0, 1500.0), rng.uniform(40.0, 2500.0)};
}

}  // namespace

TEST_CASE("residual variance on one and two pixels") {
    GridRaster s(g30, 4.0);
    CHECK(var_res(make_parcel("1", {{0, 0}}), s, ref_model) == 4.0);
    // Exponential with zero nugget and rho(30) = exp(-3 * 30 / range) = 0.5.
    const VariogramModel half{VariogramFamily::exponential, 0.0, 1.0, 90.0 / std::numbers::ln2};
    const Parcel two = make_parcel("2", {{0, 0}, {0, 1}});
    CHECK(half.rho(30.0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(var_res(two, s, half) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(var_res_exact(two, s, half) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK_THROWS_AS(var_res(make_parcel("e", {}), s, ref_model), Error);
    CHECK_THROWS_AS(var_res(two, s, ref_model, -1.0), Error);
}

TEST_CASE("fast and exact paths agree on random parcels") {
    Rng rng(1);
    for (int rep = 0; rep < 40; ++rep) {
        const GridRaster s = random_sigma2(rng);
        const VariogramModel m = random_model(rng);
        const std::size_t n = 1 + rng.index(500);
        const Parcel p = rep % 2 == 0 ? testsupport::blob_parcel(rng, g30, n) : testsupport::scattered_parcel(rng, g30, n);
        const double factor = rep % 5 == 0 ? 2.0 : 1.0;
        CHECK(rel_close(var_res(p, s, m, factor), var_res_exact(p, s, m, factor), 1e-10));
    }
}

TEST_CASE("the constant-sigma histogram path matches the exact path") {
    Rng rng(2);
    const GridRaster s(g30, 700.0);
    for (int rep = 0; rep < 10; ++rep) {
        const Parcel p = testsupport::blob_parcel(rng, g30, 50 + rng.index(400));
        const VariogramModel m = random_model(rng);
        const VarResTerms t = var_res_terms(p, s, m);
        CHECK(t.histogram_path);
        CHECK(rel_close(t.total(), var_res_exact(p, s, m), 1e-10));
    }
}

TEST_CASE("Var_res lies between the independent and fully correlated bounds") {
    Rng rng(3);
    for (int rep = 0; rep < 30; ++rep) {
        const GridRaster s = random_sigma2(rng);
        const Parcel p = testsupport::blob_parcel(rng, g30, 2 + rng.index(200));
        double sum_s2 = 0.0;
        double sum_s = 0.0;
        for (const auto& px : p.pixels) {
            sum_s2 += s[px];
            sum_s += std::sqrt(s[px]);
        }
        const double n2 = static_cast<double>(p.size() * p.size());
        const double v = var_res(p, s, random_model(rng));
        CHECK(v >= sum_s2 / n2 * (1.0 - 1e-12));
        CHECK(v <= sum_s * sum_s / n2 * (1.0 + 1e-12));

        const VariogramModel none{VariogramFamily::spherical, 500.0, 500.0, 100.0};
        CHECK(rel_close(var_res(p, s, none), sum_s2 / n2, 1e-12));
        const VariogramModel full{VariogramFamily::spherical, 0.0, 500.0, 1e12};
        CHECK(rel_close(var_res(p, s, full), sum_s * sum_s / n2, 1e-8));
    }
}

TEST_CASE("Var_res of constant sigma decreases with square parcel size") {
    const GridRaster s(g30, 900.0);
    double prev = std::numeric_limits<double>::infinity();
    for (std::int32_t side = 1; side <= 40; side += 3) {
        const double v = var_res(testsupport::square_parcel(0, 0, side), s, ref_model);
        CHECK(v < prev);
        prev = v;
    }
}

TEST_CASE("totals, SE and relative SE") {
    const VarianceReport a = total("a", 100.0, 9.0, 16.0);
    CHECK(a.var_total == 25.0);
    CHECK(a.se == 5.0);
    CHECK(a.rel_se == 5.0);
    const VarianceReport z = total("z", 30.0, 0.0, 0.0);
    CHECK(z.se == 0.0);
    CHECK(z.rel_se == 0.0);
    CHECK(total("r", 50.0, 20.0, 5.0).rel_se == doctest::Approx(10.0).epsilon(1e-14));
    CHECK(std::isnan(total("n", 0.0, 1.0, 1.0).rel_se));
}

TEST_CASE("sensitivity factors") {
    Rng rng(4);
    for (int rep = 0; rep < 30; ++rep) {
        const GridRaster s = random_sigma2(rng);
        const Parcel p = testsupport::blob_parcel(rng, g30, 2 + rng.index(300));
        const VariogramModel m = random_model(rng);
        const auto e = sensitivity(p, s, m, default_sensitivity_factors, 12.0);
        REQUIRE(e.size() == 5);
        for (std::size_t k = 1; k < e.size(); ++k) {
            CHECK(e[k].var_res <= e[k - 1].var_res * (1.0 + 1e-12));
        }
        CHECK(e[2].var_res == var_res(p, s, m));
        double sum_s2 = 0.0;
        for (const auto& px : p.pixels) {
            sum_s2 += s[px];
        }
        CHECK(rel_close(e[4].var_res, sum_s2 / static_cast<double>(p.size() * p.size()), 1e-12));
        for (const auto& x : e) {
            CHECK(x.var_total == 12.0 + x.var_res);
        }
    }
}

TEST_CASE("parallel aggregation preserves order and identities") {
    Rng rng(5);
    const GridRaster s = random_sigma2(rng);
    std::vector<Parcel> parcels;
    for (int k = 0; k < 20; ++k) {
        parcels.push_back(testsupport::blob_parcel(rng, g30, 1 + rng.index(100), "P" + std::to_string(k)));
    }
    std::vector<ParcelInputs> in;
    for (const auto& p : parcels) {
        in.push_back({&p, rng.uniform(0.0, 200.0), rng.uniform(0.0, 50.0), VarianceComponents{1.0, 2.0, 3.0}});
    }
    const auto reports = aggregate_parcels(in, s, ref_model, default_sensitivity_factors);
    REQUIRE(reports.size() == parcels.size());
    for (std::size_t k = 0; k < reports.size(); ++k) {
        CHECK(reports[k].parcel_id == parcels[k].id);
        CHECK(reports[k].var_total == in[k].var_boot + reports[k].var_res);
        CHECK(reports[k].se == std::sqrt(reports[k].var_total));
        CHECK(reports[k].sensitivity.size() == 5);
    }
    const std::string dir = testsupport::temp_dir("aggregate");
    write_reports_csv(dir + "/r.csv", reports);
    const std::string text = testsupport::read_text(dir + "/r.csv");
    CHECK(text.rfind("parcel_id,n_pixels,agb,var_boot,var_sam,var_lc,var_ref,var_res,var_total,se,rel_se,", 0) == 0);
    CHECK(text.find("var_res_x0.5") != std::string::npos);
}

TEST_CASE("factor list parsing") {
    const auto f = parse_factors("4, 2,1,0.5,0");
    CHECK(f == std::vector<double>{4.0, 2.0, 1.0, 0.5, 0.0});
    CHECK_THROWS_AS(parse_factors("2,-1"), Error);
    CHECK_THROWS_AS(parse_factors("x"), Error);
}
