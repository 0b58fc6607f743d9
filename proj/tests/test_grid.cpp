#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "parcelse/error.hpp"
#include "parcelse/grid.hpp"
#include "test_support.hpp"

using namespace parcelse;
using testsupport::rel_close;

namespace {

const GridGeometry g30{0.0, 0.0, 30.0, 40, 40};
constexpr double inf = std::numeric_limits<double>::infinity();

}  // namespace

TEST_CASE("zonal_mean of a constant field") {
    GridRaster r(g30, 100.0);
    Rng rng(1);
    const Parcel p = testsupport::scattered_parcel(rng, g30, 10);
    CHECK(zonal_mean(r, p) == 100.0);
}

TEST_CASE("zonal_mean of a single pixel") {
    GridRaster r(g30, 0.0);
    r[{3, 4}] = 42.5;
    CHECK(zonal_mean(r, make_parcel("one", {{3, 4}})) == 42.5);
}

TEST_CASE("zonal_mean matches direct re-summation") {
    Rng rng(7);
    GridRaster r(g30);
    for (auto& v : r.values()) {
        v = rng.uniform(0.0, 300.0);
    }
    const Parcel p = testsupport::scattered_parcel(rng, g30, 50);
    long double s = 0.0L;
    for (const auto& px : p.pixels) {
        s += r.values()[static_cast<std::size_t>(px.row) * 40 + static_cast<std::size_t>(px.col)];
    }
    CHECK(rel_close(zonal_mean(r, p), static_cast<double>(s / 50.0L), 1e-12));
}

TEST_CASE("zonal_mean skips nodata and rejects empty parcels") {
    GridRaster r(g30, 10.0);
    r[{0, 1}] = r.nodata();
    CHECK(zonal_mean(r, make_parcel("a", {{0, 0}, {0, 1}})) == 10.0);
    CHECK_THROWS_WITH_AS(zonal_mean(r, make_parcel("e", {})), doctest::Contains("degenerate parcel"), Error);
    CHECK_THROWS_AS(zonal_mean(r, make_parcel("o", {{40, 0}})), Error);
}

TEST_CASE("zonal_mean is translation equivariant") {
    Rng rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        GridRaster r(g30);
        for (auto& v : r.values()) {
            v = rng.uniform(-50.0, 50.0);
        }
        const Parcel p = testsupport::blob_parcel(rng, g30, 1 + rng.index(200));
        const double c = rng.uniform(-100.0, 100.0);
        GridRaster shifted = r;
        for (auto& v : shifted.values()) {
            v += c;
        }
        CHECK(std::abs(zonal_mean(shifted, p) - (zonal_mean(r, p) + c)) < 1e-9);
    }
}

TEST_CASE("pair iteration on small parcels") {
    const auto two = pair_list(make_parcel("2", {{0, 0}, {0, 1}}), 30.0);
    REQUIRE(two.size() == 1);
    CHECK(two[0].distance == 30.0);
    const Parcel strip = make_parcel("3", {{0, 0}, {0, 1}, {0, 2}});
    CHECK(pair_list(strip, 30.0, 30.0).size() == 2);
    CHECK(pair_list(strip, 30.0).size() == 3);
}

TEST_CASE("pair iteration matches the brute-force oracle") {
    Rng rng(3);
    const Parcel p = testsupport::scattered_parcel(rng, g30, 100);
    const auto pairs = pair_list(p, 30.0, inf);
    REQUIRE(pairs.size() == 4950);
    std::vector<double> got;
    for (const auto& q : pairs) {
        got.push_back(q.distance);
    }
    std::vector<double> want;
    for (std::size_t i = 0; i < p.size(); ++i) {
        for (std::size_t j = i + 1; j < p.size(); ++j) {
            const double dx = 30.0 * (p.pixels[i].col - p.pixels[j].col);
            const double dy = 30.0 * (p.pixels[i].row - p.pixels[j].row);
            want.push_back(std::hypot(dx, dy));
        }
    }
    std::sort(got.begin(), got.end());
    std::sort(want.begin(), want.end());
    for (std::size_t k = 0; k < want.size(); ++k) {
        CHECK(rel_close(got[k], want[k], 1e-12));
    }
}

TEST_CASE("pairs within a smaller cutoff are a subset") {
    Rng rng(5);
    for (int rep = 0; rep < 10; ++rep) {
        const Parcel p = testsupport::blob_parcel(rng, g30, 80);
        const double r1 = rng.uniform(0.0, 300.0);
        const double r2 = r1 + rng.uniform(0.0, 300.0);
        const auto a = pair_list(p, 30.0, r1);
        const auto b = pair_list(p, 30.0, r2);
        std::set<std::pair<std::size_t, std::size_t>> bs;
        for (const auto& q : b) {
            bs.insert({q.i, q.j});
        }
        for (const auto& q : a) {
            CHECK(bs.count({q.i, q.j}) == 1);
        }
    }
}

TEST_CASE("distance histogram of simple shapes") {
    const auto block = distance_histogram(make_parcel("b", {{0, 0}, {0, 1}, {1, 0}, {1, 1}}), 30.0).by_distance();
    REQUIRE(block.size() == 2);
    CHECK(block[0].first == 30.0);
    CHECK(block[0].second == 4);
    CHECK(rel_close(block[1].first, 30.0 * std::sqrt(2.0), 1e-15));
    CHECK(block[1].second == 2);

    std::vector<PixelIndex> strip;
    const int k = 7;
    for (int c = 0; c < k; ++c) {
        strip.push_back({0, c});
    }
    const auto h = distance_histogram(make_parcel("s", strip), 30.0).by_distance();
    REQUIRE(h.size() == static_cast<std::size_t>(k - 1));
    for (int d = 1; d < k; ++d) {
        CHECK(h[static_cast<std::size_t>(d - 1)].first == 30.0 * d);
        CHECK(h[static_cast<std::size_t>(d - 1)].second == static_cast<std::size_t>(k - d));
    }
}

TEST_CASE("distance histogram mass equals the pair count") {
    Rng rng(9);
    for (int rep = 0; rep < 20; ++rep) {
        const Parcel p = testsupport::blob_parcel(rng, g30, 1 + rng.index(150));
        const double cutoff = rep % 4 == 0 ? inf : rng.uniform(0.0, 400.0);
        CHECK(distance_histogram(p, 30.0, cutoff).total() == pair_list(p, 30.0, cutoff).size());
    }
}

TEST_CASE("area and perimeter fall back to the pixel set") {
    const Parcel sq = testsupport::square_parcel(0, 0, 3);
    CHECK(rel_close(parcel_area_acres(sq, 30.0), 9 * 900.0 / square_meters_per_acre, 1e-14));
    CHECK(parcel_perimeter_m(sq, 30.0) == 12 * 30.0);
    Parcel meta = sq;
    meta.area_acres = 5.0;
    meta.perimeter_m = 77.0;
    CHECK(parcel_area_acres(meta, 30.0) == 5.0);
    CHECK(parcel_perimeter_m(meta, 30.0) == 77.0);
}

TEST_CASE("circle overlap weights sum to the circle area") {
    const double r = 7.32;
    double sum = 0.0;
    for (const auto& [p, w] : circle_pixel_weights(g30, 613.0, 587.0, r)) {
        sum += w;
    }
    CHECK(rel_close(sum, std::numbers::pi * r * r, 1e-9));
    CHECK(rel_close(circle_rect_overlap(0.0, 0.0, 1.0, 0.0, 0.0, 5.0, 5.0), std::numbers::pi / 4.0, 1e-9));
}

TEST_CASE("ascii grid round trip") {
    GridRaster r(GridGeometry{100.0, 200.0, 30.0, 3, 4});
    Rng rng(2);
    for (auto& v : r.values()) {
        v = rng.uniform(0.0, 1.0);
    }
    r[{1, 1}] = r.nodata();
    std::stringstream ss;
    write_ascii_grid(ss, r);
    const GridRaster back = read_ascii_grid(ss, "mem");
    CHECK(back.geometry().aligned_with(r.geometry()));
    for (std::size_t i = 0; i < r.values().size(); ++i) {
        CHECK(back.values()[i] == r.values()[i]);
    }
}

TEST_CASE("ascii grid rejects a short value block") {
    std::stringstream ss("ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 30\n1 2 3\n");
    CHECK_THROWS_AS(read_ascii_grid(ss, "short"), Error);
}

TEST_CASE("parcel files round trip") {
    const std::string dir = testsupport::temp_dir("grid_parcels");
    std::vector<Parcel> parcels = {testsupport::square_parcel(0, 0, 2, "A"), make_parcel("B", {{5, 5}})};
    parcels[0].area_acres = 1.5;
    parcels[0].perimeter_m = 240.0;
    parcels[1].area_acres = 0.2;
    parcels[1].perimeter_m = 120.0;
    write_parcels(dir + "/px.csv", dir + "/meta.csv", parcels);
    const auto back = read_parcels(dir + "/px.csv", dir + "/meta.csv");
    REQUIRE(back.size() == 2);
    CHECK(back[0].id == "A");
    CHECK(back[0].pixels == parcels[0].pixels);
    CHECK(*back[0].area_acres == 1.5);
    CHECK(*back[1].perimeter_m == 120.0);
}
