#pragma once

// Hand-rolled generators shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <string>
#include <vector>

#include "parcelse/grid.hpp"
#include "parcelse/rng.hpp"

namespace testsupport {

using parcelse::GridGeometry;
using parcelse::Parcel;
using parcelse::PixelIndex;
using parcelse::Rng;

inline bool rel_close(double a, double b, double tol) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
    return std::abs(a - b) <= tol * scale;
}

// n distinct pixels drawn uniformly from the grid.
inline Parcel scattered_parcel(Rng& rng, const GridGeometry& g, std::size_t n, std::string id = "S") {
    std::set<PixelIndex> px;
    while (px.size() < n) {
        px.insert({static_cast<std::int32_t>(rng.index(static_cast<std::size_t>(g.n_rows))),
                   static_cast<std::int32_t>(rng.index(static_cast<std::size_t>(g.n_cols)))});
    }
    return parcelse::make_parcel(std::move(id), {px.begin(), px.end()});
}

// Connected blob grown from a random seed pixel by random neighbour steps.
inline Parcel blob_parcel(Rng& rng, const GridGeometry& g, std::size_t n, std::string id = "B") {
    std::set<PixelIndex> px;
    std::vector<PixelIndex> frontier;
    const PixelIndex start{static_cast<std::int32_t>(rng.index(static_cast<std::size_t>(g.n_rows))),
                           static_cast<std::int32_t>(rng.index(static_cast<std::size_t>(g.n_cols)))};
    px.insert(start);
    frontier.push_back(start);
    const int dr[] = {-1, 1, 0, 0};
    const int dc[] = {0, 0, -1, 1};
    while (px.size() < n && !frontier.empty()) {
        const PixelIndex from = frontier[rng.index(frontier.size())];
        const std::size_t k = rng.index(4);
        const PixelIndex to{from.row + dr[k], from.col + dc[k]};
        if (g.contains(to) && px.insert(to).second) {
            frontier.push_back(to);
        }
    }
    return parcelse::make_parcel(std::move(id), {px.begin(), px.end()});
}

inline Parcel square_parcel(std::int32_t row0, std::int32_t col0, std::int32_t side, std::string id = "Q") {
    std::vector<PixelIndex> px;
    for (std::int32_t r = 0; r < side; ++r) {
        for (std::int32_t c = 0; c < side; ++c) {
            px.push_back({row0 + r, col0 + c});
        }
    }
    return parcelse::make_parcel(std::move(id), std::move(px));
}

inline std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Fresh empty directory under the system temp dir.
inline std::string temp_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("parcelse_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p.string();
}

}  // namespace testsupport
