#pragma once

#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace parcelse {

struct PixelIndex {
    std::int32_t row = 0;
    std::int32_t col = 0;

    auto operator<=>(const PixelIndex&) const = default;
};

// Regular north-up grid. Row 0 is the northern edge; (origin_x, origin_y)
// is the lower-left corner in projected meters.
struct GridGeometry {
    double origin_x = 0.0;
    double origin_y = 0.0;
    double pixel_size = 30.0;
    std::int32_t n_rows = 0;
    std::int32_t n_cols = 0;

    std::size_t size() const { return static_cast<std::size_t>(n_rows) * static_cast<std::size_t>(n_cols); }
    bool contains(PixelIndex p) const { return p.row >= 0 && p.col >= 0 && p.row < n_rows && p.col < n_cols; }
    std::size_t linear(PixelIndex p) const {
        return static_cast<std::size_t>(p.row) * static_cast<std::size_t>(n_cols) + static_cast<std::size_t>(p.col);
    }
    PixelIndex pixel(std::size_t linear_index) const {
        return {static_cast<std::int32_t>(linear_index / static_cast<std::size_t>(n_cols)),
                static_cast<std::int32_t>(linear_index % static_cast<std::size_t>(n_cols))};
    }
    double center_x(std::int32_t col) const { return origin_x + (col + 0.5) * pixel_size; }
    double center_y(std::int32_t row) const { return origin_y + (n_rows - row - 0.5) * pixel_size; }
    double top_y() const { return origin_y + n_rows * pixel_size; }

    // Pixel containing map point (x, y), if inside the grid.
    std::optional<PixelIndex> locate(double x, double y) const;

    bool aligned_with(const GridGeometry& other) const;
    void validate() const;
};

class GridRaster {
public:
    static constexpr double default_nodata = -9999.0;

    GridRaster() = default;
    explicit GridRaster(GridGeometry geometry, double fill = 0.0, double nodata = default_nodata);
    GridRaster(GridGeometry geometry, std::vector<double> values, double nodata = default_nodata);

    const GridGeometry& geometry() const { return geometry_; }
    double nodata() const { return nodata_; }
    bool is_nodata(double v) const { return v == nodata_ || std::isnan(v); }

    double operator[](PixelIndex p) const { return values_[geometry_.linear(p)]; }
    double& operator[](PixelIndex p) { return values_[geometry_.linear(p)]; }

    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }

private:
    GridGeometry geometry_;
    std::vector<double> values_;
    double nodata_ = default_nodata;
};

// A subregion as a sorted, duplicate-free pixel set plus optional
// metadata from a parcel database.
struct Parcel {
    std::string id;
    std::vector<PixelIndex> pixels;
    std::optional<double> area_acres;
    std::optional<double> perimeter_m;

    std::size_t size() const { return pixels.size(); }
};

inline constexpr double square_meters_per_acre = 4046.8564224;

// Sorts and deduplicates the pixel list.
Parcel make_parcel(std::string id, std::vector<PixelIndex> pixels);

// Throws Error("degenerate parcel") when empty, or when a pixel is outside
// the grid.
void validate_parcel(const Parcel& parcel, const GridGeometry& geometry);

// Metadata when supplied, else N * pixel_size^2 in acres.
double parcel_area_acres(const Parcel& parcel, double pixel_size);
// Metadata when supplied, else the exposed pixel-edge length in meters.
double parcel_perimeter_m(const Parcel& parcel, double pixel_size);

// Fraction of parcel pixels whose class satisfies `is_forest`.
double forest_fraction(const Parcel& parcel, const GridRaster& classes,
                       const std::function<bool(int)>& is_forest);

// Mean of the parcel's pixel values; nodata pixels are left out of both the
// sum and the count.
double zonal_mean(const GridRaster& raster, const Parcel& parcel);

// Visits each unordered pixel pair (i < j, as positions in parcel.pixels)
// whose centroid distance is <= cutoff, with that distance in meters.
// Pixels are sorted by row, so the row gap bounds the inner scan.
template <class F>
void for_each_pair(const Parcel& parcel, double pixel_size, double cutoff, F&& visit) {
    const auto& px = parcel.pixels;
    const std::size_t n = px.size();
    const double row_span = cutoff / pixel_size;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dr = px[j].row - px[i].row;
            if (dr > row_span) {
                break;
            }
            const double dc = px[j].col - px[i].col;
            const double d = pixel_size * std::sqrt(dr * dr + dc * dc);
            if (d <= cutoff) {
                visit(i, j, d);
            }
        }
    }
}

struct PixelPair {
    std::size_t i = 0;
    std::size_t j = 0;
    double distance = 0.0;
};

std::vector<PixelPair> pair_list(const Parcel& parcel, double pixel_size,
                                 double cutoff = std::numeric_limits<double>::infinity());

// Pair counts per exact distance class. Grid distances are pixel_size *
// sqrt(k) for integer k = drow^2 + dcol^2, so classes are keyed by k.
struct DistanceHistogram {
    double pixel_size = 30.0;
    std::map<std::int64_t, std::size_t> counts;

    static double distance_for(std::int64_t squared_offset, double pixel_size) {
        return pixel_size * std::sqrt(static_cast<double>(squared_offset));
    }
    std::size_t total() const;
    std::vector<std::pair<double, std::size_t>> by_distance() const;
};

DistanceHistogram distance_histogram(const Parcel& parcel, double pixel_size,
                                     double cutoff = std::numeric_limits<double>::infinity());

// Exact area of the intersection of a circle with an axis-aligned rectangle.
double circle_rect_overlap(double cx, double cy, double radius, double x0, double y0, double x1, double y1);

// Pixels overlapped by a circle with their overlap areas (m^2).
std::vector<std::pair<PixelIndex, double>> circle_pixel_weights(const GridGeometry& geometry, double cx,
                                                                double cy, double radius);

// Center-in-polygon rasterization of a simple polygon ring (map coordinates).
Parcel rasterize_polygon(std::string id, const GridGeometry& geometry,
                         const std::vector<std::pair<double, double>>& ring);

// ESRI ASCII grid I/O. Accepts xllcorner/xllcenter headers; NODATA_value is
// optional on input (defaults to -9999).
GridRaster read_ascii_grid(std::istream& in, const std::string& source);
GridRaster read_ascii_grid(const std::string& path);
void write_ascii_grid(std::ostream& out, const GridRaster& raster);
void write_ascii_grid(const std::string& path, const GridRaster& raster);

// Parcel CSV: (parcel_id, row, col); optional metadata CSV:
// (parcel_id, area_acres, perimeter_m). Parcels keep first-appearance order.
std::vector<Parcel> read_parcels(const std::string& pixels_path, const std::string& metadata_path = {});
void write_parcels(const std::string& pixels_path, const std::string& metadata_path,
                   const std::vector<Parcel>& parcels);

}  // namespace parcelse
