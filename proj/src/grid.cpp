#include "parcelse/grid.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "parcelse/csv.hpp"
#include "parcelse/error.hpp"

namespace parcelse {

std::optional<PixelIndex> GridGeometry::locate(double x, double y) const {
    const double c = std::floor((x - origin_x) / pixel_size);
    const double r = std::floor((top_y() - y) / pixel_size);
    if (c < 0 || r < 0 || c >= n_cols || r >= n_rows) {
        return std::nullopt;
    }
    return PixelIndex{static_cast<std::int32_t>(r), static_cast<std::int32_t>(c)};
}

bool GridGeometry::aligned_with(const GridGeometry& other) const {
    const double tol = 1e-9 * pixel_size;
    return n_rows == other.n_rows && n_cols == other.n_cols && std::abs(pixel_size - other.pixel_size) <= tol &&
           std::abs(origin_x - other.origin_x) <= tol && std::abs(origin_y - other.origin_y) <= tol;
}

void GridGeometry::validate() const {
    if (!(pixel_size > 0.0) || !std::isfinite(pixel_size)) {
        throw Error("grid pixel_size must be > 0");
    }
    if (n_rows <= 0 || n_cols <= 0) {
        throw Error("grid must have at least one row and column");
    }
}

GridRaster::GridRaster(GridGeometry geometry, double fill, double nodata)
    : geometry_(geometry), values_(geometry.size(), fill), nodata_(nodata) {
    geometry_.validate();
}

GridRaster::GridRaster(GridGeometry geometry, std::vector<double> values, double nodata)
    : geometry_(geometry), values_(std::move(values)), nodata_(nodata) {
    geometry_.validate();
    if (values_.size() != geometry_.size()) {
        throw Error("raster has " + std::to_string(values_.size()) + " values, grid needs " +
                    std::to_string(geometry_.size()));
    }
}

Parcel make_parcel(std::string id, std::vector<PixelIndex> pixels) {
    std::sort(pixels.begin(), pixels.end());
    pixels.erase(std::unique(pixels.begin(), pixels.end()), pixels.end());
    Parcel p;
    p.id = std::move(id);
    p.pixels = std::move(pixels);
    return p;
}

void validate_parcel(const Parcel& parcel, const GridGeometry& geometry) {
    if (parcel.pixels.empty()) {
        throw Error("degenerate parcel '" + parcel.id + "': no pixels");
    }
    for (const auto& p : parcel.pixels) {
        if (!geometry.contains(p)) {
            throw Error("parcel '" + parcel.id + "': pixel (" + std::to_string(p.row) + ", " +
                        std::to_string(p.col) + ") outside the grid");
        }
    }
    if (parcel.area_acres && !(*parcel.area_acres > 0.0)) {
        throw Error("parcel '" + parcel.id + "': area must be > 0");
    }
    if (parcel.perimeter_m && !(*parcel.perimeter_m > 0.0)) {
        throw Error("parcel '" + parcel.id + "': perimeter must be > 0");
    }
}

double parcel_area_acres(const Parcel& parcel, double pixel_size) {
    if (parcel.area_acres) {
        return *parcel.area_acres;
    }
    return static_cast<double>(parcel.size()) * pixel_size * pixel_size / square_meters_per_acre;
}

double parcel_perimeter_m(const Parcel& parcel, double pixel_size) {
    if (parcel.perimeter_m) {
        return *parcel.perimeter_m;
    }
    const auto& px = parcel.pixels;
    auto present = [&](std::int32_t r, std::int32_t c) {
        return std::binary_search(px.begin(), px.end(), PixelIndex{r, c});
    };
    std::size_t edges = 0;
    for (const auto& p : px) {
        edges += !present(p.row - 1, p.col);
        edges += !present(p.row + 1, p.col);
        edges += !present(p.row, p.col - 1);
        edges += !present(p.row, p.col + 1);
    }
    return static_cast<double>(edges) * pixel_size;
}

double forest_fraction(const Parcel& parcel, const GridRaster& classes, const std::function<bool(int)>& is_forest) {
    validate_parcel(parcel, classes.geometry());
    std::size_t forest = 0;
    for (const auto& p : parcel.pixels) {
        const double v = classes[p];
        if (!classes.is_nodata(v) && is_forest(static_cast<int>(std::lround(v)))) {
            ++forest;
        }
    }
    return static_cast<double>(forest) / static_cast<double>(parcel.size());
}

double zonal_mean(const GridRaster& raster, const Parcel& parcel) {
    validate_parcel(parcel, raster.geometry());
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& p : parcel.pixels) {
        const double v = raster[p];
        if (raster.is_nodata(v)) {
            continue;
        }
        sum += v;
        ++n;
    }
    if (n == 0) {
        throw Error("degenerate parcel '" + parcel.id + "': every pixel is nodata");
    }
    return sum / static_cast<double>(n);
}

std::vector<PixelPair> pair_list(const Parcel& parcel, double pixel_size, double cutoff) {
    std::vector<PixelPair> out;
    for_each_pair(parcel, pixel_size, cutoff,
                  [&](std::size_t i, std::size_t j, double d) { out.push_back({i, j, d}); });
    return out;
}

std::size_t DistanceHistogram::total() const {
    std::size_t n = 0;
    for (const auto& [k, c] : counts) {
        n += c;
    }
    return n;
}

std::vector<std::pair<double, std::size_t>> DistanceHistogram::by_distance() const {
    std::vector<std::pair<double, std::size_t>> out;
    out.reserve(counts.size());
    for (const auto& [k, c] : counts) {
        out.emplace_back(distance_for(k, pixel_size), c);
    }
    return out;
}

DistanceHistogram distance_histogram(const Parcel& parcel, double pixel_size, double cutoff) {
    DistanceHistogram h;
    h.pixel_size = pixel_size;
    const auto& px = parcel.pixels;
    const std::size_t n = px.size();
    const double row_span = cutoff / pixel_size;
    std::unordered_map<std::int64_t, std::size_t> counts;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const std::int64_t dr = px[j].row - px[i].row;
            if (static_cast<double>(dr) > row_span) {
                break;
            }
            const std::int64_t dc = px[j].col - px[i].col;
            const std::int64_t k = dr * dr + dc * dc;
            if (DistanceHistogram::distance_for(k, pixel_size) <= cutoff) {
                ++counts[k];
            }
        }
    }
    h.counts.insert(counts.begin(), counts.end());
    return h;
}

double circle_rect_overlap(double cx, double cy, double radius, double x0, double y0, double x1, double y1) {
    if (!(radius > 0.0)) {
        return 0.0;
    }
    // Work relative to the circle center.
    const double r = radius;
    const double lo_y = y0 - cy;
    const double hi_y = y1 - cy;
    const double a = std::max(x0 - cx, -r);
    const double b = std::min(x1 - cx, r);
    if (!(a < b) || !(lo_y < hi_y)) {
        return 0.0;
    }
    auto chord = [r](double x) { return std::sqrt(std::max(0.0, r * r - x * x)); };
    // Antiderivative of chord(x).
    auto area_under = [&](double x) {
        const double xc = std::clamp(x / r, -1.0, 1.0);
        return 0.5 * (x * chord(x) + r * r * std::asin(xc));
    };

    std::vector<double> knots{a, b};
    for (double y : {lo_y, hi_y}) {
        if (std::abs(y) < r) {
            const double x = std::sqrt(r * r - y * y);
            for (double k : {-x, x}) {
                if (k > a && k < b) {
                    knots.push_back(k);
                }
            }
        }
    }
    std::sort(knots.begin(), knots.end());

    double area = 0.0;
    for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
        const double u = knots[i];
        const double v = knots[i + 1];
        if (!(v > u)) {
            continue;
        }
        const double m = 0.5 * (u + v);
        const double s = chord(m);
        const bool upper_is_edge = hi_y < s;
        const bool lower_is_edge = lo_y > -s;
        const double top = upper_is_edge ? hi_y : s;
        const double bottom = lower_is_edge ? lo_y : -s;
        if (!(top > bottom)) {
            continue;
        }
        const double chord_integral = area_under(v) - area_under(u);
        const double upper = upper_is_edge ? hi_y * (v - u) : chord_integral;
        const double lower = lower_is_edge ? lo_y * (v - u) : -chord_integral;
        area += upper - lower;
    }
    return std::max(0.0, area);
}

std::vector<std::pair<PixelIndex, double>> circle_pixel_weights(const GridGeometry& g, double cx, double cy,
                                                                double radius) {
    std::vector<std::pair<PixelIndex, double>> out;
    const auto c0 = static_cast<std::int32_t>(std::floor((cx - radius - g.origin_x) / g.pixel_size));
    const auto c1 = static_cast<std::int32_t>(std::floor((cx + radius - g.origin_x) / g.pixel_size));
    const auto r0 = static_cast<std::int32_t>(std::floor((g.top_y() - (cy + radius)) / g.pixel_size));
    const auto r1 = static_cast<std::int32_t>(std::floor((g.top_y() - (cy - radius)) / g.pixel_size));
    for (std::int32_t r = std::max(r0, 0); r <= std::min(r1, g.n_rows - 1); ++r) {
        for (std::int32_t c = std::max(c0, 0); c <= std::min(c1, g.n_cols - 1); ++c) {
            const double px0 = g.origin_x + c * g.pixel_size;
            const double py1 = g.top_y() - r * g.pixel_size;
            const double w = circle_rect_overlap(cx, cy, radius, px0, py1 - g.pixel_size, px0 + g.pixel_size, py1);
            if (w > 0.0) {
                out.emplace_back(PixelIndex{r, c}, w);
            }
        }
    }
    return out;
}

Parcel rasterize_polygon(std::string id, const GridGeometry& g, const std::vector<std::pair<double, double>>& ring) {
    if (ring.size() < 3) {
        throw Error("polygon '" + id + "' needs at least 3 vertices");
    }
    double minx = ring[0].first, maxx = minx, miny = ring[0].second, maxy = miny;
    for (const auto& [x, y] : ring) {
        minx = std::min(minx, x);
        maxx = std::max(maxx, x);
        miny = std::min(miny, y);
        maxy = std::max(maxy, y);
    }
    auto inside = [&](double x, double y) {
        bool in = false;
        for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
            const auto [xi, yi] = ring[i];
            const auto [xj, yj] = ring[j];
            if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) {
                in = !in;
            }
        }
        return in;
    };
    std::vector<PixelIndex> px;
    for (std::int32_t r = 0; r < g.n_rows; ++r) {
        const double y = g.center_y(r);
        if (y < miny || y > maxy) {
            continue;
        }
        for (std::int32_t c = 0; c < g.n_cols; ++c) {
            const double x = g.center_x(c);
            if (x >= minx && x <= maxx && inside(x, y)) {
                px.push_back({r, c});
            }
        }
    }
    return make_parcel(std::move(id), std::move(px));
}

GridRaster read_ascii_grid(std::istream& in, const std::string& source) {
    GridGeometry g;
    double nodata = GridRaster::default_nodata;
    bool have_cols = false, have_rows = false, have_x = false, have_y = false, have_size = false;
    bool x_center = false, y_center = false;

    std::string token;
    std::vector<double> values;
    // Header: keyword/value pairs until the first numeric token.
    while (in >> token) {
        if (!token.empty() && (std::isalpha(static_cast<unsigned char>(token[0])) != 0)) {
            std::string k = token;
            std::transform(k.begin(), k.end(), k.begin(), [](unsigned char ch) { return std::tolower(ch); });
            std::string value;
            if (!(in >> value)) {
                throw Error(source + ": header keyword '" + token + "' has no value");
            }
            const double v = parse_double(value, source + " header " + k);
            if (k == "ncols") {
                g.n_cols = static_cast<std::int32_t>(v);
                have_cols = true;
            } else if (k == "nrows") {
                g.n_rows = static_cast<std::int32_t>(v);
                have_rows = true;
            } else if (k == "xllcorner" || k == "xllcenter") {
                g.origin_x = v;
                x_center = k == "xllcenter";
                have_x = true;
            } else if (k == "yllcorner" || k == "yllcenter") {
                g.origin_y = v;
                y_center = k == "yllcenter";
                have_y = true;
            } else if (k == "cellsize") {
                g.pixel_size = v;
                have_size = true;
            } else if (k == "nodata_value") {
                nodata = v;
            } else {
                throw Error(source + ": unknown header keyword '" + token + "'");
            }
            continue;
        }
        values.push_back(parse_double(token, source + " cell value"));
        break;
    }
    if (!(have_cols && have_rows && have_x && have_y && have_size)) {
        throw Error(source + ": incomplete ESRI ASCII header");
    }
    if (x_center) {
        g.origin_x -= 0.5 * g.pixel_size;
    }
    if (y_center) {
        g.origin_y -= 0.5 * g.pixel_size;
    }
    g.validate();
    values.reserve(g.size());
    while (values.size() < g.size() && (in >> token)) {
        values.push_back(parse_double(token, source + " cell value"));
    }
    if (values.size() != g.size()) {
        throw Error(source + ": expected " + std::to_string(g.size()) + " cell values, found " +
                    std::to_string(values.size()));
    }
    if (in >> token) {
        throw Error(source + ": trailing data after " + std::to_string(g.size()) + " cell values");
    }
    return GridRaster(g, std::move(values), nodata);
}

GridRaster read_ascii_grid(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open '" + path + "'");
    }
    return read_ascii_grid(in, path);
}

void write_ascii_grid(std::ostream& out, const GridRaster& raster) {
    const auto& g = raster.geometry();
    out << "ncols " << g.n_cols << '\n'
        << "nrows " << g.n_rows << '\n'
        << "xllcorner " << format_double(g.origin_x) << '\n'
        << "yllcorner " << format_double(g.origin_y) << '\n'
        << "cellsize " << format_double(g.pixel_size) << '\n'
        << "NODATA_value " << format_double(raster.nodata()) << '\n';
    const auto v = raster.values();
    for (std::int32_t r = 0; r < g.n_rows; ++r) {
        for (std::int32_t c = 0; c < g.n_cols; ++c) {
            if (c > 0) {
                out << ' ';
            }
            out << format_double(v[g.linear({r, c})]);
        }
        out << '\n';
    }
}

void write_ascii_grid(const std::string& path, const GridRaster& raster) {
    auto out = open_output(path);
    write_ascii_grid(out, raster);
}

std::vector<Parcel> read_parcels(const std::string& pixels_path, const std::string& metadata_path) {
    const auto t = CsvTable::read(pixels_path);
    const auto c_id = t.column("parcel_id");
    const auto c_row = t.column("row");
    const auto c_col = t.column("col");

    std::vector<std::string> order;
    std::unordered_map<std::string, std::vector<PixelIndex>> pixels;
    for (std::size_t i = 0; i < t.rows(); ++i) {
        const auto& id = t.field(i, c_id);
        auto [it, fresh] = pixels.try_emplace(id);
        if (fresh) {
            order.push_back(id);
        }
        it->second.push_back({static_cast<std::int32_t>(t.integer(i, c_row)),
                              static_cast<std::int32_t>(t.integer(i, c_col))});
    }
    std::vector<Parcel> out;
    out.reserve(order.size());
    std::unordered_map<std::string, std::size_t> index;
    for (const auto& id : order) {
        index[id] = out.size();
        out.push_back(make_parcel(id, std::move(pixels[id])));
    }

    if (!metadata_path.empty()) {
        const auto m = CsvTable::read(metadata_path);
        const auto m_id = m.column("parcel_id");
        const auto m_area = m.column("area_acres");
        const auto m_perim = m.column("perimeter_m");
        for (std::size_t i = 0; i < m.rows(); ++i) {
            const auto it = index.find(m.field(i, m_id));
            if (it == index.end()) {
                throw Error(metadata_path + ": metadata for unknown parcel '" + m.field(i, m_id) + "'");
            }
            out[it->second].area_acres = m.number(i, m_area);
            out[it->second].perimeter_m = m.number(i, m_perim);
        }
    }
    return out;
}

void write_parcels(const std::string& pixels_path, const std::string& metadata_path,
                   const std::vector<Parcel>& parcels) {
    {
        auto out = open_output(pixels_path);
        CsvWriter w(out);
        w.header({"parcel_id", "row", "col"});
        for (const auto& p : parcels) {
            for (const auto& px : p.pixels) {
                w.field(p.id).field(px.row).field(px.col).end_row();
            }
        }
    }
    if (!metadata_path.empty()) {
        auto out = open_output(metadata_path);
        CsvWriter w(out);
        w.header({"parcel_id", "area_acres", "perimeter_m"});
        for (const auto& p : parcels) {
            if (p.area_acres && p.perimeter_m) {
                w.field(p.id).field(*p.area_acres).field(*p.perimeter_m).end_row();
            }
        }
    }
}

}  // namespace parcelse
