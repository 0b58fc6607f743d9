#include "parcelse/variogram.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "parcelse/csv.hpp"
#include "parcelse/error.hpp"
#include "parcelse/parallel.hpp"

namespace parcelse {

std::string_view to_string(VariogramFamily f) {
    switch (f) {
        case VariogramFamily::exponential: return "exponential";
        case VariogramFamily::spherical: return "spherical";
        case VariogramFamily::gaussian: return "gaussian";
    }
    return "exponential";
}

VariogramFamily parse_variogram_family(std::string_view s) {
    s = trim(s);
    if (s == "exponential" || s == "exp") {
        return VariogramFamily::exponential;
    }
    if (s == "spherical" || s == "sph") {
        return VariogramFamily::spherical;
    }
    if (s == "gaussian" || s == "gau") {
        return VariogramFamily::gaussian;
    }
    throw Error("unknown variogram family '" + std::string(s) + "'");
}

std::vector<VariogramFamily> parse_variogram_families(std::string_view comma_list) {
    std::vector<VariogramFamily> out;
    for (const auto& item : split(comma_list, ',')) {
        out.push_back(parse_variogram_family(item));
    }
    if (out.empty()) {
        throw Error("empty variogram family list");
    }
    return out;
}

double VariogramModel::shape(double h) const {
    if (h <= 0.0) {
        return 0.0;
    }
    const double t = h / range;
    switch (family) {
        case VariogramFamily::exponential: return 1.0 - std::exp(-3.0 * t);
        case VariogramFamily::spherical: return t >= 1.0 ? 1.0 : 1.5 * t - 0.5 * t * t * t;
        case VariogramFamily::gaussian: return 1.0 - std::exp(-3.0 * t * t);
    }
    return 0.0;
}

double VariogramModel::gamma(double h) const {
    if (h <= 0.0) {
        return 0.0;
    }
    return nugget + partial_sill() * shape(h);
}

double VariogramModel::rho(double h) const {
    if (h <= 0.0) {
        return 1.0;
    }
    if (sill <= 0.0) {
        return 0.0;
    }
    return std::clamp((sill - gamma(h)) / sill, 0.0, 1.0);
}

void VariogramModel::validate() const {
    if (!std::isfinite(nugget) || !std::isfinite(sill) || !std::isfinite(range)) {
        throw Error("variogram parameters must be finite");
    }
    if (nugget < 0.0 || sill < nugget) {
        throw Error("variogram requires 0 <= nugget <= sill (nugget " + format_double(nugget) + ", sill " +
                    format_double(sill) + ")");
    }
    if (range <= 0.0) {
        throw Error("variogram range must be positive");
    }
}

Record VariogramModel::to_record() const {
    Record r;
    r.set("family", std::string(to_string(family)));
    r.set("nugget", nugget);
    r.set("sill", sill);
    r.set("range", range);
    r.set("range_form", "practical");
    return r;
}

VariogramModel VariogramModel::from_record(const Record& r) {
    VariogramModel m;
    m.family = parse_variogram_family(r.get("family"));
    m.nugget = r.number("nugget");
    m.sill = r.number("sill");
    m.range = r.number("range");
    m.validate();
    return m;
}

GridRaster residual_field(const GridRaster& pred, const GridRaster& reference) {
    if (!pred.geometry().aligned_with(reference.geometry())) {
        throw Error("residual_field: prediction and reference grids are not aligned");
    }
    GridRaster out(pred.geometry(), 0.0, pred.nodata());
    const auto p = pred.values();
    const auto r = reference.values();
    auto o = out.values();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] = (pred.is_nodata(p[i]) || reference.is_nodata(r[i])) ? pred.nodata() : p[i] - r[i];
    }
    return out;
}

std::vector<ResidualPoint> sample_residuals(const GridRaster& residuals, std::size_t n, Rng& rng) {
    const auto& g = residuals.geometry();
    const auto v = residuals.values();
    std::vector<std::size_t> valid;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!residuals.is_nodata(v[i])) {
            valid.push_back(i);
        }
    }
    if (n > 0 && n < valid.size()) {
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j = i + rng.index(valid.size() - i);
            std::swap(valid[i], valid[j]);
        }
        valid.resize(n);
        std::sort(valid.begin(), valid.end());
    }
    std::vector<ResidualPoint> out;
    out.reserve(valid.size());
    for (std::size_t idx : valid) {
        const PixelIndex p = g.pixel(idx);
        out.push_back({g.center_x(p.col), g.center_y(p.row), v[idx]});
    }
    return out;
}

std::vector<ResidualPoint> read_residual_points(const std::string& path) {
    const CsvTable t = CsvTable::read(path);
    const std::size_t cx = t.column("x");
    const std::size_t cy = t.column("y");
    const std::size_t ce = t.column("residual");
    std::vector<ResidualPoint> out(t.rows());
    for (std::size_t i = 0; i < t.rows(); ++i) {
        out[i] = {t.number(i, cx), t.number(i, cy), t.number(i, ce)};
    }
    return out;
}

void write_residual_points(const std::string& path, std::span<const ResidualPoint> points) {
    auto out = open_output(path);
    CsvWriter w(out);
    w.header({"x", "y", "residual"});
    for (const auto& p : points) {
        w.field(p.x).field(p.y).field(p.e);
        w.end_row();
    }
}

void EmpiricalVariogram::write_csv(const std::string& path) const {
    auto out = open_output(path);
    CsvWriter w(out);
    w.header({"bin_lower", "bin_upper", "distance", "semivariance", "pairs"});
    for (const auto& b : bins) {
        const double k = std::ceil(b.distance / bin_width) - 1.0;
        w.field(k * bin_width).field((k + 1.0) * bin_width).field(b.distance).field(b.semivariance).field(b.pairs);
        w.end_row();
    }
}

EmpiricalVariogram EmpiricalVariogram::read_csv(const std::string& path) {
    const CsvTable t = CsvTable::read(path);
    const std::size_t lo = t.column("bin_lower");
    const std::size_t hi = t.column("bin_upper");
    const std::size_t cd = t.column("distance");
    const std::size_t cg = t.column("semivariance");
    const std::size_t cn = t.column("pairs");
    EmpiricalVariogram emp;
    for (std::size_t i = 0; i < t.rows(); ++i) {
        if (i == 0) {
            emp.bin_width = t.number(i, hi) - t.number(i, lo);
        }
        const auto pairs = t.integer(i, cn);
        if (pairs <= 0) {
            throw Error(path + ": bin with no pairs on data row " + std::to_string(i + 1));
        }
        emp.bins.push_back({t.number(i, cd), t.number(i, cg), static_cast<std::size_t>(pairs)});
    }
    if (!(emp.bin_width > 0.0)) {
        throw Error(path + ": bin width must be positive");
    }
    return emp;
}

namespace {

struct BinAccumulator {
    std::vector<double> distance;
    std::vector<double> sq_diff;
    std::vector<std::size_t> count;

    explicit BinAccumulator(std::size_t n = 0) : distance(n, 0.0), sq_diff(n, 0.0), count(n, 0) {}
};

constexpr std::size_t variogram_chunk = 512;
constexpr int cells_per_lag = 2;

}  // namespace

EmpiricalVariogram empirical_variogram(std::span<const ResidualPoint> points, double bin_width, double max_lag) {
    if (points.size() < 2) {
        throw Error("empirical variogram needs at least 2 points");
    }
    if (!(bin_width > 0.0) || !(max_lag > 0.0)) {
        throw Error("empirical variogram needs positive bin width and max lag");
    }
    const auto n_bins = static_cast<std::size_t>(std::ceil(max_lag / bin_width));

    double min_x = points[0].x;
    double min_y = points[0].y;
    double max_x = points[0].x;
    for (const auto& p : points) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.e)) {
            throw Error("empirical variogram input contains a non-finite value");
        }
        min_x = std::min(min_x, p.x);
        min_y = std::min(min_y, p.y);
        max_x = std::max(max_x, p.x);
    }
    const double cell = max_lag / cells_per_lag;
    const auto n_cx = static_cast<std::int64_t>(std::floor((max_x - min_x) / cell)) + 1;
    auto cell_of = [&](const ResidualPoint& p) {
        const auto cx = static_cast<std::int64_t>(std::floor((p.x - min_x) / cell));
        const auto cy = static_cast<std::int64_t>(std::floor((p.y - min_y) / cell));
        return std::pair{cy, cx};
    };

    // Points ordered by (cell row, cell col, input position).
    std::vector<std::pair<std::int64_t, std::size_t>> keyed(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto [cy, cx] = cell_of(points[i]);
        keyed[i] = {cy * n_cx + cx, i};
    }
    std::sort(keyed.begin(), keyed.end());
    std::vector<std::int64_t> keys(keyed.size());
    for (std::size_t i = 0; i < keyed.size(); ++i) {
        keys[i] = keyed[i].first;
    }

    const std::size_t n_chunks = (points.size() + variogram_chunk - 1) / variogram_chunk;
    std::vector<BinAccumulator> partial(n_chunks);
    parallel_for(n_chunks, [&](std::size_t c) {
        BinAccumulator acc(n_bins);
        const std::size_t begin = c * variogram_chunk;
        const std::size_t end = std::min(points.size(), begin + variogram_chunk);
        for (std::size_t a = begin; a < end; ++a) {
            const ResidualPoint& p = points[keyed[a].second];
            const auto [cy, cx] = cell_of(p);
            for (std::int64_t dy = -cells_per_lag; dy <= cells_per_lag; ++dy) {
                for (std::int64_t dx = -cells_per_lag; dx <= cells_per_lag; ++dx) {
                    const std::int64_t ncx = cx + dx;
                    if (ncx < 0 || ncx >= n_cx || cy + dy < 0) {
                        continue;
                    }
                    const std::int64_t k = (cy + dy) * n_cx + ncx;
                    auto first = std::lower_bound(keys.begin(), keys.end(), k);
                    auto last = std::upper_bound(first, keys.end(), k);
                    auto from = static_cast<std::size_t>(first - keys.begin());
                    const auto to = static_cast<std::size_t>(last - keys.begin());
                    from = std::max(from, a + 1);
                    for (std::size_t b = from; b < to; ++b) {
                        const ResidualPoint& q = points[keyed[b].second];
                        const double d = std::hypot(q.x - p.x, q.y - p.y);
                        if (d <= 0.0 || d > max_lag) {
                            continue;
                        }
                        auto bin = static_cast<std::size_t>(std::ceil(d / bin_width)) - 1;
                        bin = std::min(bin, n_bins - 1);
                        const double diff = q.e - p.e;
                        acc.distance[bin] += d;
                        acc.sq_diff[bin] += diff * diff;
                        ++acc.count[bin];
                    }
                }
            }
        }
        partial[c] = std::move(acc);
    });

    BinAccumulator total(n_bins);
    for (const auto& acc : partial) {
        for (std::size_t k = 0; k < n_bins; ++k) {
            total.distance[k] += acc.distance[k];
            total.sq_diff[k] += acc.sq_diff[k];
            total.count[k] += acc.count[k];
        }
    }
    EmpiricalVariogram emp;
    emp.bin_width = bin_width;
    for (std::size_t k = 0; k < n_bins; ++k) {
        if (total.count[k] == 0) {
            continue;
        }
        const auto n = static_cast<double>(total.count[k]);
        emp.bins.push_back({total.distance[k] / n, total.sq_diff[k] / (2.0 * n), total.count[k]});
    }
    return emp;
}

double default_max_lag(std::span<const Parcel> parcels, double pixel_size) {
    double diameter = 0.0;
    for (const auto& parcel : parcels) {
        if (parcel.pixels.empty()) {
            continue;
        }
        std::int32_t r0 = parcel.pixels.front().row;
        std::int32_t r1 = r0;
        std::int32_t c0 = parcel.pixels.front().col;
        std::int32_t c1 = c0;
        for (const auto& p : parcel.pixels) {
            r0 = std::min(r0, p.row);
            r1 = std::max(r1, p.row);
            c0 = std::min(c0, p.col);
            c1 = std::max(c1, p.col);
        }
        diameter = std::max(diameter, pixel_size * std::hypot(double(r1 - r0), double(c1 - c0)));
    }
    if (diameter <= 0.0) {
        diameter = pixel_size;
    }
    return 2.0 * diameter;
}

std::string_view to_string(VariogramWeights w) { return w == VariogramWeights::empirical ? "empirical" : "model"; }

VariogramWeights parse_variogram_weights(std::string_view s) {
    if (s == "empirical") {
        return VariogramWeights::empirical;
    }
    if (s == "model") {
        return VariogramWeights::model;
    }
    throw Error("unknown variogram weighting '" + std::string(s) + "'");
}

namespace {

struct FitData {
    std::vector<double> h;
    std::vector<double> g;
    std::vector<double> n;
    double floor = 0.0;
};

double weight(const FitData& d, std::size_t k, double gamma_ref) {
    const double den = std::max(gamma_ref, d.floor);
    return d.n[k] / (den * den);
}

struct LinearFit {
    double nugget = 0.0;
    double psill = 0.0;
    double sse = std::numeric_limits<double>::infinity();
};

// Nonnegative weighted least squares of g on [1, f].
LinearFit solve_nnls(const std::vector<double>& f, const std::vector<double>& g, const std::vector<double>& w) {
    double sw = 0.0, sf = 0.0, sff = 0.0, sg = 0.0, sfg = 0.0;
    for (std::size_t k = 0; k < f.size(); ++k) {
        sw += w[k];
        sf += w[k] * f[k];
        sff += w[k] * f[k] * f[k];
        sg += w[k] * g[k];
        sfg += w[k] * f[k] * g[k];
    }
    auto sse = [&](double a, double b) {
        double s = 0.0;
        for (std::size_t k = 0; k < f.size(); ++k) {
            const double r = g[k] - a - b * f[k];
            s += w[k] * r * r;
        }
        return s;
    };
    std::vector<std::pair<double, double>> candidates;
    const double det = sw * sff - sf * sf;
    if (det > 1e-12 * sw * sff) {
        const double a = (sff * sg - sf * sfg) / det;
        const double b = (sw * sfg - sf * sg) / det;
        if (a >= 0.0 && b >= 0.0) {
            candidates.emplace_back(a, b);
        }
    }
    candidates.emplace_back(std::max(0.0, sg / sw), 0.0);
    if (sff > 0.0) {
        candidates.emplace_back(0.0, std::max(0.0, sfg / sff));
    }
    LinearFit best;
    for (const auto& [a, b] : candidates) {
        const double s = sse(a, b);
        if (s < best.sse) {
            best = {a, b, s};
        }
    }
    return best;
}

struct RangeFit {
    LinearFit lin;
    double range = 0.0;
};

RangeFit fit_at_range(const FitData& d, VariogramFamily family, double range, const VariogramFitOptions& opt) {
    VariogramModel m{family, 0.0, 0.0, range};
    const std::size_t nb = d.h.size();
    std::vector<double> f(nb);
    for (std::size_t k = 0; k < nb; ++k) {
        f[k] = m.shape(d.h[k]);
    }
    std::vector<double> w(nb);
    for (std::size_t k = 0; k < nb; ++k) {
        w[k] = weight(d, k, d.g[k]);
    }
    LinearFit lin = solve_nnls(f, d.g, w);
    if (opt.weights == VariogramWeights::model) {
        for (int it = 0; it < opt.max_reweights; ++it) {
            for (std::size_t k = 0; k < nb; ++k) {
                w[k] = weight(d, k, lin.nugget + lin.psill * f[k]);
            }
            const LinearFit next = solve_nnls(f, d.g, w);
            const double scale = std::max(1e-300, next.nugget + next.psill);
            const bool done = std::abs(next.nugget - lin.nugget) <= 1e-12 * scale &&
                              std::abs(next.psill - lin.psill) <= 1e-12 * scale;
            lin = next;
            if (done) {
                break;
            }
        }
    }
    return {lin, range};
}

}  // namespace

double weighted_sse(const EmpiricalVariogram& emp, const VariogramModel& model, VariogramWeights weights) {
    double gmax = 0.0;
    for (const auto& b : emp.bins) {
        gmax = std::max(gmax, b.semivariance);
    }
    const double floor = std::max(1e-12 * gmax, std::numeric_limits<double>::min());
    double s = 0.0;
    for (const auto& b : emp.bins) {
        const double gm = model.gamma(b.distance);
        const double den = std::max(weights == VariogramWeights::empirical ? b.semivariance : gm, floor);
        const double r = b.semivariance - gm;
        s += static_cast<double>(b.pairs) * r * r / (den * den);
    }
    return s;
}

Record VariogramFit::to_record() const {
    Record r = model.to_record();
    r.set("criterion", criterion);
    r.set("criterion_kind", "weighted_sse");
    r.set("weights", std::string(to_string(weights)));
    r.set_int("n_bins", static_cast<long long>(n_bins));
    return r;
}

VariogramFit fit_model(const EmpiricalVariogram& emp, VariogramFamily family, const VariogramFitOptions& options) {
    if (emp.bins.size() < 4) {
        throw Error("variogram fit needs at least 4 bins, got " + std::to_string(emp.bins.size()));
    }
    FitData d;
    double gmax = 0.0;
    for (const auto& b : emp.bins) {
        if (!std::isfinite(b.semivariance) || b.semivariance < 0.0 || !(b.distance > 0.0)) {
            throw Error("variogram fit: invalid bin at distance " + format_double(b.distance));
        }
        d.h.push_back(b.distance);
        d.g.push_back(b.semivariance);
        d.n.push_back(static_cast<double>(b.pairs));
        gmax = std::max(gmax, b.semivariance);
    }
    VariogramFit out;
    out.weights = options.weights;
    out.n_bins = emp.bins.size();
    out.model.family = family;
    const double h_min = d.h.front();
    const double h_max = d.h.back();
    if (gmax == 0.0) {
        out.model.range = h_max;
        return out;
    }
    d.floor = 1e-12 * gmax;

    const double lo = std::log(0.25 * h_min);
    const double hi = std::log(10.0 * h_max);
    const std::size_t n_grid = std::max<std::size_t>(options.range_grid, 8);
    auto objective = [&](double log_r) { return fit_at_range(d, family, std::exp(log_r), options); };

    std::size_t best_i = 0;
    RangeFit best;
    for (std::size_t i = 0; i < n_grid; ++i) {
        const double t = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_grid - 1);
        const RangeFit f = objective(t);
        if (f.lin.sse < best.lin.sse) {
            best = f;
            best_i = i;
        }
    }
    if (!std::isfinite(best.lin.sse)) {
        throw Error("variogram fit (" + std::string(to_string(family)) + ") found no finite criterion over " +
                    std::to_string(emp.bins.size()) + " bins");
    }

    // Golden-section refinement on log range within the neighbouring grid cells.
    const double step = (hi - lo) / static_cast<double>(n_grid - 1);
    double a = lo + step * (static_cast<double>(best_i) - 1.0);
    double b = lo + step * (static_cast<double>(best_i) + 1.0);
    a = std::max(a, lo);
    b = std::min(b, hi);
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = b - phi * (b - a);
    double x2 = a + phi * (b - a);
    RangeFit f1 = objective(x1);
    RangeFit f2 = objective(x2);
    for (int it = 0; it < 200 && (b - a) > 1e-13; ++it) {
        if (f1.lin.sse <= f2.lin.sse) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = objective(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = objective(x2);
        }
    }
    for (const RangeFit* f : {&f1, &f2}) {
        if (f->lin.sse < best.lin.sse) {
            best = *f;
        }
    }

    if (best.lin.psill > 0.0 && best.range >= 0.999 * std::exp(hi)) {
        std::ostringstream msg;
        msg << "variogram fit (" << to_string(family) << ") did not converge: range reached the search bound "
            << format_double(std::exp(hi)) << " m (nugget " << format_double(best.lin.nugget) << ", partial sill "
            << format_double(best.lin.psill) << ", criterion " << format_double(best.lin.sse) << ", "
            << emp.bins.size() << " bins up to " << format_double(h_max) << " m)";
        throw Error(msg.str());
    }
    out.model.nugget = best.lin.nugget;
    out.model.sill = best.lin.nugget + best.lin.psill;
    out.model.range = best.range;
    out.criterion = weighted_sse(emp, out.model, options.weights);
    return out;
}

VariogramSelection model_selection(const EmpiricalVariogram& emp, std::span<const VariogramFamily> candidates,
                                   const VariogramFitOptions& options) {
    if (candidates.empty()) {
        throw Error("model selection needs at least one candidate family");
    }
    VariogramSelection sel;
    for (VariogramFamily f : candidates) {
        try {
            sel.candidates.push_back(fit_model(emp, f, options));
        } catch (const Error& e) {
            sel.failures.emplace_back(f, e.what());
        }
    }
    if (sel.candidates.empty()) {
        std::string msg = "variogram model selection: every candidate failed";
        for (const auto& [f, what] : sel.failures) {
            msg += "; " + std::string(to_string(f)) + ": " + what;
        }
        throw Error(msg);
    }
    sel.best = sel.candidates.front();
    for (const auto& c : sel.candidates) {
        if (c.criterion < sel.best.criterion ||
            (c.criterion == sel.best.criterion && c.model.family < sel.best.model.family)) {
            sel.best = c;
        }
    }
    return sel;
}

}  // namespace parcelse
