#include "parcelse/aggregate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "parcelse/csv.hpp"
#include "parcelse/error.hpp"
#include "parcelse/parallel.hpp"

namespace parcelse {

namespace {

std::vector<double> parcel_sigma2(const Parcel& parcel, const GridRaster& sigma2) {
    if (parcel.pixels.empty()) {
        throw Error("var_res: empty parcel '" + parcel.id + "'");
    }
    const auto& g = sigma2.geometry();
    std::vector<double> out(parcel.pixels.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const PixelIndex p = parcel.pixels[i];
        if (!g.contains(p)) {
            throw Error("var_res: parcel '" + parcel.id + "' has a pixel outside the sigma^2 raster");
        }
        const double v = sigma2[p];
        if (sigma2.is_nodata(v) || v < 0.0) {
            throw Error("var_res: parcel '" + parcel.id + "' has a nodata or negative sigma^2 at row " +
                        std::to_string(p.row) + ", col " + std::to_string(p.col));
        }
        out[i] = v;
    }
    return out;
}

void check_factor(double factor) {
    if (!std::isfinite(factor) || factor < 0.0) {
        throw Error("distance adjustment factor must be finite and >= 0, got " + format_double(factor));
    }
}

}  // namespace

VarResTerms var_res_terms(const Parcel& parcel, const GridRaster& sigma2, const VariogramModel& model,
                          double factor) {
    check_factor(factor);
    model.validate();
    const std::vector<double> s2 = parcel_sigma2(parcel, sigma2);
    const std::size_t n = s2.size();
    const double nn = static_cast<double>(n) * static_cast<double>(n);

    VarResTerms t;
    t.n_pixels = n;
    double sum_s2 = 0.0;
    for (double v : s2) {
        sum_s2 += v;
    }
    t.independent = sum_s2 / nn;
    if (factor == 0.0 || n == 1) {
        return t;
    }

    const double ps = sigma2.geometry().pixel_size;
    const auto& px = parcel.pixels;
    std::int64_t dr_max = px.back().row - px.front().row;
    std::int32_t c_lo = px.front().col;
    std::int32_t c_hi = c_lo;
    for (const auto& p : px) {
        c_lo = std::min(c_lo, p.col);
        c_hi = std::max(c_hi, p.col);
    }
    const std::int64_t dc_max = c_hi - c_lo;
    const double cut_px = model.range * factor / ps;
    const auto k_cut = static_cast<std::int64_t>(std::min(cut_px * cut_px + 1.0, 4.0e18));
    const std::int64_t k_max = std::min(k_cut, dr_max * dr_max + dc_max * dc_max);

    // rho by squared pixel offset; 0 beyond the cutoff.
    std::vector<double> rho(static_cast<std::size_t>(k_max) + 1, 0.0);
    std::vector<char> inside(rho.size(), 0);
    for (std::int64_t k = 1; k <= k_max; ++k) {
        const double h = DistanceHistogram::distance_for(k, ps) / factor;
        if (h <= model.range) {
            rho[static_cast<std::size_t>(k)] = model.rho(h);
            inside[static_cast<std::size_t>(k)] = 1;
        }
    }
    const auto row_span = static_cast<std::int64_t>(std::floor(std::sqrt(static_cast<double>(k_max))));

    const bool constant = std::all_of(s2.begin(), s2.end(), [&](double v) { return v == s2.front(); });
    if (constant) {
        t.histogram_path = true;
        std::vector<std::uint64_t> counts(rho.size(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                const std::int64_t dr = px[j].row - px[i].row;
                if (dr > row_span) {
                    break;
                }
                const std::int64_t dc = px[j].col - px[i].col;
                const std::int64_t k = dr * dr + dc * dc;
                if (k <= k_max) {
                    ++counts[static_cast<std::size_t>(k)];
                }
            }
        }
        std::vector<double> terms;
        terms.reserve(counts.size());
        for (std::size_t k = 1; k < counts.size(); ++k) {
            if (counts[k] > 0 && inside[k]) {
                terms.push_back(static_cast<double>(counts[k]) * rho[k]);
                t.pairs_in_range += counts[k];
            }
        }
        t.covariance = 2.0 * s2.front() * pairwise_sum(terms) / nn;
        return t;
    }

    std::vector<double> sigma(n);
    for (std::size_t i = 0; i < n; ++i) {
        sigma[i] = std::sqrt(s2[i]);
    }
    std::vector<double> partial(n, 0.0);
    std::vector<std::size_t> in_range(n, 0);
    parallel_for(n, [&](std::size_t i) {
        double acc = 0.0;
        std::size_t count = 0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const std::int64_t dr = px[j].row - px[i].row;
            if (dr > row_span) {
                break;
            }
            const std::int64_t dc = px[j].col - px[i].col;
            const std::int64_t k = dr * dr + dc * dc;
            if (k <= k_max) {
                acc += sigma[j] * rho[static_cast<std::size_t>(k)];
                count += static_cast<std::size_t>(inside[static_cast<std::size_t>(k)]);
            }
        }
        partial[i] = sigma[i] * acc;
        in_range[i] = count;
    });
    for (std::size_t c : in_range) {
        t.pairs_in_range += c;
    }
    t.covariance = 2.0 * pairwise_sum(partial) / nn;
    return t;
}

double var_res(const Parcel& parcel, const GridRaster& sigma2, const VariogramModel& model, double factor) {
    return var_res_terms(parcel, sigma2, model, factor).total();
}

double var_res_exact(const Parcel& parcel, const GridRaster& sigma2, const VariogramModel& model, double factor) {
    check_factor(factor);
    model.validate();
    const std::vector<double> s2 = parcel_sigma2(parcel, sigma2);
    const auto& g = sigma2.geometry();
    const std::size_t n = s2.size();
    const double nn = static_cast<double>(n) * static_cast<double>(n);
    double first = 0.0;
    for (double v : s2) {
        first += v;
    }
    double second = 0.0;
    if (factor > 0.0) {
        for (std::size_t i = 0; i < n; ++i) {
            const double xi = g.center_x(parcel.pixels[i].col);
            const double yi = g.center_y(parcel.pixels[i].row);
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) {
                    continue;
                }
                const double h = std::hypot(g.center_x(parcel.pixels[j].col) - xi,
                                            g.center_y(parcel.pixels[j].row) - yi) /
                                 factor;
                if (h <= model.range) {
                    second += std::sqrt(s2[i] * s2[j]) * model.rho(h);
                }
            }
        }
    }
    return first / nn + second / nn;
}

Record VarianceReport::to_record() const {
    Record r;
    r.set("parcel_id", parcel_id);
    r.set_int("n_pixels", static_cast<long long>(n_pixels));
    r.set("agb", agb);
    r.set("var_boot", var_boot);
    if (components) {
        r.set("var_sam", components->var_sam);
        r.set("var_lc", components->var_lc);
        r.set("var_ref", components->var_ref);
    }
    r.set("var_res", var_res);
    r.set("var_total", var_total);
    r.set("se", se);
    r.set("rel_se", rel_se);
    for (const auto& s : sensitivity) {
        r.set("var_res_x" + format_double(s.factor), s.var_res);
        r.set("var_total_x" + format_double(s.factor), s.var_total);
    }
    return r;
}

VarianceReport total(std::string parcel_id, double agb, double var_boot, double var_res) {
    if (!(var_boot >= 0.0) || !(var_res >= 0.0)) {
        throw Error("parcel '" + parcel_id + "': variance inputs must be >= 0 (var_boot " + format_double(var_boot) +
                    ", var_res " + format_double(var_res) + ")");
    }
    VarianceReport r;
    r.parcel_id = std::move(parcel_id);
    r.agb = agb;
    r.var_boot = var_boot;
    r.var_res = var_res;
    r.var_total = var_boot + var_res;
    r.se = std::sqrt(r.var_total);
    r.rel_se = agb > 0.0 ? r.se / agb * 100.0 : std::numeric_limits<double>::quiet_NaN();
    return r;
}

std::vector<SensitivityEntry> sensitivity(const Parcel& parcel, const GridRaster& sigma2,
                                          const VariogramModel& model, std::span<const double> factors,
                                          double var_boot) {
    std::vector<SensitivityEntry> out;
    out.reserve(factors.size());
    for (double f : factors) {
        const double v = var_res(parcel, sigma2, model, f);
        out.push_back({f, v, var_boot + v});
    }
    return out;
}

std::vector<VarianceReport> aggregate_parcels(std::span<const ParcelInputs> inputs, const GridRaster& sigma2,
                                              const VariogramModel& model, std::span<const double> factors) {
    std::vector<VarianceReport> out(inputs.size());
    parallel_for(inputs.size(), [&](std::size_t i) {
        const ParcelInputs& in = inputs[i];
        try {
            const double vr = var_res(*in.parcel, sigma2, model);
            VarianceReport r = total(in.parcel->id, in.agb, in.var_boot, vr);
            r.n_pixels = in.parcel->size();
            r.components = in.components;
            r.sensitivity = sensitivity(*in.parcel, sigma2, model, factors, in.var_boot);
            out[i] = std::move(r);
        } catch (const Error& e) {
            throw StageError("aggregate", std::string(e.what()) + " (parcel '" + in.parcel->id + "')");
        }
    });
    return out;
}

void write_reports_csv(const std::string& path, std::span<const VarianceReport> reports) {
    auto out = open_output(path);
    CsvWriter w(out);
    std::vector<std::string> cols = {"parcel_id", "n_pixels", "agb",       "var_boot", "var_sam", "var_lc",
                                     "var_ref",   "var_res",  "var_total", "se",       "rel_se"};
    std::vector<double> factors;
    if (!reports.empty()) {
        for (const auto& s : reports.front().sensitivity) {
            factors.push_back(s.factor);
        }
    }
    for (double f : factors) {
        cols.push_back("var_res_x" + format_double(f));
    }
    for (double f : factors) {
        cols.push_back("var_total_x" + format_double(f));
    }
    w.header(cols);
    for (const auto& r : reports) {
        w.field(r.parcel_id).field(r.n_pixels).field(r.agb).field(r.var_boot);
        if (r.components) {
            w.field(r.components->var_sam).field(r.components->var_lc).field(r.components->var_ref);
        } else {
            w.field("").field("").field("");
        }
        w.field(r.var_res).field(r.var_total).field(r.se).field(r.rel_se);
        if (r.sensitivity.size() != factors.size()) {
            throw Error("report rows disagree on sensitivity factors");
        }
        for (const auto& s : r.sensitivity) {
            w.field(s.var_res);
        }
        for (const auto& s : r.sensitivity) {
            w.field(s.var_total);
        }
        w.end_row();
    }
}

std::vector<double> parse_factors(std::string_view comma_list) {
    std::vector<double> out;
    for (const auto& item : split(comma_list, ',')) {
        const double f = parse_double(trim(item), "sensitivity factor");
        check_factor(f);
        out.push_back(f);
    }
    return out;
}

}  // namespace parcelse
