#include "parcelse/resvar.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "parcelse/csv.hpp"
#include "parcelse/error.hpp"
#include "parcelse/error_models.hpp"
#include "parcelse/parallel.hpp"

namespace parcelse {

std::vector<AssessmentPlot> read_assessment(const std::string& path) {
    const CsvTable t = CsvTable::read(path);
    const std::size_t cp = t.column("predicted");
    const bool has_residual = t.has_column("residual");
    const std::size_t cr = has_residual ? t.column("residual") : t.column("observed");
    std::vector<AssessmentPlot> out(t.rows());
    for (std::size_t i = 0; i < t.rows(); ++i) {
        const double p = t.number(i, cp);
        const double v = t.number(i, cr);
        out[i] = {p, has_residual ? v : p - v};
    }
    return out;
}

void write_assessment(const std::string& path, std::span<const AssessmentPlot> plots) {
    auto out = open_output(path);
    CsvWriter w(out);
    w.header({"predicted", "residual"});
    for (const auto& p : plots) {
        w.field(p.predicted).field(p.residual);
        w.end_row();
    }
}

std::vector<VarianceBin> bin_assessment(std::span<const AssessmentPlot> plots, std::size_t n_initial,
                                        std::size_t min_count) {
    if (plots.size() < min_count || plots.size() < 2) {
        throw Error("bin_assessment needs at least " + std::to_string(std::max<std::size_t>(min_count, 2)) +
                    " plots, got " + std::to_string(plots.size()));
    }
    if (n_initial == 0) {
        throw Error("bin_assessment needs at least one interval");
    }
    double max_pred = 0.0;
    for (const auto& p : plots) {
        if (!std::isfinite(p.predicted) || !std::isfinite(p.residual) || p.predicted < 0.0) {
            throw Error("bin_assessment: predictions must be finite and >= 0, residuals finite");
        }
        max_pred = std::max(max_pred, p.predicted);
    }
    const double width = max_pred > 0.0 ? max_pred / static_cast<double>(n_initial) : 1.0;
    std::vector<std::vector<std::size_t>> members(n_initial);
    for (std::size_t i = 0; i < plots.size(); ++i) {
        auto k = static_cast<std::size_t>(std::floor(plots[i].predicted / width));
        members[std::min(k, n_initial - 1)].push_back(i);
    }

    struct Group {
        std::size_t first = 0;
        std::size_t last = 0;
        std::vector<std::size_t> idx;
    };
    std::vector<Group> groups;
    Group current;
    bool open = false;
    for (std::size_t k = 0; k < n_initial; ++k) {
        if (!open) {
            current = Group{k, k, {}};
            open = true;
        }
        current.last = k;
        current.idx.insert(current.idx.end(), members[k].begin(), members[k].end());
        if (current.idx.size() >= min_count) {
            groups.push_back(std::move(current));
            open = false;
        }
    }
    if (open) {
        if (groups.empty()) {
            groups.push_back(std::move(current));
        } else {
            groups.back().last = current.last;
            groups.back().idx.insert(groups.back().idx.end(), current.idx.begin(), current.idx.end());
        }
    }

    std::vector<VarianceBin> bins;
    bins.reserve(groups.size());
    for (auto& g : groups) {
        std::sort(g.idx.begin(), g.idx.end());
        const auto n = static_cast<double>(g.idx.size());
        double sum_x = 0.0;
        double sum_e = 0.0;
        for (std::size_t i : g.idx) {
            sum_x += plots[i].predicted;
            sum_e += plots[i].residual;
        }
        const double mean_e = sum_e / n;
        double ss = 0.0;
        for (std::size_t i : g.idx) {
            ss += (plots[i].residual - mean_e) * (plots[i].residual - mean_e);
        }
        VarianceBin b;
        b.lower = static_cast<double>(g.first) * width;
        b.upper = static_cast<double>(g.last + 1) * width;
        b.mean_agb = sum_x / n;
        b.variance = g.idx.size() > 1 ? ss / (n - 1.0) : 0.0;
        b.count = g.idx.size();
        bins.push_back(b);
    }
    return bins;
}

void write_bins(const std::string& path, std::span<const VarianceBin> bins) {
    auto out = open_output(path);
    CsvWriter w(out);
    w.header({"lower", "upper", "mean_agb", "variance", "count"});
    for (const auto& b : bins) {
        w.field(b.lower).field(b.upper).field(b.mean_agb).field(b.variance).field(b.count);
        w.end_row();
    }
}

std::vector<VarianceBin> read_bins(const std::string& path) {
    const CsvTable t = CsvTable::read(path);
    const std::size_t cl = t.column("lower");
    const std::size_t cu = t.column("upper");
    const std::size_t cm = t.column("mean_agb");
    const std::size_t cv = t.column("variance");
    const std::size_t cn = t.column("count");
    std::vector<VarianceBin> out(t.rows());
    for (std::size_t i = 0; i < t.rows(); ++i) {
        out[i] = {t.number(i, cl), t.number(i, cu), t.number(i, cm), t.number(i, cv),
                  static_cast<std::size_t>(t.integer(i, cn))};
    }
    return out;
}

std::string_view to_string(ResVarForm f) {
    switch (f) {
        case ResVarForm::linear: return "linear";
        case ResVarForm::log_linear: return "log-linear";
        case ResVarForm::log_log: return "log-log";
        case ResVarForm::cubic: return "cubic";
        case ResVarForm::spline: return "spline";
    }
    return "linear";
}

ResVarForm parse_resvar_form(std::string_view s) {
    s = trim(s);
    for (ResVarForm f : all_resvar_forms) {
        if (s == to_string(f)) {
            return f;
        }
    }
    if (s == "log_linear") {
        return ResVarForm::log_linear;
    }
    if (s == "log_log") {
        return ResVarForm::log_log;
    }
    throw Error("unknown residual-variance form '" + std::string(s) + "'");
}

std::vector<ResVarForm> parse_resvar_forms(std::string_view comma_list) {
    std::vector<ResVarForm> out;
    for (const auto& item : split(comma_list, ',')) {
        out.push_back(parse_resvar_form(item));
    }
    if (out.empty()) {
        throw Error("empty residual-variance form list");
    }
    return out;
}

std::size_t parameter_count(ResVarForm f) {
    return (f == ResVarForm::cubic || f == ResVarForm::spline) ? 4 : 2;
}

namespace {

bool log_response(ResVarForm f) { return f == ResVarForm::log_linear || f == ResVarForm::log_log; }

double cube_plus(double v) { return v > 0.0 ? v * v * v : 0.0; }

// Natural cubic spline basis on four knots: 1, x, d1 - d3, d2 - d3 with
// d_k(x) = ((x - k_k)^3_+ - (x - k_4)^3_+) / (k_4 - k_k).
std::vector<double> spline_basis(double x, const std::vector<double>& k) {
    auto d = [&](std::size_t i) { return (cube_plus(x - k[i]) - cube_plus(x - k[3])) / (k[3] - k[i]); };
    const double d3 = d(2);
    return {1.0, x, d(0) - d3, d(1) - d3};
}

std::vector<double> design_row(ResVarForm form, double x, const std::vector<double>& knots, double offset) {
    switch (form) {
        case ResVarForm::linear:
        case ResVarForm::log_linear: return {1.0, x};
        case ResVarForm::log_log: return {1.0, std::log(x + offset)};
        case ResVarForm::cubic: return {1.0, x, x * x, x * x * x};
        case ResVarForm::spline: return spline_basis(x, knots);
    }
    return {};
}

double quantile(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

double ResVarModel::evaluate(double agb) const {
    const double x = std::clamp(agb, 0.0, x_max);
    const auto row = design_row(form, x, knots, log_offset);
    double lin = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
        lin += coefficients[j] * row[j];
    }
    const double v = log_response(form) ? std::exp(lin) * cf : lin;
    return std::max(0.0, v);
}

Record ResVarModel::to_record() const {
    Record r;
    r.set("form", std::string(to_string(form)));
    std::string c;
    for (std::size_t i = 0; i < coefficients.size(); ++i) {
        c += (i ? "," : "") + format_double(coefficients[i]);
    }
    r.set("coefficients", c);
    std::string k;
    for (std::size_t i = 0; i < knots.size(); ++i) {
        k += (i ? "," : "") + format_double(knots[i]);
    }
    r.set("knots", k);
    r.set("cf", cf);
    r.set("r2", r2);
    r.set("log_offset", log_offset);
    r.set("x_max", x_max);
    r.set_int("n_bins", static_cast<long long>(n_bins));
    return r;
}

ResVarModel ResVarModel::from_record(const Record& r) {
    ResVarModel m;
    m.form = parse_resvar_form(r.get("form"));
    m.coefficients = r.numbers("coefficients");
    if (r.has("knots") && !trim(r.get("knots")).empty()) {
        m.knots = r.numbers("knots");
    }
    m.cf = r.has("cf") ? r.number("cf") : 1.0;
    m.r2 = r.has("r2") ? r.number("r2") : 0.0;
    m.log_offset = r.has("log_offset") ? r.number("log_offset") : 0.1;
    m.x_max = r.number("x_max");
    m.n_bins = r.has("n_bins") ? static_cast<std::size_t>(r.number("n_bins")) : 0;
    if (m.coefficients.size() != parameter_count(m.form)) {
        throw Error(r.source() + ": form " + std::string(to_string(m.form)) + " needs " +
                    std::to_string(parameter_count(m.form)) + " coefficients");
    }
    if (m.form == ResVarForm::spline && m.knots.size() != 4) {
        throw Error(r.source() + ": spline form needs 4 knots");
    }
    if (m.cf < 1.0) {
        throw Error(r.source() + ": cf must be >= 1");
    }
    return m;
}

ResVarModel fit_resvar(std::span<const VarianceBin> bins, ResVarForm form, const ResVarFitOptions& options) {
    const std::size_t p = parameter_count(form);
    const std::size_t min_bins = p + 1;
    if (bins.size() < min_bins) {
        throw Error("form " + std::string(to_string(form)) + " needs at least " + std::to_string(min_bins) +
                    " bins, got " + std::to_string(bins.size()));
    }
    ResVarModel m;
    m.form = form;
    m.log_offset = options.log_offset;
    m.n_bins = bins.size();
    std::vector<double> xs;
    for (const auto& b : bins) {
        xs.push_back(b.mean_agb);
        m.x_max = std::max(m.x_max, b.mean_agb);
    }
    if (form == ResVarForm::spline) {
        m.knots = {*std::min_element(xs.begin(), xs.end()), quantile(xs, 1.0 / 3.0), quantile(xs, 2.0 / 3.0),
                   *std::max_element(xs.begin(), xs.end())};
        for (std::size_t i = 1; i < 4; ++i) {
            if (!(m.knots[i] > m.knots[i - 1])) {
                throw Error("spline form: knots are not distinct (bin AGB means too clustered)");
            }
        }
    }

    const auto n = static_cast<Eigen::Index>(bins.size());
    Eigen::MatrixXd x(n, static_cast<Eigen::Index>(p));
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& b = bins[static_cast<std::size_t>(i)];
        if (form == ResVarForm::log_log && !(b.mean_agb + options.log_offset > 0.0)) {
            throw Error("form log-log: nonpositive AGB + offset in bin " + std::to_string(i) + " (mean AGB " +
                        format_double(b.mean_agb) + ")");
        }
        if (log_response(form) && !(b.variance > 0.0)) {
            throw Error("form " + std::string(to_string(form)) + ": nonpositive variance in bin " +
                        std::to_string(i) + " (mean AGB " + format_double(b.mean_agb) + ", variance " +
                        format_double(b.variance) + ")");
        }
        const auto row = design_row(form, b.mean_agb, m.knots, options.log_offset);
        for (std::size_t j = 0; j < p; ++j) {
            x(i, static_cast<Eigen::Index>(j)) = row[j];
        }
        y(i) = log_response(form) ? std::log(b.variance) : b.variance;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    if (qr.rank() < static_cast<Eigen::Index>(p)) {
        throw Error("form " + std::string(to_string(form)) + ": design matrix is rank deficient");
    }
    const Eigen::VectorXd beta = qr.solve(y);
    m.coefficients.assign(beta.data(), beta.data() + beta.size());

    if (log_response(form) && options.apply_cf) {
        const Eigen::VectorXd resid = y - x * beta;
        const double s2 = resid.squaredNorm() / static_cast<double>(bins.size() - p);
        m.cf = std::exp(s2 / 2.0);
    }

    double mean = 0.0;
    for (const auto& b : bins) {
        mean += b.variance;
    }
    mean /= static_cast<double>(bins.size());
    double sse = 0.0;
    double sst = 0.0;
    for (const auto& b : bins) {
        const double r = b.variance - m.evaluate(b.mean_agb);
        sse += r * r;
        sst += (b.variance - mean) * (b.variance - mean);
    }
    m.r2 = sst > 0.0 ? 1.0 - sse / sst : (sse == 0.0 ? 1.0 : 0.0);
    return m;
}

ResVarSelection select_form(std::span<const VarianceBin> bins, std::span<const ResVarForm> forms,
                            const ResVarFitOptions& options) {
    if (forms.empty()) {
        throw Error("select_form needs at least one candidate form");
    }
    ResVarSelection sel;
    for (ResVarForm f : forms) {
        try {
            sel.candidates.push_back(fit_resvar(bins, f, options));
        } catch (const Error& e) {
            sel.failures.emplace_back(f, e.what());
        }
    }
    if (sel.candidates.empty()) {
        std::string msg = "residual-variance selection: every candidate failed";
        for (const auto& [f, what] : sel.failures) {
            msg += "; " + std::string(to_string(f)) + ": " + what;
        }
        throw Error(msg);
    }
    sel.best = sel.candidates.front();
    for (const auto& c : sel.candidates) {
        if (c.r2 > sel.best.r2 ||
            (c.r2 == sel.best.r2 && parameter_count(c.form) < parameter_count(sel.best.form))) {
            sel.best = c;
        }
    }
    return sel;
}

GridRaster predict_sigma(const ResVarModel& model, const GridRaster& agb, const GridRaster& forest_mask) {
    if (!agb.geometry().aligned_with(forest_mask.geometry())) {
        throw Error("predict_sigma: AGB and forest mask grids are not aligned");
    }
    GridRaster out(agb.geometry(), 0.0, agb.nodata());
    const auto a = agb.values();
    const auto m = forest_mask.values();
    auto o = out.values();
    const auto& g = agb.geometry();
    const auto cols = static_cast<std::size_t>(g.n_cols);
    parallel_for(static_cast<std::size_t>(g.n_rows), [&](std::size_t r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            if (forest_mask.is_nodata(m[i]) || m[i] == 0.0) {
                o[i] = 0.0;
            } else if (agb.is_nodata(a[i])) {
                o[i] = agb.nodata();
            } else {
                o[i] = model.evaluate(a[i]);
            }
        }
    });
    return out;
}

GridRaster forest_mask_from_classes(const GridRaster& classes) {
    GridRaster out(classes.geometry(), 0.0, classes.nodata());
    const auto v = classes.values();
    auto o = out.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        o[i] = (!classes.is_nodata(v[i]) && landcover::is_forest(static_cast<int>(std::lround(v[i])))) ? 1.0 : 0.0;
    }
    return out;
}

}  // namespace parcelse
