#include "parcelse/se_model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "parcelse/csv.hpp"
#include "parcelse/error.hpp"
#include "parcelse/rng.hpp"

namespace parcelse {

std::vector<SeObservation> read_se_observations(const std::string& path) {
    const CsvTable t = CsvTable::read(path);
    const std::size_t ci = t.column("parcel_id");
    const std::size_t ca = t.column("agb");
    const std::size_t cf = t.column("forest_pct");
    const std::size_t cr = t.column("area_acres");
    const std::size_t cp = t.column("perimeter_m");
    const std::size_t cs = t.column("se");
    std::vector<SeObservation> out(t.rows());
    for (std::size_t i = 0; i < t.rows(); ++i) {
        out[i].parcel_id = t.field(i, ci);
        out[i].features = {t.number(i, ca), t.number(i, cf), t.number(i, cr), t.number(i, cp)};
        out[i].se = t.number(i, cs);
    }
    return out;
}

void write_se_observations(const std::string& path, std::span<const SeObservation> rows) {
    auto out = open_output(path);
    CsvWriter w(out);
    w.header({"parcel_id", "agb", "forest_pct", "area_acres", "perimeter_m", "se"});
    for (const auto& r : rows) {
        w.field(r.parcel_id)
            .field(r.features.agb)
            .field(r.features.forest_pct)
            .field(r.features.area_acres)
            .field(r.features.perimeter_m)
            .field(r.se);
        w.end_row();
    }
}

std::string_view to_string(SeTransform t) {
    switch (t) {
        case SeTransform::none: return "none";
        case SeTransform::log_log: return "log-log";
        case SeTransform::log_linear: return "log-linear";
        case SeTransform::linear_log: return "linear-log";
    }
    return "none";
}

SeTransform parse_se_transform(std::string_view s) {
    s = trim(s);
    for (SeTransform t : all_se_transforms) {
        if (s == to_string(t)) {
            return t;
        }
    }
    throw Error("unknown SE-model transform '" + std::string(s) + "'");
}

RegressionMetrics regression_metrics(std::span<const double> predicted, std::span<const double> observed) {
    if (predicted.size() != observed.size() || predicted.empty()) {
        throw Error("regression metrics need equal, nonzero numbers of predictions and observations");
    }
    RegressionMetrics m;
    m.n = predicted.size();
    const auto n = static_cast<double>(m.n);
    double mean_obs = 0.0;
    for (double o : observed) {
        mean_obs += o;
    }
    mean_obs /= n;
    double sse = 0.0, sae = 0.0, se = 0.0, sst = 0.0;
    for (std::size_t i = 0; i < m.n; ++i) {
        const double d = predicted[i] - observed[i];
        sse += d * d;
        sae += std::abs(d);
        se += d;
        sst += (observed[i] - mean_obs) * (observed[i] - mean_obs);
    }
    m.rmse = std::sqrt(sse / n);
    m.mae = sae / n;
    m.me = se / n;
    m.r2 = sst > 0.0 ? 1.0 - sse / sst : (sse == 0.0 ? 1.0 : 0.0);
    return m;
}

namespace {

bool log_response(SeTransform t) { return t == SeTransform::log_log || t == SeTransform::log_linear; }
bool log_features(SeTransform t) { return t == SeTransform::log_log || t == SeTransform::linear_log; }

std::array<double, 4> feature_vector(const ParcelFeatures& f) {
    return {f.agb, f.perimeter_m, f.area_acres, f.forest_pct};
}

std::array<double, 5> design_row(SeTransform t, const ParcelFeatures& f) {
    const auto x = feature_vector(f);
    std::array<double, 5> row{1.0, 0.0, 0.0, 0.0, 0.0};
    for (std::size_t j = 0; j < 4; ++j) {
        row[j + 1] = log_features(t) ? std::log(x[j]) : x[j];
    }
    return row;
}

double evaluate(const SeRegression& m, const ParcelFeatures& f) {
    const auto row = design_row(m.transform, f);
    double lin = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
        lin += m.coefficients[j] * row[j];
    }
    return log_response(m.transform) ? std::exp(lin) * m.cf : lin;
}

bool usable(const SeObservation& r) {
    const auto& f = r.features;
    return f.agb > 0.0 && f.forest_pct > 0.0 && f.area_acres > 0.0 && f.perimeter_m > 0.0 && r.se > 0.0 &&
           std::isfinite(f.agb + f.forest_pct + f.area_acres + f.perimeter_m + r.se);
}

SeRegression fit_variant(SeTransform t, std::span<const SeObservation* const> train,
                         std::span<const SeObservation* const> test, const SeFitOptions& options) {
    const auto n = static_cast<Eigen::Index>(train.size());
    Eigen::MatrixXd x(n, 5);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const SeObservation& r = *train[static_cast<std::size_t>(i)];
        const auto row = design_row(t, r.features);
        for (Eigen::Index j = 0; j < 5; ++j) {
            x(i, j) = row[static_cast<std::size_t>(j)];
        }
        y(i) = log_response(t) ? std::log(r.se) : r.se;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    if (qr.rank() < 5) {
        throw Error("SE model (" + std::string(to_string(t)) + "): design matrix is rank deficient");
    }
    const Eigen::VectorXd beta = qr.solve(y);
    const Eigen::VectorXd resid = y - x * beta;
    const double s2 = resid.squaredNorm() / static_cast<double>(n - 5);
    const Eigen::MatrixXd cov = s2 * (x.transpose() * x).inverse();

    SeRegression m;
    m.transform = t;
    for (std::size_t j = 0; j < 5; ++j) {
        m.coefficients[j] = beta(static_cast<Eigen::Index>(j));
        m.std_errors[j] = std::sqrt(cov(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)));
    }
    m.cf = (log_response(t) && options.apply_cf) ? std::exp(s2 / 2.0) : 1.0;
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(x);
    const auto& sv = svd.singularValues();
    m.condition_number = sv(0) / sv(sv.size() - 1);

    auto metrics = [&](std::span<const SeObservation* const> rows) {
        std::vector<double> pred;
        std::vector<double> obs;
        for (const SeObservation* r : rows) {
            pred.push_back(evaluate(m, r->features));
            obs.push_back(r->se);
        }
        return regression_metrics(pred, obs);
    };
    m.n_train = train.size();
    m.n_test = test.size();
    m.train = metrics(train);
    if (!test.empty()) {
        m.test = metrics(test);
    }
    return m;
}

}  // namespace

SeFitResult fit_se_model(std::span<const SeObservation> rows, std::uint64_t split_seed, const SeFitOptions& options) {
    if (options.transforms.empty()) {
        throw Error("SE model fit needs at least one transform");
    }
    if (!(options.train_fraction > 0.0 && options.train_fraction <= 1.0)) {
        throw Error("SE model train fraction must be in (0, 1]");
    }
    std::vector<const SeObservation*> kept;
    for (const auto& r : rows) {
        if (usable(r)) {
            kept.push_back(&r);
        }
    }
    const std::size_t excluded = rows.size() - kept.size();
    if (kept.size() < 25) {
        throw Error("SE model fit needs at least 25 parcels with positive features and SE, got " +
                    std::to_string(kept.size()) + " (" + std::to_string(excluded) + " excluded)");
    }

    Rng rng(split_seed, {key(Stream::split)});
    std::vector<std::size_t> order(kept.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    for (std::size_t i = order.size() - 1; i > 0; --i) {
        std::swap(order[i], order[rng.index(i + 1)]);
    }
    const auto n_train = std::max<std::size_t>(
        6, static_cast<std::size_t>(std::llround(options.train_fraction * static_cast<double>(kept.size()))));
    std::vector<std::size_t> train_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> test_idx(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    std::vector<const SeObservation*> train;
    std::vector<const SeObservation*> test;
    for (std::size_t i : train_idx) {
        train.push_back(kept[i]);
    }
    for (std::size_t i : test_idx) {
        test.push_back(kept[i]);
    }

    SeFitResult out;
    for (SeTransform t : options.transforms) {
        SeRegression m = fit_variant(t, train, test, options);
        m.split_seed = split_seed;
        m.n_excluded = excluded;
        out.candidates.push_back(m);
    }
    out.best = out.candidates.front();
    for (const auto& c : out.candidates) {
        if (c.train.r2 > out.best.train.r2) {
            out.best = c;
        }
    }
    return out;
}

double predict_se(const SeRegression& model, const ParcelFeatures& f) {
    if (log_features(model.transform)) {
        const std::pair<const char*, double> fields[] = {
            {"agb", f.agb}, {"perimeter", f.perimeter_m}, {"area", f.area_acres}, {"forest", f.forest_pct}};
        for (const auto& [name, v] : fields) {
            if (!(v > 0.0)) {
                throw Error(std::string("SE prediction needs a positive ") + name + ", got " + format_double(v));
            }
        }
    }
    return evaluate(model, f);
}

namespace {

std::string join(const std::array<double, 5>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        s += (i ? "," : "") + format_double(v[i]);
    }
    return s;
}

std::array<double, 5> five(const Record& r, std::string_view key) {
    const auto v = r.numbers(key);
    if (v.size() != 5) {
        throw Error(r.source() + ": '" + std::string(key) + "' needs 5 values");
    }
    return {v[0], v[1], v[2], v[3], v[4]};
}

}  // namespace

Record SeRegression::to_record() const {
    Record r;
    r.set("transform", std::string(to_string(transform)));
    r.set("coefficient_order", "intercept,agb,perimeter,area,forest_pct");
    r.set("coefficients", join(coefficients));
    r.set("std_errors", join(std_errors));
    r.set("cf", cf);
    r.set("unit_agb", "Mg/ha");
    r.set("unit_perimeter", "m");
    r.set("unit_area", "acres");
    r.set("unit_forest_pct", "percent");
    r.set("unit_se", "Mg/ha");
    r.set("split_seed", std::to_string(split_seed));
    r.set_int("n_train", static_cast<long long>(n_train));
    r.set_int("n_test", static_cast<long long>(n_test));
    r.set_int("n_excluded", static_cast<long long>(n_excluded));
    r.set("condition_number", condition_number);
    r.set("train_r2", train.r2);
    r.set("test_rmse", test.rmse);
    r.set("test_mae", test.mae);
    r.set("test_me", test.me);
    r.set("test_r2", test.r2);
    return r;
}

SeRegression SeRegression::from_record(const Record& r) {
    SeRegression m;
    m.transform = parse_se_transform(r.get("transform"));
    m.coefficients = five(r, "coefficients");
    if (r.has("std_errors")) {
        m.std_errors = five(r, "std_errors");
    }
    m.cf = r.has("cf") ? r.number("cf") : 1.0;
    if (!(m.cf >= 1.0)) {
        throw Error(r.source() + ": cf must be >= 1");
    }
    auto opt = [&](std::string_view k) { return r.has(k) ? r.number(k) : 0.0; };
    m.split_seed = r.has("split_seed") ? std::stoull(r.get("split_seed")) : 0;
    m.n_train = static_cast<std::size_t>(opt("n_train"));
    m.n_test = static_cast<std::size_t>(opt("n_test"));
    m.n_excluded = static_cast<std::size_t>(opt("n_excluded"));
    m.condition_number = opt("condition_number");
    m.train.r2 = opt("train_r2");
    m.test.rmse = opt("test_rmse");
    m.test.mae = opt("test_mae");
    m.test.me = opt("test_me");
    m.test.r2 = opt("test_r2");
    return m;
}

}  // namespace parcelse
