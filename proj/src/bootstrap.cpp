#include "parcelse/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "parcelse/config.hpp"
#include "parcelse/csv.hpp"
#include "parcelse/error.hpp"
#include "parcelse/parallel.hpp"

namespace parcelse {

void BootstrapConfig::validate() const {
    if (n_iterations < 2) {
        throw Error("bootstrap needs at least 2 iterations");
    }
    if (predictor.kind == PredictorKind::knn && predictor.k < 1) {
        throw Error("k-NN predictor needs k >= 1");
    }
    if (max_failures == 0) {
        throw Error("bootstrap max_failures must be >= 1");
    }
}

Record BootstrapConfig::to_record() const {
    Record r;
    r.set_int("n_iterations", static_cast<long long>(n_iterations));
    r.set("seed", std::to_string(seed));
    r.set("resample_plots", resample_plots ? "true" : "false");
    r.set("perturb_reference", perturb_reference ? "true" : "false");
    r.set("perturb_landcover", perturb_landcover ? "true" : "false");
    r.set("predictor", std::string(to_string(predictor.kind)));
    r.set_int("knn_k", predictor.k);
    r.set_int("max_failures", static_cast<long long>(max_failures));
    return r;
}

BootstrapConfig BootstrapConfig::from_record(const Record& r) {
    BootstrapConfig c;
    c.n_iterations = static_cast<std::size_t>(parse_int(r.get("n_iterations"), "n_iterations"));
    c.seed = std::stoull(r.get("seed"));
    c.resample_plots = parse_bool(r.get("resample_plots"), "resample_plots");
    c.perturb_reference = parse_bool(r.get("perturb_reference"), "perturb_reference");
    c.perturb_landcover = parse_bool(r.get("perturb_landcover"), "perturb_landcover");
    c.predictor.kind = parse_predictor_kind(r.get("predictor"));
    if (r.has("knn_k")) {
        c.predictor.k = static_cast<int>(parse_int(r.get("knn_k"), "knn_k"));
    }
    if (r.has("max_failures")) {
        c.max_failures = static_cast<std::size_t>(parse_int(r.get("max_failures"), "max_failures"));
    }
    return c;
}

void BootstrapData::validate(const BootstrapConfig& cfg) const {
    if (plots.size() < 2) {
        throw Error("bootstrap needs at least 2 plots, got " + std::to_string(plots.size()));
    }
    if (tables == nullptr) {
        throw Error("bootstrap needs allometric tables");
    }
    if (cfg.perturb_reference && errors == nullptr) {
        throw Error("perturbing reference data needs an error model set");
    }
    if (predictors.empty()) {
        throw Error("bootstrap needs at least one predictor layer");
    }
    const GridGeometry& g = predictors.front().geometry();
    for (const auto& p : predictors) {
        if (!p.geometry().aligned_with(g)) {
            throw Error("predictor layers are not aligned");
        }
    }
    if (!lc_primary.geometry().aligned_with(g)) {
        throw Error("land-cover raster is not aligned with the predictor layers");
    }
    if (cfg.perturb_landcover && !lc_secondary.geometry().aligned_with(g)) {
        throw Error("secondary land-cover raster is not aligned with the predictor layers");
    }
    if (parcels.empty()) {
        throw Error("bootstrap needs at least one parcel");
    }
    for (const auto& parcel : parcels) {
        validate_parcel(parcel, g);
    }
    accuracy.validate();
}

std::vector<double> footprint_features(std::span<const GridRaster> layers, MapPoint center) {
    std::vector<double> sum(layers.size(), 0.0);
    std::vector<double> weight(layers.size(), 0.0);
    const GridGeometry& g = layers.front().geometry();
    for (const MapPoint& c : subplot_centers(center)) {
        for (const auto& [p, w] : circle_pixel_weights(g, c.x, c.y, subplot_radius_m)) {
            for (std::size_t l = 0; l < layers.size(); ++l) {
                const double v = layers[l][p];
                if (!layers[l].is_nodata(v)) {
                    sum[l] += w * v;
                    weight[l] += w;
                }
            }
        }
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (!(weight[l] > 0.0)) {
            throw Error("plot footprint at (" + format_double(center.x) + ", " + format_double(center.y) +
                        ") covers no valid pixel");
        }
        sum[l] /= weight[l];
    }
    return sum;
}

double plot_agb_with_errors(const PlotRecord& plot, const AllometricTables& tables, const CrmErrorSources* sources,
                            Rng& rng, CrmTrace* trace) {
    if (!(plot.area_ha > 0.0)) {
        throw Error("plot '" + plot.id + "' has nonpositive area");
    }
    double kg = 0.0;
    for (const auto& tree : plot.trees) {
        kg += predict_tree_agb(tree, tables, sources, rng, trace).total * tree.expansion;
    }
    return kg / 1000.0 / plot.area_ha;
}

double bootstrap_variance(std::span<const double> values) {
    if (values.size() < 2) {
        return 0.0;
    }
    // Shifted by the first value so a constant series is exactly zero.
    const auto n = static_cast<double>(values.size());
    std::vector<double> shifted(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        shifted[i] = values[i] - values[0];
    }
    const double mean = pairwise_sum(shifted) / n;
    std::vector<double> d2(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        d2[i] = (shifted[i] - mean) * (shifted[i] - mean);
    }
    return pairwise_sum(d2) / (n - 1.0);
}

namespace {

constexpr std::size_t iteration_block = 32;

struct IterationOutput {
    std::vector<double> parcel_means;
    std::vector<double> pixel_values;
    std::size_t redraws = 0;
    CrmTrace trace;
};

}  // namespace

BootstrapResult run(const BootstrapConfig& cfg, const BootstrapData& data) {
    cfg.validate();
    data.validate(cfg);
    const GridGeometry& g = data.predictors.front().geometry();
    const std::size_t n_plots = data.plots.size();
    const std::size_t n_layers = data.predictors.size();

    // Distinct parcel pixels and their predictor features, built once.
    std::vector<std::size_t> pixels;
    for (const auto& parcel : data.parcels) {
        for (const auto& p : parcel.pixels) {
            pixels.push_back(g.linear(p));
        }
    }
    std::sort(pixels.begin(), pixels.end());
    pixels.erase(std::unique(pixels.begin(), pixels.end()), pixels.end());
    FeatureMatrix pixel_features(pixels.size(), n_layers, data.predictor_names);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        for (std::size_t l = 0; l < n_layers; ++l) {
            pixel_features(i, l) = data.predictors[l].values()[pixels[i]];
        }
    }
    pixel_features.validate();
    std::vector<std::vector<std::size_t>> parcel_slots(data.parcels.size());
    for (std::size_t k = 0; k < data.parcels.size(); ++k) {
        for (const auto& p : data.parcels[k].pixels) {
            const auto it = std::lower_bound(pixels.begin(), pixels.end(), g.linear(p));
            parcel_slots[k].push_back(static_cast<std::size_t>(it - pixels.begin()));
        }
    }
    auto forest_at = [](const GridRaster& classes, std::size_t linear) {
        const double v = classes.values()[linear];
        return !classes.is_nodata(v) && landcover::is_forest(static_cast<int>(std::lround(v)));
    };
    std::vector<char> static_mask(pixels.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        static_mask[i] = forest_at(data.lc_primary, pixels[i]) ? 1 : 0;
    }

    // Error-free plot AGB and footprint features at the recorded centers.
    std::vector<double> base_agb(n_plots);
    std::vector<std::vector<double>> base_features(n_plots);
    for (std::size_t j = 0; j < n_plots; ++j) {
        Rng unused(0);
        base_agb[j] = plot_agb_with_errors(data.plots[j], *data.tables, nullptr, unused);
        base_features[j] = footprint_features(data.predictors, data.plots[j].center);
    }
    const CrmErrorSources sources{data.errors, data.residuals};
    const double location_sd =
        (cfg.perturb_reference && data.errors != nullptr) ? data.errors->spec("location").sd : 0.0;

    auto one_iteration = [&](std::size_t it) {
        IterationOutput out;
        // 1. Resample.
        std::vector<std::size_t> sample(n_plots);
        if (cfg.resample_plots) {
            for (std::size_t attempt = 0;; ++attempt) {
                if (attempt >= cfg.max_failures) {
                    throw StageError("bootstrap", "iteration " + std::to_string(it) + ": " +
                                                      std::to_string(cfg.max_failures) +
                                                      " consecutive resamples had fewer than 2 distinct plots");
                }
                Rng rng(cfg.seed, {key(Stream::resample), it, attempt});
                for (auto& s : sample) {
                    s = rng.index(n_plots);
                }
                const std::set<std::size_t> distinct(sample.begin(), sample.end());
                if (distinct.size() >= 2) {
                    break;
                }
                ++out.redraws;
            }
        } else {
            for (std::size_t j = 0; j < n_plots; ++j) {
                sample[j] = j;
            }
        }

        // 2-3. Reference AGB and features per distinct plot; duplicates in
        // a resample share one perturbation.
        std::map<std::size_t, std::pair<double, std::vector<double>>> per_plot;
        for (std::size_t j : sample) {
            if (per_plot.count(j) != 0) {
                continue;
            }
            double agb = base_agb[j];
            std::vector<double> feats = base_features[j];
            if (cfg.perturb_reference) {
                Rng ref(cfg.seed, {key(Stream::reference), it, j});
                agb = plot_agb_with_errors(data.plots[j], *data.tables, &sources, ref, &out.trace);
                Rng loc(cfg.seed, {key(Stream::location), it, j});
                const MapPoint moved = jitter_plot_location(data.plots[j].center, location_sd, loc);
                try {
                    feats = footprint_features(data.predictors, moved);
                } catch (const Error&) {
                    // Jittered off the grid: keep the recorded footprint.
                }
            }
            per_plot.emplace(j, std::pair{agb, std::move(feats)});
        }
        FeatureMatrix x(n_plots, n_layers, data.predictor_names);
        std::vector<double> y(n_plots);
        for (std::size_t s = 0; s < n_plots; ++s) {
            const auto& [agb, feats] = per_plot.at(sample[s]);
            y[s] = agb;
            for (std::size_t l = 0; l < n_layers; ++l) {
                x(s, l) = feats[l];
            }
        }

        // 4-5. Fit and predict.
        Rng prng(cfg.seed, {key(Stream::predictor), it});
        PredictorModel model = fit(x, y, cfg.predictor, prng);
        model.seed = cfg.seed;
        model.iteration = it;
        out.pixel_values = model.predict(pixel_features);

        // 6. Land-cover mask.
        if (cfg.perturb_landcover) {
            Rng lrng(cfg.seed, {key(Stream::landcover), it});
            const GridRaster classes = perturb_landcover(data.lc_primary, data.lc_secondary, data.accuracy, lrng);
            for (std::size_t i = 0; i < pixels.size(); ++i) {
                if (!forest_at(classes, pixels[i])) {
                    out.pixel_values[i] = 0.0;
                }
            }
        } else {
            for (std::size_t i = 0; i < pixels.size(); ++i) {
                if (!static_mask[i]) {
                    out.pixel_values[i] = 0.0;
                }
            }
        }

        // 7. Zonal means.
        out.parcel_means.resize(data.parcels.size());
        for (std::size_t k = 0; k < data.parcels.size(); ++k) {
            double s = 0.0;
            for (std::size_t slot : parcel_slots[k]) {
                s += out.pixel_values[slot];
            }
            out.parcel_means[k] = s / static_cast<double>(parcel_slots[k].size());
        }
        return out;
    };

    BootstrapResult res;
    res.config = cfg;
    for (const auto& parcel : data.parcels) {
        res.parcel_ids.push_back(parcel.id);
    }
    res.iterations.assign(data.parcels.size(), std::vector<double>(cfg.n_iterations));
    std::vector<double> pixel_sum(pixels.size(), 0.0);
    for (std::size_t start = 0; start < cfg.n_iterations; start += iteration_block) {
        const std::size_t count = std::min(iteration_block, cfg.n_iterations - start);
        std::vector<IterationOutput> block(count);
        parallel_for(count, [&](std::size_t b) { block[b] = one_iteration(start + b); });
        for (std::size_t b = 0; b < count; ++b) {
            const IterationOutput& o = block[b];
            for (std::size_t k = 0; k < o.parcel_means.size(); ++k) {
                res.iterations[k][start + b] = o.parcel_means[k];
            }
            for (std::size_t i = 0; i < pixels.size(); ++i) {
                pixel_sum[i] += o.pixel_values[i];
            }
            res.redraws += o.redraws;
            res.clamped_totals += o.trace.clamped_totals;
            res.clamped_components += o.trace.clamped_components;
        }
    }
    for (const auto& series : res.iterations) {
        res.mean.push_back(pairwise_sum(series) / static_cast<double>(series.size()));
        res.var_boot.push_back(bootstrap_variance(series));
    }
    res.mean_prediction = GridRaster(g, GridRaster::default_nodata);
    auto mp = res.mean_prediction.values();
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        mp[pixels[i]] = pixel_sum[i] / static_cast<double>(cfg.n_iterations);
    }
    return res;
}

void BootstrapResult::write_iterations_csv(const std::string& path) const {
    auto out = open_output(path);
    CsvWriter w(out);
    w.header({"parcel_id", "iteration", "mean_agb"});
    for (std::size_t k = 0; k < parcel_ids.size(); ++k) {
        for (std::size_t i = 0; i < iterations[k].size(); ++i) {
            w.field(parcel_ids[k]).field(i).field(iterations[k][i]);
            w.end_row();
        }
    }
}

void BootstrapResult::write_summary_csv(const std::string& path) const {
    auto out = open_output(path);
    CsvWriter w(out);
    w.header({"parcel_id", "mean_agb", "var_boot"});
    for (std::size_t k = 0; k < parcel_ids.size(); ++k) {
        w.field(parcel_ids[k]).field(mean[k]).field(var_boot[k]);
        w.end_row();
    }
}

BootstrapResult BootstrapResult::read_iterations_csv(const std::string& path) {
    const CsvTable t = CsvTable::read(path);
    const std::size_t cp = t.column("parcel_id");
    const std::size_t ci = t.column("iteration");
    const std::size_t cm = t.column("mean_agb");
    BootstrapResult r;
    std::map<std::string, std::size_t> index;
    for (std::size_t row = 0; row < t.rows(); ++row) {
        const std::string& id = t.field(row, cp);
        auto [it, inserted] = index.emplace(id, r.parcel_ids.size());
        if (inserted) {
            r.parcel_ids.push_back(id);
            r.iterations.emplace_back();
        }
        auto& series = r.iterations[it->second];
        const auto iter = t.integer(row, ci);
        if (iter != static_cast<std::int64_t>(series.size())) {
            throw Error(path + ": iterations for parcel '" + id + "' are not consecutive from 0");
        }
        series.push_back(t.number(row, cm));
    }
    if (r.parcel_ids.empty()) {
        throw Error(path + ": no bootstrap iterations");
    }
    r.config.n_iterations = r.iterations.front().size();
    for (const auto& series : r.iterations) {
        if (series.size() != r.config.n_iterations) {
            throw Error(path + ": parcels have different iteration counts");
        }
        r.mean.push_back(pairwise_sum(series) / static_cast<double>(series.size()));
        r.var_boot.push_back(bootstrap_variance(series));
    }
    return r;
}

VarianceComponents decompose_one(double var_boot, double var_no_resample, double var_static_lc) {
    if (!(var_boot >= 0.0) || !(var_no_resample >= 0.0) || !(var_static_lc >= 0.0)) {
        throw Error("decompose: variances must be >= 0");
    }
    VarianceComponents c;
    c.var_sam = std::max(0.0, var_boot - var_no_resample);
    c.var_lc = std::max(0.0, var_boot - var_static_lc);
    const double s = c.var_sam + c.var_lc;
    if (s > var_boot) {
        const double excess = s - var_boot;
        c.var_sam -= excess * (c.var_sam / s);
        c.var_lc = var_boot - c.var_sam;
    }
    c.var_ref = std::max(0.0, var_boot - c.var_sam - c.var_lc);
    return c;
}

std::vector<VarianceComponents> decompose(const BootstrapResult& full, const BootstrapResult& no_resample,
                                          const BootstrapResult& static_lc) {
    auto check = [&](const BootstrapResult& other, const char* name) {
        if (other.parcel_ids != full.parcel_ids) {
            throw Error(std::string("decompose: the ") + name + " run has different parcels");
        }
        if (other.config.n_iterations != full.config.n_iterations) {
            throw Error(std::string("decompose: the ") + name + " run has a different iteration count");
        }
        if (other.config.seed != full.config.seed) {
            throw Error(std::string("decompose: the ") + name + " run used a different seed");
        }
        if (other.config.predictor.kind != full.config.predictor.kind ||
            other.config.predictor.k != full.config.predictor.k) {
            throw Error(std::string("decompose: the ") + name + " run used a different predictor");
        }
    };
    check(no_resample, "no-resample");
    check(static_lc, "static land-cover");
    const BootstrapConfig& f = full.config;
    const BootstrapConfig& a = no_resample.config;
    const BootstrapConfig& b = static_lc.config;
    if (a.resample_plots || a.perturb_reference != f.perturb_reference || a.perturb_landcover != f.perturb_landcover) {
        throw Error("decompose: the no-resample run must differ from the full run only by resample_plots = false");
    }
    if (b.perturb_landcover || b.perturb_reference != f.perturb_reference || b.resample_plots != f.resample_plots) {
        throw Error(
            "decompose: the static land-cover run must differ from the full run only by perturb_landcover = false");
    }
    std::vector<VarianceComponents> out;
    out.reserve(full.var_boot.size());
    for (std::size_t k = 0; k < full.var_boot.size(); ++k) {
        out.push_back(decompose_one(full.var_boot[k], no_resample.var_boot[k], static_lc.var_boot[k]));
    }
    return out;
}

std::vector<SmoothingStats> reference_smoothing(const BootstrapData& data, std::size_t n_iterations,
                                                std::uint64_t seed) {
    if (data.tables == nullptr || data.errors == nullptr) {
        throw Error("reference_smoothing needs allometric tables and an error model set");
    }
    if (n_iterations < 2) {
        throw Error("reference_smoothing needs at least 2 iterations");
    }
    const CrmErrorSources sources{data.errors, data.residuals};
    std::vector<SmoothingStats> out(data.plots.size());
    parallel_for(data.plots.size(), [&](std::size_t j) {
        const PlotRecord& plot = data.plots[j];
        const std::size_t nt = plot.trees.size();
        std::vector<std::vector<double>> trees(nt, std::vector<double>(n_iterations));
        std::vector<double> plot_agb(n_iterations);
        for (std::size_t it = 0; it < n_iterations; ++it) {
            Rng ref(seed, {key(Stream::reference), it, j});
            double kg = 0.0;
            for (std::size_t t = 0; t < nt; ++t) {
                const double total = predict_tree_agb(plot.trees[t], *data.tables, &sources, ref).total;
                trees[t][it] = total;
                kg += total * plot.trees[t].expansion;
            }
            plot_agb[it] = kg / 1000.0 / plot.area_ha;
        }
        auto cv = [](std::span<const double> v) {
            const double m = pairwise_sum(v) / static_cast<double>(v.size());
            return m > 0.0 ? std::sqrt(bootstrap_variance(v)) / m : 0.0;
        };
        SmoothingStats s;
        s.plot_id = plot.id;
        s.n_trees = nt;
        double sum_cv = 0.0;
        for (const auto& series : trees) {
            sum_cv += cv(series);
        }
        s.tree_cv = nt > 0 ? sum_cv / static_cast<double>(nt) : 0.0;
        s.plot_cv = cv(plot_agb);
        out[j] = s;
    });
    return out;
}

}  // namespace parcelse
