#include "parcelse/pipeline.hpp"

#include <fftw3.h>

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <json.hpp>

#include "parcelse/csv.hpp"
#include "parcelse/error.hpp"
#include "parcelse/parallel.hpp"
#include "parcelse/resvar.hpp"
#include "parcelse/se_model.hpp"
#include "parcelse/synth.hpp"
#include "parcelse/variogram.hpp"

namespace parcelse {

namespace fs = std::filesystem;

std::uint64_t fnv1a_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open '" + path + "' for checksumming");
    }
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof buf);
        const std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

std::string join_path(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

namespace {

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw Error("cannot create output directory '" + dir + "': " + ec.message());
    }
}

void require_file(const std::string& path) {
    if (!fs::is_regular_file(path)) {
        throw Error("input file '" + path + "' does not exist");
    }
}

}  // namespace

void Manifest::write(const std::string& out_dir) const {
    using nlohmann::ordered_json;
    ordered_json j;
    j["tool"] = "parcelse";
    j["version"] = parcelse_version;
    j["command"] = command;
    ordered_json cfg = ordered_json::object();
    for (const auto& [k, v] : config.entries()) {
        cfg[k] = v;
    }
    j["config"] = cfg;
    ordered_json seeds_j = ordered_json::object();
    for (const auto& [k, v] : seeds) {
        seeds_j[k] = v;
    }
    j["seeds"] = seeds_j;
    j["libraries"] = {
        {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                      std::to_string(EIGEN_MINOR_VERSION)},
        {"fftw", std::string(fftw_version)},
        {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                              std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                              std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
        {"compiler", std::string(__VERSION__)},
    };
    ordered_json in_j = ordered_json::array();
    for (const auto& p : inputs) {
        in_j.push_back({{"path", p}, {"bytes", fs::file_size(p)}, {"fnv1a64", hex64(fnv1a_file(p))}});
    }
    j["inputs"] = in_j;
    ordered_json out_j = ordered_json::array();
    for (const auto& name : outputs) {
        const std::string p = join_path(out_dir, name);
        out_j.push_back({{"file", name}, {"bytes", fs::file_size(p)}, {"fnv1a64", hex64(fnv1a_file(p))}});
    }
    j["outputs"] = out_j;
    ordered_json diag = ordered_json::object();
    for (const auto& [k, v] : diagnostics) {
        diag[k] = v;
    }
    j["diagnostics"] = diag;
    auto out = open_output(join_path(out_dir, "manifest_" + command + ".json"));
    out << j.dump(2) << '\n';
}

// dataset ------------------------------------------------------------------

Dataset load_dataset(const std::string& dir) {
    Dataset d;
    d.dir = dir;
    auto path = [&](const char* name) { return join_path(dir, name); };
    auto use = [&](const std::string& p) {
        require_file(p);
        d.input_paths.push_back(p);
        return p;
    };
    try {
        const Record meta = Record::read_file(use(path(files::dataset)));
        for (const auto& name : split(meta.get("predictors"), ',')) {
            const std::string n(trim(name));
            d.predictor_names.push_back(n);
            d.predictors.push_back(read_ascii_grid(use(join_path(dir, "predictor_" + n + ".asc"))));
        }
        if (d.predictors.empty()) {
            throw Error("dataset lists no predictors");
        }
        if (fs::is_regular_file(path(files::true_agb))) {
            d.true_agb = read_ascii_grid(use(path(files::true_agb)));
        }
        d.reference_agb = read_ascii_grid(use(path(files::reference_agb)));
        d.lc_primary = read_ascii_grid(use(path(files::lc_primary)));
        d.lc_secondary = read_ascii_grid(use(path(files::lc_secondary)));
        d.parcels = read_parcels(use(path(files::parcel_pixels)), use(path(files::parcels)));
        d.plots = read_plots(use(path(files::plots)), use(path(files::trees)));
        if (fs::is_regular_file(path(files::assessment_plots))) {
            d.assessment_plots = read_plots(use(path(files::assessment_plots)), use(path(files::assessment_trees)));
        }
        d.tables = AllometricTables::read_csv(use(path(files::allometry)), use(path(files::decay_ratios)));
        d.errors = ErrorModelSet::read_csv(use(path(files::error_specs)));
        d.accuracy = ClassAccuracyTable::read_csv(use(path(files::accuracy)));
        if (fs::is_regular_file(path(files::residuals))) {
            d.residuals = ResidualLibrary::read_csv(use(path(files::residuals)));
        }
        const GridGeometry& g = d.predictors.front().geometry();
        for (const GridRaster* r : {&d.reference_agb, &d.lc_primary, &d.lc_secondary}) {
            if (!r->geometry().aligned_with(g)) {
                throw Error("rasters in dataset are not aligned");
            }
        }
        for (const auto& p : d.parcels) {
            validate_parcel(p, g);
        }
    } catch (const StageError&) {
        throw;
    } catch (const Error& e) {
        throw StageError("load", e.what());
    }
    return d;
}

// simulate -----------------------------------------------------------------

Manifest stage_simulate(const RunConfig& cfg, const std::string& data_dir) {
    cfg.validate();
    ensure_dir(data_dir);
    Manifest m;
    m.command = "simulate";
    m.config = cfg.to_record();
    m.seeds = {{"sim_seed", std::to_string(cfg.landscape.seed)}};
    try {
        Landscape land = simulate_landscape(cfg.landscape);
        const double ps = cfg.landscape.geometry.pixel_size;
        for (auto& p : land.parcels) {
            p.area_acres = parcel_area_acres(p, ps);
            p.perimeter_m = parcel_perimeter_m(p, ps);
        }
        const AllometricTables tables = AllometricTables::toy();
        const auto plots = simulate_inventory(land, cfg.n_plots, cfg.tree_model, tables, cfg.landscape.seed);
        auto assessment = simulate_inventory(land, cfg.n_assessment_plots, cfg.tree_model, tables,
                                             mix_seed(cfg.landscape.seed, {key(Stream::synth), 30}));
        for (std::size_t i = 0; i < assessment.size(); ++i) {
            char id[32];
            std::snprintf(id, sizeof id, "AS%04zu", i);
            assessment[i].id = id;
        }
        auto out = [&](const char* name) {
            m.outputs.emplace_back(name);
            return join_path(data_dir, name);
        };
        Record meta;
        std::string names;
        for (std::size_t i = 0; i < land.predictor_names.size(); ++i) {
            names += (i > 0 ? "," : "") + land.predictor_names[i];
        }
        meta.set("predictors", names);
        meta.set("description", "synthetic landscape");
        meta.set("sim_seed", std::to_string(cfg.landscape.seed));
        meta.write_file(out(files::dataset));
        for (std::size_t i = 0; i < land.predictors.size(); ++i) {
            const std::string name = "predictor_" + land.predictor_names[i] + ".asc";
            m.outputs.push_back(name);
            write_ascii_grid(join_path(data_dir, name), land.predictors[i]);
        }
        write_ascii_grid(out(files::true_agb), land.true_agb);
        write_ascii_grid(out(files::reference_agb), land.reference_agb);
        write_ascii_grid(out(files::lc_primary), land.lc_primary);
        write_ascii_grid(out(files::lc_secondary), land.lc_secondary);
        const std::string pixels = out(files::parcel_pixels);
        write_parcels(pixels, out(files::parcels), land.parcels);
        const std::string plots_path = out(files::plots);
        write_plots(plots_path, out(files::trees), plots);
        const std::string ap = out(files::assessment_plots);
        write_plots(ap, out(files::assessment_trees), assessment);
        const std::string coef = out(files::allometry);
        tables.write_csv(coef, out(files::decay_ratios));
        ErrorModelSet::defaults().write_csv(out(files::error_specs));
        ClassAccuracyTable::lcmap_defaults().write_csv(out(files::accuracy));
        synthetic_residual_library(mix_seed(cfg.landscape.seed, {key(Stream::synth), 40}))
            .write_csv(out(files::residuals));
        m.diagnostics = {{"n_parcels", std::to_string(land.parcels.size())},
                         {"n_plots", std::to_string(plots.size())},
                         {"n_assessment_plots", std::to_string(assessment.size())}};
    } catch (const StageError&) {
        throw;
    } catch (const Error& e) {
        throw StageError("simulate", e.what());
    }
    m.write(data_dir);
    return m;
}

// bootstrap ----------------------------------------------------------------

namespace {

BootstrapConfig bootstrap_config(const RunConfig& cfg) {
    BootstrapConfig b;
    b.n_iterations = cfg.n_iterations;
    b.seed = cfg.seed;
    b.resample_plots = cfg.resample_plots;
    b.perturb_reference = cfg.perturb_reference;
    b.perturb_landcover = cfg.perturb_landcover;
    b.predictor = cfg.predictor;
    return b;
}

}  // namespace

Manifest stage_bootstrap(const RunConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    const BootstrapConfig bc = bootstrap_config(cfg);
    bc.validate();
    const Dataset d = load_dataset(cfg.data_dir);
    ensure_dir(out_dir);
    Manifest m;
    m.command = "bootstrap";
    m.config = cfg.to_record();
    m.seeds = {{"seed", std::to_string(cfg.seed)}};
    m.inputs = d.input_paths;

    BootstrapData data;
    data.plots = d.plots;
    data.tables = &d.tables;
    data.errors = &d.errors;
    data.residuals = d.residuals ? &*d.residuals : nullptr;
    data.predictors = d.predictors;
    data.predictor_names = d.predictor_names;
    data.lc_primary = d.lc_primary;
    data.lc_secondary = d.lc_secondary;
    data.accuracy = d.accuracy;
    data.parcels = d.parcels;
    BootstrapResult res;
    try {
        res = run(bc, data);
    } catch (const StageError&) {
        throw;
    } catch (const Error& e) {
        throw StageError("bootstrap", e.what());
    }
    res.write_iterations_csv(join_path(out_dir, files::iterations));
    res.write_summary_csv(join_path(out_dir, files::bootstrap_summary));
    bc.to_record().write_file(join_path(out_dir, files::bootstrap_config));
    write_ascii_grid(join_path(out_dir, files::mean_prediction), res.mean_prediction);
    m.outputs = {files::iterations, files::bootstrap_summary, files::bootstrap_config, files::mean_prediction};
    m.diagnostics = {{"redraws", std::to_string(res.redraws)},
                     {"clamped_totals", std::to_string(res.clamped_totals)},
                     {"clamped_components", std::to_string(res.clamped_components)}};
    m.write(out_dir);
    return m;
}

// decompose ----------------------------------------------------------------

Manifest stage_decompose(const std::string& full_dir, const std::string& no_resample_dir,
                         const std::string& static_lc_dir, const std::string& out_dir) {
    Manifest m;
    m.command = "decompose";
    auto load = [&](const std::string& dir) {
        const std::string it = join_path(dir, files::iterations);
        const std::string cf = join_path(dir, files::bootstrap_config);
        require_file(it);
        require_file(cf);
        m.inputs.push_back(it);
        m.inputs.push_back(cf);
        BootstrapResult r = BootstrapResult::read_iterations_csv(it);
        const std::size_t n = r.config.n_iterations;
        r.config = BootstrapConfig::from_record(Record::read_file(cf));
        if (r.config.n_iterations != n) {
            throw Error(dir + ": iteration count differs from " + files::bootstrap_config);
        }
        return r;
    };
    std::vector<VarianceComponents> comps;
    BootstrapResult full;
    BootstrapResult nr;
    BootstrapResult slc;
    try {
        full = load(full_dir);
        nr = load(no_resample_dir);
        slc = load(static_lc_dir);
        comps = decompose(full, nr, slc);
    } catch (const Error& e) {
        throw StageError("decompose", e.what());
    }
    m.config.set("full", full_dir);
    m.config.set("no_resample", no_resample_dir);
    m.config.set("static_lc", static_lc_dir);
    m.seeds = {{"seed", std::to_string(full.config.seed)}};
    ensure_dir(out_dir);
    {
        auto out = open_output(join_path(out_dir, files::components));
        CsvWriter w(out);
        w.header({"parcel_id", "var_boot", "var_no_resample", "var_static_lc", "var_sam", "var_lc", "var_ref"});
        for (std::size_t k = 0; k < comps.size(); ++k) {
            w.field(full.parcel_ids[k]).field(full.var_boot[k]).field(nr.var_boot[k]).field(slc.var_boot[k]);
            w.field(comps[k].var_sam).field(comps[k].var_lc).field(comps[k].var_ref);
            w.end_row();
        }
    }
    m.outputs = {files::components};
    m.write(out_dir);
    return m;
}

// variogram ----------------------------------------------------------------

Manifest stage_variogram(const RunConfig& cfg, const std::string& map_path, const std::string& out_dir) {
    cfg.validate();
    require_file(map_path);
    const Dataset d = load_dataset(cfg.data_dir);
    Manifest m;
    m.command = "variogram";
    m.config = cfg.to_record();
    m.config.set("map", map_path);
    m.seeds = {{"seed", std::to_string(cfg.seed)}};
    m.inputs = d.input_paths;
    m.inputs.push_back(map_path);
    const GridRaster map = read_ascii_grid(map_path);
    ensure_dir(out_dir);
    VariogramSelection sel;
    std::vector<ResidualPoint> points;
    EmpiricalVariogram emp;
    try {
        const GridRaster resid = residual_field(map, d.reference_agb);
        Rng rng(cfg.seed, {key(Stream::split), 1});
        points = sample_residuals(resid, cfg.residual_sample, rng);
        const double ps = map.geometry().pixel_size;
        const double width = cfg.bin_width > 0.0 ? cfg.bin_width : ps;
        const double lag = cfg.max_lag > 0.0 ? cfg.max_lag : default_max_lag(d.parcels, ps);
        emp = empirical_variogram(points, width, lag);
        VariogramFitOptions opts;
        opts.weights = cfg.variogram_weights;
        sel = model_selection(emp, cfg.variogram_families, opts);
        m.diagnostics.emplace_back("max_lag", format_double(lag));
        m.diagnostics.emplace_back("bin_width", format_double(width));
    } catch (const Error& e) {
        throw StageError("variogram", e.what());
    }
    write_residual_points(join_path(out_dir, files::residual_points), points);
    emp.write_csv(join_path(out_dir, files::empirical_variogram));
    {
        auto out = open_output(join_path(out_dir, files::variogram_candidates));
        CsvWriter w(out);
        w.header({"family", "nugget", "sill", "range", "criterion", "n_bins", "status"});
        for (const auto& c : sel.candidates) {
            w.field(to_string(c.model.family)).field(c.model.nugget).field(c.model.sill).field(c.model.range);
            w.field(c.criterion).field(c.n_bins).field(c.model.family == sel.best.model.family ? "selected" : "");
            w.end_row();
        }
        for (const auto& [f, why] : sel.failures) {
            w.field(to_string(f)).field("").field("").field("").field("").field("").field("failed: " + why);
            w.end_row();
        }
    }
    sel.best.to_record().write_file(join_path(out_dir, files::variogram_model));
    m.outputs = {files::residual_points, files::empirical_variogram, files::variogram_candidates,
                 files::variogram_model};
    m.diagnostics.emplace_back("n_points", std::to_string(points.size()));
    m.diagnostics.emplace_back("selected", std::string(to_string(sel.best.model.family)));
    m.write(out_dir);
    return m;
}

// resvar -------------------------------------------------------------------

Manifest stage_resvar(const RunConfig& cfg, const std::string& map_path, const std::string& assessment_path,
                      const std::string& out_dir) {
    cfg.validate();
    Manifest m;
    m.command = "resvar";
    m.config = cfg.to_record();
    std::vector<AssessmentPlot> plots;
    if (!assessment_path.empty()) {
        require_file(assessment_path);
        m.inputs.push_back(assessment_path);
        m.config.set("assessment", assessment_path);
        plots = read_assessment(assessment_path);
    } else {
        require_file(map_path);
        const Dataset d = load_dataset(cfg.data_dir);
        m.inputs = d.input_paths;
        m.inputs.push_back(map_path);
        m.config.set("map", map_path);
        const GridRaster map = read_ascii_grid(map_path);
        if (d.assessment_plots.empty()) {
            throw StageError("resvar", "dataset '" + d.dir + "' has no assessment plots");
        }
        try {
            for (const auto& p : d.assessment_plots) {
                const double pred = footprint_mean(map, p.center);
                plots.push_back({pred, pred - plot_agb(p, d.tables)});
            }
        } catch (const Error& e) {
            throw StageError("resvar", e.what());
        }
    }
    ensure_dir(out_dir);
    std::vector<VarianceBin> bins;
    ResVarSelection sel;
    try {
        bins = bin_assessment(plots, cfg.resvar_initial_bins, cfg.resvar_min_count);
        sel = select_form(bins, cfg.resvar_forms);
    } catch (const Error& e) {
        throw StageError("resvar", e.what());
    }
    write_assessment(join_path(out_dir, files::assessment), plots);
    write_bins(join_path(out_dir, files::resvar_bins), bins);
    {
        auto out = open_output(join_path(out_dir, files::resvar_candidates));
        CsvWriter w(out);
        w.header({"form", "r2", "cf", "n_parameters", "status"});
        for (const auto& c : sel.candidates) {
            w.field(to_string(c.form)).field(c.r2).field(c.cf).field(parameter_count(c.form));
            w.field(c.form == sel.best.form ? "selected" : "");
            w.end_row();
        }
        for (const auto& [f, why] : sel.failures) {
            w.field(to_string(f)).field("").field("").field(parameter_count(f)).field("failed: " + why);
            w.end_row();
        }
    }
    sel.best.to_record().write_file(join_path(out_dir, files::resvar_model));
    m.outputs = {files::assessment, files::resvar_bins, files::resvar_candidates, files::resvar_model};
    m.diagnostics = {{"n_plots", std::to_string(plots.size())},
                     {"n_bins", std::to_string(bins.size())},
                     {"selected", std::string(to_string(sel.best.form))}};
    m.write(out_dir);
    return m;
}

// aggregate / sensitivity --------------------------------------------------

namespace {

struct LoadedAggregate {
    Dataset dataset;
    GridRaster map;
    GridRaster sigma2;
    VariogramModel model;
    std::vector<ParcelInputs> inputs;
    std::vector<std::string> input_paths;
};

LoadedAggregate load_aggregate(const RunConfig& cfg, const AggregateInputs& in) {
    LoadedAggregate a;
    a.dataset = load_dataset(cfg.data_dir);
    a.input_paths = a.dataset.input_paths;
    for (const std::string* p : {&in.map_path, &in.summary_path, &in.resvar_path, &in.variogram_path}) {
        require_file(*p);
        a.input_paths.push_back(*p);
    }
    if (!in.components_path.empty()) {
        require_file(in.components_path);
        a.input_paths.push_back(in.components_path);
    }
    try {
        a.map = read_ascii_grid(in.map_path);
        const ResVarModel resvar = ResVarModel::from_record(Record::read_file(in.resvar_path));
        a.model = VariogramModel::from_record(Record::read_file(in.variogram_path));
        a.model.validate();
        const CsvTable summary = CsvTable::read(in.summary_path);
        const std::size_t cid = summary.column("parcel_id");
        const std::size_t cm = summary.column("mean_agb");
        const std::size_t cv = summary.column("var_boot");
        std::map<std::string, std::pair<double, double>> boot;
        for (std::size_t r = 0; r < summary.rows(); ++r) {
            boot[summary.field(r, cid)] = {summary.number(r, cm), summary.number(r, cv)};
        }
        std::map<std::string, VarianceComponents> comps;
        if (!in.components_path.empty()) {
            const CsvTable t = CsvTable::read(in.components_path);
            const std::size_t id = t.column("parcel_id");
            const std::size_t s = t.column("var_sam");
            const std::size_t l = t.column("var_lc");
            const std::size_t f = t.column("var_ref");
            for (std::size_t r = 0; r < t.rows(); ++r) {
                comps[t.field(r, id)] = {t.number(r, s), t.number(r, l), t.number(r, f)};
            }
        }
        for (const auto& p : a.dataset.parcels) {
            const auto it = boot.find(p.id);
            if (it == boot.end()) {
                throw Error("parcel '" + p.id + "' is missing from " + in.summary_path);
            }
            ParcelInputs pi;
            pi.parcel = &p;
            pi.agb = it->second.first;
            pi.var_boot = it->second.second;
            if (!in.components_path.empty()) {
                const auto c = comps.find(p.id);
                if (c == comps.end()) {
                    throw Error("parcel '" + p.id + "' is missing from " + in.components_path);
                }
                pi.components = c->second;
            }
            a.inputs.push_back(pi);
        }
        a.sigma2 = predict_sigma(resvar, a.map, forest_mask_from_classes(a.dataset.lc_primary));
    } catch (const StageError&) {
        throw;
    } catch (const Error& e) {
        throw StageError("aggregate", e.what());
    }
    return a;
}

}  // namespace

Manifest stage_aggregate(const RunConfig& cfg, const AggregateInputs& in, const std::string& out_dir) {
    cfg.validate();
    const LoadedAggregate a = load_aggregate(cfg, in);
    Manifest m;
    m.command = "aggregate";
    m.config = cfg.to_record();
    m.inputs = a.input_paths;
    const std::vector<VarianceReport> reports =
        aggregate_parcels(a.inputs, a.sigma2, a.model, cfg.sensitivity_factors);
    ensure_dir(out_dir);
    write_reports_csv(join_path(out_dir, files::variance_report), reports);
    const double ps = a.map.geometry().pixel_size;
    std::vector<SeObservation> obs;
    for (std::size_t k = 0; k < reports.size(); ++k) {
        const Parcel& p = *a.inputs[k].parcel;
        SeObservation o;
        o.parcel_id = p.id;
        o.features.agb = reports[k].agb;
        o.features.forest_pct = 100.0 * forest_fraction(p, a.dataset.lc_primary, landcover::is_forest);
        o.features.area_acres = parcel_area_acres(p, ps);
        o.features.perimeter_m = parcel_perimeter_m(p, ps);
        o.se = reports[k].se;
        obs.push_back(o);
    }
    write_se_observations(join_path(out_dir, files::se_observations), obs);
    write_ascii_grid(join_path(out_dir, files::sigma2), a.sigma2);
    m.outputs = {files::variance_report, files::se_observations, files::sigma2};
    m.write(out_dir);
    return m;
}

Manifest stage_sensitivity(const RunConfig& cfg, const AggregateInputs& in, const std::string& out_dir) {
    cfg.validate();
    const LoadedAggregate a = load_aggregate(cfg, in);
    Manifest m;
    m.command = "sensitivity";
    m.config = cfg.to_record();
    m.inputs = a.input_paths;
    const std::vector<VarianceReport> reports =
        aggregate_parcels(a.inputs, a.sigma2, a.model, cfg.sensitivity_factors);
    ensure_dir(out_dir);
    {
        auto out = open_output(join_path(out_dir, files::sensitivity));
        CsvWriter w(out);
        w.header({"parcel_id", "n_pixels", "factor", "var_res", "var_total", "se"});
        for (const auto& r : reports) {
            for (const auto& s : r.sensitivity) {
                w.field(r.parcel_id).field(r.n_pixels).field(s.factor).field(s.var_res).field(s.var_total);
                w.field(std::sqrt(s.var_total));
                w.end_row();
            }
        }
    }
    m.outputs = {files::sensitivity};
    m.write(out_dir);
    return m;
}

// se-fit / se-predict ------------------------------------------------------

Manifest stage_se_fit(const RunConfig& cfg, const std::string& observations_path, const std::string& out_dir) {
    cfg.validate();
    require_file(observations_path);
    Manifest m;
    m.command = "se-fit";
    m.config = cfg.to_record();
    m.config.set("observations", observations_path);
    m.seeds = {{"split_seed", std::to_string(cfg.split_seed)}};
    m.inputs = {observations_path};
    SeFitResult fit;
    try {
        const auto rows = read_se_observations(observations_path);
        SeFitOptions opts;
        opts.transforms = cfg.se_transforms;
        fit = fit_se_model(rows, cfg.split_seed, opts);
    } catch (const Error& e) {
        throw StageError("se-fit", e.what());
    }
    ensure_dir(out_dir);
    fit.best.to_record().write_file(join_path(out_dir, files::se_model));
    {
        auto out = open_output(join_path(out_dir, files::se_candidates));
        CsvWriter w(out);
        std::vector<std::string> cols = {"transform"};
        for (auto n : se_coefficient_names) {
            cols.emplace_back("b_" + std::string(n));
        }
        for (auto n : se_coefficient_names) {
            cols.emplace_back("se_" + std::string(n));
        }
        for (const char* c : {"cf", "train_r2", "train_rmse", "train_mae", "train_me", "test_r2", "test_rmse",
                              "test_mae", "test_me", "condition_number", "status"}) {
            cols.emplace_back(c);
        }
        w.header(cols);
        for (const auto& c : fit.candidates) {
            w.field(to_string(c.transform));
            for (double b : c.coefficients) {
                w.field(b);
            }
            for (double s : c.std_errors) {
                w.field(s);
            }
            w.field(c.cf).field(c.train.r2).field(c.train.rmse).field(c.train.mae).field(c.train.me);
            w.field(c.test.r2).field(c.test.rmse).field(c.test.mae).field(c.test.me).field(c.condition_number);
            w.field(c.transform == fit.best.transform ? "selected" : "");
            w.end_row();
        }
    }
    m.outputs = {files::se_model, files::se_candidates};
    m.diagnostics = {{"selected", std::string(to_string(fit.best.transform))},
                     {"n_train", std::to_string(fit.best.n_train)},
                     {"n_test", std::to_string(fit.best.n_test)},
                     {"n_excluded", std::to_string(fit.best.n_excluded)}};
    m.write(out_dir);
    return m;
}

Manifest stage_se_predict(const std::string& model_path, const std::string& observations_path,
                          const std::string& out_dir) {
    require_file(model_path);
    require_file(observations_path);
    Manifest m;
    m.command = "se-predict";
    m.config.set("model", model_path);
    m.config.set("observations", observations_path);
    m.inputs = {model_path, observations_path};
    ensure_dir(out_dir);
    try {
        const SeRegression model = SeRegression::from_record(Record::read_file(model_path));
        const auto rows = read_se_observations(observations_path);
        auto out = open_output(join_path(out_dir, files::se_predictions));
        CsvWriter w(out);
        w.header({"parcel_id", "se_observed", "se_predicted"});
        for (const auto& r : rows) {
            double pred = 0.0;
            try {
                pred = predict_se(model, r.features);
            } catch (const Error& e) {
                throw Error(std::string(e.what()) + " (parcel '" + r.parcel_id + "')");
            }
            w.field(r.parcel_id).field(r.se).field(pred);
            w.end_row();
        }
    } catch (const Error& e) {
        throw StageError("se-predict", e.what());
    }
    m.outputs = {files::se_predictions};
    m.write(out_dir);
    return m;
}

// report -------------------------------------------------------------------

std::vector<VarianceReport> read_reports_csv(const std::string& path) {
    const CsvTable t = CsvTable::read(path);
    const std::size_t c_id = t.column("parcel_id");
    const std::size_t c_n = t.column("n_pixels");
    const std::size_t c_agb = t.column("agb");
    const std::size_t c_vb = t.column("var_boot");
    const std::size_t c_sam = t.column("var_sam");
    const std::size_t c_lc = t.column("var_lc");
    const std::size_t c_ref = t.column("var_ref");
    const std::size_t c_vr = t.column("var_res");
    const std::size_t c_vt = t.column("var_total");
    const std::size_t c_se = t.column("se");
    const std::size_t c_rse = t.column("rel_se");
    std::vector<std::pair<double, std::size_t>> res_cols;
    std::vector<std::size_t> total_cols;
    const std::string res_prefix = "var_res_x";
    for (std::size_t c = 0; c < t.header().size(); ++c) {
        const std::string& h = t.header()[c];
        if (h.rfind(res_prefix, 0) == 0) {
            const std::string f = h.substr(res_prefix.size());
            res_cols.emplace_back(parse_double(f, h), c);
            total_cols.push_back(t.column("var_total_x" + f));
        }
    }
    std::vector<VarianceReport> out;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        VarianceReport v;
        v.parcel_id = t.field(r, c_id);
        v.n_pixels = static_cast<std::size_t>(t.integer(r, c_n));
        v.agb = t.number(r, c_agb);
        v.var_boot = t.number(r, c_vb);
        if (!t.field(r, c_sam).empty()) {
            v.components = VarianceComponents{t.number(r, c_sam), t.number(r, c_lc), t.number(r, c_ref)};
        }
        v.var_res = t.number(r, c_vr);
        v.var_total = t.number(r, c_vt);
        v.se = t.number(r, c_se);
        v.rel_se = t.number(r, c_rse);
        for (std::size_t k = 0; k < res_cols.size(); ++k) {
            v.sensitivity.push_back({res_cols[k].first, t.number(r, res_cols[k].second), t.number(r, total_cols[k])});
        }
        out.push_back(std::move(v));
    }
    return out;
}

namespace {

constexpr double size_edges[] = {0, 5, 10, 20, 50, 100, 250, 500, 1000, 2500, 5000};

std::vector<std::string> size_groups() {
    std::vector<std::string> g;
    for (std::size_t i = 0; i + 1 < std::size(size_edges); ++i) {
        g.push_back("(" + format_double(size_edges[i]) + "," + format_double(size_edges[i + 1]) + "]");
    }
    g.emplace_back(">5000");
    return g;
}

std::vector<std::string> cover_groups() { return {"0", "(0,20]", "(20,40]", "(40,60]", "(60,80]", "(80,100]"}; }

// Type 7 quantile of sorted values.
double quantile(const std::vector<double>& sorted, double p) {
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct Grouping {
    const char* name;
    std::vector<std::string> labels;
    std::function<std::string(const ReportRow&)> of;
};

std::vector<Grouping> groupings() {
    return {
        {"size", size_groups(), [](const ReportRow& r) { return size_group(r.features.area_acres); }},
        {"cover", cover_groups(), [](const ReportRow& r) { return cover_group(r.features.forest_pct); }},
    };
}

}  // namespace

std::string size_group(double acres) {
    for (std::size_t i = 0; i + 1 < std::size(size_edges); ++i) {
        if (acres <= size_edges[i + 1]) {
            return size_groups()[i];
        }
    }
    return ">5000";
}

std::string cover_group(double forest_pct) {
    if (!(forest_pct > 0.0)) {
        return "0";
    }
    const auto groups = cover_groups();
    for (int i = 1; i <= 5; ++i) {
        if (forest_pct <= 20.0 * i) {
            return groups[static_cast<std::size_t>(i)];
        }
    }
    return groups.back();
}

void write_report_tables(std::span<const ReportRow> rows, const std::string& out_dir) {
    {
        auto out = open_output(join_path(out_dir, files::report_relse));
        CsvWriter w(out);
        w.header({"parcel_id", "area_acres", "forest_pct", "agb", "se", "rel_se", "rel_se_capped"});
        for (const auto& r : rows) {
            w.field(r.report.parcel_id).field(r.features.area_acres).field(r.features.forest_pct);
            w.field(r.report.agb).field(r.report.se).field(r.report.rel_se);
            w.field(std::isnan(r.report.rel_se) ? r.report.rel_se : std::min(r.report.rel_se, 100.0));
            w.end_row();
        }
    }
    const auto gs = groupings();
    {
        static constexpr double probs[] = {0.0, 0.025, 0.25, 0.375, 0.5, 0.625, 0.75, 0.975, 1.0};
        auto out = open_output(join_path(out_dir, files::report_se_groups));
        CsvWriter w(out);
        w.header({"grouping", "group", "n", "se_p0", "se_p2.5", "se_p25", "se_p37.5", "se_p50", "se_p62.5", "se_p75",
                  "se_p97.5", "se_p100"});
        for (const auto& g : gs) {
            for (const auto& label : g.labels) {
                std::vector<double> se;
                for (const auto& r : rows) {
                    if (g.of(r) == label) {
                        se.push_back(r.report.se);
                    }
                }
                std::sort(se.begin(), se.end());
                w.field(g.name).field(label).field(se.size());
                for (double p : probs) {
                    if (se.empty()) {
                        w.field("");
                    } else {
                        w.field(quantile(se, p));
                    }
                }
                w.end_row();
            }
        }
    }
    {
        auto out = open_output(join_path(out_dir, files::report_contributions));
        CsvWriter w(out);
        w.header({"grouping", "group", "n", "pct_res", "pct_ref", "pct_sam", "pct_lc"});
        for (const auto& g : gs) {
            for (const auto& label : g.labels) {
                std::vector<double> res;
                std::vector<double> ref;
                std::vector<double> sam;
                std::vector<double> lc;
                for (const auto& r : rows) {
                    const VarianceReport& v = r.report;
                    if (g.of(r) != label || !(v.var_total > 0.0) || !v.components) {
                        continue;
                    }
                    res.push_back(100.0 * v.var_res / v.var_total);
                    ref.push_back(100.0 * v.components->var_ref / v.var_total);
                    sam.push_back(100.0 * v.components->var_sam / v.var_total);
                    lc.push_back(100.0 * v.components->var_lc / v.var_total);
                }
                w.field(g.name).field(label).field(res.size());
                for (const auto* v : {&res, &ref, &sam, &lc}) {
                    if (v->empty()) {
                        w.field("");
                    } else {
                        w.field(pairwise_sum(*v) / static_cast<double>(v->size()));
                    }
                }
                w.end_row();
            }
        }
    }
    {
        auto out = open_output(join_path(out_dir, files::report_sensitivity));
        CsvWriter w(out);
        w.header({"grouping", "group", "factor", "n", "mean_pct_diff"});
        std::vector<double> factors;
        if (!rows.empty()) {
            for (const auto& s : rows.front().report.sensitivity) {
                factors.push_back(s.factor);
            }
        }
        const Grouping& g = gs.front();
        for (const auto& label : g.labels) {
            for (std::size_t k = 0; k < factors.size(); ++k) {
                std::vector<double> diff;
                for (const auto& r : rows) {
                    const VarianceReport& v = r.report;
                    if (v.sensitivity.size() != factors.size()) {
                        throw Error("report rows disagree on sensitivity factors");
                    }
                    if (g.of(r) != label || !(v.var_total > 0.0)) {
                        continue;
                    }
                    diff.push_back(100.0 * (v.sensitivity[k].var_total - v.var_total) / v.var_total);
                }
                w.field(g.name).field(label).field(factors[k]).field(diff.size());
                if (diff.empty()) {
                    w.field("");
                } else {
                    w.field(pairwise_sum(diff) / static_cast<double>(diff.size()));
                }
                w.end_row();
            }
        }
    }
}

Manifest stage_report(const std::string& report_path, const std::string& observations_path,
                      const std::string& out_dir) {
    require_file(report_path);
    require_file(observations_path);
    Manifest m;
    m.command = "report";
    m.config.set("report", report_path);
    m.config.set("observations", observations_path);
    m.inputs = {report_path, observations_path};
    std::vector<ReportRow> rows;
    try {
        const auto reports = read_reports_csv(report_path);
        const auto obs = read_se_observations(observations_path);
        std::map<std::string, ParcelFeatures> features;
        for (const auto& o : obs) {
            features[o.parcel_id] = o.features;
        }
        for (const auto& r : reports) {
            const auto it = features.find(r.parcel_id);
            if (it == features.end()) {
                throw Error("parcel '" + r.parcel_id + "' is missing from " + observations_path);
            }
            rows.push_back({r, it->second});
        }
        ensure_dir(out_dir);
        write_report_tables(rows, out_dir);
    } catch (const Error& e) {
        throw StageError("report", e.what());
    }
    m.outputs = {files::report_relse, files::report_se_groups, files::report_contributions,
                 files::report_sensitivity};
    m.write(out_dir);
    return m;
}

// full pipeline ------------------------------------------------------------

void run_pipeline(RunConfig cfg, const std::string& out_dir, bool simulate) {
    ensure_dir(out_dir);
    auto sub = [&](const char* name) { return join_path(out_dir, name); };
    if (simulate) {
        cfg.data_dir = sub("data");
        stage_simulate(cfg, cfg.data_dir);
    }
    RunConfig full = cfg;
    full.resample_plots = full.perturb_reference = full.perturb_landcover = true;
    RunConfig no_resample = full;
    no_resample.resample_plots = false;
    RunConfig static_lc = full;
    static_lc.perturb_landcover = false;
    stage_bootstrap(full, sub("bootstrap_full"));
    stage_bootstrap(no_resample, sub("bootstrap_no_resample"));
    stage_bootstrap(static_lc, sub("bootstrap_static_lc"));
    stage_decompose(sub("bootstrap_full"), sub("bootstrap_no_resample"), sub("bootstrap_static_lc"), sub("decompose"));
    const std::string map = join_path(sub("bootstrap_full"), files::mean_prediction);
    stage_variogram(cfg, map, sub("variogram"));
    stage_resvar(cfg, map, "", sub("resvar"));
    AggregateInputs in;
    in.map_path = map;
    in.summary_path = join_path(sub("bootstrap_full"), files::bootstrap_summary);
    in.components_path = join_path(sub("decompose"), files::components);
    in.resvar_path = join_path(sub("resvar"), files::resvar_model);
    in.variogram_path = join_path(sub("variogram"), files::variogram_model);
    stage_aggregate(cfg, in, sub("aggregate"));
    stage_sensitivity(cfg, in, sub("sensitivity"));
    const std::string obs = join_path(sub("aggregate"), files::se_observations);
    stage_se_fit(cfg, obs, sub("se_model"));
    stage_se_predict(join_path(sub("se_model"), files::se_model), obs, sub("se_predict"));
    stage_report(join_path(sub("aggregate"), files::variance_report), obs, sub("report"));
}

}  // namespace parcelse
