// parcelse command-line interface.
//
// Exit codes: 0 success, 1 user error (bad input or configuration, with the
// failing stage named), 2 internal error.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "parcelse/config.hpp"
#include "parcelse/csv.hpp"
#include "parcelse/error.hpp"
#include "parcelse/parallel.hpp"
#include "parcelse/pipeline.hpp"
#include "parcelse/se_model.hpp"

namespace {

using namespace parcelse;

struct Common {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<unsigned> threads;
    std::optional<std::string> out_dir;
    std::optional<std::string> data_dir;
};

RunConfig make_config(const Common& c) {
    RunConfig cfg;
    if (!c.config_path.empty()) {
        cfg = RunConfig::read_file(c.config_path);
    }
    for (const auto& kv : c.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw Error("--set expects key=value, got '" + kv + "'");
        }
        cfg.set(std::string(trim(kv.substr(0, eq))), std::string(trim(kv.substr(eq + 1))));
    }
    if (c.out_dir) {
        cfg.out_dir = *c.out_dir;
    }
    if (c.data_dir) {
        cfg.data_dir = *c.data_dir;
    }
    cfg.validate();
    return cfg;
}

template <class T>
void apply(std::optional<T>& opt, T& target) {
    if (opt) {
        target = *opt;
    }
}

int run_cli(int argc, char** argv) {
    CLI::App app{"Model-based standard errors for parcel means of raster map predictions"};
    app.require_subcommand(1);
    app.fallthrough();
    Common common;
    app.add_option("--config", common.config_path, "key = value configuration file")->check(CLI::ExistingFile);
    app.add_option("--set", common.overrides, "Override one configuration key (key=value); repeatable");
    app.add_option("--threads", common.threads, "Maximum worker threads")->check(CLI::PositiveNumber);
    app.add_option("--out", common.out_dir, "Output directory (default: $PARCELSE_OUT_DIR, else ./out)");
    app.add_option("--data", common.data_dir, "Dataset directory");

    // simulate
    auto* sim = app.add_subcommand("simulate", "Write a synthetic dataset (landscape, plots, tables)");
    std::optional<std::uint64_t> sim_seed;
    sim->add_option("--seed", sim_seed, "Simulation seed");

    // bootstrap
    auto* boot = app.add_subcommand("bootstrap", "Run the bootstrap variance engine");
    std::optional<std::size_t> iterations;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> predictor;
    std::optional<int> knn_k;
    bool no_resample = false;
    bool no_reference = false;
    bool static_lc = false;
    boot->add_option("--iterations,-n", iterations, "Bootstrap iterations");
    boot->add_option("--seed", seed, "Master seed");
    boot->add_option("--predictor", predictor, "linear or knn");
    boot->add_option("--k", knn_k, "Neighbours for knn");
    boot->add_flag("--no-resample", no_resample, "Keep the original plot sample");
    boot->add_flag("--no-reference", no_reference, "Do not perturb reference data");
    boot->add_flag("--static-lc", static_lc, "Do not perturb the land-cover mask");

    // decompose
    auto* dec = app.add_subcommand("decompose", "Split Var_boot into Var_sam, Var_LC and Var_ref");
    std::string full_dir;
    std::string nr_dir;
    std::string slc_dir;
    dec->add_option("--full", full_dir, "Output directory of the full run")->required();
    dec->add_option("--no-resample", nr_dir, "Output directory of the run without resampling")->required();
    dec->add_option("--static-lc", slc_dir, "Output directory of the run with a static land-cover mask")
        ->required();

    // variogram
    auto* vg = app.add_subcommand("variogram", "Fit the residual semivariogram");
    std::string map_path;
    std::optional<std::string> families;
    std::optional<std::string> weights;
    std::optional<double> bin_width;
    std::optional<double> max_lag;
    std::optional<std::size_t> sample;
    vg->add_option("--map", map_path, "AGB map (ESRI ASCII grid)")->required();
    vg->add_option("--families", families, "Comma list of exponential, spherical, gaussian");
    vg->add_option("--weights", weights, "empirical or model");
    vg->add_option("--bin-width", bin_width, "Lag bin width (m)");
    vg->add_option("--max-lag", max_lag, "Largest lag (m)");
    vg->add_option("--sample", sample, "Residual pixels to sample (0: all)");
    vg->add_option("--seed", seed, "Sampling seed");

    // resvar
    auto* rv = app.add_subcommand("resvar", "Fit the binned residual-variance model");
    std::string assessment_path;
    std::optional<std::string> forms;
    rv->add_option("--map", map_path, "AGB map used to predict at the assessment plots");
    rv->add_option("--assessment", assessment_path, "Assessment CSV (predicted plus residual or observed)");
    rv->add_option("--forms", forms, "Comma list of linear, log-linear, log-log, cubic, spline");

    // aggregate / sensitivity
    AggregateInputs agg_in;
    std::optional<std::string> factors;
    auto add_agg = [&](CLI::App* sc) {
        sc->add_option("--map", agg_in.map_path, "AGB map")->required();
        sc->add_option("--summary", agg_in.summary_path, "Bootstrap summary CSV")->required();
        sc->add_option("--components", agg_in.components_path, "Decomposition CSV");
        sc->add_option("--resvar", agg_in.resvar_path, "Residual-variance model file")->required();
        sc->add_option("--variogram", agg_in.variogram_path, "Variogram model file")->required();
        sc->add_option("--factors", factors, "Comma list of distance adjustment factors");
    };
    auto* agg = app.add_subcommand("aggregate", "Per-parcel Var_res, Var_total, SE and relSE");
    add_agg(agg);
    auto* sens = app.add_subcommand("sensitivity", "Var_res and Var_total per distance adjustment factor");
    add_agg(sens);

    // se-fit
    auto* sefit = app.add_subcommand("se-fit", "Fit the parcel SE regression");
    std::string observations;
    std::optional<std::uint64_t> split_seed;
    std::optional<std::string> transforms;
    sefit->add_option("--observations", observations, "CSV of parcel features and SE")->required();
    sefit->add_option("--split-seed", split_seed, "Train/test split seed");
    sefit->add_option("--transforms", transforms, "Comma list of none, log-log, log-linear, linear-log");

    // se-predict
    auto* sepred = app.add_subcommand("se-predict", "Predict parcel SE from the fitted regression");
    std::string model_path;
    std::optional<double> f_agb;
    std::optional<double> f_perimeter;
    std::optional<double> f_area;
    std::optional<double> f_forest;
    sepred->add_option("--model", model_path, "SE regression model file")->required()->check(CLI::ExistingFile);
    sepred->add_option("--observations", observations, "CSV of parcel features (batch mode)");
    sepred->add_option("--agb", f_agb, "AGB density (Mg/ha)");
    sepred->add_option("--perimeter", f_perimeter, "Perimeter (m)");
    sepred->add_option("--area", f_area, "Area (acres)");
    sepred->add_option("--forest", f_forest, "Forest cover (%)");

    // report
    auto* rep = app.add_subcommand("report", "Write the figure data tables");
    std::string report_path;
    rep->add_option("--report", report_path, "Variance report CSV")->required();
    rep->add_option("--observations", observations, "Parcel features CSV (se_observations.csv)")->required();

    // run
    auto* all = app.add_subcommand("run", "Run every stage in sequence");
    bool simulate_first = false;
    all->add_flag("--simulate", simulate_first, "Simulate the dataset into <out>/data first");
    all->add_option("--iterations,-n", iterations, "Bootstrap iterations");
    all->add_option("--seed", seed, "Master seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (common.threads) {
        set_max_threads(*common.threads);
    }
    RunConfig cfg = make_config(common);
    apply(seed, cfg.seed);
    apply(iterations, cfg.n_iterations);
    if (predictor) {
        cfg.predictor.kind = parse_predictor_kind(*predictor);
    }
    apply(knn_k, cfg.predictor.k);
    if (families) {
        cfg.variogram_families = parse_variogram_families(*families);
    }
    if (weights) {
        cfg.variogram_weights = parse_variogram_weights(*weights);
    }
    apply(bin_width, cfg.bin_width);
    apply(max_lag, cfg.max_lag);
    apply(sample, cfg.residual_sample);
    if (forms) {
        cfg.resvar_forms = parse_resvar_forms(*forms);
    }
    if (factors) {
        cfg.sensitivity_factors = parse_factors(*factors);
    }
    apply(split_seed, cfg.split_seed);
    if (transforms) {
        cfg.se_transforms.clear();
        for (const auto& t : split(*transforms, ',')) {
            cfg.se_transforms.push_back(parse_se_transform(trim(t)));
        }
    }
    cfg.validate();
    const std::string out = cfg.resolved_out_dir();

    if (sim->parsed()) {
        apply(sim_seed, cfg.landscape.seed);
        stage_simulate(cfg, common.out_dir ? out : cfg.data_dir);
    } else if (boot->parsed()) {
        cfg.resample_plots = !no_resample;
        cfg.perturb_reference = !no_reference;
        cfg.perturb_landcover = !static_lc;
        stage_bootstrap(cfg, out);
    } else if (dec->parsed()) {
        stage_decompose(full_dir, nr_dir, slc_dir, out);
    } else if (vg->parsed()) {
        stage_variogram(cfg, map_path, out);
    } else if (rv->parsed()) {
        if (map_path.empty() && assessment_path.empty()) {
            throw StageError("resvar", "give --assessment, or --map to predict at the dataset's assessment plots");
        }
        stage_resvar(cfg, map_path, assessment_path, out);
    } else if (agg->parsed()) {
        if (!factors) {
            cfg.sensitivity_factors.clear();
        }
        stage_aggregate(cfg, agg_in, out);
    } else if (sens->parsed()) {
        stage_sensitivity(cfg, agg_in, out);
    } else if (sefit->parsed()) {
        stage_se_fit(cfg, observations, out);
    } else if (sepred->parsed()) {
        if (!observations.empty()) {
            stage_se_predict(model_path, observations, out);
        } else {
            if (!f_agb || !f_perimeter || !f_area || !f_forest) {
                throw StageError("se-predict", "give --observations, or all of --agb --perimeter --area --forest");
            }
            SeRegression model;
            try {
                model = SeRegression::from_record(Record::read_file(model_path));
            } catch (const Error& e) {
                throw StageError("se-predict", e.what());
            }
            double se = 0.0;
            try {
                se = predict_se(model, {*f_agb, *f_forest, *f_area, *f_perimeter});
            } catch (const Error& e) {
                throw StageError("se-predict", e.what());
            }
            std::printf("%.2f\n", se);
            Manifest m;
            m.command = "se-predict";
            m.config.set("model", model_path);
            m.config.set("agb", *f_agb);
            m.config.set("perimeter", *f_perimeter);
            m.config.set("area", *f_area);
            m.config.set("forest", *f_forest);
            m.inputs = {model_path};
            m.diagnostics = {{"se", format_double(se)}};
            std::filesystem::create_directories(out);
            m.write(out);
        }
    } else if (rep->parsed()) {
        stage_report(report_path, observations, out);
    } else if (all->parsed()) {
        run_pipeline(cfg, out, simulate_first);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const parcelse::StageError& e) {
        std::cerr << "parcelse: stage '" << e.stage() << "' failed: " << e.what() << '\n';
        return 1;
    } catch (const parcelse::Error& e) {
        std::cerr << "parcelse: error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "parcelse: internal error: " << e.what() << '\n';
        return 2;
    } catch (...) {
        std::cerr << "parcelse: internal error\n";
        return 2;
    }
}
