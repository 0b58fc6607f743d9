#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "parcelse/aggregate.hpp"
#include "parcelse/predictor.hpp"
#include "parcelse/record.hpp"
#include "parcelse/resvar.hpp"
#include "parcelse/se_model.hpp"
#include "parcelse/synth.hpp"
#include "parcelse/variogram.hpp"

namespace parcelse {

// Settings shared by the CLI subcommands. Read from a key = value file;
// command-line flags override individual keys.
struct RunConfig {
    std::string data_dir = "data/toy";
    std::string out_dir;  // empty: PARCELSE_OUT_DIR, else "out"

    // simulate
    LandscapeSpec landscape = [] {
        LandscapeSpec s;
        s.parcel_max_pixels = 150;
        return s;
    }();
    std::size_t n_plots = 200;
    std::size_t n_assessment_plots = 400;
    TreeModelSpec tree_model;

    // bootstrap
    std::uint64_t seed = 1;
    std::size_t n_iterations = 1000;
    bool resample_plots = true;
    bool perturb_reference = true;
    bool perturb_landcover = true;
    PredictorSettings predictor;

    // variogram
    std::vector<VariogramFamily> variogram_families{VariogramFamily::exponential, VariogramFamily::spherical,
                                                    VariogramFamily::gaussian};
    VariogramWeights variogram_weights = VariogramWeights::empirical;
    std::size_t residual_sample = 0;  // 0: every valid pixel
    double bin_width = 0.0;           // 0: pixel size
    double max_lag = 0.0;             // 0: twice the largest parcel diagonal

    // resvar
    std::vector<ResVarForm> resvar_forms{std::begin(all_resvar_forms), std::end(all_resvar_forms)};
    std::size_t resvar_initial_bins = 30;
    std::size_t resvar_min_count = 10;

    // aggregate / sensitivity
    std::vector<double> sensitivity_factors{std::begin(default_sensitivity_factors),
                                            std::end(default_sensitivity_factors)};

    // se-fit
    std::uint64_t split_seed = 1;
    std::vector<SeTransform> se_transforms{std::begin(all_se_transforms), std::end(all_se_transforms)};

    void validate() const;
    Record to_record() const;
    // Unknown keys are an error; missing keys keep their defaults.
    static RunConfig from_record(const Record& r);
    static RunConfig read_file(const std::string& path);

    // Applies one `key = value` override.
    void set(const std::string& key, const std::string& value);

    std::string resolved_out_dir() const;
};

bool parse_bool(std::string_view text, std::string_view what);

}  // namespace parcelse
