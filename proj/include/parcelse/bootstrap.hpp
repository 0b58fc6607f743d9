#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "parcelse/aggregate.hpp"
#include "parcelse/allometry.hpp"
#include "parcelse/error_models.hpp"
#include "parcelse/grid.hpp"
#include "parcelse/predictor.hpp"
#include "parcelse/record.hpp"

namespace parcelse {

struct BootstrapConfig {
    std::size_t n_iterations = 1000;
    std::uint64_t seed = 1;
    bool resample_plots = true;
    bool perturb_reference = true;
    bool perturb_landcover = true;
    PredictorSettings predictor;
    std::size_t max_failures = 100;

    void validate() const;
    Record to_record() const;
    static BootstrapConfig from_record(const Record& r);
};

// Shared, read-only inputs of a bootstrap run. Pointers must outlive it.
struct BootstrapData {
    std::vector<PlotRecord> plots;
    const AllometricTables* tables = nullptr;
    const ErrorModelSet* errors = nullptr;       // needed when perturbing the reference data
    const ResidualLibrary* residuals = nullptr;  // optional allometric residuals
    std::vector<GridRaster> predictors;
    std::vector<std::string> predictor_names;
    GridRaster lc_primary;
    GridRaster lc_secondary;
    ClassAccuracyTable accuracy = ClassAccuracyTable::lcmap_defaults();
    std::vector<Parcel> parcels;

    void validate(const BootstrapConfig& cfg) const;
};

// Area-weighted mean of each layer over the four-subplot footprint. Throws
// Error when the footprint covers no valid pixel.
std::vector<double> footprint_features(std::span<const GridRaster> layers, MapPoint center);

// Plot AGB density (Mg/ha), with measurement errors and residuals injected
// when `sources` is non-null.
double plot_agb_with_errors(const PlotRecord& plot, const AllometricTables& tables, const CrmErrorSources* sources,
                            Rng& rng, CrmTrace* trace = nullptr);

struct BootstrapResult {
    BootstrapConfig config;
    std::vector<std::string> parcel_ids;
    std::vector<std::vector<double>> iterations;  // [parcel][iteration] parcel mean AGB
    std::vector<double> mean;
    std::vector<double> var_boot;
    std::size_t redraws = 0;
    std::size_t clamped_totals = 0;
    std::size_t clamped_components = 0;
    // Mean over iterations of the masked per-pixel prediction; nodata off
    // the parcels.
    GridRaster mean_prediction;

    // Columns parcel_id, iteration, mean_agb.
    void write_iterations_csv(const std::string& path) const;
    // Columns parcel_id, mean_agb, var_boot.
    void write_summary_csv(const std::string& path) const;
    // Rebuilds iterations, mean and var_boot (config left at defaults).
    static BootstrapResult read_iterations_csv(const std::string& path);
};

// Per iteration: resample plots with replacement, recompute plot AGB with
// error injection and jitter plot locations, fit the predictor, predict the
// parcel pixels, zero pixels of (perturbed) non-forest classes, and take
// parcel means. Each source draws from its own substream keyed by iteration
// (and plot), so switching a source off leaves the others' draws unchanged.
// A resample with fewer than 2 distinct plots is redrawn; max_failures
// consecutive redraws abort the run.
BootstrapResult run(const BootstrapConfig& cfg, const BootstrapData& data);

// Sample variance (n - 1) of the iteration values.
double bootstrap_variance(std::span<const double> values);

// Var_sam = Var_boot - Var_no_resample and Var_LC = Var_boot - Var_static_LC,
// each clamped at 0; if they exceed Var_boot the excess is removed in
// proportion to their sizes; Var_ref is the remainder.
VarianceComponents decompose_one(double var_boot, double var_no_resample, double var_static_lc);

// Throws Error when the three runs do not line up (parcels, iterations,
// seed, toggles).
std::vector<VarianceComponents> decompose(const BootstrapResult& full, const BootstrapResult& no_resample,
                                          const BootstrapResult& static_lc);

struct SmoothingStats {
    std::string plot_id;
    std::size_t n_trees = 0;
    double tree_cv = 0.0;  // mean over trees of the CV of tree AGB across draws
    double plot_cv = 0.0;  // CV of plot AGB across draws
};

// Reference-data perturbation only, using the same substreams as run().
std::vector<SmoothingStats> reference_smoothing(const BootstrapData& data, std::size_t n_iterations,
                                                std::uint64_t seed);

}  // namespace parcelse
