#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "parcelse/aggregate.hpp"
#include "parcelse/allometry.hpp"
#include "parcelse/bootstrap.hpp"
#include "parcelse/config.hpp"
#include "parcelse/error_models.hpp"
#include "parcelse/grid.hpp"

namespace parcelse {

inline constexpr const char* parcelse_version = "0.1.0";

// File names inside a dataset directory and inside stage output directories.
namespace files {
inline constexpr const char* dataset = "dataset.txt";
inline constexpr const char* true_agb = "true_agb.asc";
inline constexpr const char* reference_agb = "reference_agb.asc";
inline constexpr const char* lc_primary = "lc_primary.asc";
inline constexpr const char* lc_secondary = "lc_secondary.asc";
inline constexpr const char* parcel_pixels = "parcel_pixels.csv";
inline constexpr const char* parcels = "parcels.csv";
inline constexpr const char* plots = "plots.csv";
inline constexpr const char* trees = "trees.csv";
inline constexpr const char* assessment_plots = "assessment_plots.csv";
inline constexpr const char* assessment_trees = "assessment_trees.csv";
inline constexpr const char* allometry = "allometry.csv";
inline constexpr const char* decay_ratios = "decay_ratios.csv";
inline constexpr const char* error_specs = "error_specs.csv";
inline constexpr const char* accuracy = "accuracy.csv";
inline constexpr const char* residuals = "allometric_residuals.csv";

inline constexpr const char* iterations = "iterations.csv";
inline constexpr const char* bootstrap_summary = "bootstrap_summary.csv";
inline constexpr const char* bootstrap_config = "bootstrap.txt";
inline constexpr const char* mean_prediction = "mean_prediction.asc";
inline constexpr const char* components = "components.csv";
inline constexpr const char* residual_points = "residual_points.csv";
inline constexpr const char* empirical_variogram = "empirical_variogram.csv";
inline constexpr const char* variogram_candidates = "variogram_candidates.csv";
inline constexpr const char* variogram_model = "variogram.txt";
inline constexpr const char* assessment = "assessment.csv";
inline constexpr const char* resvar_bins = "resvar_bins.csv";
inline constexpr const char* resvar_candidates = "resvar_candidates.csv";
inline constexpr const char* resvar_model = "resvar.txt";
inline constexpr const char* sigma2 = "sigma2.asc";
inline constexpr const char* variance_report = "variance_report.csv";
inline constexpr const char* se_observations = "se_observations.csv";
inline constexpr const char* sensitivity = "sensitivity.csv";
inline constexpr const char* se_model = "se_model.txt";
inline constexpr const char* se_candidates = "se_candidates.csv";
inline constexpr const char* se_predictions = "se_predictions.csv";
inline constexpr const char* report_relse = "report_relse.csv";
inline constexpr const char* report_se_groups = "report_se_groups.csv";
inline constexpr const char* report_contributions = "report_contributions.csv";
inline constexpr const char* report_sensitivity = "report_sensitivity.csv";
}  // namespace files

// 64-bit FNV-1a of a file's bytes.
std::uint64_t fnv1a_file(const std::string& path);

std::string join_path(const std::string& dir, const std::string& name);

// Provenance record written as manifest_<command>.json next to the outputs:
// config echo, seeds, library versions, input checksums and output checksums.
// The worker count is left out so that manifests match across --threads.
struct Manifest {
    std::string command;
    Record config;
    std::vector<std::pair<std::string, std::string>> seeds;
    std::vector<std::string> inputs;   // paths as given
    std::vector<std::string> outputs;  // names relative to the output directory
    std::vector<std::pair<std::string, std::string>> diagnostics;

    void write(const std::string& out_dir) const;
};

// All inputs of a dataset directory, parsed.
struct Dataset {
    std::string dir;
    GridRaster true_agb;  // optional; empty geometry when absent
    GridRaster reference_agb;
    std::vector<GridRaster> predictors;
    std::vector<std::string> predictor_names;
    GridRaster lc_primary;
    GridRaster lc_secondary;
    std::vector<Parcel> parcels;
    std::vector<PlotRecord> plots;
    std::vector<PlotRecord> assessment_plots;
    AllometricTables tables;
    ErrorModelSet errors;
    std::optional<ResidualLibrary> residuals;
    ClassAccuracyTable accuracy;
    std::vector<std::string> input_paths;
};

Dataset load_dataset(const std::string& dir);

// Stage entry points used by the CLI. Each parses every input before any
// compute, writes its outputs and a manifest into `out_dir`, and returns the
// manifest.
Manifest stage_simulate(const RunConfig& cfg, const std::string& data_dir);
Manifest stage_bootstrap(const RunConfig& cfg, const std::string& out_dir);
Manifest stage_decompose(const std::string& full_dir, const std::string& no_resample_dir,
                         const std::string& static_lc_dir, const std::string& out_dir);
Manifest stage_variogram(const RunConfig& cfg, const std::string& map_path, const std::string& out_dir);
Manifest stage_resvar(const RunConfig& cfg, const std::string& map_path, const std::string& assessment_path,
                      const std::string& out_dir);

struct AggregateInputs {
    std::string map_path;
    std::string summary_path;     // bootstrap summary CSV
    std::string components_path;  // optional decomposition CSV
    std::string resvar_path;
    std::string variogram_path;
};

Manifest stage_aggregate(const RunConfig& cfg, const AggregateInputs& in, const std::string& out_dir);
Manifest stage_sensitivity(const RunConfig& cfg, const AggregateInputs& in, const std::string& out_dir);
Manifest stage_se_fit(const RunConfig& cfg, const std::string& observations_path, const std::string& out_dir);
Manifest stage_se_predict(const std::string& model_path, const std::string& observations_path,
                          const std::string& out_dir);
Manifest stage_report(const std::string& report_path, const std::string& observations_path,
                      const std::string& out_dir);

// Simulate (when `simulate` is set, into <out_dir>/data), the three paired
// bootstrap runs, decomposition, variogram, residual-variance model,
// aggregation with sensitivity factors, SE regression and report tables.
void run_pipeline(RunConfig cfg, const std::string& out_dir, bool simulate);

// report tables -----------------------------------------------------------

struct ReportRow {
    VarianceReport report;
    ParcelFeatures features;
};

std::vector<VarianceReport> read_reports_csv(const std::string& path);

// Size groups (acres, left-open): (0,5] (5,10] (10,20] (20,50] (50,100]
// (100,250] (250,500] (500,1000] (1000,2500] (2500,5000] and >5000.
std::string size_group(double acres);
// Forest-cover groups (%): 0, then five left-open 20 % intervals.
std::string cover_group(double forest_pct);

void write_report_tables(std::span<const ReportRow> rows, const std::string& out_dir);

}  // namespace parcelse
