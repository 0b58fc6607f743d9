#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "parcelse/allometry.hpp"
#include "parcelse/error_models.hpp"
#include "parcelse/grid.hpp"
#include "parcelse/variogram.hpp"

namespace parcelse {

enum class SimMethod { none, iid, circulant, cholesky };

std::string_view to_string(SimMethod m);

// Largest grid (in pixels) the dense Cholesky fallback accepts.
inline constexpr std::size_t cholesky_max_pixels = 4096;

// Exact simulation of a zero-mean stationary Gaussian field whose
// semivariogram is `model`: the partial-sill part by circulant embedding
// (falling back to Cholesky on small grids when no nonnegative embedding is
// found) plus independent nugget noise. Setup is done once; realizations are
// independent and keyed by (seed, index).
class FieldSimulator {
public:
    FieldSimulator(const GridGeometry& geometry, const VariogramModel& model);
    ~FieldSimulator();
    FieldSimulator(FieldSimulator&&) noexcept;
    FieldSimulator& operator=(FieldSimulator&&) noexcept;

    SimMethod method() const;
    const GridGeometry& geometry() const;
    const VariogramModel& model() const;
    // Embedding grid dimensions (rows, cols) for the circulant method.
    std::pair<std::size_t, std::size_t> embedding() const;

    std::vector<double> realization(std::uint64_t seed, std::uint64_t index) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Mean surface mean + gradient_x * (x - x0) + gradient_y * (y - y0), with
// (x0, y0) the grid center.
struct FieldSpec {
    GridGeometry geometry;
    double mean = 0.0;
    double gradient_x = 0.0;
    double gradient_y = 0.0;
    VariogramModel model;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SimulatedField {
    GridRaster raster;
    SimMethod method = SimMethod::none;
};

SimulatedField simulate_field(const FieldSpec& spec, std::uint64_t index = 0);

struct McVariance {
    double variance = 0.0;
    double mc_se = 0.0;
    std::size_t n_real = 0;
    SimMethod method = SimMethod::none;
};

// Sample variance (n - 1) of the parcel mean of the residual field over
// n_real realizations, with the standard error of that variance estimate
// from the fourth central moment.
McVariance mc_parcel_variance(const FieldSpec& spec, const Parcel& parcel, std::size_t n_real);

struct LandscapeSpec {
    GridGeometry geometry{0.0, 0.0, 30.0, 96, 96};
    std::uint64_t seed = 1;
    double agb_mean = 110.0;
    VariogramModel agb_model{VariogramFamily::exponential, 100.0, 1600.0, 900.0};
    // Class shares, applied as quantile bands of a second independent field.
    double tree_cover = 0.55;
    double grass_shrub = 0.08;
    double wetland = 0.07;
    double cropland = 0.18;
    double developed = 0.12;
    // Predictor layer: agb + noise with sd = noise_sd0 + noise_sd1 * agb.
    double noise_sd0 = 5.0;
    double noise_sd1 = 0.15;
    // Parcels by guillotine split until each piece has at most this many pixels.
    std::size_t parcel_max_pixels = 400;
    std::size_t parcel_min_pixels = 4;
};

struct Landscape {
    GridRaster true_agb;
    GridRaster reference_agb;  // an independent high-quality map of true_agb
    std::vector<GridRaster> predictors;
    std::vector<std::string> predictor_names;
    GridRaster lc_primary;
    GridRaster lc_secondary;
    std::vector<Parcel> parcels;
};

Landscape simulate_landscape(const LandscapeSpec& spec);

struct TreeModelSpec {
    std::size_t min_trees = 10;
    std::size_t max_trees = 30;
    // Multiplicative lognormal deviation of plot AGB from the landscape
    // footprint value; 0 reproduces the footprint value.
    double plot_noise_sd = 0.0;
    double dead_fraction = 0.1;
    double softwood_fraction = 0.4;
};

// Area-weighted mean of `raster` over the four-subplot footprint.
double footprint_mean(const GridRaster& raster, MapPoint center);

// Plots at uniform random locations whose footprint lies inside the grid.
// Tree expansions are scaled so that the error-free plot AGB reproduces the
// footprint value of the true AGB (times the plot noise).
std::vector<PlotRecord> simulate_inventory(const Landscape& landscape, std::size_t n_plots,
                                           const TreeModelSpec& tree_model, const AllometricTables& tables,
                                           std::uint64_t seed);

// Relative residuals per component and wood type, and top-and-branch ratios
// (a few above the 0.5 cap, which ResidualLibrary drops).
ResidualLibrary synthetic_residual_library(std::uint64_t seed, std::size_t per_stratum = 400);

}  // namespace parcelse
