#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "parcelse/grid.hpp"
#include "parcelse/record.hpp"
#include "parcelse/rng.hpp"

namespace parcelse {

enum class VariogramFamily { exponential, spherical, gaussian };

std::string_view to_string(VariogramFamily f);
VariogramFamily parse_variogram_family(std::string_view s);
std::vector<VariogramFamily> parse_variogram_families(std::string_view comma_list);

// Variogram with practical range: all three families reach 95 % of the
// partial sill (or all of it, for the spherical) at h = range.
struct VariogramModel {
    VariogramFamily family = VariogramFamily::exponential;
    double nugget = 0.0;
    double sill = 0.0;
    double range = 1.0;

    double partial_sill() const { return sill - nugget; }

    // Normalized structure function in [0, 1]; 0 at h = 0.
    double shape(double h) const;
    // gamma(0) = 0, gamma(0+) = nugget.
    double gamma(double h) const;
    // (sill - gamma(h)) / sill clamped to [0, 1]; 1 at h = 0, and 0 for h > 0
    // when sill is 0.
    double rho(double h) const;

    void validate() const;

    Record to_record() const;
    static VariogramModel from_record(const Record& r);
};

struct ResidualPoint {
    double x = 0.0;
    double y = 0.0;
    double e = 0.0;
};

// pred - reference per pixel; nodata in either input gives nodata.
GridRaster residual_field(const GridRaster& pred, const GridRaster& reference);

// Every valid pixel of the raster as a point, or a simple random sample of
// `n` of them without replacement when n is smaller than the valid count.
std::vector<ResidualPoint> sample_residuals(const GridRaster& residuals, std::size_t n, Rng& rng);

std::vector<ResidualPoint> read_residual_points(const std::string& path);
void write_residual_points(const std::string& path, std::span<const ResidualPoint> points);

struct VariogramBin {
    double distance = 0.0;  // mean pair distance
    double semivariance = 0.0;
    std::size_t pairs = 0;
};

struct EmpiricalVariogram {
    double bin_width = 30.0;
    std::vector<VariogramBin> bins;

    void write_csv(const std::string& path) const;
    static EmpiricalVariogram read_csv(const std::string& path);
};

// Bin k collects pairs with k*w < d <= (k+1)*w and d <= max_lag. Coincident
// points are ignored and empty bins are omitted. The result does not depend
// on the number of worker threads.
EmpiricalVariogram empirical_variogram(std::span<const ResidualPoint> points, double bin_width, double max_lag);

// Twice the largest parcel bounding-box diagonal.
double default_max_lag(std::span<const Parcel> parcels, double pixel_size);

// Weights N_h / gamma_h^2 with gamma_h either the empirical bin value or the
// model value at the bin distance (iterated to a fixed point).
enum class VariogramWeights { empirical, model };

std::string_view to_string(VariogramWeights w);
VariogramWeights parse_variogram_weights(std::string_view s);

struct VariogramFitOptions {
    VariogramWeights weights = VariogramWeights::empirical;
    std::size_t range_grid = 160;
    int max_reweights = 50;
};

struct VariogramFit {
    VariogramModel model;
    double criterion = 0.0;  // weighted SSE
    VariogramWeights weights = VariogramWeights::empirical;
    std::size_t n_bins = 0;

    Record to_record() const;
};

// Weighted least squares over (nugget, partial sill, range) with nugget and
// partial sill constrained nonnegative. Throws Error with diagnostics when
// there are fewer than 4 bins or no finite optimum is found.
VariogramFit fit_model(const EmpiricalVariogram& emp, VariogramFamily family,
                       const VariogramFitOptions& options = {});

double weighted_sse(const EmpiricalVariogram& emp, const VariogramModel& model, VariogramWeights weights);

struct VariogramSelection {
    VariogramFit best;
    std::vector<VariogramFit> candidates;
    std::vector<std::pair<VariogramFamily, std::string>> failures;
};

// Minimum weighted SSE; exact ties go to the earlier family in the order
// exponential, spherical, gaussian. A candidate whose fit throws is skipped
// and listed in `failures`.
VariogramSelection model_selection(const EmpiricalVariogram& emp, std::span<const VariogramFamily> candidates,
                                   const VariogramFitOptions& options = {});

}  // namespace parcelse
