#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "parcelse/grid.hpp"
#include "parcelse/record.hpp"
#include "parcelse/variogram.hpp"

namespace parcelse {

// The two terms of the residual variance of a parcel mean:
//   independent = sum sigma_i^2 / N^2
//   covariance  = sum_{i != j} sigma_i sigma_j rho(h_ij) / N^2
// Pairs with h beyond the model range contribute nothing.
struct VarResTerms {
    double independent = 0.0;
    double covariance = 0.0;
    std::size_t n_pixels = 0;
    std::size_t pairs_in_range = 0;  // unordered pairs
    bool histogram_path = false;

    double total() const { return independent + covariance; }
};

// Distances are divided by `factor` before rho and the range cutoff; factor
// 0 drops the covariance term. Uses a rho lookup keyed by squared pixel
// offset and row-band pruning; when sigma^2 is constant over the parcel the
// pairs are reduced to a distance-class histogram first. Throws Error for an
// empty parcel, a negative factor, or a nodata/negative sigma^2 pixel.
VarResTerms var_res_terms(const Parcel& parcel, const GridRaster& sigma2, const VariogramModel& model,
                          double factor = 1.0);

double var_res(const Parcel& parcel, const GridRaster& sigma2, const VariogramModel& model, double factor = 1.0);

// Plain double loop over all ordered pairs, for exactness checks.
double var_res_exact(const Parcel& parcel, const GridRaster& sigma2, const VariogramModel& model,
                     double factor = 1.0);

struct VarianceComponents {
    double var_sam = 0.0;
    double var_lc = 0.0;
    double var_ref = 0.0;
};

struct SensitivityEntry {
    double factor = 1.0;
    double var_res = 0.0;
    double var_total = 0.0;
};

struct VarianceReport {
    std::string parcel_id;
    std::size_t n_pixels = 0;
    double agb = 0.0;
    double var_boot = 0.0;
    std::optional<VarianceComponents> components;
    double var_res = 0.0;
    double var_total = 0.0;
    double se = 0.0;
    double rel_se = 0.0;  // NaN unless agb > 0
    std::vector<SensitivityEntry> sensitivity;

    Record to_record() const;
};

// Var_total = var_boot + var_res, SE = sqrt(Var_total), relSE = SE/AGB*100.
VarianceReport total(std::string parcel_id, double agb, double var_boot, double var_res);

// Var_res and Var_total per factor.
std::vector<SensitivityEntry> sensitivity(const Parcel& parcel, const GridRaster& sigma2,
                                          const VariogramModel& model, std::span<const double> factors,
                                          double var_boot = 0.0);

struct ParcelInputs {
    const Parcel* parcel = nullptr;
    double agb = 0.0;
    double var_boot = 0.0;
    std::optional<VarianceComponents> components;
};

// One report per parcel, computed in parallel; output order follows input.
std::vector<VarianceReport> aggregate_parcels(std::span<const ParcelInputs> inputs, const GridRaster& sigma2,
                                              const VariogramModel& model, std::span<const double> factors = {});

// Columns: parcel_id, n_pixels, agb, var_boot, var_sam, var_lc, var_ref,
// var_res, var_total, se, rel_se, then var_res_x<f>, var_total_x<f> per
// sensitivity factor. Missing components are written as empty fields.
void write_reports_csv(const std::string& path, std::span<const VarianceReport> reports);

std::vector<double> parse_factors(std::string_view comma_list);
inline constexpr double default_sensitivity_factors[] = {4.0, 2.0, 1.0, 0.5, 0.0};

}  // namespace parcelse
