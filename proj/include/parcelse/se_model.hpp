#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "parcelse/record.hpp"

namespace parcelse {

// Units: agb Mg/ha, forest_pct percent (0, 100], area acres, perimeter m.
struct ParcelFeatures {
    double agb = 0.0;
    double forest_pct = 0.0;
    double area_acres = 0.0;
    double perimeter_m = 0.0;
};

struct SeObservation {
    std::string parcel_id;
    ParcelFeatures features;
    double se = 0.0;
};

// CSV columns: parcel_id, agb, forest_pct, area_acres, perimeter_m, se.
std::vector<SeObservation> read_se_observations(const std::string& path);
void write_se_observations(const std::string& path, std::span<const SeObservation> rows);

// Which sides of the regression are log transformed.
//   none        SE    = b . [1, x]
//   log-log     ln SE = b . [1, ln x]
//   log-linear  ln SE = b . [1, x]
//   linear-log  SE    = b . [1, ln x]
enum class SeTransform { none, log_log, log_linear, linear_log };

std::string_view to_string(SeTransform t);
SeTransform parse_se_transform(std::string_view s);
inline constexpr SeTransform all_se_transforms[] = {SeTransform::none, SeTransform::log_log, SeTransform::log_linear,
                                                   SeTransform::linear_log};

// Coefficient order: intercept, agb, perimeter, area, forest_pct.
inline constexpr std::array<std::string_view, 5> se_coefficient_names = {"intercept", "agb", "perimeter", "area",
                                                                         "forest_pct"};

struct RegressionMetrics {
    double rmse = 0.0;
    double mae = 0.0;
    double me = 0.0;  // mean(predicted - observed)
    double r2 = 0.0;
    std::size_t n = 0;
};

// Traditional 1 - SSE/SST, with RMSE, MAE and ME.
RegressionMetrics regression_metrics(std::span<const double> predicted, std::span<const double> observed);

struct SeRegression {
    SeTransform transform = SeTransform::log_log;
    std::array<double, 5> coefficients{};
    std::array<double, 5> std_errors{};
    double cf = 1.0;
    std::uint64_t split_seed = 0;
    std::size_t n_train = 0;
    std::size_t n_test = 0;
    std::size_t n_excluded = 0;
    double condition_number = 0.0;
    RegressionMetrics train;
    RegressionMetrics test;

    Record to_record() const;
    static SeRegression from_record(const Record& r);
};

struct SeFitOptions {
    std::vector<SeTransform> transforms{std::begin(all_se_transforms), std::end(all_se_transforms)};
    double train_fraction = 0.8;
    bool apply_cf = true;
};

struct SeFitResult {
    SeRegression best;
    std::vector<SeRegression> candidates;
};

// Rows with any nonpositive feature or SE are excluded for every variant
// and counted. Splits the rest by `split_seed`, fits each variant by OLS,
// and selects the largest training R^2 computed on the back-transformed,
// corrected predictions. Needs at least 25 usable rows.
SeFitResult fit_se_model(std::span<const SeObservation> rows, std::uint64_t split_seed,
                         const SeFitOptions& options = {});

// Throws Error naming the field when a logged feature is nonpositive.
double predict_se(const SeRegression& model, const ParcelFeatures& f);

}  // namespace parcelse
