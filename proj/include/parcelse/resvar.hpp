#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "parcelse/grid.hpp"
#include "parcelse/record.hpp"

namespace parcelse {

// A map-assessment plot: the map prediction at the plot and the residual
// against the plot's field AGB, both in Mg/ha.
struct AssessmentPlot {
    double predicted = 0.0;
    double residual = 0.0;
};

// CSV with columns predicted and either residual or observed
// (residual = predicted - observed).
std::vector<AssessmentPlot> read_assessment(const std::string& path);
void write_assessment(const std::string& path, std::span<const AssessmentPlot> plots);

struct VarianceBin {
    double lower = 0.0;
    double upper = 0.0;
    double mean_agb = 0.0;
    double variance = 0.0;  // sample variance of residuals, n - 1 denominator
    std::size_t count = 0;
};

// Equal-width intervals on [0, max prediction]. Scanning left to right, an
// interval with fewer than `min_count` plots is folded into its right
// neighbour; a deficient remainder at the end joins the last bin.
std::vector<VarianceBin> bin_assessment(std::span<const AssessmentPlot> plots, std::size_t n_initial = 30,
                                        std::size_t min_count = 10);

void write_bins(const std::string& path, std::span<const VarianceBin> bins);
std::vector<VarianceBin> read_bins(const std::string& path);

enum class ResVarForm { linear, log_linear, log_log, cubic, spline };

std::string_view to_string(ResVarForm f);
ResVarForm parse_resvar_form(std::string_view s);
std::vector<ResVarForm> parse_resvar_forms(std::string_view comma_list);
std::size_t parameter_count(ResVarForm f);
inline constexpr ResVarForm all_resvar_forms[] = {ResVarForm::linear, ResVarForm::log_linear, ResVarForm::log_log,
                                                 ResVarForm::cubic, ResVarForm::spline};

// Fitted variance curve sigma^2(agb).
//   linear      s2 = b0 + b1 x
//   log-linear  ln s2 = b0 + b1 x
//   log-log     ln s2 = b0 + b1 ln(x + offset)
//   cubic       s2 = b0 + b1 x + b2 x^2 + b3 x^3
//   spline      s2 = natural cubic spline with boundary knots at the bin
//               range ends and interior knots at the 1/3 and 2/3 quantiles
// Log-response forms are back-transformed with cf = exp(s^2 / 2), s the
// residual standard deviation of the log-scale fit.
struct ResVarModel {
    ResVarForm form = ResVarForm::linear;
    std::vector<double> coefficients;
    std::vector<double> knots;
    double cf = 1.0;
    double r2 = 0.0;
    double log_offset = 0.1;
    double x_max = 0.0;  // evaluation clamps agb to [0, x_max]
    std::size_t n_bins = 0;

    // Clamped at >= 0.
    double evaluate(double agb) const;

    Record to_record() const;
    static ResVarModel from_record(const Record& r);
};

struct ResVarFitOptions {
    bool apply_cf = true;
    double log_offset = 0.1;
};

// OLS on the transformed scale; r2 is 1 - SSE/SST of the evaluated (back
// transformed, corrected) curve against the bin variances. Throws Error for
// too few bins or a nonpositive value under a log.
ResVarModel fit_resvar(std::span<const VarianceBin> bins, ResVarForm form, const ResVarFitOptions& options = {});

struct ResVarSelection {
    ResVarModel best;
    std::vector<ResVarModel> candidates;
    std::vector<std::pair<ResVarForm, std::string>> failures;
};

// Largest r2; ties go to fewer parameters, then to list order.
ResVarSelection select_form(std::span<const VarianceBin> bins, std::span<const ResVarForm> forms,
                            const ResVarFitOptions& options = {});

// Per-pixel sigma^2; pixels whose mask value is 0 get 0. Nodata AGB on a
// forest pixel gives nodata.
GridRaster predict_sigma(const ResVarModel& model, const GridRaster& agb, const GridRaster& forest_mask);

// 1 where the land-cover code is a forest class, 0 elsewhere.
GridRaster forest_mask_from_classes(const GridRaster& classes);

}  // namespace parcelse
