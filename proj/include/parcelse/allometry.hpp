#pragma once

#include <array>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "parcelse/error_models.hpp"
#include "parcelse/rng.hpp"

namespace parcelse {

// One measured tree. decaycd 0 marks a live tree, 1..5 standing dead.
// `expansion` is the number of trees per plot the record represents.
struct TreeRecord {
    std::string id;
    double dia_cm = 0.0;
    double boleht_m = 0.0;
    double cull_pct = 0.0;
    double wood_sg = 0.0;
    double bark_sg = 0.0;
    int decaycd = 0;
    WoodType wood = WoodType::hardwood;
    int species_group = 0;
    double expansion = 1.0;

    void validate() const;
};

// Coefficients for one species group.
//   total biomass (kg)  = exp(total_b0 + total_b1 * ln(dia))
//   gross bole volume (m^3) = vol_a + vol_b * dia^vol_c * boleht^vol_d
//   stump, foliage      = exp(s0 + s1 / dia) * total
struct SpeciesCoefficients {
    int species_group = 0;
    WoodType wood = WoodType::hardwood;
    double total_b0 = 0.0;
    double total_b1 = 0.0;
    double vol_a = 0.0;
    double vol_b = 0.0;
    double vol_c = 2.0;
    double vol_d = 1.0;
    double bark_fraction = 0.0;
    double stump_s0 = 0.0;
    double stump_s1 = 0.0;
    double foliage_f0 = 0.0;
    double foliage_f1 = 0.0;
};

struct AllometricTables {
    std::map<int, SpeciesCoefficients> groups;
    // Standing-dead density reduction ratio per (wood type, decay class).
    std::map<std::pair<WoodType, int>, double> decay_ratio;

    const SpeciesCoefficients& resolve(int species_group) const;
    double decay_ratio_for(WoodType wood, int decaycd) const;

    // Three species groups: a generic hardwood (1), a generic softwood (2)
    // and a linear test group (3) whose total biomass is 2 * dia.
    static AllometricTables toy();
    static AllometricTables read_csv(const std::string& coefficients_path, const std::string& decay_path = {});
    void write_csv(const std::string& coefficients_path, const std::string& decay_path) const;
};

struct ComponentBreakdown {
    double total = 0.0;
    double bole_wood = 0.0;
    double bole_bark = 0.0;
    double stump = 0.0;
    double foliage = 0.0;
    double top_and_branch = 0.0;

    double component_sum() const { return bole_wood + bole_bark + stump + foliage + top_and_branch; }
};

// Error sources injected into a CRM prediction. Either pointer may be null.
struct CrmErrorSources {
    const ErrorModelSet* measurement = nullptr;
    const ResidualLibrary* residuals = nullptr;
};

// Optional diagnostics: clamp counts accumulate across calls; `unreconciled`
// holds the last prediction before proportional reconciliation.
struct CrmTrace {
    std::size_t clamped_totals = 0;
    std::size_t clamped_components = 0;
    ComponentBreakdown unreconciled;
};

// Component-ratio prediction of tree aboveground biomass (kg). With
// `errors` null the result is deterministic and the rng is not touched.
ComponentBreakdown predict_tree_agb(const TreeRecord& tree, const AllometricTables& tables,
                                    const CrmErrorSources* errors, Rng& rng, CrmTrace* trace = nullptr);

// Sum(total * expansion) / 1000 / plot_area, in Mg/ha.
double plot_agb_density(std::span<const ComponentBreakdown> trees, std::span<const double> expansion,
                        double plot_area_ha);

// Four-subplot plot layout: one subplot at the center and three at 36.6 m on
// azimuths 360, 120 and 240 degrees, each of radius 7.32 m.
inline constexpr double subplot_radius_m = 7.32;
inline constexpr double subplot_offset_m = 36.6;
inline constexpr double plot_area_ha = 4.0 * std::numbers::pi * subplot_radius_m * subplot_radius_m / 10000.0;

std::array<MapPoint, 4> subplot_centers(MapPoint center);

struct PlotRecord {
    std::string id;
    MapPoint center;
    double area_ha = plot_area_ha;
    std::vector<TreeRecord> trees;
};

// Error-free plot AGB density.
double plot_agb(const PlotRecord& plot, const AllometricTables& tables);

// plots CSV: plot_id, x, y[, area_ha]. trees CSV: plot_id, tree_id, dia,
// boleht, cull, wood_sg, bark_sg, decaycd, wood_type, species_group[, expansion].
std::vector<PlotRecord> read_plots(const std::string& plots_path, const std::string& trees_path);
void write_plots(const std::string& plots_path, const std::string& trees_path, const std::vector<PlotRecord>& plots);

}  // namespace parcelse
