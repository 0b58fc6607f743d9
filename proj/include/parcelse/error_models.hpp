#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "parcelse/grid.hpp"
#include "parcelse/rng.hpp"

namespace parcelse {

struct ClampRange {
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
};

// A normal measurement-error model. With `relative` set the effective SD is
// sd * |observed|.
struct NormalErrorSpec {
    std::string name;
    double mean = 0.0;
    double sd = 0.0;
    bool relative = false;
    std::string units;
    std::optional<ClampRange> clamp;

    void validate() const;
};

double draw_normal_error(const NormalErrorSpec& spec, double observed, Rng& rng);

// Field-assigned decay code 1..5. With probability 1 - accuracy the code
// moves one class up or down (random sign), clamped to [1, 5].
int perturb_decay_class(int decaycd, double accuracy, Rng& rng);

enum class WoodType { hardwood, softwood, pooled };

std::string_view to_string(WoodType w);
WoodType parse_wood_type(std::string_view s);

// Samples drawn uniformly with replacement.
struct EmpiricalDistribution {
    std::string name;
    WoodType stratum = WoodType::pooled;
    std::vector<double> samples;

    double mean() const;
};

double sample_allometric_residual(const EmpiricalDistribution& dist, Rng& rng);

// Component names used by the residual library.
namespace component {
inline constexpr std::string_view bole_volume = "bole_volume";
inline constexpr std::string_view bole_bark = "bole_bark";
inline constexpr std::string_view bole_wood = "bole_wood";
inline constexpr std::string_view foliage = "foliage";
inline constexpr std::string_view total = "total";
inline constexpr std::string_view tab_ratio = "tab_ratio";
}  // namespace component

// Empirical relative-residual distributions per (component, wood type) and
// the pooled top-and-branch ratio distribution.
class ResidualLibrary {
public:
    static constexpr double max_tab_ratio = 0.5;

    // Ratios above max_tab_ratio are dropped from tab_ratio samples.
    void add(EmpiricalDistribution dist);

    // Exact stratum first, then pooled.
    const EmpiricalDistribution& get(std::string_view component, WoodType wood) const;
    bool has(std::string_view component) const;

    std::size_t filtered_tab_ratios() const { return filtered_; }

    // CSV columns: component, wood_type, value.
    static ResidualLibrary read_csv(const std::string& path);
    void write_csv(const std::string& path) const;

    const std::vector<EmpiricalDistribution>& distributions() const { return dists_; }

private:
    std::vector<EmpiricalDistribution> dists_;
    std::size_t filtered_ = 0;
};

struct MapPoint {
    double x = 0.0;
    double y = 0.0;
};

// Offsets a plot center by |d|, d ~ N(0, sd), along an azimuth uniform on
// [0, 360) degrees measured clockwise from north.
MapPoint jitter_plot_location(MapPoint center, double sd, Rng& rng);

// LCMAP primary/secondary land-cover codes.
namespace landcover {
inline constexpr int developed = 1;
inline constexpr int cropland = 2;
inline constexpr int grass_shrub = 3;
inline constexpr int tree_cover = 4;
inline constexpr int water = 5;
inline constexpr int wetland = 6;
inline constexpr int ice_snow = 7;
inline constexpr int barren = 8;

// Tree cover, wetland and grass/shrub count as forest.
bool is_forest(int code);
}  // namespace landcover

// User's accuracy per primary class and where the replacement class comes
// from when a pixel is reassigned (the secondary raster, or a fixed class).
struct ClassAccuracyTable {
    static constexpr int use_secondary = -1;

    std::map<int, double> accuracy;
    std::map<int, int> secondary_rule;

    double accuracy_of(int code) const;
    int replacement(int code, double secondary_value) const;
    void validate() const;

    static ClassAccuracyTable lcmap_defaults();
    // CSV columns: class, accuracy, secondary_rule ("lcsec" or a class code).
    static ClassAccuracyTable read_csv(const std::string& path);
    void write_csv(const std::string& path) const;
};

// Per pixel: keep the primary class iff u <= accuracy(primary), otherwise
// take the replacement. Nodata pixels pass through unchanged.
GridRaster perturb_landcover(const GridRaster& primary, const GridRaster& secondary, const ClassAccuracyTable& table,
                             Rng& rng);

// The tree- and plot-level measurement error models.
struct ErrorModelSet {
    std::map<std::string, NormalErrorSpec, std::less<>> specs;
    double decay_accuracy = 0.59;

    const NormalErrorSpec& spec(std::string_view name) const;
    const NormalErrorSpec& decay_ratio(WoodType wood, int decaycd) const;

    // Table of literature values: DIA, BOLEHT, CULL, specific gravities,
    // decay-ratio SDs per class and wood type, plot location SD 7.05 m.
    static ErrorModelSet defaults();
    // CSV columns: name, mean, sd, relative (T/F), units[, clamp_lo, clamp_hi].
    static ErrorModelSet read_csv(const std::string& path, double decay_accuracy = 0.59);
    void write_csv(const std::string& path) const;
};

std::string decay_ratio_spec_name(WoodType wood, int decaycd);

}  // namespace parcelse
