#include "parcelse/error_models.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "parcelse/csv.hpp"
#include "parcelse/error.hpp"

namespace parcelse {

void NormalErrorSpec::validate() const {
    if (!(sd >= 0.0) || !std::isfinite(sd)) {
        throw Error("error spec '" + name + "': sd must be >= 0");
    }
    if (clamp && !(clamp->lo < clamp->hi)) {
        throw Error("error spec '" + name + "': clamp lower bound must be below upper bound");
    }
}

double draw_normal_error(const NormalErrorSpec& spec, double observed, Rng& rng) {
    const double sd = spec.relative ? spec.sd * std::abs(observed) : spec.sd;
    double v = observed + spec.mean;
    if (sd > 0.0) {
        v += sd * rng.normal();
    }
    if (spec.clamp) {
        v = std::clamp(v, spec.clamp->lo, spec.clamp->hi);
    }
    return v;
}

int perturb_decay_class(int decaycd, double accuracy, Rng& rng) {
    if (decaycd < 1 || decaycd > 5) {
        throw Error("decay class must be in 1..5, got " + std::to_string(decaycd));
    }
    const double u = rng.uniform();
    const bool up = rng.coin();
    if (u <= accuracy) {
        return decaycd;
    }
    return std::clamp(decaycd + (up ? 1 : -1), 1, 5);
}

std::string_view to_string(WoodType w) {
    switch (w) {
        case WoodType::hardwood:
            return "hardwood";
        case WoodType::softwood:
            return "softwood";
        case WoodType::pooled:
            return "pooled";
    }
    return "pooled";
}

WoodType parse_wood_type(std::string_view s) {
    if (s == "hardwood" || s == "H") {
        return WoodType::hardwood;
    }
    if (s == "softwood" || s == "S") {
        return WoodType::softwood;
    }
    if (s == "pooled" || s == "all") {
        return WoodType::pooled;
    }
    throw Error("unknown wood type '" + std::string(s) + "'");
}

double EmpiricalDistribution::mean() const {
    double s = 0.0;
    for (double v : samples) {
        s += v;
    }
    return samples.empty() ? 0.0 : s / static_cast<double>(samples.size());
}

double sample_allometric_residual(const EmpiricalDistribution& dist, Rng& rng) {
    if (dist.samples.empty()) {
        throw Error("empirical distribution '" + dist.name + "' is empty");
    }
    return dist.samples[rng.index(dist.samples.size())];
}

void ResidualLibrary::add(EmpiricalDistribution dist) {
    if (dist.name == component::tab_ratio) {
        const auto before = dist.samples.size();
        std::erase_if(dist.samples, [](double r) { return r > max_tab_ratio; });
        filtered_ += before - dist.samples.size();
    }
    if (dist.samples.empty()) {
        throw Error("empirical distribution '" + dist.name + "' (" + std::string(to_string(dist.stratum)) +
                    ") is empty");
    }
    for (auto& d : dists_) {
        if (d.name == dist.name && d.stratum == dist.stratum) {
            d.samples.insert(d.samples.end(), dist.samples.begin(), dist.samples.end());
            return;
        }
    }
    dists_.push_back(std::move(dist));
}

const EmpiricalDistribution& ResidualLibrary::get(std::string_view name, WoodType wood) const {
    const EmpiricalDistribution* pooled = nullptr;
    for (const auto& d : dists_) {
        if (d.name != name) {
            continue;
        }
        if (d.stratum == wood) {
            return d;
        }
        if (d.stratum == WoodType::pooled) {
            pooled = &d;
        }
    }
    if (pooled == nullptr) {
        throw Error("no empirical distribution for component '" + std::string(name) + "' (" +
                    std::string(to_string(wood)) + ")");
    }
    return *pooled;
}

bool ResidualLibrary::has(std::string_view name) const {
    return std::any_of(dists_.begin(), dists_.end(), [&](const auto& d) { return d.name == name; });
}

ResidualLibrary ResidualLibrary::read_csv(const std::string& path) {
    const auto t = CsvTable::read(path);
    const auto c_comp = t.column("component");
    const auto c_wood = t.column("wood_type");
    const auto c_val = t.column("value");
    std::vector<EmpiricalDistribution> acc;
    for (std::size_t i = 0; i < t.rows(); ++i) {
        const auto& name = t.field(i, c_comp);
        const auto wood = parse_wood_type(t.field(i, c_wood));
        auto it = std::find_if(acc.begin(), acc.end(), [&](const auto& d) { return d.name == name && d.stratum == wood; });
        if (it == acc.end()) {
            acc.push_back({name, wood, {}});
            it = acc.end() - 1;
        }
        it->samples.push_back(t.number(i, c_val));
    }
    ResidualLibrary lib;
    for (auto& d : acc) {
        lib.add(std::move(d));
    }
    return lib;
}

void ResidualLibrary::write_csv(const std::string& path) const {
    auto out = open_output(path);
    CsvWriter w(out);
    w.header({"component", "wood_type", "value"});
    for (const auto& d : dists_) {
        for (double v : d.samples) {
            w.field(d.name).field(to_string(d.stratum)).field(v).end_row();
        }
    }
}

MapPoint jitter_plot_location(MapPoint center, double sd, Rng& rng) {
    if (!(sd >= 0.0)) {
        throw Error("location error sd must be >= 0");
    }
    const double d = std::abs(rng.normal(0.0, sd));
    const double azimuth = rng.uniform() * 2.0 * std::numbers::pi;
    if (d == 0.0) {
        return center;
    }
    return {center.x + d * std::sin(azimuth), center.y + d * std::cos(azimuth)};
}

namespace landcover {
bool is_forest(int code) { return code == grass_shrub || code == tree_cover || code == wetland; }
}  // namespace landcover

double ClassAccuracyTable::accuracy_of(int code) const {
    const auto it = accuracy.find(code);
    if (it == accuracy.end()) {
        throw Error("no user's accuracy for land-cover class " + std::to_string(code));
    }
    return it->second;
}

int ClassAccuracyTable::replacement(int code, double secondary_value) const {
    const auto it = secondary_rule.find(code);
    if (it == secondary_rule.end() || it->second == use_secondary) {
        return static_cast<int>(std::lround(secondary_value));
    }
    return it->second;
}

void ClassAccuracyTable::validate() const {
    for (const auto& [code, a] : accuracy) {
        if (!(a >= 0.0 && a <= 1.0)) {
            throw Error("user's accuracy for class " + std::to_string(code) + " must be in [0, 1]");
        }
    }
}

ClassAccuracyTable ClassAccuracyTable::lcmap_defaults() {
    ClassAccuracyTable t;
    t.accuracy = {
        {landcover::developed, 0.80}, {landcover::cropland, 0.46}, {landcover::grass_shrub, 0.37},
        {landcover::tree_cover, 0.92}, {landcover::wetland, 0.97}, {landcover::barren, 0.01},
    };
    for (const auto& [code, a] : t.accuracy) {
        t.secondary_rule[code] = use_secondary;
    }
    return t;
}

ClassAccuracyTable ClassAccuracyTable::read_csv(const std::string& path) {
    const auto t = CsvTable::read(path);
    const auto c_class = t.column("class");
    const auto c_acc = t.column("accuracy");
    const bool has_rule = t.has_column("secondary_rule");
    ClassAccuracyTable table;
    for (std::size_t i = 0; i < t.rows(); ++i) {
        const int code = static_cast<int>(t.integer(i, c_class));
        table.accuracy[code] = t.number(i, c_acc);
        int rule = use_secondary;
        if (has_rule) {
            const auto& r = t.field(i, t.column("secondary_rule"));
            if (r != "lcsec" && !r.empty()) {
                rule = static_cast<int>(parse_int(r, path + " secondary_rule"));
            }
        }
        table.secondary_rule[code] = rule;
    }
    table.validate();
    return table;
}

void ClassAccuracyTable::write_csv(const std::string& path) const {
    auto out = open_output(path);
    CsvWriter w(out);
    w.header({"class", "accuracy", "secondary_rule"});
    for (const auto& [code, a] : accuracy) {
        const auto it = secondary_rule.find(code);
        w.field(code).field(a);
        if (it == secondary_rule.end() || it->second == use_secondary) {
            w.field("lcsec");
        } else {
            w.field(it->second);
        }
        w.end_row();
    }
}

GridRaster perturb_landcover(const GridRaster& primary, const GridRaster& secondary, const ClassAccuracyTable& table,
                             Rng& rng) {
    if (!primary.geometry().aligned_with(secondary.geometry())) {
        throw Error("primary and secondary land-cover rasters are not aligned");
    }
    GridRaster out = primary;
    auto dst = out.values();
    const auto src = primary.values();
    const auto sec = secondary.values();
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (primary.is_nodata(src[i])) {
            continue;
        }
        const int code = static_cast<int>(std::lround(src[i]));
        const double a = table.accuracy_of(code);
        const double u = rng.uniform();
        if (u > a) {
            dst[i] = table.replacement(code, sec[i]);
        }
    }
    return out;
}

std::string decay_ratio_spec_name(WoodType wood, int decaycd) {
    return "decay_ratio_" + std::string(to_string(wood)) + "_" + std::to_string(decaycd);
}

const NormalErrorSpec& ErrorModelSet::spec(std::string_view name) const {
    const auto it = specs.find(name);
    if (it == specs.end()) {
        throw Error("missing error spec '" + std::string(name) + "'");
    }
    return it->second;
}

const NormalErrorSpec& ErrorModelSet::decay_ratio(WoodType wood, int decaycd) const {
    return spec(decay_ratio_spec_name(wood == WoodType::softwood ? WoodType::softwood : WoodType::hardwood, decaycd));
}

ErrorModelSet ErrorModelSet::defaults() {
    ErrorModelSet s;
    auto add = [&](NormalErrorSpec spec) { s.specs[spec.name] = std::move(spec); };
    const double inf = std::numeric_limits<double>::infinity();
    add({"dia", -0.004, 0.55, false, "cm", ClampRange{0.1, inf}});
    add({"boleht", -0.050, 1.52, false, "m", ClampRange{0.1, inf}});
    add({"cull", 0.100, 3.50, false, "%", ClampRange{0.0, 100.0}});
    add({"wood_sg", 0.0, 0.10, true, "", std::nullopt});
    add({"bark_sg", 0.0, 0.10, true, "", std::nullopt});
    const double hard[5] = {0.01, 0.02, 0.04, 0.05, 0.05};
    const double soft[5] = {0.01, 0.01, 0.03, 0.03, 0.03};
    for (int k = 1; k <= 5; ++k) {
        add({decay_ratio_spec_name(WoodType::hardwood, k), 0.0, hard[k - 1], true, "", ClampRange{0.0, 1.0}});
        add({decay_ratio_spec_name(WoodType::softwood, k), 0.0, soft[k - 1], true, "", ClampRange{0.0, 1.0}});
    }
    add({"location", 0.0, 7.05, false, "m", std::nullopt});
    return s;
}

ErrorModelSet ErrorModelSet::read_csv(const std::string& path, double decay_accuracy) {
    const auto t = CsvTable::read(path);
    const auto c_name = t.column("name");
    const auto c_mean = t.column("mean");
    const auto c_sd = t.column("sd");
    const auto c_rel = t.column("relative");
    const bool has_units = t.has_column("units");
    const bool has_clamp = t.has_column("clamp_lo") && t.has_column("clamp_hi");
    ErrorModelSet s;
    s.decay_accuracy = decay_accuracy;
    for (std::size_t i = 0; i < t.rows(); ++i) {
        NormalErrorSpec spec;
        spec.name = t.field(i, c_name);
        spec.mean = t.number(i, c_mean);
        spec.sd = t.number(i, c_sd);
        const auto& rel = t.field(i, c_rel);
        if (rel != "T" && rel != "F" && rel != "true" && rel != "false") {
            throw Error(path + ": relative flag must be T or F for '" + spec.name + "'");
        }
        spec.relative = rel == "T" || rel == "true";
        if (has_units) {
            spec.units = t.field(i, t.column("units"));
        }
        if (has_clamp) {
            const auto& lo = t.field(i, t.column("clamp_lo"));
            const auto& hi = t.field(i, t.column("clamp_hi"));
            if (!lo.empty() || !hi.empty()) {
                ClampRange c;
                if (!lo.empty()) {
                    c.lo = parse_double(lo, path + " clamp_lo");
                }
                if (!hi.empty()) {
                    c.hi = parse_double(hi, path + " clamp_hi");
                }
                spec.clamp = c;
            }
        }
        spec.validate();
        s.specs[spec.name] = std::move(spec);
    }
    return s;
}

void ErrorModelSet::write_csv(const std::string& path) const {
    auto out = open_output(path);
    CsvWriter w(out);
    w.header({"name", "mean", "sd", "relative", "units", "clamp_lo", "clamp_hi"});
    for (const auto& [name, s] : specs) {
        w.field(name).field(s.mean).field(s.sd).field(s.relative ? "T" : "F").field(s.units);
        if (s.clamp) {
            w.field(std::isinf(s.clamp->lo) ? std::string() : format_double(s.clamp->lo));
            w.field(std::isinf(s.clamp->hi) ? std::string() : format_double(s.clamp->hi));
        } else {
            w.field("").field("");
        }
        w.end_row();
    }
}

}  // namespace parcelse
