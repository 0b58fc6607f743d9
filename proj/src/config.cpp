#include "parcelse/config.hpp"

#include <cstdlib>
#include <functional>
#include <map>

#include "parcelse/csv.hpp"
#include "parcelse/error.hpp"

namespace parcelse {

bool parse_bool(std::string_view text, std::string_view what) {
    const std::string_view v = trim(text);
    if (v == "true" || v == "1" || v == "on" || v == "yes") {
        return true;
    }
    if (v == "false" || v == "0" || v == "off" || v == "no") {
        return false;
    }
    throw Error("'" + std::string(what) + "' must be true or false, got '" + std::string(v) + "'");
}

namespace {

std::uint64_t parse_u64(std::string_view text, std::string_view what) {
    const std::int64_t v = parse_int(text, what);
    if (v < 0) {
        throw Error("'" + std::string(what) + "' must be >= 0");
    }
    return static_cast<std::uint64_t>(v);
}

std::size_t parse_count(std::string_view text, std::string_view what) {
    return static_cast<std::size_t>(parse_u64(text, what));
}

template <class T, class F>
std::string join(const std::vector<T>& items, F&& fmt) {
    std::string s;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i > 0) {
            s += ',';
        }
        s += fmt(items[i]);
    }
    return s;
}

std::vector<SeTransform> parse_se_transforms(std::string_view list) {
    std::vector<SeTransform> out;
    for (const auto& item : split(list, ',')) {
        out.push_back(parse_se_transform(trim(item)));
    }
    if (out.empty()) {
        throw Error("empty SE transform list");
    }
    return out;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter, std::less<>>& setters() {
    static const std::map<std::string, Setter, std::less<>> table = {
        {"data_dir", [](RunConfig& c, const std::string& v) { c.data_dir = v; }},
        {"out_dir", [](RunConfig& c, const std::string& v) { c.out_dir = v; }},
        {"sim_seed", [](RunConfig& c, const std::string& v) { c.landscape.seed = parse_u64(v, "sim_seed"); }},
        {"sim_rows",
         [](RunConfig& c, const std::string& v) { c.landscape.geometry.n_rows = parse_count(v, "sim_rows"); }},
        {"sim_cols",
         [](RunConfig& c, const std::string& v) { c.landscape.geometry.n_cols = parse_count(v, "sim_cols"); }},
        {"sim_pixel_size",
         [](RunConfig& c, const std::string& v) { c.landscape.geometry.pixel_size = parse_double(v, "sim_pixel_size"); }},
        {"sim_agb_mean", [](RunConfig& c, const std::string& v) { c.landscape.agb_mean = parse_double(v, "sim_agb_mean"); }},
        {"sim_agb_nugget",
         [](RunConfig& c, const std::string& v) { c.landscape.agb_model.nugget = parse_double(v, "sim_agb_nugget"); }},
        {"sim_agb_sill",
         [](RunConfig& c, const std::string& v) { c.landscape.agb_model.sill = parse_double(v, "sim_agb_sill"); }},
        {"sim_agb_range",
         [](RunConfig& c, const std::string& v) { c.landscape.agb_model.range = parse_double(v, "sim_agb_range"); }},
        {"sim_parcel_max_pixels",
         [](RunConfig& c, const std::string& v) {
             c.landscape.parcel_max_pixels = parse_count(v, "sim_parcel_max_pixels");
         }},
        {"n_plots", [](RunConfig& c, const std::string& v) { c.n_plots = parse_count(v, "n_plots"); }},
        {"n_assessment_plots",
         [](RunConfig& c, const std::string& v) { c.n_assessment_plots = parse_count(v, "n_assessment_plots"); }},
        {"plot_noise_sd",
         [](RunConfig& c, const std::string& v) { c.tree_model.plot_noise_sd = parse_double(v, "plot_noise_sd"); }},
        {"seed", [](RunConfig& c, const std::string& v) { c.seed = parse_u64(v, "seed"); }},
        {"n_iterations", [](RunConfig& c, const std::string& v) { c.n_iterations = parse_count(v, "n_iterations"); }},
        {"resample_plots", [](RunConfig& c, const std::string& v) { c.resample_plots = parse_bool(v, "resample_plots"); }},
        {"perturb_reference",
         [](RunConfig& c, const std::string& v) { c.perturb_reference = parse_bool(v, "perturb_reference"); }},
        {"perturb_landcover",
         [](RunConfig& c, const std::string& v) { c.perturb_landcover = parse_bool(v, "perturb_landcover"); }},
        {"predictor", [](RunConfig& c, const std::string& v) { c.predictor.kind = parse_predictor_kind(trim(v)); }},
        {"knn_k", [](RunConfig& c, const std::string& v) { c.predictor.k = static_cast<int>(parse_int(v, "knn_k")); }},
        {"variogram_families",
         [](RunConfig& c, const std::string& v) { c.variogram_families = parse_variogram_families(v); }},
        {"variogram_weights",
         [](RunConfig& c, const std::string& v) { c.variogram_weights = parse_variogram_weights(trim(v)); }},
        {"residual_sample",
         [](RunConfig& c, const std::string& v) { c.residual_sample = parse_count(v, "residual_sample"); }},
        {"bin_width", [](RunConfig& c, const std::string& v) { c.bin_width = parse_double(v, "bin_width"); }},
        {"max_lag", [](RunConfig& c, const std::string& v) { c.max_lag = parse_double(v, "max_lag"); }},
        {"resvar_forms", [](RunConfig& c, const std::string& v) { c.resvar_forms = parse_resvar_forms(v); }},
        {"resvar_initial_bins",
         [](RunConfig& c, const std::string& v) { c.resvar_initial_bins = parse_count(v, "resvar_initial_bins"); }},
        {"resvar_min_count",
         [](RunConfig& c, const std::string& v) { c.resvar_min_count = parse_count(v, "resvar_min_count"); }},
        {"sensitivity_factors", [](RunConfig& c, const std::string& v) { c.sensitivity_factors = parse_factors(v); }},
        {"split_seed", [](RunConfig& c, const std::string& v) { c.split_seed = parse_u64(v, "split_seed"); }},
        {"se_transforms", [](RunConfig& c, const std::string& v) { c.se_transforms = parse_se_transforms(v); }},
    };
    return table;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    const auto& table = setters();
    const auto it = table.find(key);
    if (it == table.end()) {
        throw Error("unknown configuration key '" + key + "'");
    }
    it->second(*this, value);
}

void RunConfig::validate() const {
    landscape.geometry.validate();
    if (n_iterations < 2) {
        throw Error("n_iterations must be >= 2");
    }
    if (n_plots < 2) {
        throw Error("n_plots must be >= 2");
    }
    if (predictor.k < 1) {
        throw Error("knn_k must be >= 1");
    }
    if (bin_width < 0.0 || max_lag < 0.0) {
        throw Error("bin_width and max_lag must be >= 0");
    }
    if (variogram_families.empty() || resvar_forms.empty() || se_transforms.empty()) {
        throw Error("candidate lists must not be empty");
    }
    if (resvar_initial_bins < 1) {
        throw Error("resvar_initial_bins must be >= 1");
    }
    for (double f : sensitivity_factors) {
        if (!(f >= 0.0) || !std::isfinite(f)) {
            throw Error("sensitivity factors must be finite and >= 0");
        }
    }
}

Record RunConfig::to_record() const {
    Record r;
    r.set("data_dir", data_dir);
    r.set("out_dir", out_dir);
    r.set("sim_seed", std::to_string(landscape.seed));
    r.set_int("sim_rows", static_cast<long long>(landscape.geometry.n_rows));
    r.set_int("sim_cols", static_cast<long long>(landscape.geometry.n_cols));
    r.set("sim_pixel_size", landscape.geometry.pixel_size);
    r.set("sim_agb_mean", landscape.agb_mean);
    r.set("sim_agb_nugget", landscape.agb_model.nugget);
    r.set("sim_agb_sill", landscape.agb_model.sill);
    r.set("sim_agb_range", landscape.agb_model.range);
    r.set_int("sim_parcel_max_pixels", static_cast<long long>(landscape.parcel_max_pixels));
    r.set_int("n_plots", static_cast<long long>(n_plots));
    r.set_int("n_assessment_plots", static_cast<long long>(n_assessment_plots));
    r.set("plot_noise_sd", tree_model.plot_noise_sd);
    r.set("seed", std::to_string(seed));
    r.set_int("n_iterations", static_cast<long long>(n_iterations));
    r.set("resample_plots", resample_plots ? "true" : "false");
    r.set("perturb_reference", perturb_reference ? "true" : "false");
    r.set("perturb_landcover", perturb_landcover ? "true" : "false");
    r.set("predictor", std::string(to_string(predictor.kind)));
    r.set_int("knn_k", predictor.k);
    r.set("variogram_families",
          join(variogram_families, [](VariogramFamily f) { return std::string(to_string(f)); }));
    r.set("variogram_weights", std::string(to_string(variogram_weights)));
    r.set_int("residual_sample", static_cast<long long>(residual_sample));
    r.set("bin_width", bin_width);
    r.set("max_lag", max_lag);
    r.set("resvar_forms", join(resvar_forms, [](ResVarForm f) { return std::string(to_string(f)); }));
    r.set_int("resvar_initial_bins", static_cast<long long>(resvar_initial_bins));
    r.set_int("resvar_min_count", static_cast<long long>(resvar_min_count));
    r.set("sensitivity_factors", join(sensitivity_factors, [](double f) { return format_double(f); }));
    r.set("split_seed", std::to_string(split_seed));
    r.set("se_transforms", join(se_transforms, [](SeTransform t) { return std::string(to_string(t)); }));
    return r;
}

RunConfig RunConfig::from_record(const Record& r) {
    RunConfig c;
    for (const auto& [k, v] : r.entries()) {
        try {
            c.set(k, v);
        } catch (const Error& e) {
            throw Error(r.source() + ": " + e.what());
        }
    }
    return c;
}

RunConfig RunConfig::read_file(const std::string& path) { return from_record(Record::read_file(path)); }

std::string RunConfig::resolved_out_dir() const {
    if (!out_dir.empty()) {
        return out_dir;
    }
    if (const char* env = std::getenv("PARCELSE_OUT_DIR"); env != nullptr && *env != '\0') {
        return env;
    }
    return "out";
}

}  // namespace parcelse
