#include "parcelse/allometry.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "parcelse/csv.hpp"
#include "parcelse/error.hpp"

namespace parcelse {

void TreeRecord::validate() const {
    if (!(dia_cm > 0.0)) {
        throw Error("tree '" + id + "': dia must be > 0");
    }
    if (!(cull_pct >= 0.0 && cull_pct <= 100.0)) {
        throw Error("tree '" + id + "': cull must be in [0, 100]");
    }
    if (!(wood_sg > 0.0) || !(bark_sg > 0.0)) {
        throw Error("tree '" + id + "': specific gravities must be > 0");
    }
    if (decaycd < 0 || decaycd > 5) {
        throw Error("tree '" + id + "': decaycd must be in 0..5");
    }
    if (!(expansion >= 0.0)) {
        throw Error("tree '" + id + "': expansion must be >= 0");
    }
}

const SpeciesCoefficients& AllometricTables::resolve(int species_group) const {
    const auto it = groups.find(species_group);
    if (it == groups.end()) {
        throw Error("no allometric coefficients for species group " + std::to_string(species_group));
    }
    return it->second;
}

double AllometricTables::decay_ratio_for(WoodType wood, int decaycd) const {
    const auto w = wood == WoodType::softwood ? WoodType::softwood : WoodType::hardwood;
    const auto it = decay_ratio.find({w, decaycd});
    if (it == decay_ratio.end()) {
        throw Error("no decay ratio for " + std::string(to_string(w)) + " decay class " + std::to_string(decaycd));
    }
    return it->second;
}

AllometricTables AllometricTables::toy() {
    AllometricTables t;
    // Form factor 0.42 on a cylinder with dia in cm and height in m.
    const double form = 0.42 * std::numbers::pi / 4.0 / 10000.0;
    t.groups[1] = {1, WoodType::hardwood, -2.48, 2.48, 0.0, form, 2.0, 1.0, 0.12, -4.08, 5.88, -4.08, 5.88};
    t.groups[2] = {2, WoodType::softwood, -2.54, 2.43, 0.0, form, 2.0, 1.0, 0.10, -3.96, 4.65, -2.95, 4.29};
    t.groups[3] = {3, WoodType::hardwood, std::log(2.0), 1.0, 0.0, 0.0, 2.0, 1.0, 0.0, -50.0, 0.0, -50.0, 0.0};
    const double hard[5] = {0.99, 0.80, 0.54, 0.43, 0.43};
    const double soft[5] = {0.97, 1.00, 0.92, 0.55, 0.55};
    for (int k = 1; k <= 5; ++k) {
        t.decay_ratio[{WoodType::hardwood, k}] = hard[k - 1];
        t.decay_ratio[{WoodType::softwood, k}] = soft[k - 1];
    }
    return t;
}

AllometricTables AllometricTables::read_csv(const std::string& coefficients_path, const std::string& decay_path) {
    AllometricTables out;
    const auto t = CsvTable::read(coefficients_path);
    for (std::size_t i = 0; i < t.rows(); ++i) {
        SpeciesCoefficients c;
        c.species_group = static_cast<int>(t.integer(i, t.column("species_group")));
        c.wood = parse_wood_type(t.field(i, t.column("wood_type")));
        c.total_b0 = t.number(i, t.column("total_b0"));
        c.total_b1 = t.number(i, t.column("total_b1"));
        c.vol_a = t.number(i, t.column("vol_a"));
        c.vol_b = t.number(i, t.column("vol_b"));
        c.vol_c = t.number(i, t.column("vol_c"));
        c.vol_d = t.number(i, t.column("vol_d"));
        c.bark_fraction = t.number(i, t.column("bark_fraction"));
        c.stump_s0 = t.number(i, t.column("stump_s0"));
        c.stump_s1 = t.number(i, t.column("stump_s1"));
        c.foliage_f0 = t.number(i, t.column("foliage_f0"));
        c.foliage_f1 = t.number(i, t.column("foliage_f1"));
        if (!(c.bark_fraction >= 0.0 && c.bark_fraction < 1.0)) {
            throw Error(coefficients_path + ": bark_fraction must be in [0, 1)");
        }
        out.groups[c.species_group] = c;
    }
    if (decay_path.empty()) {
        out.decay_ratio = toy().decay_ratio;
    } else {
        const auto d = CsvTable::read(decay_path);
        for (std::size_t i = 0; i < d.rows(); ++i) {
            const auto wood = parse_wood_type(d.field(i, d.column("wood_type")));
            const int k = static_cast<int>(d.integer(i, d.column("decaycd")));
            out.decay_ratio[{wood, k}] = d.number(i, d.column("ratio"));
        }
    }
    return out;
}

void AllometricTables::write_csv(const std::string& coefficients_path, const std::string& decay_path) const {
    {
        auto out = open_output(coefficients_path);
        CsvWriter w(out);
        w.header({"species_group", "wood_type", "total_b0", "total_b1", "vol_a", "vol_b", "vol_c", "vol_d",
                  "bark_fraction", "stump_s0", "stump_s1", "foliage_f0", "foliage_f1"});
        for (const auto& [g, c] : groups) {
            w.field(g).field(to_string(c.wood)).field(c.total_b0).field(c.total_b1).field(c.vol_a).field(c.vol_b);
            w.field(c.vol_c).field(c.vol_d).field(c.bark_fraction).field(c.stump_s0).field(c.stump_s1);
            w.field(c.foliage_f0).field(c.foliage_f1).end_row();
        }
    }
    auto out = open_output(decay_path);
    CsvWriter w(out);
    w.header({"wood_type", "decaycd", "ratio"});
    for (const auto& [k, r] : decay_ratio) {
        w.field(to_string(k.first)).field(k.second).field(r).end_row();
    }
}

namespace {

double clamp_nonnegative(double v, CrmTrace* trace, bool is_total) {
    if (v >= 0.0) {
        return v;
    }
    if (trace != nullptr) {
        ++(is_total ? trace->clamped_totals : trace->clamped_components);
    }
    return 0.0;
}

}  // namespace

ComponentBreakdown predict_tree_agb(const TreeRecord& tree, const AllometricTables& tables,
                                    const CrmErrorSources* errors, Rng& rng, CrmTrace* trace) {
    tree.validate();
    const auto& co = tables.resolve(tree.species_group);
    const ErrorModelSet* meas = errors != nullptr ? errors->measurement : nullptr;
    const ResidualLibrary* resid = errors != nullptr ? errors->residuals : nullptr;

    // Measured fields.
    double dia = tree.dia_cm;
    double ht = tree.boleht_m;
    double cull = tree.cull_pct;
    double wood_sg = tree.wood_sg;
    double bark_sg = tree.bark_sg;
    int decay = tree.decaycd;
    if (meas != nullptr) {
        dia = draw_normal_error(meas->spec("dia"), dia, rng);
        ht = draw_normal_error(meas->spec("boleht"), ht, rng);
        cull = draw_normal_error(meas->spec("cull"), cull, rng);
        wood_sg = draw_normal_error(meas->spec("wood_sg"), wood_sg, rng);
        bark_sg = draw_normal_error(meas->spec("bark_sg"), bark_sg, rng);
        if (decay > 0) {
            decay = perturb_decay_class(decay, meas->decay_accuracy, rng);
        }
    }
    dia = std::max(dia, 1e-6);
    ht = std::max(ht, 0.0);
    wood_sg = std::max(wood_sg, 0.0);
    bark_sg = std::max(bark_sg, 0.0);

    // Model predictions.
    const double total_pred = std::exp(co.total_b0 + co.total_b1 * std::log(dia));
    double volume = std::max(0.0, co.vol_a + co.vol_b * std::pow(dia, co.vol_c) * std::pow(ht, co.vol_d));
    if (resid != nullptr) {
        volume *= 1.0 + sample_allometric_residual(resid->get(component::bole_volume, tree.wood), rng);
        volume = clamp_nonnegative(volume, trace, false);
    }

    ComponentBreakdown b;
    b.total = total_pred;
    b.bole_wood = volume * (1.0 - co.bark_fraction) * (1.0 - cull / 100.0) * wood_sg * 1000.0;
    b.bole_bark = volume * co.bark_fraction * bark_sg * 1000.0;
    b.stump = std::exp(co.stump_s0 + co.stump_s1 / dia) * total_pred;
    b.foliage = std::exp(co.foliage_f0 + co.foliage_f1 / dia) * total_pred;

    if (resid != nullptr) {
        // Biomass residuals are relative to the predicted total.
        b.total += sample_allometric_residual(resid->get(component::total, tree.wood), rng) * total_pred;
        b.bole_bark += sample_allometric_residual(resid->get(component::bole_bark, tree.wood), rng) * total_pred;
        b.bole_wood += sample_allometric_residual(resid->get(component::bole_wood, tree.wood), rng) * total_pred;
        b.foliage += sample_allometric_residual(resid->get(component::foliage, tree.wood), rng) * total_pred;
    }
    b.total = clamp_nonnegative(b.total, trace, true);
    b.bole_wood = clamp_nonnegative(b.bole_wood, trace, false);
    b.bole_bark = clamp_nonnegative(b.bole_bark, trace, false);
    b.foliage = clamp_nonnegative(b.foliage, trace, false);

    if (resid != nullptr) {
        const double ratio = sample_allometric_residual(resid->get(component::tab_ratio, WoodType::pooled), rng);
        b.top_and_branch = std::max(0.0, ratio * (b.total - b.stump));
    } else {
        b.top_and_branch = std::max(0.0, b.total - b.stump - b.bole_wood - b.bole_bark - b.foliage);
    }

    // Reconcile: remove (sum - total) from the components in proportion to
    // their size.
    if (trace != nullptr) {
        trace->unreconciled = b;
    }
    const double sum = b.component_sum();
    if (sum > 0.0) {
        const double excess = sum - b.total;
        for (double* c : {&b.bole_wood, &b.bole_bark, &b.stump, &b.foliage, &b.top_and_branch}) {
            *c -= excess * (*c / sum);
        }
    } else {
        b.top_and_branch = b.total;
    }

    if (decay > 0) {
        double ratio = tables.decay_ratio_for(tree.wood, decay);
        if (meas != nullptr) {
            ratio = draw_normal_error(meas->decay_ratio(tree.wood, decay), ratio, rng);
        }
        for (double* c : {&b.total, &b.bole_wood, &b.bole_bark, &b.stump, &b.foliage, &b.top_and_branch}) {
            *c *= ratio;
        }
    }
    return b;
}

double plot_agb_density(std::span<const ComponentBreakdown> trees, std::span<const double> expansion,
                        double plot_area_ha) {
    if (!(plot_area_ha > 0.0)) {
        throw Error("plot area must be > 0");
    }
    if (trees.size() != expansion.size()) {
        throw Error("tree and expansion-factor counts differ");
    }
    double kg = 0.0;
    for (std::size_t i = 0; i < trees.size(); ++i) {
        kg += trees[i].total * expansion[i];
    }
    return kg / 1000.0 / plot_area_ha;
}

std::array<MapPoint, 4> subplot_centers(MapPoint c) {
    std::array<MapPoint, 4> out{c, c, c, c};
    const double az[3] = {0.0, 120.0, 240.0};
    for (int k = 0; k < 3; ++k) {
        const double a = az[k] * std::numbers::pi / 180.0;
        out[k + 1] = {c.x + subplot_offset_m * std::sin(a), c.y + subplot_offset_m * std::cos(a)};
    }
    return out;
}

double plot_agb(const PlotRecord& plot, const AllometricTables& tables) {
    Rng unused(0);
    std::vector<ComponentBreakdown> b;
    std::vector<double> e;
    for (const auto& t : plot.trees) {
        b.push_back(predict_tree_agb(t, tables, nullptr, unused));
        e.push_back(t.expansion);
    }
    return plot_agb_density(b, e, plot.area_ha);
}

std::vector<PlotRecord> read_plots(const std::string& plots_path, const std::string& trees_path) {
    std::vector<PlotRecord> plots;
    std::unordered_map<std::string, std::size_t> index;
    {
        const auto t = CsvTable::read(plots_path);
        const auto c_id = t.column("plot_id");
        const auto c_x = t.column("x");
        const auto c_y = t.column("y");
        const bool has_area = t.has_column("area_ha");
        for (std::size_t i = 0; i < t.rows(); ++i) {
            PlotRecord p;
            p.id = t.field(i, c_id);
            p.center = {t.number(i, c_x), t.number(i, c_y)};
            if (has_area) {
                p.area_ha = t.number(i, t.column("area_ha"));
            }
            if (!index.emplace(p.id, plots.size()).second) {
                throw Error(plots_path + ": duplicate plot_id '" + p.id + "'");
            }
            plots.push_back(std::move(p));
        }
    }
    if (!trees_path.empty()) {
        const auto t = CsvTable::read(trees_path);
        const bool has_exp = t.has_column("expansion");
        for (std::size_t i = 0; i < t.rows(); ++i) {
            const auto& pid = t.field(i, t.column("plot_id"));
            const auto it = index.find(pid);
            if (it == index.end()) {
                throw Error(trees_path + ": tree on unknown plot '" + pid + "'");
            }
            TreeRecord tr;
            tr.id = t.field(i, t.column("tree_id"));
            tr.dia_cm = t.number(i, t.column("dia"));
            tr.boleht_m = t.number(i, t.column("boleht"));
            tr.cull_pct = t.number(i, t.column("cull"));
            tr.wood_sg = t.number(i, t.column("wood_sg"));
            tr.bark_sg = t.number(i, t.column("bark_sg"));
            tr.decaycd = static_cast<int>(t.integer(i, t.column("decaycd")));
            tr.wood = parse_wood_type(t.field(i, t.column("wood_type")));
            tr.species_group = static_cast<int>(t.integer(i, t.column("species_group")));
            if (has_exp) {
                tr.expansion = t.number(i, t.column("expansion"));
            }
            tr.validate();
            plots[it->second].trees.push_back(std::move(tr));
        }
    }
    return plots;
}

void write_plots(const std::string& plots_path, const std::string& trees_path, const std::vector<PlotRecord>& plots) {
    {
        auto out = open_output(plots_path);
        CsvWriter w(out);
        w.header({"plot_id", "x", "y", "area_ha"});
        for (const auto& p : plots) {
            w.field(p.id).field(p.center.x).field(p.center.y).field(p.area_ha).end_row();
        }
    }
    auto out = open_output(trees_path);
    CsvWriter w(out);
    w.header({"plot_id", "tree_id", "dia", "boleht", "cull", "wood_sg", "bark_sg", "decaycd", "wood_type",
              "species_group", "expansion"});
    for (const auto& p : plots) {
        for (const auto& t : p.trees) {
            w.field(p.id).field(t.id).field(t.dia_cm).field(t.boleht_m).field(t.cull_pct).field(t.wood_sg);
            w.field(t.bark_sg).field(t.decaycd).field(to_string(t.wood)).field(t.species_group).field(t.expansion);
            w.end_row();
        }
    }
}

}  // namespace parcelse
