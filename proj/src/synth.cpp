#include "parcelse/synth.hpp"

#include <fftw3.h>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <limits>
#include <mutex>
#include <numeric>

#include "parcelse/csv.hpp"
#include "parcelse/error.hpp"
#include "parcelse/parallel.hpp"

namespace parcelse {

std::string_view to_string(SimMethod m) {
    switch (m) {
        case SimMethod::none: return "none";
        case SimMethod::iid: return "iid";
        case SimMethod::circulant: return "circulant";
        case SimMethod::cholesky: return "cholesky";
    }
    return "none";
}

namespace {

// FFTW planning is not thread safe; execution of an existing plan is.
std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

struct FftwBuffer {
    fftw_complex* data = nullptr;
    explicit FftwBuffer(std::size_t n) : data(fftw_alloc_complex(n)) {
        if (data == nullptr) {
            throw Error("out of memory allocating an FFT buffer of " + std::to_string(n) + " points");
        }
    }
    ~FftwBuffer() { fftw_free(data); }
    FftwBuffer(const FftwBuffer&) = delete;
    FftwBuffer& operator=(const FftwBuffer&) = delete;
};

std::size_t next_smooth(std::size_t n) {
    for (std::size_t m = std::max<std::size_t>(n, 1);; ++m) {
        std::size_t r = m;
        for (std::size_t p : {2, 3, 5}) {
            while (r % p == 0) {
                r /= p;
            }
        }
        if (r == 1) {
            return m;
        }
    }
}

constexpr std::size_t max_embedding_points = std::size_t{1} << 24;

}  // namespace

struct FieldSimulator::Impl {
    GridGeometry geometry;
    VariogramModel model;
    SimMethod method = SimMethod::none;
    std::size_t m_r = 0;
    std::size_t m_c = 0;
    std::vector<double> sqrt_lambda;  // sqrt(lambda / M)
    fftw_plan plan = nullptr;
    Eigen::MatrixXd chol;

    ~Impl() {
        if (plan != nullptr) {
            std::lock_guard lock(fftw_planner_mutex());
            fftw_destroy_plan(plan);
        }
    }

    double covariance(double h) const { return model.partial_sill() * (1.0 - model.shape(h)); }

    bool try_embedding(std::size_t rows, std::size_t cols) {
        const std::size_t total = rows * cols;
        FftwBuffer buf(total);
        const double ps = geometry.pixel_size;
        for (std::size_t i = 0; i < rows; ++i) {
            const double dr = static_cast<double>(std::min(i, rows - i));
            for (std::size_t j = 0; j < cols; ++j) {
                const double dc = static_cast<double>(std::min(j, cols - j));
                buf.data[i * cols + j][0] = covariance(ps * std::hypot(dr, dc));
                buf.data[i * cols + j][1] = 0.0;
            }
        }
        {
            std::lock_guard lock(fftw_planner_mutex());
            fftw_plan p = fftw_plan_dft_2d(static_cast<int>(rows), static_cast<int>(cols), buf.data, buf.data,
                                           FFTW_FORWARD, FFTW_ESTIMATE);
            fftw_execute(p);
            fftw_destroy_plan(p);
        }
        double max_l = 0.0;
        double min_l = 0.0;
        for (std::size_t k = 0; k < total; ++k) {
            max_l = std::max(max_l, buf.data[k][0]);
            min_l = std::min(min_l, buf.data[k][0]);
        }
        if (min_l < -1e-8 * max_l) {
            return false;
        }
        m_r = rows;
        m_c = cols;
        sqrt_lambda.resize(total);
        const auto scale = static_cast<double>(total);
        for (std::size_t k = 0; k < total; ++k) {
            sqrt_lambda[k] = std::sqrt(std::max(0.0, buf.data[k][0]) / scale);
        }
        std::lock_guard lock(fftw_planner_mutex());
        FftwBuffer tmp(total);
        plan = fftw_plan_dft_2d(static_cast<int>(rows), static_cast<int>(cols), tmp.data, tmp.data, FFTW_FORWARD,
                                FFTW_ESTIMATE);
        return true;
    }

    void build_cholesky() {
        const std::size_t n = geometry.size();
        Eigen::MatrixXd c(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        for (std::size_t a = 0; a < n; ++a) {
            const PixelIndex pa = geometry.pixel(a);
            for (std::size_t b = 0; b <= a; ++b) {
                const PixelIndex pb = geometry.pixel(b);
                const double h = geometry.pixel_size * std::hypot(double(pa.row - pb.row), double(pa.col - pb.col));
                const double v = covariance(h);
                c(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = v;
                c(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = v;
            }
        }
        c.diagonal().array() += 1e-10 * model.partial_sill();
        Eigen::LLT<Eigen::MatrixXd> llt(c);
        if (llt.info() != Eigen::Success) {
            throw Error("field simulation: covariance matrix is not positive definite");
        }
        chol = llt.matrixL();
    }
};

FieldSimulator::FieldSimulator(const GridGeometry& geometry, const VariogramModel& model)
    : impl_(std::make_unique<Impl>()) {
    geometry.validate();
    model.validate();
    impl_->geometry = geometry;
    impl_->model = model;
    if (model.partial_sill() <= 0.0) {
        impl_->method = model.nugget > 0.0 ? SimMethod::iid : SimMethod::none;
        return;
    }
    auto rows = next_smooth(2 * static_cast<std::size_t>(geometry.n_rows));
    auto cols = next_smooth(2 * static_cast<std::size_t>(geometry.n_cols));
    while (rows * cols <= max_embedding_points) {
        if (impl_->try_embedding(rows, cols)) {
            impl_->method = SimMethod::circulant;
            return;
        }
        rows = next_smooth(2 * rows);
        cols = next_smooth(2 * cols);
    }
    if (geometry.size() > cholesky_max_pixels) {
        throw Error("field simulation: no nonnegative circulant embedding found and the grid (" +
                    std::to_string(geometry.size()) + " pixels) exceeds the Cholesky limit of " +
                    std::to_string(cholesky_max_pixels));
    }
    impl_->build_cholesky();
    impl_->method = SimMethod::cholesky;
}

FieldSimulator::~FieldSimulator() = default;
FieldSimulator::FieldSimulator(FieldSimulator&&) noexcept = default;
FieldSimulator& FieldSimulator::operator=(FieldSimulator&&) noexcept = default;

SimMethod FieldSimulator::method() const { return impl_->method; }
const GridGeometry& FieldSimulator::geometry() const { return impl_->geometry; }
const VariogramModel& FieldSimulator::model() const { return impl_->model; }
std::pair<std::size_t, std::size_t> FieldSimulator::embedding() const { return {impl_->m_r, impl_->m_c}; }

std::vector<double> FieldSimulator::realization(std::uint64_t seed, std::uint64_t index) const {
    const Impl& s = *impl_;
    const std::size_t n = s.geometry.size();
    const auto n_rows = static_cast<std::size_t>(s.geometry.n_rows);
    const auto n_cols = static_cast<std::size_t>(s.geometry.n_cols);
    std::vector<double> out(n, 0.0);

    if (s.method == SimMethod::circulant) {
        // One complex FFT yields two independent fields: index 2k takes the
        // real part and 2k + 1 the imaginary part of draw k.
        Rng rng(seed, {key(Stream::synth), 1, index / 2});
        const std::size_t total = s.m_r * s.m_c;
        FftwBuffer buf(total);
        for (std::size_t k = 0; k < total; ++k) {
            buf.data[k][0] = s.sqrt_lambda[k] * rng.normal();
            buf.data[k][1] = s.sqrt_lambda[k] * rng.normal();
        }
        fftw_execute_dft(s.plan, buf.data, buf.data);
        const int part = static_cast<int>(index % 2);
        for (std::size_t r = 0; r < n_rows; ++r) {
            for (std::size_t c = 0; c < n_cols; ++c) {
                out[r * n_cols + c] = buf.data[r * s.m_c + c][part];
            }
        }
    } else if (s.method == SimMethod::cholesky) {
        Rng rng(seed, {key(Stream::synth), 1, index});
        Eigen::VectorXd z(static_cast<Eigen::Index>(n));
        for (Eigen::Index k = 0; k < z.size(); ++k) {
            z(k) = rng.normal();
        }
        const Eigen::VectorXd x = s.chol.triangularView<Eigen::Lower>() * z;
        for (std::size_t k = 0; k < n; ++k) {
            out[k] = x(static_cast<Eigen::Index>(k));
        }
    }
    if (s.model.nugget > 0.0) {
        Rng rng(seed, {key(Stream::synth), 2, index});
        const double sd = std::sqrt(s.model.nugget);
        for (double& v : out) {
            v += sd * rng.normal();
        }
    }
    return out;
}

void FieldSpec::validate() const {
    geometry.validate();
    model.validate();
    if (!std::isfinite(mean) || !std::isfinite(gradient_x) || !std::isfinite(gradient_y)) {
        throw Error("field spec: mean surface must be finite");
    }
}

SimulatedField simulate_field(const FieldSpec& spec, std::uint64_t index) {
    spec.validate();
    FieldSimulator sim(spec.geometry, spec.model);
    std::vector<double> v = sim.realization(spec.seed, index);
    const auto& g = spec.geometry;
    const double x0 = g.origin_x + 0.5 * g.n_cols * g.pixel_size;
    const double y0 = g.origin_y + 0.5 * g.n_rows * g.pixel_size;
    for (std::size_t k = 0; k < v.size(); ++k) {
        const PixelIndex p = g.pixel(k);
        v[k] += spec.mean + spec.gradient_x * (g.center_x(p.col) - x0) + spec.gradient_y * (g.center_y(p.row) - y0);
    }
    return {GridRaster(g, std::move(v)), sim.method()};
}

McVariance mc_parcel_variance(const FieldSpec& spec, const Parcel& parcel, std::size_t n_real) {
    spec.validate();
    validate_parcel(parcel, spec.geometry);
    if (n_real < 4) {
        throw Error("mc_parcel_variance needs at least 4 realizations");
    }
    FieldSimulator sim(spec.geometry, spec.model);
    std::vector<std::size_t> idx;
    idx.reserve(parcel.size());
    for (const auto& p : parcel.pixels) {
        idx.push_back(spec.geometry.linear(p));
    }
    std::vector<double> means(n_real);
    parallel_for(n_real, [&](std::size_t r) {
        const std::vector<double> v = sim.realization(spec.seed, r);
        double s = 0.0;
        for (std::size_t k : idx) {
            s += v[k];
        }
        means[r] = s / static_cast<double>(idx.size());
    });
    const auto n = static_cast<double>(n_real);
    const double mean = pairwise_sum(means) / n;
    std::vector<double> d2(n_real);
    std::vector<double> d4(n_real);
    for (std::size_t r = 0; r < n_real; ++r) {
        const double d = means[r] - mean;
        d2[r] = d * d;
        d4[r] = d2[r] * d2[r];
    }
    McVariance out;
    out.n_real = n_real;
    out.method = sim.method();
    out.variance = pairwise_sum(d2) / (n - 1.0);
    const double m4 = pairwise_sum(d4) / n;
    const double s4 = out.variance * out.variance;
    out.mc_se = std::sqrt(std::max(0.0, (m4 - s4 * (n - 3.0) / (n - 1.0)) / n));
    return out;
}

Landscape simulate_landscape(const LandscapeSpec& spec) {
    const GridGeometry& g = spec.geometry;
    g.validate();
    const std::size_t n = g.size();
    Landscape out;

    const FieldSimulator agb_sim(g, spec.agb_model);
    const std::vector<double> z_agb = agb_sim.realization(mix_seed(spec.seed, {key(Stream::synth), 10}), 0);
    const VariogramModel lc_model{VariogramFamily::exponential, 0.0, 1.0, 600.0};
    const FieldSimulator lc_sim(g, lc_model);
    const std::vector<double> z_lc = lc_sim.realization(mix_seed(spec.seed, {key(Stream::synth), 11}), 0);
    const VariogramModel aux_model{VariogramFamily::spherical, 0.0, 1.0, 450.0};
    const FieldSimulator aux_sim(g, aux_model);
    const std::vector<double> z_aux = aux_sim.realization(mix_seed(spec.seed, {key(Stream::synth), 12}), 0);

    // Land cover as quantile bands of z_lc, from lowest to highest.
    const std::pair<int, double> bands[] = {{landcover::developed, spec.developed},
                                            {landcover::cropland, spec.cropland},
                                            {landcover::grass_shrub, spec.grass_shrub},
                                            {landcover::tree_cover, spec.tree_cover},
                                            {landcover::wetland, spec.wetland}};
    double share_total = 0.0;
    for (const auto& [code, share] : bands) {
        if (share < 0.0) {
            throw Error("landscape: class shares must be >= 0");
        }
        share_total += share;
    }
    if (!(share_total > 0.0)) {
        throw Error("landscape: class shares sum to 0");
    }
    std::vector<double> sorted = z_lc;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> upper;
    double cum = 0.0;
    for (const auto& band : bands) {
        cum += band.second / share_total;
        const auto k = std::min(n - 1, static_cast<std::size_t>(std::floor(cum * static_cast<double>(n))));
        upper.push_back(cum >= 1.0 - 1e-12 ? std::numeric_limits<double>::infinity() : sorted[k]);
    }
    out.lc_primary = GridRaster(g, 0.0);
    out.lc_secondary = GridRaster(g, 0.0);
    out.true_agb = GridRaster(g, 0.0);
    auto lp = out.lc_primary.values();
    auto ls = out.lc_secondary.values();
    auto ta = out.true_agb.values();
    constexpr std::size_t n_bands = std::size(bands);
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t b = 0;
        while (b + 1 < n_bands && z_lc[k] >= upper[b]) {
            ++b;
        }
        lp[k] = bands[b].first;
        // Secondary: the neighbouring band whose boundary is closer.
        const double lo = b == 0 ? -std::numeric_limits<double>::infinity() : upper[b - 1];
        const double hi = upper[b];
        std::size_t alt = 0;
        if (b == 0) {
            alt = 1;
        } else if (b + 1 == n_bands) {
            alt = b - 1;
        } else {
            alt = (z_lc[k] - lo) < (hi - z_lc[k]) ? b - 1 : b + 1;
        }
        ls[k] = bands[alt].first;
        double scale = 0.0;
        switch (bands[b].first) {
            case landcover::tree_cover: scale = 1.0; break;
            case landcover::wetland: scale = 0.7; break;
            case landcover::grass_shrub: scale = 0.3; break;
            default: scale = 0.0;
        }
        ta[k] = scale * std::max(0.0, spec.agb_mean + z_agb[k]);
    }

    Rng noise(spec.seed, {key(Stream::synth), 13});
    out.reference_agb = GridRaster(g, 0.0);
    auto ra = out.reference_agb.values();
    for (std::size_t k = 0; k < n; ++k) {
        ra[k] = ta[k] > 0.0 ? std::max(0.0, ta[k] + noise.normal(0.0, 2.0)) : 0.0;
    }

    out.predictor_names = {"p1", "p2", "p3"};
    out.predictors.assign(3, GridRaster(g, 0.0));
    auto p1 = out.predictors[0].values();
    auto p2 = out.predictors[1].values();
    auto p3 = out.predictors[2].values();
    for (std::size_t k = 0; k < n; ++k) {
        p1[k] = ta[k] + noise.normal(0.0, spec.noise_sd0 + spec.noise_sd1 * ta[k]);
        p2[k] = 0.5 * ta[k] + 10.0 * z_aux[k];
        p3[k] = 10.0 * z_lc[k] + noise.normal(0.0, 1.0);
    }

    // Guillotine tiling into rectangular parcels.
    Rng split(spec.seed, {key(Stream::synth), 14});
    struct Rect {
        std::int32_t r0, r1, c0, c1;  // half-open
    };
    std::vector<Rect> stack{{0, g.n_rows, 0, g.n_cols}};
    std::vector<Rect> leaves;
    while (!stack.empty()) {
        const Rect r = stack.back();
        stack.pop_back();
        const auto h = static_cast<std::size_t>(r.r1 - r.r0);
        const auto w = static_cast<std::size_t>(r.c1 - r.c0);
        if (h * w <= spec.parcel_max_pixels || (h < 2 && w < 2)) {
            leaves.push_back(r);
            continue;
        }
        const bool cut_rows = h > w || (h == w && split.coin());
        const std::size_t len = cut_rows ? h : w;
        const std::size_t lo = std::max<std::size_t>(1, len / 4);
        const std::size_t hi = std::max(lo, len - lo);
        const auto at = static_cast<std::int32_t>(lo + split.index(hi - lo + 1));
        if (cut_rows) {
            stack.push_back({r.r0 + at, r.r1, r.c0, r.c1});
            stack.push_back({r.r0, r.r0 + at, r.c0, r.c1});
        } else {
            stack.push_back({r.r0, r.r1, r.c0 + at, r.c1});
            stack.push_back({r.r0, r.r1, r.c0, r.c0 + at});
        }
    }
    std::size_t id = 0;
    for (const Rect& r : leaves) {
        const auto area = static_cast<std::size_t>(r.r1 - r.r0) * static_cast<std::size_t>(r.c1 - r.c0);
        if (area < spec.parcel_min_pixels) {
            continue;
        }
        std::vector<PixelIndex> px;
        for (std::int32_t row = r.r0; row < r.r1; ++row) {
            for (std::int32_t col = r.c0; col < r.c1; ++col) {
                px.push_back({row, col});
            }
        }
        char name[32];
        std::snprintf(name, sizeof name, "P%04zu", ++id);
        out.parcels.push_back(make_parcel(name, std::move(px)));
    }
    return out;
}

double footprint_mean(const GridRaster& raster, MapPoint center) {
    double sw = 0.0;
    double sv = 0.0;
    for (const MapPoint& c : subplot_centers(center)) {
        for (const auto& [p, w] : circle_pixel_weights(raster.geometry(), c.x, c.y, subplot_radius_m)) {
            const double v = raster[p];
            if (raster.is_nodata(v)) {
                continue;
            }
            sw += w;
            sv += w * v;
        }
    }
    if (!(sw > 0.0)) {
        throw Error("plot footprint at (" + format_double(center.x) + ", " + format_double(center.y) +
                    ") has no valid pixels");
    }
    return sv / sw;
}

std::vector<PlotRecord> simulate_inventory(const Landscape& landscape, std::size_t n_plots,
                                           const TreeModelSpec& tree_model, const AllometricTables& tables,
                                           std::uint64_t seed) {
    if (tree_model.min_trees == 0 || tree_model.max_trees < tree_model.min_trees) {
        throw Error("tree model needs 1 <= min_trees <= max_trees");
    }
    const GridGeometry& g = landscape.true_agb.geometry();
    const double margin = subplot_offset_m + subplot_radius_m + 1.0;
    const double x0 = g.origin_x + margin;
    const double x1 = g.origin_x + g.n_cols * g.pixel_size - margin;
    const double y0 = g.origin_y + margin;
    const double y1 = g.origin_y + g.n_rows * g.pixel_size - margin;
    if (n_plots > 0 && (x1 <= x0 || y1 <= y0)) {
        throw Error("grid is too small to hold a plot footprint");
    }
    std::vector<PlotRecord> plots;
    plots.reserve(n_plots);
    for (std::size_t i = 0; i < n_plots; ++i) {
        Rng rng(seed, {key(Stream::synth), 20, i});
        PlotRecord plot;
        char name[32];
        std::snprintf(name, sizeof name, "PL%04zu", i + 1);
        plot.id = name;
        plot.center = {rng.uniform(x0, x1), rng.uniform(y0, y1)};
        double target = footprint_mean(landscape.true_agb, plot.center);
        if (tree_model.plot_noise_sd > 0.0) {
            target *= std::exp(tree_model.plot_noise_sd * rng.normal());
        }
        if (!(target > 0.0)) {
            plots.push_back(std::move(plot));
            continue;
        }
        const std::size_t n_trees =
            tree_model.min_trees + rng.index(tree_model.max_trees - tree_model.min_trees + 1);
        double kg = 0.0;
        for (std::size_t t = 0; t < n_trees; ++t) {
            TreeRecord tree;
            std::snprintf(name, sizeof name, "T%02zu", t + 1);
            tree.id = name;
            const bool soft = rng.uniform() < tree_model.softwood_fraction;
            tree.wood = soft ? WoodType::softwood : WoodType::hardwood;
            tree.species_group = soft ? 2 : 1;
            tree.dia_cm = 12.7 - 15.0 * std::log(1.0 - rng.uniform());
            tree.boleht_m = std::max(2.0, 1.3 + 22.0 * (1.0 - std::exp(-0.05 * tree.dia_cm)) + rng.normal(0.0, 1.5));
            tree.cull_pct = rng.uniform() < 0.2 ? rng.uniform(0.0, 20.0) : 0.0;
            tree.wood_sg = std::clamp((soft ? 0.42 : 0.56) + rng.normal(0.0, 0.04), 0.25, 0.85);
            tree.bark_sg = soft ? 0.42 : 0.50;
            tree.decaycd = rng.uniform() < tree_model.dead_fraction ? 1 + static_cast<int>(rng.index(5)) : 0;
            tree.expansion = 1.0;
            kg += predict_tree_agb(tree, tables, nullptr, rng).total;
            plot.trees.push_back(std::move(tree));
        }
        const double scale = target * 1000.0 * plot.area_ha / kg;
        for (auto& tree : plot.trees) {
            tree.expansion = scale;
        }
        plots.push_back(std::move(plot));
    }
    return plots;
}

ResidualLibrary synthetic_residual_library(std::uint64_t seed, std::size_t per_stratum) {
    ResidualLibrary lib;
    const std::pair<std::string_view, double> comps[] = {{component::bole_volume, 0.08},
                                                         {component::bole_bark, 0.02},
                                                         {component::bole_wood, 0.05},
                                                         {component::foliage, 0.01},
                                                         {component::total, 0.15}};
    std::uint64_t stream = 0;
    for (WoodType wood : {WoodType::hardwood, WoodType::softwood}) {
        for (const auto& [name, sd] : comps) {
            Rng rng(seed, {key(Stream::synth), 30, ++stream});
            EmpiricalDistribution d;
            d.name = std::string(name);
            d.stratum = wood;
            for (std::size_t i = 0; i < per_stratum; ++i) {
                d.samples.push_back(rng.normal(0.0, sd));
            }
            lib.add(std::move(d));
        }
    }
    Rng rng(seed, {key(Stream::synth), 31});
    EmpiricalDistribution tab;
    tab.name = std::string(component::tab_ratio);
    tab.stratum = WoodType::pooled;
    for (std::size_t i = 0; i < per_stratum; ++i) {
        // Mostly 0.1-0.35, with an occasional implausible ratio.
        tab.samples.push_back(rng.uniform() < 0.02 ? rng.uniform(0.5, 0.9) : rng.uniform(0.1, 0.35));
    }
    lib.add(std::move(tab));
    return lib;
}

}  // namespace parcelse
