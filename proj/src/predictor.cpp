#include "parcelse/predictor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "parcelse/error.hpp"

namespace parcelse {

FeatureMatrix::FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<std::string> feature_names)
    : n_samples(rows), n_features(cols), values(rows * cols, 0.0), names(std::move(feature_names)) {}

void FeatureMatrix::validate() const {
    if (values.size() != n_samples * n_features) {
        throw Error("feature matrix size does not match its dimensions");
    }
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw Error("feature matrix contains a non-finite value");
        }
    }
}

std::string_view to_string(PredictorKind k) { return k == PredictorKind::linear ? "linear" : "knn"; }

PredictorKind parse_predictor_kind(std::string_view s) {
    if (s == "linear" || s == "ols") {
        return PredictorKind::linear;
    }
    if (s == "knn") {
        return PredictorKind::knn;
    }
    throw Error("unknown predictor kind '" + std::string(s) + "'");
}

PredictorModel fit(const FeatureMatrix& features, std::span<const double> targets, const PredictorSettings& settings,
                   Rng& /*rng*/) {
    features.validate();
    if (features.n_samples < 2) {
        throw Error("predictor fit needs at least 2 samples");
    }
    if (targets.size() != features.n_samples) {
        throw Error("predictor fit: target count does not match feature rows");
    }
    PredictorModel m;
    m.kind_ = settings.kind;
    m.arity_ = features.n_features;
    const auto n = static_cast<Eigen::Index>(features.n_samples);
    const auto p = static_cast<Eigen::Index>(features.n_features);

    if (settings.kind == PredictorKind::linear) {
        Eigen::MatrixXd x(n, p + 1);
        Eigen::VectorXd y(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            x(i, 0) = 1.0;
            for (Eigen::Index j = 0; j < p; ++j) {
                x(i, j + 1) = features(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
            }
            y(i) = targets[static_cast<std::size_t>(i)];
        }
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
        Eigen::VectorXd beta;
        if (qr.rank() == p + 1) {
            beta = qr.solve(y);
        } else {
            const Eigen::MatrixXd xtx = x.transpose() * x;
            const double lambda = ridge_regularizer * std::max(1.0, xtx.diagonal().maxCoeff());
            beta = (xtx + lambda * Eigen::MatrixXd::Identity(p + 1, p + 1)).ldlt().solve(x.transpose() * y);
            m.regularized_ = true;
        }
        m.coef_.assign(beta.data(), beta.data() + beta.size());
        return m;
    }

    if (settings.k < 1) {
        throw Error("k-NN predictor needs k >= 1");
    }
    m.k_ = settings.k;
    m.center_.assign(features.n_features, 0.0);
    m.scale_.assign(features.n_features, 1.0);
    for (std::size_t j = 0; j < features.n_features; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < features.n_samples; ++i) {
            mean += features(i, j);
        }
        mean /= static_cast<double>(features.n_samples);
        double ss = 0.0;
        for (std::size_t i = 0; i < features.n_samples; ++i) {
            ss += (features(i, j) - mean) * (features(i, j) - mean);
        }
        const double sd = std::sqrt(ss / static_cast<double>(features.n_samples - 1));
        m.center_[j] = mean;
        m.scale_[j] = sd > 0.0 ? sd : 1.0;
    }
    m.train_.resize(features.values.size());
    for (std::size_t i = 0; i < features.n_samples; ++i) {
        for (std::size_t j = 0; j < features.n_features; ++j) {
            m.train_[i * features.n_features + j] = (features(i, j) - m.center_[j]) / m.scale_[j];
        }
    }
    m.targets_.assign(targets.begin(), targets.end());
    return m;
}

double PredictorModel::predict_row(std::span<const double> x) const {
    if (x.size() != arity_) {
        throw Error("predictor arity mismatch: model has " + std::to_string(arity_) + " features, got " +
                    std::to_string(x.size()));
    }
    double y = 0.0;
    if (kind_ == PredictorKind::linear) {
        y = coef_[0];
        for (std::size_t j = 0; j < arity_; ++j) {
            y += coef_[j + 1] * x[j];
        }
        return std::max(0.0, y);
    }

    const std::size_t n = targets_.size();
    std::vector<double> q(arity_);
    for (std::size_t j = 0; j < arity_; ++j) {
        q[j] = (x[j] - center_[j]) / scale_[j];
    }
    std::vector<std::pair<double, std::size_t>> dist(n);
    for (std::size_t i = 0; i < n; ++i) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < arity_; ++j) {
            const double d = train_[i * arity_ + j] - q[j];
            d2 += d * d;
        }
        dist[i] = {d2, i};
    }
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(k_), n);
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());

    // Exact matches take all the weight.
    double exact_sum = 0.0;
    std::size_t exact = 0;
    for (std::size_t i = 0; i < k && dist[i].first == 0.0; ++i) {
        exact_sum += targets_[dist[i].second];
        ++exact;
    }
    if (exact > 0) {
        return std::max(0.0, exact_sum / static_cast<double>(exact));
    }
    double wsum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const double w = 1.0 / std::sqrt(dist[i].first);
        y += w * targets_[dist[i].second];
        wsum += w;
    }
    return std::max(0.0, y / wsum);
}

std::vector<double> PredictorModel::predict(const FeatureMatrix& features) const {
    if (features.n_features != arity_) {
        throw Error("predictor arity mismatch: model has " + std::to_string(arity_) + " features, got " +
                    std::to_string(features.n_features));
    }
    std::vector<double> out(features.n_samples);
    for (std::size_t i = 0; i < features.n_samples; ++i) {
        out[i] = predict_row(features.row(i));
    }
    return out;
}

}  // namespace parcelse
