#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "parcelse/rng.hpp"

namespace parcelse {

// Row-major samples x features.
struct FeatureMatrix {
    std::size_t n_samples = 0;
    std::size_t n_features = 0;
    std::vector<double> values;
    std::vector<std::string> names;

    FeatureMatrix() = default;
    FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<std::string> feature_names = {});

    double operator()(std::size_t i, std::size_t j) const { return values[i * n_features + j]; }
    double& operator()(std::size_t i, std::size_t j) { return values[i * n_features + j]; }
    std::span<const double> row(std::size_t i) const { return {values.data() + i * n_features, n_features}; }

    // Throws Error on non-finite values or a size mismatch.
    void validate() const;
};

enum class PredictorKind { linear, knn };

std::string_view to_string(PredictorKind k);
PredictorKind parse_predictor_kind(std::string_view s);

struct PredictorSettings {
    PredictorKind kind = PredictorKind::linear;
    int k = 5;
};

// An immutable fitted model, shareable across threads.
class PredictorModel {
public:
    PredictorKind kind() const { return kind_; }
    std::size_t arity() const { return arity_; }

    // Clamped below at 0. Throws Error on arity mismatch.
    std::vector<double> predict(const FeatureMatrix& features) const;
    double predict_row(std::span<const double> x) const;

    // Linear kind: intercept followed by one slope per feature.
    const std::vector<double>& coefficients() const { return coef_; }
    // True when the least-squares system was rank deficient and a ridge
    // solve was used instead.
    bool regularized() const { return regularized_; }

    std::uint64_t seed = 0;
    std::size_t iteration = 0;

private:
    friend PredictorModel fit(const FeatureMatrix&, std::span<const double>, const PredictorSettings&, Rng&);

    PredictorKind kind_ = PredictorKind::linear;
    std::size_t arity_ = 0;
    std::vector<double> coef_;
    bool regularized_ = false;

    // k-NN state: standardized training features and their targets.
    int k_ = 5;
    std::vector<double> center_;
    std::vector<double> scale_;
    std::vector<double> train_;
    std::vector<double> targets_;
};

// Deterministic given the data; both reference kinds ignore the rng.
PredictorModel fit(const FeatureMatrix& features, std::span<const double> targets, const PredictorSettings& settings,
                   Rng& rng);

inline constexpr double ridge_regularizer = 1e-8;

}  // namespace parcelse
