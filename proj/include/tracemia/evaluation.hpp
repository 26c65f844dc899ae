#pragma once

#include "tracemia/classifier.hpp"
#include "tracemia/feature_matrix.hpp"
#include "tracemia/metrics.hpp"

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tracemia {

inline constexpr double kNeighborThreshold = 0.5;

struct EvalSummary {
    std::optional<double> auc;
    PrecisionRecall pr;
    double threshold = kNeighborThreshold;
    std::size_t positives = 0;
    std::size_t negatives = 0;
    std::string positive_label;
};

// Scores a feature matrix whose columns must match the model's registry.
std::vector<double> score_matrix(const RandomForestModel& model, const FeatureMatrix& matrix);

// Members (positive) against nonmembers.
EvalSummary evaluate_model(const RandomForestModel& model, const FeatureMatrix& matrix,
                           double threshold = kNeighborThreshold);

// Zero-shot transfer: rows labeled neighbor are positives, nonmember rows (if
// any) negatives. Precision is absent when nothing is flagged.
EvalSummary evaluate_neighbors(const RandomForestModel& model, const FeatureMatrix& matrix,
                               double threshold = kNeighborThreshold);

std::string eval_to_json(const EvalSummary& summary);

struct LayerAuc {
    std::size_t layer = 0;
    double auc = 0.0;
};

struct LayerwiseOptions {
    bool full_pipeline = true;    // false: one fixed-hyperparameter fit per layer
    RFHyperParams fixed;          // used when full_pipeline is false
    std::size_t n_iter = kSearchIterations;
    unsigned workers = 1;
};

// Held-out AUC using only the features tagged with each layer 0..max tag.
std::vector<LayerAuc> layerwise_auc(const FeatureMatrix& matrix, std::uint64_t seed,
                                    const LayerwiseOptions& options = {});
std::vector<LayerAuc> layerwise_auc(const DatasetManifest& manifest, const ModelHead& head, std::uint64_t seed,
                                    const LayerwiseOptions& options = {});

void write_layerwise_csv(std::span<const LayerAuc> curve, std::ostream& out);

} // namespace tracemia
