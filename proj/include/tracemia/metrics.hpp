#pragma once

#include <cstddef>
#include <optional>
#include <span>

namespace tracemia {

// Mann-Whitney AUC: probability a positive outscores a negative, ties 1/2.
// labels: nonzero = positive. Throws std::invalid_argument unless both
// classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);

struct PrecisionRecall {
    std::optional<double> precision; // absent when nothing is predicted positive
    double recall = 0.0;
    std::size_t true_positives = 0;
    std::size_t false_positives = 0;
    std::size_t false_negatives = 0;
    std::size_t true_negatives = 0;
};

// Predicts positive iff score >= threshold.
PrecisionRecall precision_recall(std::span<const double> scores, std::span<const int> labels, double threshold);

} // namespace tracemia
