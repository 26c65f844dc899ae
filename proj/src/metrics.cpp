#include "tracemia/metrics.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace tracemia {

double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Twice the positive rank sum stays integral with averaged tie ranks.
    std::int64_t twice_rank_sum = 0;
    std::int64_t positives = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const auto twice_avg_rank = static_cast<std::int64_t>(i + 1 + j + 1);
        for (std::size_t k = i; k <= j; ++k) {
            if (labels[order[k]] != 0) {
                twice_rank_sum += twice_avg_rank;
                ++positives;
            }
        }
        i = j + 1;
    }
    const std::int64_t negatives = static_cast<std::int64_t>(n) - positives;
    if (positives == 0 || negatives == 0) throw std::invalid_argument("auc needs both classes");
    const std::int64_t twice_u = twice_rank_sum - positives * (positives + 1);
    return static_cast<double>(twice_u) / static_cast<double>(2 * positives * negatives);
}

PrecisionRecall precision_recall(std::span<const double> scores, std::span<const int> labels, double threshold) {
    if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
    PrecisionRecall pr;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool predicted = scores[i] >= threshold;
        const bool actual = labels[i] != 0;
        if (predicted && actual) ++pr.true_positives;
        else if (predicted) ++pr.false_positives;
        else if (actual) ++pr.false_negatives;
        else ++pr.true_negatives;
    }
    if (pr.true_positives + pr.false_positives > 0) {
        pr.precision = static_cast<double>(pr.true_positives) /
                       static_cast<double>(pr.true_positives + pr.false_positives);
    }
    const auto actual_pos = pr.true_positives + pr.false_negatives;
    pr.recall = actual_pos > 0 ? static_cast<double>(pr.true_positives) / static_cast<double>(actual_pos) : 0.0;
    return pr;
}

} // namespace tracemia
