#include "tracemia/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tracemia {

Folds stratified_kfold(std::span<const int> labels, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("stratified_kfold needs k >= 2");
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i] != 0 ? 1 : 0].push_back(i);
    for (int c = 0; c < 2; ++c) {
        if (by_class[c].size() < k) {
            throw std::invalid_argument("class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                                        " member(s), fewer than " + std::to_string(k) + " folds");
        }
    }
    Rng rng(seed);
    Folds folds(k);
    std::size_t next = 0; // continue the round-robin across classes to balance fold sizes
    for (int c = 0; c < 2; ++c) {
        auto& idx = by_class[c];
        rng.shuffle(idx.begin(), idx.end());
        for (std::size_t i : idx) {
            folds[next].push_back(i);
            next = (next + 1) % k;
        }
    }
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

TrainTestSplit stratified_split(std::span<const int> labels, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw std::invalid_argument("test_fraction must be in (0,1)");
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i] != 0 ? 1 : 0].push_back(i);
    Rng rng(seed);
    TrainTestSplit split;
    for (int c = 0; c < 2; ++c) {
        auto& idx = by_class[c];
        if (idx.size() < 2) throw std::invalid_argument("each class needs at least 2 rows for a train/test split");
        rng.shuffle(idx.begin(), idx.end());
        auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
        n_test = std::clamp<std::size_t>(n_test, 1, idx.size() - 1);
        split.test.insert(split.test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
        split.train.insert(split.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

RFHyperParams sample_hyperparams(Rng& rng) {
    static constexpr int splits[] = {2, 5, 10};
    static constexpr int leaves[] = {1, 2, 4};
    static constexpr MaxFeatures strategies[] = {MaxFeatures::sqrt, MaxFeatures::log2, MaxFeatures::frac30,
                                                 MaxFeatures::frac50, MaxFeatures::frac80};
    RFHyperParams hp;
    hp.n_estimators = static_cast<int>(rng.between(100, 400));
    hp.max_depth = static_cast<int>(rng.between(3, 10));
    hp.min_samples_split = splits[rng.below(3)];
    hp.min_samples_leaf = leaves[rng.below(3)];
    hp.max_features = strategies[rng.below(5)];
    return hp;
}

namespace {

template <class T>
T modal_value(std::vector<T> values) {
    // Most frequent; ties go to the smallest (enum order for strategies).
    std::sort(values.begin(), values.end());
    T best = values.front();
    std::size_t best_count = 0;
    for (std::size_t i = 0; i < values.size();) {
        std::size_t j = i;
        while (j < values.size() && values[j] == values[i]) ++j;
        if (j - i > best_count) {
            best_count = j - i;
            best = values[i];
        }
        i = j;
    }
    return best;
}

} // namespace

RFHyperParams modal_hyperparams(std::span<const RFHyperParams> chosen) {
    if (chosen.empty()) throw std::invalid_argument("no hyperparameters to summarize");
    auto collect = [&](auto field) {
        std::vector<std::decay_t<decltype(chosen[0].*field)>> out;
        for (const auto& hp : chosen) out.push_back(hp.*field);
        return modal_value(std::move(out));
    };
    RFHyperParams out;
    out.n_estimators = collect(&RFHyperParams::n_estimators);
    out.max_depth = collect(&RFHyperParams::max_depth);
    out.min_samples_split = collect(&RFHyperParams::min_samples_split);
    out.min_samples_leaf = collect(&RFHyperParams::min_samples_leaf);
    out.max_features = collect(&RFHyperParams::max_features);
    return out;
}

} // namespace tracemia
