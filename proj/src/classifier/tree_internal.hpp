#pragma once

#include "tracemia/classifier.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>

namespace tracemia::detail {

// Feature-major copy of a design matrix. Per column it also holds the dense
// rank of every row (equal values share a rank) and the sort keys
// (rank << 32 | row) in ascending order, shared by all trees of a forest.
struct ColumnMajor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;
    std::vector<std::uint32_t> ranks;
    std::vector<std::uint64_t> keys;

    explicit ColumnMajor(const DenseMatrix& x)
        : rows(x.rows), cols(x.cols), values(x.rows * x.cols), ranks(x.rows * x.cols), keys(x.rows * x.cols) {
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) values[c * rows + r] = x.at(r, c);
        }
        std::vector<std::uint32_t> order(rows);
        for (std::size_t c = 0; c < cols; ++c) {
            const double* col = column(c);
            std::iota(order.begin(), order.end(), std::uint32_t{0});
            std::stable_sort(order.begin(), order.end(),
                             [col](std::uint32_t a, std::uint32_t b) { return col[a] < col[b]; });
            std::uint32_t rank = 0;
            for (std::size_t i = 0; i < rows; ++i) {
                if (i > 0 && col[order[i]] != col[order[i - 1]]) ++rank;
                ranks[c * rows + order[i]] = rank;
                keys[c * rows + i] = (std::uint64_t{rank} << 32) | order[i];
            }
        }
    }
    const double* column(std::size_t c) const { return values.data() + c * rows; }
    const std::uint32_t* rank_of(std::size_t c) const { return ranks.data() + c * rows; }
    const std::uint64_t* sorted_keys(std::size_t c) const { return keys.data() + c * rows; }
};

inline std::uint32_t key_row(std::uint64_t key) { return static_cast<std::uint32_t>(key); }
inline std::uint32_t key_rank(std::uint64_t key) { return static_cast<std::uint32_t>(key >> 32); }

DecisionTree fit_tree_columns(const ColumnMajor& x, std::span<const int> y, const RFHyperParams& hp, Rng& rng,
                              std::span<const std::uint32_t> weights);

} // namespace tracemia::detail
