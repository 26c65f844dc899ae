#include "tree_internal.hpp"

#include "tracemia/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace tracemia {

std::string_view to_string(MaxFeatures strategy) {
    switch (strategy) {
    case MaxFeatures::sqrt: return "sqrt";
    case MaxFeatures::log2: return "log2";
    case MaxFeatures::frac30: return "frac30";
    case MaxFeatures::frac50: return "frac50";
    case MaxFeatures::frac80: return "frac80";
    }
    return "?";
}

MaxFeatures parse_max_features(std::string_view text) {
    for (auto s : {MaxFeatures::sqrt, MaxFeatures::log2, MaxFeatures::frac30, MaxFeatures::frac50,
                   MaxFeatures::frac80}) {
        if (to_string(s) == text) return s;
    }
    throw std::invalid_argument("unknown max_features strategy \"" + std::string(text) + "\"");
}

std::size_t max_features_count(MaxFeatures strategy, std::size_t n_features) {
    if (n_features == 0) return 0;
    const double f = static_cast<double>(n_features);
    double k = 1.0;
    switch (strategy) {
    case MaxFeatures::sqrt: k = std::ceil(std::sqrt(f)); break;
    case MaxFeatures::log2: k = std::ceil(std::log2(f)); break;
    case MaxFeatures::frac30: k = std::ceil(0.30 * f - 1e-9); break;
    case MaxFeatures::frac50: k = std::ceil(0.50 * f - 1e-9); break;
    case MaxFeatures::frac80: k = std::ceil(0.80 * f - 1e-9); break;
    }
    return std::clamp<std::size_t>(static_cast<std::size_t>(k), 1, n_features);
}

double gini(std::span<const int> labels) {
    if (labels.empty()) throw std::invalid_argument("gini of empty set");
    double ones = 0.0;
    for (int v : labels) ones += v != 0 ? 1.0 : 0.0;
    const double p1 = ones / static_cast<double>(labels.size());
    const double p0 = 1.0 - p1;
    return 1.0 - (p0 * p0 + p1 * p1);
}

double DecisionTree::predict(std::span<const double> x) const {
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) {
        const auto& n = nodes[i];
        i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
    }
    return nodes[i].value;
}

std::size_t DecisionTree::depth() const {
    std::vector<std::size_t> depth_of(nodes.size(), 0);
    std::size_t best = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        best = std::max(best, depth_of[i]);
        if (!nodes[i].is_leaf()) {
            depth_of[static_cast<std::size_t>(nodes[i].left)] = depth_of[i] + 1;
            depth_of[static_cast<std::size_t>(nodes[i].right)] = depth_of[i] + 1;
        }
    }
    return best;
}

namespace detail {

namespace {

struct Sample {
    std::uint32_t row;
    std::uint32_t weight;
    int label;
};

// Depth-first CART over sort keys (rank << 32 | row). Large nodes keep every
// feature's keys in sorted order in one contiguous range and stably partition
// all ranges at each split. Smaller nodes get the keys of each sampled feature
// either by sorting them or by filtering the presorted column, whichever is
// cheaper.
class TreeBuilder {
public:
    TreeBuilder(const ColumnMajor& x, const RFHyperParams& hp, Rng& rng)
        : x_(x), hp_(hp), rng_(rng), pool_(x.cols), k_(max_features_count(hp.max_features, x.cols)),
          stats_(x.rows), in_bag_(x.rows, 0), in_node_(x.rows, 0), goes_left_(x.rows, 0) {
        std::iota(pool_.begin(), pool_.end(), std::size_t{0});
    }

    DecisionTree build(const std::vector<Sample>& samples) {
        for (const auto& s : samples) {
            stats_[s.row] = {std::int64_t{s.weight}, s.label ? std::int64_t{s.weight} : 0};
            in_bag_[s.row] = 1;
        }
        count_ = samples.size();
        rows_.resize(count_);
        work_.resize(std::max(count_, x_.rows) + 1); // slack slot for the branchless filter
        left_n_.resize(count_);
        left_ones_.resize(count_);

        if (prefer_sorting(count_)) {
            for (std::size_t i = 0; i < count_; ++i) rows_[i] = samples[i].row;
            grow_sorted(0, count_, 0);
            return std::move(tree_);
        }
        lists_.resize(x_.cols * count_ + 1); // one slack slot for the branchless fill
        for (std::size_t f = 0; f < x_.cols; ++f) {
            const std::uint64_t* keys = x_.sorted_keys(f);
            std::uint64_t* out = list(f);
            std::size_t j = 0;
            for (std::size_t i = 0; i + 1 < x_.rows; ++i) {
                out[j] = keys[i];
                j += in_bag_[key_row(keys[i])];
            }
            if (in_bag_[key_row(keys[x_.rows - 1])]) out[j] = keys[x_.rows - 1];
        }
        grow(0, count_, 0);
        return std::move(tree_);
    }

private:
    struct RowStats {
        std::int64_t weight = 0;
        std::int64_t ones = 0; // weight if the label is 1
    };

    struct Split {
        bool found = false;
        // sum over children of c1^2 / n_child; larger is better. Equals
        // (n - 2 * ones + sum of (c0^2 + c1^2) / n_child) / 2, so it ranks splits
        // exactly like weighted Gini.
        double score = 0.0;
        std::size_t feature = 0;
        double threshold = 0.0;
    };

    std::uint64_t* list(std::size_t f) { return lists_.data() + f * count_; }

    // Sorting k columns per node beats partitioning every column once the
    // node is small or k is a small share of the columns.
    bool prefer_sorting(std::size_t count) const {
        return static_cast<double>(k_) * std::log2(static_cast<double>(count) + 1.0) < static_cast<double>(x_.cols);
    }

    // Approximate cycles to order one feature of a node by sorting its keys
    // or by filtering the presorted column.
    static double sort_cost(std::size_t count) {
        return 12.0 * static_cast<double>(count) * std::log2(static_cast<double>(count) + 1.0);
    }
    double filter_cost() const { return 2.6 * static_cast<double>(x_.rows); }

    // Appends the node; returns its index, or -1 if it must stay a leaf.
    template <class RowAt>
    int open_node(std::size_t count, RowAt row_at, int depth, double& n, double& ones) {
        std::int64_t total = 0, total_ones = 0;
        for (std::size_t i = 0; i < count; ++i) {
            const RowStats& st = stats_[row_at(i)];
            total += st.weight;
            total_ones += st.ones;
        }
        n = static_cast<double>(total);
        ones = static_cast<double>(total_ones);
        TreeNode node;
        node.value = ones / n;
        node.samples = static_cast<std::uint32_t>(n);
        const double p1 = node.value;
        node.impurity = 1.0 - (p1 * p1 + (1.0 - p1) * (1.0 - p1));
        tree_.nodes.push_back(node);
        const bool pure = ones == 0.0 || ones == n;
        if (pure || depth >= hp_.max_depth || n < hp_.min_samples_split) return -1;
        return static_cast<int>(tree_.nodes.size()) - 1;
    }

    int close_node(int index, const Split& split, int left, int right) {
        auto& stored = tree_.nodes[static_cast<std::size_t>(index)];
        stored.feature = static_cast<int>(split.feature);
        stored.threshold = split.threshold;
        stored.left = left;
        stored.right = right;
        return index;
    }

    int grow_sorted(std::size_t begin, std::size_t end, int depth) {
        double n, ones;
        const int index = open_node(end - begin, [&](std::size_t i) { return rows_[begin + i]; }, depth, n, ones);
        if (index < 0) return static_cast<int>(tree_.nodes.size()) - 1;
        draw_features();
        Split best;
        const std::size_t count = end - begin;
        const bool filter = filter_cost() < sort_cost(count);
        if (filter) {
            for (std::size_t i = begin; i < end; ++i) in_node_[rows_[i]] = 1;
        }
        for (std::size_t fi = 0; fi < k_; ++fi) {
            const std::size_t f = pool_[fi];
            if (filter) {
                // keep the node's rows from the presorted column
                const std::uint64_t* keys = x_.sorted_keys(f);
                std::size_t j = 0;
                for (std::size_t i = 0; i < x_.rows; ++i) {
                    work_[j] = keys[i];
                    j += in_node_[key_row(keys[i])];
                }
            } else {
                const std::uint32_t* rank = x_.rank_of(f);
                for (std::size_t i = 0; i < count; ++i) {
                    const std::uint32_t r = rows_[begin + i];
                    work_[i] = (std::uint64_t{rank[r]} << 32) | r;
                }
                std::sort(work_.begin(), work_.begin() + static_cast<std::ptrdiff_t>(count));
            }
            scan_feature(f, work_.data(), count, n, ones, best);
        }
        if (filter) {
            for (std::size_t i = begin; i < end; ++i) in_node_[rows_[i]] = 0;
        }
        if (!best.found) return index;
        const double* col = x_.column(best.feature);
        auto mid = std::partition(rows_.begin() + static_cast<std::ptrdiff_t>(begin),
                                  rows_.begin() + static_cast<std::ptrdiff_t>(end),
                                  [&](std::uint32_t r) { return col[r] <= best.threshold; });
        const auto middle = static_cast<std::size_t>(mid - rows_.begin());
        const int left = grow_sorted(begin, middle, depth + 1);
        const int right = grow_sorted(middle, end, depth + 1);
        return close_node(index, best, left, right);
    }

    int grow(std::size_t begin, std::size_t end, int depth) {
        if (prefer_sorting(end - begin)) {
            const std::uint64_t* keys = list(0);
            for (std::size_t i = begin; i < end; ++i) rows_[i] = key_row(keys[i]);
            return grow_sorted(begin, end, depth);
        }
        const std::uint64_t* keys0 = list(0) + begin;
        double n, ones;
        const int index = open_node(end - begin, [&](std::size_t i) { return key_row(keys0[i]); }, depth, n, ones);
        if (index < 0) return static_cast<int>(tree_.nodes.size()) - 1;
        draw_features();
        Split best;
        for (std::size_t fi = 0; fi < k_; ++fi) {
            const std::size_t f = pool_[fi];
            scan_feature(f, list(f) + begin, end - begin, n, ones, best);
        }
        if (!best.found) return index;

        const double* col = x_.column(best.feature);
        std::size_t n_left = 0;
        for (std::size_t i = begin; i < end; ++i) {
            const std::uint32_t r = key_row(keys0[i - begin]);
            goes_left_[r] = col[r] <= best.threshold ? 1 : 0;
            n_left += goes_left_[r];
        }
        for (std::size_t f = 0; f < x_.cols; ++f) {
            std::uint64_t* l = list(f);
            std::size_t a = begin, b = 0;
            for (std::size_t i = begin; i < end; ++i) {
                const std::uint64_t key = l[i];
                const std::size_t g = goes_left_[key_row(key)];
                l[a] = key;
                work_[b] = key;
                a += g;
                b += 1 - g;
            }
            std::copy(work_.begin(), work_.begin() + static_cast<std::ptrdiff_t>(b), l + a);
        }
        const std::size_t middle = begin + n_left;
        const int left = grow(begin, middle, depth + 1);
        const int right = grow(middle, end, depth + 1);
        return close_node(index, best, left, right);
    }

    void draw_features() {
        // Partial Fisher-Yates draws k distinct features.
        for (std::size_t i = 0; i < k_; ++i) {
            const std::size_t j = i + rng_.below(pool_.size() - i);
            std::swap(pool_[i], pool_[j]);
        }
    }

    // Scans keys sorted by feature f and updates best. Within a feature the
    // first best threshold wins; across features ties go to the lower index.
    void scan_feature(std::size_t f, const std::uint64_t* keys, std::size_t count, double n, double ones,
                      Split& best) {
        if (key_rank(keys[0]) == key_rank(keys[count - 1])) return;
        const std::int64_t min_leaf = hp_.min_samples_leaf;
        const auto total = static_cast<std::int64_t>(n);
        const double not_candidate = std::numeric_limits<double>::quiet_NaN();
        std::int64_t left_count = 0, left_count_ones = 0;
        for (std::size_t i = 0; i + 1 < count; ++i) {
            const RowStats& st = stats_[key_row(keys[i])];
            left_count += st.weight;
            left_count_ones += st.ones;
            const bool candidate = (key_rank(keys[i]) != key_rank(keys[i + 1])) & (left_count >= min_leaf) &
                                   (total - left_count >= min_leaf);
            left_n_[i] = candidate ? static_cast<double>(left_count) : not_candidate;
            left_ones_[i] = static_cast<double>(left_count_ones);
        }
        double score = 0.0;
        const std::size_t at = split_argmax_(left_n_.data(), left_ones_.data(), count - 1, n, ones, &score);
        if (at == count - 1) return;
        if (best.found && (score < best.score || (score == best.score && f > best.feature))) return;
        const double* col = x_.column(f);
        best = {true, score, f, 0.5 * (col[key_row(keys[at])] + col[key_row(keys[at + 1])])};
    }

    const ColumnMajor& x_;
    const RFHyperParams& hp_;
    Rng& rng_;
    std::vector<std::size_t> pool_;
    std::size_t k_;
    std::vector<RowStats> stats_;
    std::vector<std::uint8_t> in_bag_;
    std::vector<std::uint8_t> in_node_;
    std::vector<std::uint8_t> goes_left_;
    std::size_t count_ = 0;
    std::vector<std::uint64_t> lists_; // cols x count_
    std::vector<std::uint64_t> work_;
    std::vector<double> left_n_;
    std::vector<double> left_ones_;
    decltype(kernels::KernelTable::split_argmax) split_argmax_ = kernels::active().split_argmax;
    std::vector<std::uint32_t> rows_;

    DecisionTree tree_;
};

} // namespace

DecisionTree fit_tree_columns(const ColumnMajor& x, std::span<const int> y, const RFHyperParams& hp, Rng& rng,
                              std::span<const std::uint32_t> weights) {
    if (x.rows == 0) throw std::invalid_argument("fit_tree needs at least one row");
    if (y.size() != x.rows) throw std::invalid_argument("label count differs from row count");
    if (!weights.empty() && weights.size() != x.rows) throw std::invalid_argument("weight count differs from row count");
    std::vector<Sample> samples;
    samples.reserve(x.rows);
    for (std::size_t r = 0; r < x.rows; ++r) {
        const std::uint32_t w = weights.empty() ? 1u : weights[r];
        if (w > 0) samples.push_back({static_cast<std::uint32_t>(r), w, y[r] != 0 ? 1 : 0});
    }
    if (samples.empty()) throw std::invalid_argument("fit_tree: all weights are zero");
    return TreeBuilder(x, hp, rng).build(samples);
}

} // namespace detail

DecisionTree fit_tree(const DenseMatrix& x, std::span<const int> y, const RFHyperParams& hp, Rng& rng,
                      std::span<const std::uint32_t> weights) {
    return detail::fit_tree_columns(detail::ColumnMajor(x), y, hp, rng, weights);
}

} // namespace tracemia
