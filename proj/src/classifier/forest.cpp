#include "tree_internal.hpp"

#include "tracemia/parallel.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace tracemia {

DenseMatrix DenseMatrix::select_rows(std::span<const std::size_t> picked) const {
    DenseMatrix out(picked.size(), cols);
    for (std::size_t i = 0; i < picked.size(); ++i) {
        const auto src = row(picked[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

ScalerParams fit_scaler(const DenseMatrix& x, std::span<const std::size_t> rows) {
    if (rows.empty()) throw std::invalid_argument("fit_scaler needs at least one row");
    ScalerParams p;
    p.mean.assign(x.cols, 0.0);
    p.std.assign(x.cols, 0.0);
    p.fitted_on = rows.size();
    const double n = static_cast<double>(rows.size());
    for (std::size_t r : rows) {
        for (std::size_t c = 0; c < x.cols; ++c) p.mean[c] += x.at(r, c);
    }
    for (auto& m : p.mean) m /= n;
    for (std::size_t r : rows) {
        for (std::size_t c = 0; c < x.cols; ++c) {
            const double dev = x.at(r, c) - p.mean[c];
            p.std[c] += dev * dev;
        }
    }
    for (auto& s : p.std) s = std::sqrt(s / n);
    return p;
}

void apply_scaler_row(const ScalerParams& params, std::span<const double> in, std::span<double> out) {
    if (in.size() != params.mean.size()) throw std::invalid_argument("scaler width differs from row width");
    for (std::size_t c = 0; c < in.size(); ++c) {
        out[c] = params.std[c] > 0.0 ? (in[c] - params.mean[c]) / params.std[c] : 0.0;
    }
}

DenseMatrix apply_scaler(const ScalerParams& params, const DenseMatrix& x) {
    DenseMatrix out(x.rows, x.cols);
    for (std::size_t r = 0; r < x.rows; ++r) apply_scaler_row(params, x.row(r), out.row(r));
    return out;
}

double RandomForestModel::predict_proba(std::span<const double> raw_row) const {
    std::vector<double> scaled;
    std::span<const double> x = raw_row;
    if (!scaler.empty()) {
        scaled.resize(raw_row.size());
        apply_scaler_row(scaler, raw_row, scaled);
        x = scaled;
    }
    double total = 0.0;
    for (const auto& t : trees) total += t.predict(x);
    return total / static_cast<double>(trees.size());
}

std::vector<double> RandomForestModel::predict_proba(const DenseMatrix& raw) const {
    std::vector<double> out(raw.rows);
    for (std::size_t r = 0; r < raw.rows; ++r) out[r] = predict_proba(raw.row(r));
    return out;
}

std::uint64_t tree_seed(std::uint64_t master_seed, std::size_t tree_index) {
    return derive_seed(master_seed, 0x7472656500000000ULL + tree_index);
}

RandomForestModel fit_forest(const DenseMatrix& x, std::span<const int> y, const RFHyperParams& hp,
                             std::uint64_t master_seed, unsigned workers) {
    if (x.rows == 0 || y.size() != x.rows) throw std::invalid_argument("fit_forest: bad input shape");
    bool has0 = false, has1 = false;
    for (int v : y) (v != 0 ? has1 : has0) = true;
    if (!(has0 && has1)) throw std::invalid_argument("fit_forest needs both classes");
    if (hp.n_estimators < 1) throw std::invalid_argument("n_estimators must be positive");

    const detail::ColumnMajor columns(x);
    RandomForestModel model;
    model.hyperparams = hp;
    model.seed = master_seed;
    model.trees.resize(static_cast<std::size_t>(hp.n_estimators));
    parallel_for(model.trees.size(), workers, [&](std::size_t t) {
        Rng rng(tree_seed(master_seed, t));
        std::vector<std::uint32_t> counts(x.rows, 0);
        for (std::size_t i = 0; i < x.rows; ++i) ++counts[rng.below(x.rows)];
        model.trees[t] = detail::fit_tree_columns(columns, y, hp, rng, counts);
    });
    return model;
}

std::vector<double> feature_importances(const RandomForestModel& model) {
    std::size_t n_features = model.feature_names.size();
    if (n_features == 0) n_features = model.scaler.mean.size();
    for (const auto& t : model.trees) {
        for (const auto& n : t.nodes) {
            if (!n.is_leaf()) n_features = std::max(n_features, static_cast<std::size_t>(n.feature) + 1);
        }
    }
    std::vector<double> total(n_features, 0.0);
    for (const auto& t : model.trees) {
        const double root = t.nodes.front().samples;
        for (const auto& n : t.nodes) {
            if (n.is_leaf()) continue;
            const auto& l = t.nodes[static_cast<std::size_t>(n.left)];
            const auto& r = t.nodes[static_cast<std::size_t>(n.right)];
            const double decrease = n.samples * n.impurity - l.samples * l.impurity - r.samples * r.impurity;
            total[static_cast<std::size_t>(n.feature)] += decrease / root;
        }
    }
    for (auto& v : total) v /= static_cast<double>(std::max<std::size_t>(model.trees.size(), 1));
    const double sum = std::accumulate(total.begin(), total.end(), 0.0);
    if (sum > 0.0) {
        for (auto& v : total) v /= sum;
    } else if (n_features > 0) {
        std::fill(total.begin(), total.end(), 1.0 / static_cast<double>(n_features));
    }
    return total;
}

} // namespace tracemia
