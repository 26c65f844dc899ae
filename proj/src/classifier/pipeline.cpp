#include "tracemia/classifier.hpp"

#include "tracemia/metrics.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace tracemia {

DenseMatrix to_dense(const FeatureMatrix& matrix) {
    DenseMatrix x;
    x.rows = matrix.rows();
    x.cols = matrix.cols();
    x.values = matrix.values;
    return x;
}

std::vector<int> member_labels(const FeatureMatrix& matrix) {
    std::vector<int> y;
    y.reserve(matrix.rows());
    for (Label l : matrix.labels) y.push_back(l == Label::member ? 1 : 0);
    return y;
}

namespace {

std::vector<std::size_t> map_rows(std::span<const std::size_t> local, std::span<const std::size_t> global) {
    std::vector<std::size_t> out;
    out.reserve(local.size());
    for (std::size_t i : local) out.push_back(global[i]);
    return out;
}

std::vector<int> pick(std::span<const int> y, std::span<const std::size_t> rows) {
    std::vector<int> out;
    out.reserve(rows.size());
    for (std::size_t r : rows) out.push_back(y[r]);
    return out;
}

struct Evaluation {
    RandomForestModel model;
    double auc = 0.0;
};

// Fits scaler + forest on `train` rows of the raw matrix and scores `eval`
// rows. `global` maps local row indices to pipeline row ids for the audit.
Evaluation fit_and_score(const DenseMatrix& raw, std::span<const int> y, std::span<const std::size_t> train,
                         std::span<const std::size_t> eval, const RFHyperParams& hp, std::uint64_t seed,
                         unsigned workers, ScalerAudit* audit, std::span<const std::size_t> global,
                         const std::string& stage) {
    if (audit) audit->on_fit(stage, map_rows(train, global));
    ScalerParams scaler = fit_scaler(raw, train);
    const DenseMatrix x_train = apply_scaler(scaler, raw.select_rows(train));
    const auto y_train = pick(y, train);
    Evaluation out;
    out.model = fit_forest(x_train, y_train, hp, seed, workers);
    out.model.scaler = std::move(scaler);
    if (!eval.empty()) {
        if (audit) audit->on_evaluate(stage, map_rows(eval, global));
        const auto scores = out.model.predict_proba(raw.select_rows(eval));
        out.auc = auc(scores, pick(y, eval));
    }
    return out;
}

SearchResult search_rows(const DenseMatrix& raw, std::span<const int> y, std::span<const std::size_t> rows,
                         std::size_t n_iter, std::uint64_t seed, unsigned workers, std::size_t inner_folds,
                         ScalerAudit* audit, std::span<const std::size_t> global, const std::string& stage) {
    if (n_iter == 0) throw std::invalid_argument("randomized_search needs n_iter >= 1");
    const auto y_rows = pick(y, rows);
    const Folds folds = stratified_kfold(y_rows, inner_folds, derive_seed(seed, 1));
    Rng sampler(derive_seed(seed, 2));
    SearchResult result;
    for (std::size_t it = 0; it < n_iter; ++it) {
        const RFHyperParams hp = sample_hyperparams(sampler);
        double total = 0.0;
        for (std::size_t f = 0; f < folds.size(); ++f) {
            std::vector<std::size_t> train, val;
            for (std::size_t g = 0; g < folds.size(); ++g) {
                for (std::size_t local : folds[g]) (g == f ? val : train).push_back(rows[local]);
            }
            const auto stage_name = stage + "/cand" + std::to_string(it) + "/inner" + std::to_string(f);
            total += fit_and_score(raw, y, train, val, hp, derive_seed(seed, 100 + it * 16 + f), workers, audit,
                                   global, stage_name)
                         .auc;
        }
        const double mean_auc = total / static_cast<double>(folds.size());
        result.candidates.push_back({hp, mean_auc});
        if (it == 0 || mean_auc > result.best_score) {
            result.best = hp;
            result.best_score = mean_auc;
        }
    }
    return result;
}

void check_binary(std::span<const int> y) {
    bool has0 = false, has1 = false;
    for (int v : y) (v != 0 ? has1 : has0) = true;
    if (!(has0 && has1)) throw std::invalid_argument("training needs both members and nonmembers");
}

} // namespace

SearchResult randomized_search(const DenseMatrix& x_train, std::span<const int> y_train, std::size_t n_iter,
                               std::uint64_t seed, unsigned workers, std::size_t inner_folds) {
    check_binary(y_train);
    std::vector<std::size_t> rows(x_train.rows);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return search_rows(x_train, y_train, rows, n_iter, seed, workers, inner_folds, nullptr, rows, "search");
}

PipelineResult train_pipeline(const FeatureMatrix& matrix, std::uint64_t seed, const PipelineOptions& options) {
    const FeatureMatrix data = matrix.select_labels({Label::member, Label::nonmember});
    const DenseMatrix raw = to_dense(data);
    const std::vector<int> y = member_labels(data);
    check_binary(y);
    std::vector<std::size_t> identity(raw.rows);
    std::iota(identity.begin(), identity.end(), std::size_t{0});

    PipelineResult result;
    CVReport& report = result.report;
    report.seed = seed;
    report.feature_names = data.names;

    const Folds outer = stratified_kfold(y, kOuterFolds, seed);
    std::vector<RFHyperParams> chosen;
    for (std::size_t f = 0; f < outer.size(); ++f) {
        std::vector<std::size_t> train;
        for (std::size_t g = 0; g < outer.size(); ++g) {
            if (g != f) train.insert(train.end(), outer[g].begin(), outer[g].end());
        }
        std::sort(train.begin(), train.end());
        const std::string stage = "outer" + std::to_string(f);
        const SearchResult search = search_rows(raw, y, train, options.n_iter, derive_seed(seed, 1000 + f),
                                                options.workers, kInnerFolds, options.audit, identity, stage);
        const Evaluation eval = fit_and_score(raw, y, train, outer[f], search.best, derive_seed(seed, 2000 + f),
                                              options.workers, options.audit, identity, stage + "/final");
        report.folds.push_back({search.best, search.best_score, eval.auc});
        chosen.push_back(search.best);
    }
    report.modal = modal_hyperparams(chosen);

    double sum = 0.0;
    for (const auto& f : report.folds) sum += f.validation_auc;
    report.fold_auc_mean = sum / static_cast<double>(report.folds.size());
    double ss = 0.0;
    for (const auto& f : report.folds) ss += (f.validation_auc - report.fold_auc_mean) * (f.validation_auc - report.fold_auc_mean);
    report.fold_auc_std = std::sqrt(ss / static_cast<double>(report.folds.size()));

    const TrainTestSplit split = stratified_split(y, kTestFraction, derive_seed(seed, 3000));
    Evaluation final_fit = fit_and_score(raw, y, split.train, split.test, report.modal, derive_seed(seed, 4000),
                                         options.workers, options.audit, identity, "heldout");
    report.heldout_auc = final_fit.auc;
    report.train_rows = split.train.size();
    report.test_rows = split.test.size();
    result.model = std::move(final_fit.model);
    result.model.feature_names = data.names;
    report.importances = feature_importances(result.model);
    return result;
}

PipelineResult train_fixed(const FeatureMatrix& matrix, std::uint64_t seed, const RFHyperParams& hp,
                           unsigned workers) {
    const FeatureMatrix data = matrix.select_labels({Label::member, Label::nonmember});
    const DenseMatrix raw = to_dense(data);
    const std::vector<int> y = member_labels(data);
    check_binary(y);
    std::vector<std::size_t> identity(raw.rows);
    std::iota(identity.begin(), identity.end(), std::size_t{0});
    const TrainTestSplit split = stratified_split(y, kTestFraction, derive_seed(seed, 3000));
    Evaluation fit = fit_and_score(raw, y, split.train, split.test, hp, derive_seed(seed, 4000), workers, nullptr,
                                   identity, "heldout");
    PipelineResult result;
    result.report.seed = seed;
    result.report.modal = hp;
    result.report.heldout_auc = fit.auc;
    result.report.train_rows = split.train.size();
    result.report.test_rows = split.test.size();
    result.report.feature_names = data.names;
    result.model = std::move(fit.model);
    result.model.feature_names = data.names;
    result.report.importances = feature_importances(result.model);
    return result;
}

} // namespace tracemia
