#pragma once

#include "tracemia/feature_matrix.hpp"
#include "tracemia/random.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tracemia {

struct DenseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values; // row-major

    DenseMatrix() = default;
    DenseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

    std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
    std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
    double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }

    DenseMatrix select_rows(std::span<const std::size_t> picked) const;
};

// ---- standardization --------------------------------------------------------

struct ScalerParams {
    std::vector<double> mean;
    std::vector<double> std; // population
    std::size_t fitted_on = 0;

    bool empty() const { return mean.empty(); }
};

ScalerParams fit_scaler(const DenseMatrix& x, std::span<const std::size_t> rows);
// (x - mean) / std per column; zero-std columns map to 0.
DenseMatrix apply_scaler(const ScalerParams& params, const DenseMatrix& x);
void apply_scaler_row(const ScalerParams& params, std::span<const double> in, std::span<double> out);

// ---- trees ----------------------------------------------------------------

enum class MaxFeatures { sqrt, log2, frac30, frac50, frac80 };

std::string_view to_string(MaxFeatures strategy);
MaxFeatures parse_max_features(std::string_view text);
// Features tried per split: ceil(sqrt F), ceil(log2 F) or ceil(K F / 100), in [1, F].
std::size_t max_features_count(MaxFeatures strategy, std::size_t n_features);

struct RFHyperParams {
    int n_estimators = 100;
    int max_depth = 10;
    int min_samples_split = 2;
    int min_samples_leaf = 1;
    MaxFeatures max_features = MaxFeatures::sqrt;

    friend bool operator==(const RFHyperParams&, const RFHyperParams&) = default;
};

struct TreeNode {
    int feature = -1; // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;  // x[feature] <= threshold
    int right = -1;
    double value = 0.0; // fraction of class 1 among node samples
    std::uint32_t samples = 0;
    double impurity = 0.0;

    bool is_leaf() const { return feature < 0; }
};

struct DecisionTree {
    std::vector<TreeNode> nodes; // nodes[0] is the root

    double predict(std::span<const double> x) const;
    std::size_t depth() const;
};

// 1 - sum_c p_c^2 over binary labels.
double gini(std::span<const int> labels);

// Greedy CART on Gini impurity. `weights` are per-row multiplicities (a
// bootstrap draw); empty means every row once. Ties between equally good
// splits go to the lower feature index, then the lower threshold.
DecisionTree fit_tree(const DenseMatrix& x, std::span<const int> y, const RFHyperParams& hp, Rng& rng,
                      std::span<const std::uint32_t> weights = {});

// ---- forest ---------------------------------------------------------------

struct RandomForestModel {
    std::vector<DecisionTree> trees;
    RFHyperParams hyperparams;
    ScalerParams scaler; // applied to raw rows when non-empty
    std::vector<std::string> feature_names;
    std::uint64_t seed = 0;

    double predict_proba(std::span<const double> raw_row) const;
    std::vector<double> predict_proba(const DenseMatrix& raw) const;
};

// Per-tree generator seed.
std::uint64_t tree_seed(std::uint64_t master_seed, std::size_t tree_index);

// Each tree is fit on n rows drawn with replacement. Throws on single-class y.
RandomForestModel fit_forest(const DenseMatrix& x, std::span<const int> y, const RFHyperParams& hp,
                             std::uint64_t master_seed, unsigned workers = 1);

// Mean decrease in impurity, averaged over trees, normalized to sum 1.
std::vector<double> feature_importances(const RandomForestModel& model);

// ---- cross-validation -----------------------------------------------------

using Folds = std::vector<std::vector<std::size_t>>;

// k disjoint folds covering all indices; each class is spread round-robin so
// per-fold class counts are within 1 of proportional.
Folds stratified_kfold(std::span<const int> labels, std::size_t k, std::uint64_t seed);

struct TrainTestSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

TrainTestSplit stratified_split(std::span<const int> labels, double test_fraction, std::uint64_t seed);

RFHyperParams sample_hyperparams(Rng& rng);

// Receives every scaler fit and every scaled evaluation with row indices
// into the pipeline's member/nonmember matrix.
class ScalerAudit {
public:
    virtual ~ScalerAudit() = default;
    virtual void on_fit(std::string_view stage, std::span<const std::size_t> rows) = 0;
    virtual void on_evaluate(std::string_view stage, std::span<const std::size_t> rows) = 0;
};

struct SearchCandidate {
    RFHyperParams hyperparams;
    double mean_auc = 0.0;
};

struct SearchResult {
    RFHyperParams best;
    double best_score = 0.0;
    std::vector<SearchCandidate> candidates; // in sampling order
};

inline constexpr std::size_t kSearchIterations = 20;
inline constexpr std::size_t kInnerFolds = 3;
inline constexpr std::size_t kOuterFolds = 5;
inline constexpr double kTestFraction = 0.2;
inline constexpr std::uint64_t kDefaultSeed = 420;

// Samples n_iter configurations and scores each by mean inner-CV AUC (scaler
// refit on each inner training split). Returns the first best.
SearchResult randomized_search(const DenseMatrix& x_train, std::span<const int> y_train, std::size_t n_iter,
                               std::uint64_t seed, unsigned workers = 1, std::size_t inner_folds = kInnerFolds);

struct FoldResult {
    RFHyperParams hyperparams;
    double search_score = 0.0;
    double validation_auc = 0.0;
};

struct CVReport {
    std::vector<FoldResult> folds;
    RFHyperParams modal;
    double heldout_auc = 0.0;
    double fold_auc_mean = 0.0;
    double fold_auc_std = 0.0;
    std::size_t train_rows = 0;
    std::size_t test_rows = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> feature_names;
    std::vector<double> importances;
};

RFHyperParams modal_hyperparams(std::span<const RFHyperParams> chosen);

struct PipelineOptions {
    std::size_t n_iter = kSearchIterations;
    unsigned workers = 1;
    ScalerAudit* audit = nullptr;
};

struct PipelineResult {
    RandomForestModel model;
    CVReport report;
};

// Outer stratified CV with inner randomized search, then a final fit on a
// stratified 80% split with the modal hyperparameters. Neighbor rows are
// dropped; member = 1.
PipelineResult train_pipeline(const FeatureMatrix& matrix, std::uint64_t seed, const PipelineOptions& options = {});

// Fixed-hyperparameter variant: one stratified 80/20 split, no search.
PipelineResult train_fixed(const FeatureMatrix& matrix, std::uint64_t seed, const RFHyperParams& hp,
                           unsigned workers = 1);

DenseMatrix to_dense(const FeatureMatrix& matrix);
std::vector<int> member_labels(const FeatureMatrix& matrix);

// ---- persistence ----------------------------------------------------------

std::string model_to_json(const RandomForestModel& model);
RandomForestModel model_from_json(const std::string& text);
std::string report_to_json(const CVReport& report);

void save_text(const std::string& path, const std::string& text);
std::string load_text(const std::string& path);

} // namespace tracemia
