#include "tracemia/evaluation.hpp"

#include "json.hpp"

#include <algorithm>
#include <ostream>
#include <stdexcept>

namespace tracemia {

std::vector<double> score_matrix(const RandomForestModel& model, const FeatureMatrix& matrix) {
    if (model.feature_names != matrix.names) {
        throw std::invalid_argument("feature columns do not match the model's feature names");
    }
    return model.predict_proba(to_dense(matrix));
}

namespace {

EvalSummary summarize_scores(const std::vector<double>& scores, const std::vector<int>& y, double threshold,
                             std::string positive_label) {
    EvalSummary s;
    s.threshold = threshold;
    s.positive_label = std::move(positive_label);
    for (int v : y) (v ? s.positives : s.negatives) += 1;
    if (s.positives > 0 && s.negatives > 0) s.auc = auc(scores, y);
    s.pr = precision_recall(scores, y, threshold);
    return s;
}

} // namespace

EvalSummary evaluate_model(const RandomForestModel& model, const FeatureMatrix& matrix, double threshold) {
    const FeatureMatrix data = matrix.select_labels({Label::member, Label::nonmember});
    if (data.rows() == 0) throw std::invalid_argument("no member or nonmember rows to evaluate");
    return summarize_scores(score_matrix(model, data), member_labels(data), threshold, "member");
}

EvalSummary evaluate_neighbors(const RandomForestModel& model, const FeatureMatrix& matrix, double threshold) {
    const FeatureMatrix data = matrix.select_labels({Label::neighbor, Label::nonmember});
    std::vector<int> y;
    for (Label l : data.labels) y.push_back(l == Label::neighbor ? 1 : 0);
    if (std::find(y.begin(), y.end(), 1) == y.end()) throw std::invalid_argument("no neighbor rows to evaluate");
    return summarize_scores(score_matrix(model, data), y, threshold, "neighbor");
}

std::string eval_to_json(const EvalSummary& s) {
    nlohmann::ordered_json j;
    j["positive_label"] = s.positive_label;
    j["threshold"] = s.threshold;
    j["auc"] = s.auc ? nlohmann::ordered_json(*s.auc) : nlohmann::ordered_json(nullptr);
    j["precision"] = s.pr.precision ? nlohmann::ordered_json(*s.pr.precision) : nlohmann::ordered_json(nullptr);
    j["recall"] = s.pr.recall;
    j["counts"] = {{"positives", s.positives},
                   {"negatives", s.negatives},
                   {"true_positives", s.pr.true_positives},
                   {"false_positives", s.pr.false_positives},
                   {"false_negatives", s.pr.false_negatives},
                   {"true_negatives", s.pr.true_negatives}};
    return j.dump(1) + "\n";
}

std::vector<LayerAuc> layerwise_auc(const FeatureMatrix& matrix, std::uint64_t seed, const LayerwiseOptions& options) {
    std::size_t max_tag = 0;
    for (const auto& n : matrix.names) {
        if (const auto tag = feature_layer_tag(n)) max_tag = std::max(max_tag, *tag);
    }
    std::vector<LayerAuc> curve;
    for (std::size_t layer = 0; layer <= max_tag; ++layer) {
        const FeatureMatrix sub = filter_layer(matrix, layer);
        double heldout = 0.0;
        if (options.full_pipeline) {
            PipelineOptions po;
            po.n_iter = options.n_iter;
            po.workers = options.workers;
            heldout = train_pipeline(sub, seed, po).report.heldout_auc;
        } else {
            heldout = train_fixed(sub, seed, options.fixed, options.workers).report.heldout_auc;
        }
        curve.push_back({layer, heldout});
    }
    return curve;
}

std::vector<LayerAuc> layerwise_auc(const DatasetManifest& manifest, const ModelHead& head, std::uint64_t seed,
                                    const LayerwiseOptions& options) {
    ExtractOptions eo;
    eo.workers = options.workers;
    return layerwise_auc(extract_matrix(manifest, head, eo), seed, options);
}

void write_layerwise_csv(std::span<const LayerAuc> curve, std::ostream& out) {
    out << "layer,auc\n";
    for (const auto& p : curve) out << p.layer << ',' << format_real(p.auc) << '\n';
    if (!out) throw std::runtime_error("write failure");
}

} // namespace tracemia
