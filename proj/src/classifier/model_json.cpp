#include "tracemia/classifier.hpp"

#include "json.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tracemia {

using ordered_json = nlohmann::ordered_json;

namespace {

ordered_json hp_to_json(const RFHyperParams& hp) {
    ordered_json j;
    j["n_estimators"] = hp.n_estimators;
    j["max_depth"] = hp.max_depth;
    j["min_samples_split"] = hp.min_samples_split;
    j["min_samples_leaf"] = hp.min_samples_leaf;
    j["max_features"] = std::string(to_string(hp.max_features));
    return j;
}

RFHyperParams hp_from_json(const ordered_json& j) {
    RFHyperParams hp;
    hp.n_estimators = j.at("n_estimators").get<int>();
    hp.max_depth = j.at("max_depth").get<int>();
    hp.min_samples_split = j.at("min_samples_split").get<int>();
    hp.min_samples_leaf = j.at("min_samples_leaf").get<int>();
    hp.max_features = parse_max_features(j.at("max_features").get<std::string>());
    return hp;
}

} // namespace

std::string model_to_json(const RandomForestModel& model) {
    ordered_json j;
    j["format"] = "tracemia-random-forest";
    j["version"] = 1;
    j["seed"] = model.seed;
    j["hyperparams"] = hp_to_json(model.hyperparams);
    j["feature_names"] = model.feature_names;
    j["scaler"] = {{"mean", model.scaler.mean}, {"std", model.scaler.std}, {"fitted_on", model.scaler.fitted_on}};
    ordered_json trees = ordered_json::array();
    for (const auto& t : model.trees) {
        ordered_json feature = ordered_json::array(), threshold = ordered_json::array(), left = ordered_json::array(),
                     right = ordered_json::array(), value = ordered_json::array(), samples = ordered_json::array(),
                     impurity = ordered_json::array();
        for (const auto& n : t.nodes) {
            feature.push_back(n.feature);
            threshold.push_back(n.threshold);
            left.push_back(n.left);
            right.push_back(n.right);
            value.push_back(n.value);
            samples.push_back(n.samples);
            impurity.push_back(n.impurity);
        }
        trees.push_back({{"feature", feature},
                         {"threshold", threshold},
                         {"left", left},
                         {"right", right},
                         {"value", value},
                         {"samples", samples},
                         {"impurity", impurity}});
    }
    j["trees"] = std::move(trees);
    return j.dump(1) + "\n";
}

RandomForestModel model_from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error(std::string("model JSON: ") + e.what());
    }
    if (j.value("format", "") != "tracemia-random-forest") throw std::runtime_error("not a random forest model file");
    RandomForestModel m;
    try {
        m.seed = j.at("seed").get<std::uint64_t>();
        m.hyperparams = hp_from_json(j.at("hyperparams"));
        m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
        const auto& s = j.at("scaler");
        m.scaler.mean = s.at("mean").get<std::vector<double>>();
        m.scaler.std = s.at("std").get<std::vector<double>>();
        m.scaler.fitted_on = s.at("fitted_on").get<std::size_t>();
        for (const auto& t : j.at("trees")) {
            DecisionTree tree;
            const auto feature = t.at("feature").get<std::vector<int>>();
            const auto threshold = t.at("threshold").get<std::vector<double>>();
            const auto left = t.at("left").get<std::vector<int>>();
            const auto right = t.at("right").get<std::vector<int>>();
            const auto value = t.at("value").get<std::vector<double>>();
            const auto samples = t.at("samples").get<std::vector<std::uint32_t>>();
            const auto impurity = t.at("impurity").get<std::vector<double>>();
            const std::size_t n = feature.size();
            if (n == 0 || threshold.size() != n || left.size() != n || right.size() != n || value.size() != n ||
                samples.size() != n || impurity.size() != n) {
                throw std::runtime_error("tree arrays differ in length");
            }
            for (std::size_t i = 0; i < n; ++i) {
                TreeNode node{feature[i], threshold[i], left[i], right[i], value[i], samples[i], impurity[i]};
                if (!node.is_leaf()) {
                    const auto bad = [&](int c) { return c <= static_cast<int>(i) || c >= static_cast<int>(n); };
                    if (bad(node.left) || bad(node.right)) throw std::runtime_error("tree child index out of range");
                    if (static_cast<std::size_t>(node.feature) >= m.feature_names.size()) {
                        throw std::runtime_error("tree feature index out of range");
                    }
                }
                tree.nodes.push_back(node);
            }
            m.trees.push_back(std::move(tree));
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("model JSON: ") + e.what());
    }
    if (m.trees.empty()) throw std::runtime_error("model has no trees");
    return m;
}

std::string report_to_json(const CVReport& report) {
    ordered_json j;
    j["seed"] = report.seed;
    ordered_json folds = ordered_json::array();
    for (std::size_t i = 0; i < report.folds.size(); ++i) {
        const auto& f = report.folds[i];
        folds.push_back({{"fold", i},
                         {"hyperparams", hp_to_json(f.hyperparams)},
                         {"search_auc", f.search_score},
                         {"validation_auc", f.validation_auc}});
    }
    j["folds"] = std::move(folds);
    j["fold_auc_mean"] = report.fold_auc_mean;
    j["fold_auc_std"] = report.fold_auc_std;
    j["modal_hyperparams"] = hp_to_json(report.modal);
    j["heldout_auc"] = report.heldout_auc;
    j["train_rows"] = report.train_rows;
    j["test_rows"] = report.test_rows;
    ordered_json imp = ordered_json::array();
    for (std::size_t i = 0; i < report.importances.size() && i < report.feature_names.size(); ++i) {
        imp.push_back({{"feature", report.feature_names[i]}, {"importance", report.importances[i]}});
    }
    j["feature_importances"] = std::move(imp);
    return j.dump(1) + "\n";
}

void save_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << text;
    if (!out) throw std::runtime_error("write failure on " + path);
}

std::string load_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace tracemia
