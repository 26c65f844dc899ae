#pragma once

#include "tracemia/logit_lens.hpp"
#include "tracemia/trace.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tracemia {

// Population statistics over positions. argmin/argmax are first-occurrence
// indices divided by (count - 1), 0 for a single value.
struct StatSummary {
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
    double std = 0.0;
    double argmin_frac = 0.0;
    double argmax_frac = 0.0;
};

StatSummary summarize(std::span<const double> values);

// Population standard deviation.
double population_std(std::span<const double> values);

inline constexpr double kAttentionEpsilon = 1e-10;
inline constexpr double kConfidenceStabilityEpsilon = 1e-8;
inline constexpr std::size_t kTokenWindow = 2;

// Feature names in extraction order. Only n_layers and n_heads matter.
std::vector<std::string> feature_registry(const TraceDims& dims);

// Layer a feature belongs to for per-layer analysis: transition i and block
// i attention map to i+1; lens/context/position features map to their own
// hidden layer. nullopt for names outside the registry grammar.
std::optional<std::size_t> feature_layer_tag(std::string_view name);

struct TransitionFeatures {
    StatSummary surprise;
    StatSummary nsurprise;
    StatSummary stability;
    std::size_t zero_norm_count = 0;
};

struct PredictionFeatures {
    StatSummary entropy;
    StatSummary confidence;
    StatSummary gap;
    double conf_stability = 0.0;
    double tok_first_confstd = 0.0;
    double tok_mid_confstd = 0.0;
    double tok_last_confstd = 0.0;
};

struct AttentionFeatures {
    double entropy = 0.0;
    double concentration = 0.0;
    double sparsity = 0.0;
    double selfattn = 0.0;
    double prevbias = 0.0;
    double meandist = 0.0;
    StatSummary head_entropy;
    StatSummary head_focus;
};

struct ContextFeatures {
    StatSummary steps;
};

TransitionFeatures transition_features(const SequenceTrace& trace, std::size_t transition);
PredictionFeatures prediction_features(const LayerPredictions& preds);
AttentionFeatures attention_layer_features(const SequenceTrace& trace, std::size_t layer);
ContextFeatures context_evolution_features(const SequenceTrace& trace, std::size_t layer);
// Cosine between first and last valid hidden states; 0 if either is zero
// (and *zero_norm is set when given).
double first_last_similarity(const SequenceTrace& trace, std::size_t layer, bool* zero_norm = nullptr);

struct FeatureVector {
    std::vector<std::string> names;
    std::vector<double> values;
    std::vector<std::string> warnings; // e.g. zero-norm hidden vectors
};

// Full feature vector in registry order. Throws std::invalid_argument on an
// invalid trace or head mismatch and std::runtime_error naming the feature
// when a value is not finite.
FeatureVector extract_features(const SequenceTrace& trace, const LensHead& head, std::string_view trace_id = "");

} // namespace tracemia
