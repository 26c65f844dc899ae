#pragma once

#include "tracemia/trace.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace tracemia {

// 64-bit copy of a ModelHead, built once per run and shared read-only.
struct LensHead {
    std::size_t hidden_dim = 0;
    std::size_t vocab_size = 0;
    NormKind norm_kind = NormKind::identity;
    double epsilon = 0.0;
    std::vector<double> gain;
    std::vector<double> bias;
    std::vector<double> unembed; // hidden_dim x vocab_size
    std::optional<std::vector<double>> unembed_bias;

    explicit LensHead(const ModelHead& head);

    // Final normalization of one hidden vector.
    void normalize(std::span<const double> hidden, std::span<double> out) const;
    // logits = norm(hidden) @ unembed (+ bias). `scratch` must hold hidden_dim.
    void logits(std::span<const double> hidden, std::span<double> scratch, std::span<double> out) const;
};

struct PredictionStats {
    double entropy = 0.0;    // nats
    double confidence = 0.0; // max probability
    double gap = 0.0;        // top-1 minus top-2 probability
};

std::vector<double> softmax_probs(std::span<const double> logits);

// Stats of softmax(logits) without materializing probabilities.
PredictionStats logit_stats(std::span<const double> logits);
PredictionStats prob_stats(std::span<const double> probs);

// ln softmax(logits)[index]
double log_softmax_at(std::span<const double> logits, std::size_t index);

void check_head_matches(const SequenceTrace& trace, const LensHead& head);

std::vector<double> layer_logits(const SequenceTrace& trace, const LensHead& head, std::size_t layer,
                                 std::size_t position);

struct LayerPredictions {
    std::size_t layer = 0;
    std::vector<std::size_t> positions; // valid positions, ascending
    std::vector<double> entropy;
    std::vector<double> confidence;
    std::vector<double> gap;
};

inline constexpr std::size_t kLensChunk = 32;

// Lens statistics at every valid position of one layer. Logits are formed
// `chunk` positions at a time and discarded.
LayerPredictions layer_predictions(const SequenceTrace& trace, const LensHead& head, std::size_t layer,
                                   std::size_t chunk = kLensChunk);

// ln p(token at next valid position | position) under the lens at `layer`,
// one entry per consecutive pair of valid positions.
std::vector<double> next_token_log_probs(const SequenceTrace& trace, const LensHead& head, std::size_t layer);

// Max |softmax(lens at final layer) - softmax(stored final logits)| over valid
// positions and vocabulary. Requires final_logits.
double lens_consistency_error(const SequenceTrace& trace, const LensHead& head);

} // namespace tracemia
