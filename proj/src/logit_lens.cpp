#include "tracemia/logit_lens.hpp"

#include "tracemia/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace tracemia {

namespace {

std::vector<double> widen_all(const std::vector<float>& in) {
    std::vector<double> out(in.size());
    if (!in.empty()) kernels::active().widen(in.data(), out.data(), in.size());
    return out;
}

} // namespace

LensHead::LensHead(const ModelHead& head)
    : hidden_dim(head.hidden_dim),
      vocab_size(head.vocab_size),
      norm_kind(head.norm_kind),
      epsilon(head.norm_epsilon),
      gain(widen_all(head.gain)),
      bias(widen_all(head.bias)),
      unembed(widen_all(head.unembed)) {
    head.check();
    if (head.unembed_bias) unembed_bias = widen_all(*head.unembed_bias);
}

void LensHead::normalize(std::span<const double> h, std::span<double> out) const {
    const auto& k = kernels::active();
    const std::size_t d = hidden_dim;
    switch (norm_kind) {
    case NormKind::identity:
        std::copy(h.begin(), h.end(), out.begin());
        return;
    case NormKind::rmsnorm: {
        const double ms = k.dot(h.data(), h.data(), d) / static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(ms + epsilon);
        for (std::size_t i = 0; i < d; ++i) out[i] = h[i] * inv * gain[i];
        return;
    }
    case NormKind::layernorm: {
        const double mean = k.sum(h.data(), d) / static_cast<double>(d);
        for (std::size_t i = 0; i < d; ++i) out[i] = h[i] - mean;
        const double var = k.dot(out.data(), out.data(), d) / static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + epsilon);
        for (std::size_t i = 0; i < d; ++i) out[i] = out[i] * inv * gain[i] + bias[i];
        return;
    }
    }
}

void LensHead::logits(std::span<const double> hidden, std::span<double> scratch, std::span<double> out) const {
    normalize(hidden, scratch);
    kernels::active().vecmat(scratch.data(), unembed.data(), hidden_dim, vocab_size, out.data());
    if (unembed_bias) {
        for (std::size_t v = 0; v < vocab_size; ++v) out[v] += (*unembed_bias)[v];
    }
}

std::vector<double> softmax_probs(std::span<const double> logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double s = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - m);
        s += p[i];
    }
    for (auto& v : p) v /= s;
    return p;
}

PredictionStats logit_stats(std::span<const double> logits) {
    // With z' = z - max and s = sum exp(z'): p = exp(z')/s, so
    // H = ln s - sum exp(z') z' / s, confidence = 1/s.
    std::size_t top = 0;
    for (std::size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[top]) top = i;
    }
    const double m = logits[top];
    double second = -INFINITY;
    double s = 0.0;
    double weighted = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double z = logits[i] - m;
        const double e = std::exp(z);
        s += e;
        weighted += e * z;
        if (i != top) second = std::max(second, z);
    }
    PredictionStats out;
    out.entropy = std::max(0.0, std::log(s) - weighted / s);
    out.confidence = 1.0 / s;
    out.gap = logits.size() > 1 ? (1.0 - std::exp(second)) / s : out.confidence;
    return out;
}

PredictionStats prob_stats(std::span<const double> probs) {
    PredictionStats out;
    double first = -1.0;
    double second = 0.0;
    for (double p : probs) {
        if (p > 0.0) out.entropy -= p * std::log(p);
        if (p > first) {
            second = first < 0.0 ? 0.0 : first;
            first = p;
        } else if (p > second) {
            second = p;
        }
    }
    out.confidence = first;
    out.gap = first - second;
    return out;
}

double log_softmax_at(std::span<const double> logits, std::size_t index) {
    const double m = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double z : logits) s += std::exp(z - m);
    return (logits[index] - m) - std::log(s);
}

void check_head_matches(const SequenceTrace& trace, const LensHead& head) {
    if (trace.dims.hidden_dim != head.hidden_dim || trace.dims.vocab_size != head.vocab_size) {
        throw std::invalid_argument("dim mismatch between trace (d=" + std::to_string(trace.dims.hidden_dim) +
                                    ", V=" + std::to_string(trace.dims.vocab_size) + ") and head (d=" +
                                    std::to_string(head.hidden_dim) + ", V=" + std::to_string(head.vocab_size) +
                                    ")");
    }
}

std::vector<double> layer_logits(const SequenceTrace& trace, const LensHead& head, std::size_t layer,
                                 std::size_t position) {
    check_head_matches(trace, head);
    if (layer > trace.dims.n_layers) throw std::out_of_range("layer out of range");
    if (position >= trace.dims.seq_len || trace.mask[position] != 1) {
        throw std::out_of_range("position is not a valid token");
    }
    const std::size_t d = head.hidden_dim;
    std::vector<double> h(d), scratch(d), out(head.vocab_size);
    kernels::active().widen(trace.hidden(layer, position).data(), h.data(), d);
    head.logits(h, scratch, out);
    return out;
}

LayerPredictions layer_predictions(const SequenceTrace& trace, const LensHead& head, std::size_t layer,
                                   std::size_t chunk) {
    check_head_matches(trace, head);
    if (layer > trace.dims.n_layers) throw std::out_of_range("layer out of range");
    chunk = std::max<std::size_t>(chunk, 1);
    const auto& k = kernels::active();
    const std::size_t d = head.hidden_dim;
    const std::size_t V = head.vocab_size;

    LayerPredictions out;
    out.layer = layer;
    out.positions = valid_positions(trace);
    const std::size_t m = out.positions.size();
    out.entropy.resize(m);
    out.confidence.resize(m);
    out.gap.resize(m);

    std::vector<double> h(d), scratch(d), logits(chunk * V);
    for (std::size_t begin = 0; begin < m; begin += chunk) {
        const std::size_t end = std::min(m, begin + chunk);
        for (std::size_t j = begin; j < end; ++j) {
            k.widen(trace.hidden(layer, out.positions[j]).data(), h.data(), d);
            head.logits(h, scratch, std::span<double>(logits.data() + (j - begin) * V, V));
        }
        for (std::size_t j = begin; j < end; ++j) {
            const auto stats = logit_stats(std::span<const double>(logits.data() + (j - begin) * V, V));
            out.entropy[j] = stats.entropy;
            out.confidence[j] = stats.confidence;
            out.gap[j] = stats.gap;
        }
    }
    return out;
}

std::vector<double> next_token_log_probs(const SequenceTrace& trace, const LensHead& head, std::size_t layer) {
    check_head_matches(trace, head);
    if (layer > trace.dims.n_layers) throw std::out_of_range("layer out of range");
    const auto positions = valid_positions(trace);
    const std::size_t d = head.hidden_dim;
    std::vector<double> h(d), scratch(d), logits(head.vocab_size);
    std::vector<double> out;
    out.reserve(positions.size() - 1);
    for (std::size_t j = 0; j + 1 < positions.size(); ++j) {
        kernels::active().widen(trace.hidden(layer, positions[j]).data(), h.data(), d);
        head.logits(h, scratch, logits);
        out.push_back(log_softmax_at(logits, trace.token_ids[positions[j + 1]]));
    }
    return out;
}

double lens_consistency_error(const SequenceTrace& trace, const LensHead& head) {
    if (!trace.final_logits) throw std::invalid_argument("trace has no final logits");
    check_head_matches(trace, head);
    const std::size_t V = head.vocab_size;
    double worst = 0.0;
    std::vector<double> stored(V);
    for (std::size_t t : valid_positions(trace)) {
        const auto lens = softmax_probs(layer_logits(trace, head, trace.dims.n_layers, t));
        kernels::active().widen(trace.final_logits->data() + t * V, stored.data(), V);
        const auto ref = softmax_probs(stored);
        for (std::size_t v = 0; v < V; ++v) worst = std::max(worst, std::abs(lens[v] - ref[v]));
    }
    return worst;
}

} // namespace tracemia
