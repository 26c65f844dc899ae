#include "tracemia/features.hpp"

#include "tracemia/kernels.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <stdexcept>

namespace tracemia {

StatSummary summarize(std::span<const double> values) {
    StatSummary s;
    const std::size_t n = values.size();
    if (n == 0) return s;
    std::size_t arg_min = 0;
    std::size_t arg_max = 0;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        total += values[i];
        if (values[i] < values[arg_min]) arg_min = i;
        if (values[i] > values[arg_max]) arg_max = i;
    }
    s.mean = total / static_cast<double>(n);
    s.min = values[arg_min];
    s.max = values[arg_max];
    s.std = population_std(values);
    // Rounding in the mean can push it a hair outside [min, max].
    s.mean = std::clamp(s.mean, s.min, s.max);
    if (n > 1) {
        s.argmin_frac = static_cast<double>(arg_min) / static_cast<double>(n - 1);
        s.argmax_frac = static_cast<double>(arg_max) / static_cast<double>(n - 1);
    }
    return s;
}

double population_std(std::span<const double> values) {
    const std::size_t n = values.size();
    if (n == 0) return 0.0;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / static_cast<double>(n));
}

std::vector<std::string> feature_registry(const TraceDims& dims) {
    const std::size_t L = dims.n_layers;
    std::vector<std::string> names;
    names.reserve(18 * L + 16 * (L + 1) + 14 * L + 5 * (L + 1));
    for (std::size_t i = 0; i < L; ++i) {
        const std::string p = "trans" + std::to_string(i) + "_";
        for (const char* metric : {"surprise", "nsurprise", "stability"}) {
            for (const char* stat : {"mean", "min", "max", "std", "argmin", "argmax"}) {
                names.push_back(p + metric + "_" + stat);
            }
        }
    }
    for (std::size_t l = 0; l <= L; ++l) {
        const std::string p = "pred" + std::to_string(l) + "_";
        for (const char* metric : {"entropy", "conf", "gap"}) {
            for (const char* stat : {"mean", "min", "max", "std"}) names.push_back(p + metric + "_" + stat);
        }
        names.push_back(p + "conf_stability");
        for (const char* where : {"first", "mid", "last"}) names.push_back(p + "tok" + where + "_confstd");
    }
    for (std::size_t l = 0; l < L; ++l) {
        const std::string p = "attn" + std::to_string(l) + "_";
        for (const char* metric : {"entropy", "concentration", "sparsity", "selfattn", "prevbias", "meandist"}) {
            names.push_back(p + metric);
        }
        for (const char* metric : {"entropy", "focus"}) {
            for (const char* stat : {"mean", "std", "min", "max"}) names.push_back(p + "head_" + metric + "_" + stat);
        }
    }
    for (std::size_t l = 0; l <= L; ++l) {
        const std::string idx = std::to_string(l);
        for (const char* stat : {"mean", "std", "min", "max"}) names.push_back("ctx" + idx + "_" + stat);
        names.push_back("pos" + idx + "_firstlast");
    }
    return names;
}

std::optional<std::size_t> feature_layer_tag(std::string_view name) {
    struct Prefix {
        std::string_view text;
        std::size_t offset;
    };
    for (const Prefix p : {Prefix{"trans", 1}, Prefix{"pred", 0}, Prefix{"attn", 1}, Prefix{"ctx", 0},
                           Prefix{"pos", 0}}) {
        if (!name.starts_with(p.text)) continue;
        const char* begin = name.data() + p.text.size();
        const char* end = name.data() + name.size();
        std::size_t layer = 0;
        const auto [ptr, ec] = std::from_chars(begin, end, layer);
        if (ec != std::errc() || ptr == begin || ptr == end || *ptr != '_') return std::nullopt;
        return layer + p.offset;
    }
    return std::nullopt;
}

namespace {

// Valid positions plus all hidden states widened to 64-bit.
class HiddenCache {
public:
    explicit HiddenCache(const SequenceTrace& trace)
        : d_(trace.dims.hidden_dim), n_(trace.dims.seq_len), positions_(valid_positions(trace)) {
        values_.resize(trace.hidden_states.size());
        kernels::active().widen(trace.hidden_states.data(), values_.data(), values_.size());
    }

    const std::vector<std::size_t>& positions() const { return positions_; }
    std::size_t dim() const { return d_; }
    const double* at(std::size_t layer, std::size_t pos) const { return values_.data() + (layer * n_ + pos) * d_; }

private:
    std::size_t d_;
    std::size_t n_;
    std::vector<std::size_t> positions_;
    std::vector<double> values_;
};

TransitionFeatures transition_impl(const HiddenCache& cache, std::size_t i) {
    const auto& k = kernels::active();
    const std::size_t d = cache.dim();
    const auto& pos = cache.positions();
    std::vector<double> surprise(pos.size()), nsurprise(pos.size()), stability(pos.size());
    std::vector<double> unit_a(d), unit_b(d);
    TransitionFeatures out;
    for (std::size_t j = 0; j < pos.size(); ++j) {
        const double* a = cache.at(i, pos[j]);
        const double* b = cache.at(i + 1, pos[j]);
        surprise[j] = std::sqrt(k.squared_distance(b, a, d));
        const double na = std::sqrt(k.dot(a, a, d));
        const double nb = std::sqrt(k.dot(b, b, d));
        for (std::size_t c = 0; c < d; ++c) {
            unit_a[c] = na > 0.0 ? a[c] / na : 0.0;
            unit_b[c] = nb > 0.0 ? b[c] / nb : 0.0;
        }
        nsurprise[j] = std::sqrt(k.squared_distance(unit_b.data(), unit_a.data(), d));
        if (na > 0.0 && nb > 0.0) {
            stability[j] = std::clamp(k.dot(a, b, d) / (na * nb), -1.0, 1.0);
        } else {
            stability[j] = 0.0;
            ++out.zero_norm_count;
        }
    }
    out.surprise = summarize(surprise);
    out.nsurprise = summarize(nsurprise);
    out.stability = summarize(stability);
    return out;
}

ContextFeatures context_impl(const HiddenCache& cache, std::size_t layer) {
    const auto& k = kernels::active();
    const std::size_t d = cache.dim();
    const auto& pos = cache.positions();
    // Running mean M_j over the first j+1 valid positions;
    // M_j - M_{j-1} = (h_j - M_{j-1}) / (j+1).
    std::vector<double> running(cache.at(layer, pos[0]), cache.at(layer, pos[0]) + d);
    std::vector<double> steps(pos.size() - 1);
    for (std::size_t j = 1; j < pos.size(); ++j) {
        const double* h = cache.at(layer, pos[j]);
        const double inv = 1.0 / static_cast<double>(j + 1);
        steps[j - 1] = std::sqrt(k.squared_distance(h, running.data(), d)) * inv;
        for (std::size_t c = 0; c < d; ++c) running[c] += (h[c] - running[c]) * inv;
    }
    return {summarize(steps)};
}

double first_last_impl(const HiddenCache& cache, std::size_t layer, bool* zero_norm) {
    const auto& k = kernels::active();
    const std::size_t d = cache.dim();
    const double* a = cache.at(layer, cache.positions().front());
    const double* b = cache.at(layer, cache.positions().back());
    const double na = std::sqrt(k.dot(a, a, d));
    const double nb = std::sqrt(k.dot(b, b, d));
    if (zero_norm) *zero_norm = !(na > 0.0 && nb > 0.0);
    if (!(na > 0.0 && nb > 0.0)) return 0.0;
    return std::clamp(k.dot(a, b, d) / (na * nb), -1.0, 1.0);
}

double window_std(const std::vector<std::size_t>& positions, const std::vector<double>& confidence,
                  std::size_t center) {
    std::vector<double> window;
    for (std::size_t j = 0; j < positions.size(); ++j) {
        const std::size_t t = positions[j];
        const std::size_t dist = t > center ? t - center : center - t;
        if (dist <= kTokenWindow) window.push_back(confidence[j]);
    }
    return population_std(window);
}

double row_entropy_bits(const double* row, std::size_t count) {
    double h = 0.0;
    for (std::size_t s = 0; s < count; ++s) h -= row[s] * std::log2(row[s] + kAttentionEpsilon);
    return h;
}

void push_summary(std::vector<double>& out, const StatSummary& s) {
    out.insert(out.end(), {s.mean, s.min, s.max, s.std, s.argmin_frac, s.argmax_frac});
}

} // namespace

TransitionFeatures transition_features(const SequenceTrace& trace, std::size_t transition) {
    if (transition >= trace.dims.n_layers) throw std::out_of_range("transition out of range");
    return transition_impl(HiddenCache(trace), transition);
}

PredictionFeatures prediction_features(const LayerPredictions& preds) {
    if (preds.positions.size() < 2) throw std::invalid_argument("sequence too short");
    PredictionFeatures out;
    out.entropy = summarize(preds.entropy);
    out.confidence = summarize(preds.confidence);
    out.gap = summarize(preds.gap);
    out.conf_stability = out.confidence.mean / (out.confidence.std + kConfidenceStabilityEpsilon);
    const auto& pos = preds.positions;
    const std::size_t m = pos.size();
    out.tok_first_confstd = window_std(pos, preds.confidence, pos.front());
    out.tok_mid_confstd = window_std(pos, preds.confidence, pos[(m - 1) / 2]);
    out.tok_last_confstd = window_std(pos, preds.confidence, pos.back());
    return out;
}

AttentionFeatures attention_layer_features(const SequenceTrace& trace, std::size_t layer) {
    if (layer >= trace.dims.n_layers) throw std::out_of_range("attention layer out of range");
    const auto pos = valid_positions(trace);
    const std::size_t m = pos.size();
    const std::size_t H = trace.dims.n_heads;

    // Lower-triangular m x m over valid (query, key) pairs; row j has j+1 keys.
    std::vector<double> head_row(m);
    std::vector<double> mean_attn(m * m, 0.0);
    std::vector<double> head_entropy(H), head_focus(H);
    for (std::size_t h = 0; h < H; ++h) {
        double ent = 0.0;
        double focus = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            const auto row = trace.attention_row(layer, h, pos[j]);
            double best = 0.0;
            for (std::size_t k = 0; k <= j; ++k) {
                head_row[k] = row[pos[k]];
                mean_attn[j * m + k] += head_row[k];
                best = std::max(best, head_row[k]);
            }
            ent += row_entropy_bits(head_row.data(), j + 1);
            focus += best;
        }
        head_entropy[h] = ent / static_cast<double>(m);
        head_focus[h] = focus / static_cast<double>(m);
    }
    const double inv_heads = 1.0 / static_cast<double>(H);
    double total = 0.0;
    std::size_t entries = 0;
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t k = 0; k <= j; ++k) {
            mean_attn[j * m + k] *= inv_heads;
            total += mean_attn[j * m + k];
            ++entries;
        }
    }
    const double tau = total / static_cast<double>(entries);

    AttentionFeatures out;
    double entropy = 0.0, concentration = 0.0, self = 0.0, prev = 0.0;
    double dist_weighted = 0.0, weight = 0.0;
    std::size_t below = 0;
    for (std::size_t j = 0; j < m; ++j) {
        const double* row = mean_attn.data() + j * m;
        entropy += row_entropy_bits(row, j + 1);
        double best = 0.0;
        for (std::size_t k = 0; k <= j; ++k) {
            best = std::max(best, row[k]);
            if (row[k] < tau) ++below;
            dist_weighted += static_cast<double>(pos[j] - pos[k]) * row[k];
            weight += row[k];
        }
        concentration += best;
        self += row[j];
        if (j > 0) prev += row[j - 1];
    }
    const double md = static_cast<double>(m);
    out.entropy = entropy / md;
    out.concentration = concentration / md;
    out.sparsity = static_cast<double>(below) / static_cast<double>(entries);
    out.selfattn = self / md;
    out.prevbias = prev / (md - 1.0);
    out.meandist = weight > 0.0 ? dist_weighted / weight : 0.0;
    out.head_entropy = summarize(head_entropy);
    out.head_focus = summarize(head_focus);
    return out;
}

ContextFeatures context_evolution_features(const SequenceTrace& trace, std::size_t layer) {
    if (layer > trace.dims.n_layers) throw std::out_of_range("layer out of range");
    return context_impl(HiddenCache(trace), layer);
}

double first_last_similarity(const SequenceTrace& trace, std::size_t layer, bool* zero_norm) {
    if (layer > trace.dims.n_layers) throw std::out_of_range("layer out of range");
    return first_last_impl(HiddenCache(trace), layer, zero_norm);
}

FeatureVector extract_features(const SequenceTrace& trace, const LensHead& head, std::string_view trace_id) {
    const std::string who = trace_id.empty() ? std::string("trace") : "trace " + std::string(trace_id);
    const auto report = validate_trace(trace);
    if (!report.ok()) throw std::invalid_argument(who + " is invalid: " + report.summary());
    check_head_matches(trace, head);

    const std::size_t L = trace.dims.n_layers;
    const HiddenCache cache(trace);
    FeatureVector fv;
    fv.names = feature_registry(trace.dims);
    fv.values.reserve(fv.names.size());
    auto& v = fv.values;

    for (std::size_t i = 0; i < L; ++i) {
        const auto t = transition_impl(cache, i);
        push_summary(v, t.surprise);
        push_summary(v, t.nsurprise);
        push_summary(v, t.stability);
        if (t.zero_norm_count > 0) {
            fv.warnings.push_back(who + ": " + std::to_string(t.zero_norm_count) +
                                  " zero-norm hidden vector(s) in transition " + std::to_string(i));
        }
    }
    for (std::size_t l = 0; l <= L; ++l) {
        const auto p = prediction_features(layer_predictions(trace, head, l));
        for (const StatSummary* s : {&p.entropy, &p.confidence, &p.gap}) v.insert(v.end(), {s->mean, s->min, s->max, s->std});
        v.insert(v.end(), {p.conf_stability, p.tok_first_confstd, p.tok_mid_confstd, p.tok_last_confstd});
    }
    for (std::size_t l = 0; l < L; ++l) {
        const auto a = attention_layer_features(trace, l);
        v.insert(v.end(), {a.entropy, a.concentration, a.sparsity, a.selfattn, a.prevbias, a.meandist});
        for (const StatSummary* s : {&a.head_entropy, &a.head_focus}) v.insert(v.end(), {s->mean, s->std, s->min, s->max});
    }
    for (std::size_t l = 0; l <= L; ++l) {
        const auto c = context_impl(cache, l);
        v.insert(v.end(), {c.steps.mean, c.steps.std, c.steps.min, c.steps.max});
        bool zero = false;
        v.push_back(first_last_impl(cache, l, &zero));
        if (zero) fv.warnings.push_back(who + ": zero-norm first/last hidden vector at layer " + std::to_string(l));
    }

    if (v.size() != fv.names.size()) throw std::logic_error("feature count does not match registry");
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) throw std::runtime_error("non-finite feature " + fv.names[i] + " in " + who);
    }
    return fv;
}

} // namespace tracemia
