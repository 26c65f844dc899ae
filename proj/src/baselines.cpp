#include "tracemia/baselines.hpp"

#include "tracemia/feature_matrix.hpp"
#include "tracemia/parallel.hpp"
#include "tracemia/trace_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <stdexcept>

namespace tracemia {

double mean_nll(std::span<const double> log_probs) {
    if (log_probs.empty()) throw std::invalid_argument("no token log-probabilities");
    double total = 0.0;
    for (double lp : log_probs) total += lp;
    return -total / static_cast<double>(log_probs.size());
}

double perplexity_score(std::span<const double> log_probs) { return -std::exp(mean_nll(log_probs)); }

double perplexity_score(const SequenceTrace& trace, const LensHead& head) {
    return perplexity_score(next_token_log_probs(trace, head, trace.dims.n_layers));
}

double min_k_score(std::span<const double> log_probs, double k_percent) {
    if (!(k_percent > 0.0 && k_percent <= 100.0)) throw std::invalid_argument("k must be in (0, 100]");
    if (log_probs.empty()) throw std::invalid_argument("no token log-probabilities");
    std::vector<double> sorted(log_probs.begin(), log_probs.end());
    std::sort(sorted.begin(), sorted.end());
    const double want = std::ceil(k_percent / 100.0 * static_cast<double>(sorted.size()) - 1e-9);
    const auto take = std::clamp<std::size_t>(static_cast<std::size_t>(want), 1, sorted.size());
    double total = 0.0;
    for (std::size_t i = 0; i < take; ++i) total += sorted[i];
    return total / static_cast<double>(take);
}

double min_k_score(const SequenceTrace& trace, const LensHead& head, double k_percent) {
    return min_k_score(next_token_log_probs(trace, head, trace.dims.n_layers), k_percent);
}

std::size_t compressed_size(std::string_view bytes) {
    uLongf bound = compressBound(static_cast<uLong>(bytes.size()));
    std::vector<Bytef> buffer(bound);
    const int rc = compress2(buffer.data(), &bound, reinterpret_cast<const Bytef*>(bytes.data()),
                             static_cast<uLong>(bytes.size()), Z_DEFAULT_COMPRESSION);
    if (rc != Z_OK) throw std::runtime_error("zlib compression failed");
    return bound;
}

double zlib_score(std::span<const double> log_probs, std::size_t compressed_bytes) {
    if (compressed_bytes == 0) throw std::invalid_argument("compressed size must be positive");
    const double nll_bits = mean_nll(log_probs) / std::log(2.0) * static_cast<double>(log_probs.size());
    return -(nll_bits / (8.0 * static_cast<double>(compressed_bytes)));
}

double zlib_score(const SequenceTrace& trace, const LensHead& head, std::string_view raw_text) {
    if (raw_text.empty()) throw std::invalid_argument("zlib baseline needs non-empty raw text");
    return zlib_score(next_token_log_probs(trace, head, trace.dims.n_layers), compressed_size(raw_text));
}

double lowercase_score(const SequenceTrace& original, const SequenceTrace& lowercased, const LensHead& head) {
    const double ppl_orig = -perplexity_score(original, head);
    const double ppl_lower = -perplexity_score(lowercased, head);
    return -(ppl_orig / ppl_lower);
}

BaselineMethod parse_baseline_method(std::string_view text) {
    if (text == "ppl") return BaselineMethod::perplexity;
    if (text == "mink") return BaselineMethod::min_k;
    if (text == "zlib") return BaselineMethod::zlib;
    if (text == "lowercase") return BaselineMethod::lowercase;
    throw std::invalid_argument("unknown baseline method \"" + std::string(text) + "\"");
}

std::string_view to_string(BaselineMethod method) {
    switch (method) {
    case BaselineMethod::perplexity: return "ppl";
    case BaselineMethod::min_k: return "mink";
    case BaselineMethod::zlib: return "zlib";
    case BaselineMethod::lowercase: return "lowercase";
    }
    return "?";
}

std::vector<BaselineRow> run_baseline(const DatasetManifest& manifest, const ModelHead& head,
                                      const BaselineOptions& options) {
    if (manifest.entries.empty()) throw std::invalid_argument("empty dataset");
    const LensHead lens(head);
    std::map<std::string, const ManifestEntry*> pairs;
    if (options.method == BaselineMethod::lowercase) {
        if (!options.paired) throw std::invalid_argument("lowercase baseline needs a paired manifest");
        for (const auto& e : options.paired->entries) pairs[e.id] = &e;
        for (const auto& e : manifest.entries) {
            if (!pairs.contains(e.id)) throw std::invalid_argument("no paired trace for id " + e.id);
        }
    }
    std::vector<BaselineRow> rows(manifest.entries.size());
    parallel_for(rows.size(), options.workers, [&](std::size_t i) {
        const auto& entry = manifest.entries[i];
        const auto trace = read_trace(manifest.resolve(entry));
        BaselineRow& row = rows[i];
        row.id = entry.id;
        row.label = entry.label;
        row.method = options.method;
        switch (options.method) {
        case BaselineMethod::perplexity: row.score = perplexity_score(trace, lens); break;
        case BaselineMethod::min_k: row.score = min_k_score(trace, lens, options.k_percent); break;
        case BaselineMethod::zlib:
            if (!entry.text || entry.text->empty()) {
                throw std::invalid_argument("zlib baseline: no raw text for id " + entry.id);
            }
            row.score = zlib_score(trace, lens, *entry.text);
            break;
        case BaselineMethod::lowercase: {
            const auto lower = read_trace(options.paired->resolve(*pairs.at(entry.id)));
            row.score = lowercase_score(trace, lower, lens);
            break;
        }
        }
    });
    return rows;
}

void write_baseline_csv(std::span<const BaselineRow> rows, std::ostream& out) {
    out << "id,label,method,score\n";
    for (const auto& r : rows) {
        out << r.id << ',' << to_string(r.label) << ',' << to_string(r.method) << ',' << format_real(r.score) << '\n';
    }
    if (!out) throw std::runtime_error("write failure");
}

} // namespace tracemia
