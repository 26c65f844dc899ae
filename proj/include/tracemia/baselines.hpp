#pragma once

// Output-only reference attacks scored from the final-layer lens. Every score
// is oriented so that higher means more member-like.

#include "tracemia/logit_lens.hpp"
#include "tracemia/trace.hpp"

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tracemia {

// Mean negative log-likelihood (nats) of per-token log-probabilities.
double mean_nll(std::span<const double> log_probs);

double perplexity_score(std::span<const double> log_probs);
double perplexity_score(const SequenceTrace& trace, const LensHead& head);

// Mean of the ceil(k% * count) smallest log-probabilities.
double min_k_score(std::span<const double> log_probs, double k_percent);
double min_k_score(const SequenceTrace& trace, const LensHead& head, double k_percent);

// DEFLATE (zlib, default level) compressed size in bytes.
std::size_t compressed_size(std::string_view bytes);

// -(NLL in bits summed over tokens) / (compressed size in bits).
double zlib_score(std::span<const double> log_probs, std::size_t compressed_bytes);
double zlib_score(const SequenceTrace& trace, const LensHead& head, std::string_view raw_text);

// -(perplexity(original) / perplexity(lowercased)).
double lowercase_score(const SequenceTrace& original, const SequenceTrace& lowercased, const LensHead& head);

enum class BaselineMethod { perplexity, min_k, zlib, lowercase };

BaselineMethod parse_baseline_method(std::string_view text);
std::string_view to_string(BaselineMethod method);

struct BaselineRow {
    std::string id;
    Label label = Label::member;
    BaselineMethod method = BaselineMethod::perplexity;
    double score = 0.0;
};

struct BaselineOptions {
    BaselineMethod method = BaselineMethod::perplexity;
    double k_percent = 20.0;
    const DatasetManifest* paired = nullptr; // lowercased traces, matched by id
    unsigned workers = 1;
};

std::vector<BaselineRow> run_baseline(const DatasetManifest& manifest, const ModelHead& head,
                                      const BaselineOptions& options);

// "id,label,method,score"
void write_baseline_csv(std::span<const BaselineRow> rows, std::ostream& out);

} // namespace tracemia
