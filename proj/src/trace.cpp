#include "tracemia/trace.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>

namespace tracemia {

SequenceTrace SequenceTrace::zeros(const TraceDims& dims, bool with_logits) {
    SequenceTrace trace;
    trace.dims = dims;
    trace.token_ids.assign(dims.seq_len, 0);
    trace.mask.assign(dims.seq_len, 1);
    trace.hidden_states.assign(dims.hidden_count(), 0.0f);
    trace.attentions.assign(dims.attention_count(), 0.0f);
    if (with_logits) trace.final_logits = std::vector<float>(dims.logits_count(), 0.0f);
    return trace;
}

void ModelHead::check() const {
    if (hidden_dim == 0 || vocab_size == 0) throw std::invalid_argument("head dims must be positive");
    if (gain.size() != hidden_dim || bias.size() != hidden_dim) {
        throw std::invalid_argument("head gain/bias length differs from hidden_dim");
    }
    if (unembed.size() != std::size_t{hidden_dim} * vocab_size) {
        throw std::invalid_argument("head unembed shape differs from hidden_dim x vocab_size");
    }
    if (unembed_bias && unembed_bias->size() != vocab_size) {
        throw std::invalid_argument("head unembed_bias length differs from vocab_size");
    }
    if (!(norm_epsilon > 0.0f)) throw std::invalid_argument("head norm epsilon must be positive");
    if (static_cast<std::uint32_t>(norm_kind) > 2) throw std::invalid_argument("unknown norm kind");
}

std::string to_string(Label label) {
    switch (label) {
    case Label::member: return "member";
    case Label::nonmember: return "nonmember";
    case Label::neighbor: return "neighbor";
    }
    return "?";
}

Label parse_label(const std::string& text) {
    if (text == "member") return Label::member;
    if (text == "nonmember") return Label::nonmember;
    if (text == "neighbor") return Label::neighbor;
    throw std::invalid_argument("unknown label \"" + text + "\"");
}

std::string DatasetManifest::resolve(const ManifestEntry& entry) const {
    const std::filesystem::path p(entry.trace_path);
    if (p.is_absolute() || base_dir.empty()) return p.string();
    return (std::filesystem::path(base_dir) / p).string();
}

std::string ValidationReport::summary(std::size_t max_items) const {
    if (ok()) return "ok";
    std::ostringstream out;
    out << violations.size() << " violation(s)";
    for (std::size_t i = 0; i < violations.size() && i < max_items; ++i) {
        out << (i == 0 ? ": " : "; ") << violations[i].message;
    }
    if (violations.size() > max_items) out << "; ...";
    return out.str();
}

namespace {

std::string fmt_number(double v) {
    std::ostringstream out;
    out << v;
    return out.str();
}

void check_finite(const std::vector<float>& values, const char* tensor, ValidationReport& report) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            report.violations.push_back({ViolationKind::non_finite,
                                         std::string("non-finite value in ") + tensor + " at flat index " +
                                             std::to_string(i)});
        }
    }
}

} // namespace

ValidationReport validate_trace(const SequenceTrace& trace) {
    ValidationReport report;
    const TraceDims& d = trace.dims;
    if (!d.valid()) {
        report.violations.push_back({ViolationKind::bad_dims, "dims must be positive with seq_len >= 2"});
        return report;
    }
    auto shape_error = [&](const std::string& what) {
        report.violations.push_back({ViolationKind::shape, what + " has wrong length"});
    };
    if (trace.token_ids.size() != d.seq_len) shape_error("token_ids");
    if (trace.mask.size() != d.seq_len) shape_error("mask");
    if (trace.hidden_states.size() != d.hidden_count()) shape_error("hidden_states");
    if (trace.attentions.size() != d.attention_count()) shape_error("attentions");
    if (trace.final_logits && trace.final_logits->size() != d.logits_count()) shape_error("final_logits");
    if (!report.ok()) return report;

    check_finite(trace.hidden_states, "hidden_states", report);
    check_finite(trace.attentions, "attentions", report);
    if (trace.final_logits) check_finite(*trace.final_logits, "final_logits", report);

    std::size_t n_valid = 0;
    for (std::size_t t = 0; t < d.seq_len; ++t) {
        if (trace.mask[t] > 1) {
            report.violations.push_back({ViolationKind::bad_mask_value,
                                         "mask value " + std::to_string(trace.mask[t]) + " at t=" + std::to_string(t),
                                         -1, -1, static_cast<long>(t)});
        }
        if (trace.mask[t] == 1) ++n_valid;
        if (trace.token_ids[t] >= d.vocab_size) {
            report.violations.push_back({ViolationKind::token_out_of_range,
                                         "token id " + std::to_string(trace.token_ids[t]) + " >= vocab " +
                                             std::to_string(d.vocab_size) + " at t=" + std::to_string(t),
                                         -1, -1, static_cast<long>(t)});
        }
    }
    if (n_valid < 2) {
        report.violations.push_back({ViolationKind::too_few_valid,
                                     "only " + std::to_string(n_valid) + " valid position(s), need 2"});
    }

    for (std::size_t l = 0; l < d.n_layers; ++l) {
        for (std::size_t h = 0; h < d.n_heads; ++h) {
            for (std::size_t t = 0; t < d.seq_len; ++t) {
                if (trace.mask[t] != 1) continue;
                const auto row = trace.attention_row(l, h, t);
                double row_sum = 0.0;
                for (std::size_t s = 0; s < d.seq_len; ++s) {
                    const double a = row[s];
                    row_sum += a;
                    const auto coords = "(" + std::to_string(l) + "," + std::to_string(h) + "," +
                                        std::to_string(t) + "," + std::to_string(s) + ")";
                    if (s > t && std::abs(a) > kZeroAttentionTolerance) {
                        report.violations.push_back({ViolationKind::causality,
                                                     "causality violation: weight " + fmt_number(a) +
                                                         " on future key at " + coords,
                                                     long(l), long(h), long(t), long(s)});
                    } else if (trace.mask[s] != 1 && std::abs(a) > kZeroAttentionTolerance) {
                        report.violations.push_back({ViolationKind::masked_key,
                                                     "masked key receives weight " + fmt_number(a) + " at " + coords,
                                                     long(l), long(h), long(t), long(s)});
                    }
                }
                if (std::abs(row_sum - 1.0) > kRowSumTolerance) {
                    report.violations.push_back({ViolationKind::row_sum,
                                                 "row sum " + fmt_number(row_sum) + " ≠ 1 at (l=" +
                                                     std::to_string(l) + ",h=" + std::to_string(h) +
                                                     ",t=" + std::to_string(t) + ")",
                                                 long(l), long(h), long(t)});
                }
            }
        }
    }
    return report;
}

std::vector<std::size_t> valid_positions(const SequenceTrace& trace) {
    std::vector<std::size_t> positions;
    for (std::size_t t = 0; t < trace.mask.size(); ++t) {
        if (trace.mask[t] == 1) positions.push_back(t);
    }
    if (positions.size() < 2) throw std::invalid_argument("sequence too short");
    return positions;
}

} // namespace tracemia
