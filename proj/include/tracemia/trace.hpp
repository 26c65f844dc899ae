#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tracemia {

// Shape of one captured forward pass.
struct TraceDims {
    std::uint32_t n_layers = 0;   // transformer blocks
    std::uint32_t n_heads = 0;    // attention heads per block
    std::uint32_t seq_len = 0;    // positions, padding included
    std::uint32_t hidden_dim = 0; // residual stream width
    std::uint32_t vocab_size = 0;

    bool valid() const {
        return n_layers > 0 && n_heads > 0 && seq_len >= 2 && hidden_dim > 0 && vocab_size > 0;
    }
    std::size_t hidden_count() const {
        return std::size_t{n_layers + 1u} * seq_len * hidden_dim;
    }
    std::size_t attention_count() const {
        return std::size_t{n_layers} * n_heads * seq_len * seq_len;
    }
    std::size_t logits_count() const { return std::size_t{seq_len} * vocab_size; }

    friend bool operator==(const TraceDims&, const TraceDims&) = default;
};

// Internal record of one sequence. hidden_states holds L+1 layers (index 0 is
// the embedding output); attentions are [layer][head][query][key]. All values
// are stored as float; feature math upcasts.
struct SequenceTrace {
    TraceDims dims;
    std::vector<std::uint32_t> token_ids;
    std::vector<std::uint8_t> mask;
    std::vector<float> hidden_states;
    std::vector<float> attentions;
    std::optional<std::vector<float>> final_logits;

    // Zero-filled trace of the given shape with a full mask.
    static SequenceTrace zeros(const TraceDims& dims, bool with_logits = false);

    std::span<const float> hidden(std::size_t layer, std::size_t pos) const {
        return {hidden_states.data() + (layer * dims.seq_len + pos) * dims.hidden_dim, dims.hidden_dim};
    }
    std::span<float> hidden(std::size_t layer, std::size_t pos) {
        return {hidden_states.data() + (layer * dims.seq_len + pos) * dims.hidden_dim, dims.hidden_dim};
    }
    std::size_t attention_index(std::size_t layer, std::size_t head, std::size_t query, std::size_t key) const {
        return ((layer * dims.n_heads + head) * dims.seq_len + query) * dims.seq_len + key;
    }
    float attention(std::size_t layer, std::size_t head, std::size_t query, std::size_t key) const {
        return attentions[attention_index(layer, head, query, key)];
    }
    float& attention(std::size_t layer, std::size_t head, std::size_t query, std::size_t key) {
        return attentions[attention_index(layer, head, query, key)];
    }
    std::span<const float> attention_row(std::size_t layer, std::size_t head, std::size_t query) const {
        return {attentions.data() + attention_index(layer, head, query, 0), dims.seq_len};
    }

    friend bool operator==(const SequenceTrace&, const SequenceTrace&) = default;
};

enum class NormKind : std::uint32_t { layernorm = 0, rmsnorm = 1, identity = 2 };

// Final normalization and unembedding of a model; turns any layer's hidden
// state into next-token logits.
struct ModelHead {
    std::uint32_t hidden_dim = 0;
    std::uint32_t vocab_size = 0;
    NormKind norm_kind = NormKind::layernorm;
    float norm_epsilon = 1e-5f;
    std::vector<float> gain;
    std::vector<float> bias;
    std::vector<float> unembed; // hidden_dim x vocab_size, row-major
    std::optional<std::vector<float>> unembed_bias;

    // Checks shapes and epsilon; throws std::invalid_argument.
    void check() const;

    friend bool operator==(const ModelHead&, const ModelHead&) = default;
};

enum class Label { member, nonmember, neighbor };

std::string to_string(Label label);
Label parse_label(const std::string& text);

struct ManifestEntry {
    std::string trace_path; // as written in the manifest
    Label label = Label::member;
    std::string group;
    std::string id;
    std::optional<std::string> text; // raw text, used by the zlib baseline
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::string base_dir; // trace paths resolve relative to this

    std::string resolve(const ManifestEntry& entry) const;
};

enum class ViolationKind {
    bad_dims,
    shape,
    non_finite,
    bad_mask_value,
    token_out_of_range,
    too_few_valid,
    row_sum,
    causality,
    masked_key,
};

struct Violation {
    ViolationKind kind;
    std::string message;
    long layer = -1;
    long head = -1;
    long query = -1;
    long key = -1;
};

struct ValidationReport {
    std::vector<Violation> violations;

    bool ok() const { return violations.empty(); }
    std::string summary(std::size_t max_items = 5) const;
};

inline constexpr double kRowSumTolerance = 1e-4;
inline constexpr double kZeroAttentionTolerance = 1e-6;

ValidationReport validate_trace(const SequenceTrace& trace);

// Ascending indices of real tokens. Throws std::invalid_argument
// ("sequence too short") when fewer than two remain.
std::vector<std::size_t> valid_positions(const SequenceTrace& trace);

class TraceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace tracemia
