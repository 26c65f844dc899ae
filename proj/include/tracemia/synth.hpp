#pragma once

// Synthetic traces with planted membership signatures. Nonmembers are random
// walks through layers with random causal attention; members share the same
// process and then receive the configured effects.

#include "tracemia/trace.hpp"

#include <cstdint>
#include <optional>
#include <string>

namespace tracemia {

struct SynthSpec {
    TraceDims dims{4, 2, 32, 16, 64};
    std::uint32_t members = 500;
    std::uint32_t nonmembers = 500;
    std::uint32_t neighbors = 0;   // generated at half effect size
    double delta = 0.3;            // damping of middle-transition deltas, in [0,1)
    double rho = 0.1;              // fraction of member positions given a confidence spike
    double beta = 2.0;             // attention logit bonus on self and previous token
    std::uint64_t seed = 420;
    std::uint32_t min_length = 0;  // 0 means seq_len (no padding)
    // When set, damping and attention bonus touch only the transition and
    // block that feed this hidden layer, and spikes only this layer.
    std::optional<std::uint32_t> planted_layer;

    std::uint32_t middle_layer() const { return dims.n_layers / 2; }
    void check() const;
};

inline constexpr double kSynthUnembedScale = 2.0;
inline constexpr double kSynthWalkStep = 1.0;
inline constexpr double kSynthSpikeScale = 6.0; // spike norm in units of sqrt(d)
inline constexpr double kSynthAttentionScale = 1.0;

SynthSpec synth_spec_from_json(const std::string& json_text);
std::string synth_spec_to_json(const SynthSpec& spec);

ModelHead synth_head(const SynthSpec& spec);

// Trace `index` of the dataset; effect_scale is 1 for members, 0.5 for
// neighbors and 0 for nonmembers.
SequenceTrace synth_trace(const SynthSpec& spec, const ModelHead& head, std::uint64_t index, double effect_scale);

// Writes traces/<id>.mtrc, head.mthd and manifest.jsonl under out_dir.
DatasetManifest generate(const SynthSpec& spec, const std::string& out_dir, unsigned workers = 1);

} // namespace tracemia
