#include "tracemia/synth.hpp"

#include "tracemia/parallel.hpp"
#include "tracemia/random.hpp"
#include "tracemia/trace_io.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

namespace tracemia {

void SynthSpec::check() const {
    if (!dims.valid()) throw std::invalid_argument("synth: dims must be positive");
    if (dims.seq_len < 2) throw std::invalid_argument("synth: seq_len must be at least 2");
    if (!(delta >= 0.0 && delta < 1.0)) throw std::invalid_argument("synth: delta must lie in [0, 1)");
    if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("synth: rho must lie in [0, 1]");
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw std::invalid_argument("synth: beta must be finite and >= 0");
    if (min_length != 0 && (min_length < 2 || min_length > dims.seq_len)) {
        throw std::invalid_argument("synth: min_length must lie in [2, seq_len]");
    }
    if (planted_layer && (*planted_layer == 0 || *planted_layer > dims.n_layers)) {
        throw std::invalid_argument("synth: planted_layer must lie in [1, layers]");
    }
}

namespace {

const char* const kSpecKeys[] = {"layers", "heads", "seq_len", "hidden_dim", "vocab_size", "members",
                                 "nonmembers", "neighbors", "delta", "rho", "beta", "seed", "min_length",
                                 "planted_layer"};

enum Stream : std::uint64_t { kTokens = 1, kLength, kWalk, kAttention, kSpikes };

constexpr std::uint64_t kHeadStream = 0x4845414400000000ULL;

} // namespace

SynthSpec synth_spec_from_json(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("synth spec: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw std::runtime_error("synth spec: expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (std::find(std::begin(kSpecKeys), std::end(kSpecKeys), key) == std::end(kSpecKeys)) {
            throw std::runtime_error("synth spec: unknown key \"" + key + "\"");
        }
    }
    SynthSpec s;
    try {
        s.dims.n_layers = j.value("layers", s.dims.n_layers);
        s.dims.n_heads = j.value("heads", s.dims.n_heads);
        s.dims.seq_len = j.value("seq_len", s.dims.seq_len);
        s.dims.hidden_dim = j.value("hidden_dim", s.dims.hidden_dim);
        s.dims.vocab_size = j.value("vocab_size", s.dims.vocab_size);
        s.members = j.value("members", s.members);
        s.nonmembers = j.value("nonmembers", s.nonmembers);
        s.neighbors = j.value("neighbors", s.neighbors);
        s.delta = j.value("delta", s.delta);
        s.rho = j.value("rho", s.rho);
        s.beta = j.value("beta", s.beta);
        s.seed = j.value("seed", s.seed);
        s.min_length = j.value("min_length", s.min_length);
        if (j.contains("planted_layer") && !j.at("planted_layer").is_null()) {
            s.planted_layer = j.at("planted_layer").get<std::uint32_t>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("synth spec: ") + e.what());
    }
    s.check();
    return s;
}

std::string synth_spec_to_json(const SynthSpec& s) {
    nlohmann::ordered_json j;
    j["layers"] = s.dims.n_layers;
    j["heads"] = s.dims.n_heads;
    j["seq_len"] = s.dims.seq_len;
    j["hidden_dim"] = s.dims.hidden_dim;
    j["vocab_size"] = s.dims.vocab_size;
    j["members"] = s.members;
    j["nonmembers"] = s.nonmembers;
    j["neighbors"] = s.neighbors;
    j["delta"] = s.delta;
    j["rho"] = s.rho;
    j["beta"] = s.beta;
    j["seed"] = s.seed;
    j["min_length"] = s.min_length;
    j["planted_layer"] = s.planted_layer ? nlohmann::ordered_json(*s.planted_layer) : nlohmann::ordered_json();
    return j.dump(2) + "\n";
}

ModelHead synth_head(const SynthSpec& spec) {
    spec.check();
    const std::size_t d = spec.dims.hidden_dim, V = spec.dims.vocab_size;
    ModelHead head;
    head.hidden_dim = spec.dims.hidden_dim;
    head.vocab_size = spec.dims.vocab_size;
    head.norm_kind = NormKind::layernorm;
    head.norm_epsilon = 1e-5f;
    head.gain.assign(d, 1.0f);
    head.bias.assign(d, 0.0f);
    head.unembed.resize(d * V);
    Rng rng(derive_seed(spec.seed, kHeadStream));
    for (auto& w : head.unembed) w = static_cast<float>(rng.normal(0.0, kSynthUnembedScale));
    return head;
}

SequenceTrace synth_trace(const SynthSpec& spec, const ModelHead& head, std::uint64_t index, double effect_scale) {
    const TraceDims& dims = spec.dims;
    const std::size_t L = dims.n_layers, H = dims.n_heads, n = dims.seq_len, d = dims.hidden_dim,
                      V = dims.vocab_size;
    const std::uint64_t trace_seed = derive_seed(spec.seed, index + 1);
    SequenceTrace tr = SequenceTrace::zeros(dims);

    Rng length_rng(derive_seed(trace_seed, kLength));
    const std::size_t length =
        spec.min_length == 0 ? n : static_cast<std::size_t>(length_rng.between(spec.min_length, n));
    for (std::size_t t = 0; t < n; ++t) tr.mask[t] = t < length ? 1 : 0;

    Rng token_rng(derive_seed(trace_seed, kTokens));
    for (std::size_t t = 0; t < length; ++t) tr.token_ids[t] = static_cast<std::uint32_t>(token_rng.below(V));

    const std::size_t m = std::max<std::size_t>(1, spec.middle_layer());
    auto damped = [&](std::size_t transition) {
        if (spec.planted_layer) return transition + 1 == *spec.planted_layer;
        if (L >= 3) return transition >= 1 && transition + 2 <= L;
        return transition + 1 == m;
    };
    auto spiked = [&](std::size_t layer) { return spec.planted_layer ? layer == *spec.planted_layer : layer >= m; };
    auto boosted = [&](std::size_t block) { return spec.planted_layer ? block + 1 == *spec.planted_layer : true; };

    // Hidden states: Gaussian random walk through layers.
    // In planted mode the damped state is a displacement of that layer only;
    // later layers continue from the undamped walk.
    Rng walk_rng(derive_seed(trace_seed, kWalk));
    std::vector<double> h(d), base(d), step(d);
    for (std::size_t t = 0; t < length; ++t) {
        for (std::size_t i = 0; i < d; ++i) h[i] = base[i] = walk_rng.normal();
        for (std::size_t i = 0; i < d; ++i) tr.hidden(0, t)[i] = static_cast<float>(h[i]);
        for (std::size_t l = 0; l < L; ++l) {
            const double factor = damped(l) ? 1.0 - effect_scale * spec.delta : 1.0;
            for (std::size_t i = 0; i < d; ++i) step[i] = walk_rng.normal(0.0, kSynthWalkStep);
            for (std::size_t i = 0; i < d; ++i) {
                if (spec.planted_layer) {
                    h[i] = base[i] + factor * step[i];
                    base[i] += step[i];
                } else {
                    h[i] += factor * step[i];
                }
            }
            for (std::size_t i = 0; i < d; ++i) tr.hidden(l + 1, t)[i] = static_cast<float>(h[i]);
        }
    }

    // Confidence spikes: hidden state replaced by a scaled unembedding column.
    Rng spike_rng(derive_seed(trace_seed, kSpikes));
    const double rate = effect_scale * spec.rho;
    const double magnitude = kSynthSpikeScale * std::sqrt(static_cast<double>(d));
    for (std::size_t t = 0; t < length; ++t) {
        const bool spike = spike_rng.uniform() < rate;
        const std::size_t token = spike_rng.below(V);
        if (!spike) continue;
        double norm = 0.0;
        for (std::size_t i = 0; i < d; ++i) norm += double(head.unembed[i * V + token]) * head.unembed[i * V + token];
        norm = std::sqrt(norm);
        for (std::size_t l = 0; l <= L; ++l) {
            if (!spiked(l)) continue;
            auto row = tr.hidden(l, t);
            for (std::size_t i = 0; i < d; ++i) {
                row[i] = static_cast<float>(0.1 * row[i] + magnitude * head.unembed[i * V + token] / norm);
            }
        }
    }

    // Attention: softmax of random causal logits over valid keys.
    Rng attn_rng(derive_seed(trace_seed, kAttention));
    const std::size_t focused_heads = (H + 1) / 2;
    std::vector<double> logits(n);
    for (std::size_t l = 0; l < L; ++l) {
        for (std::size_t hh = 0; hh < H; ++hh) {
            const double bonus = (hh < focused_heads && boosted(l)) ? effect_scale * spec.beta : 0.0;
            for (std::size_t t = 0; t < length; ++t) {
                double mx = -INFINITY;
                for (std::size_t s = 0; s <= t; ++s) {
                    logits[s] = attn_rng.normal(0.0, kSynthAttentionScale);
                    if (s == t || s + 1 == t) logits[s] += bonus;
                    mx = std::max(mx, logits[s]);
                }
                double sum = 0.0;
                for (std::size_t s = 0; s <= t; ++s) {
                    logits[s] = std::exp(logits[s] - mx);
                    sum += logits[s];
                }
                for (std::size_t s = 0; s <= t; ++s) tr.attention(l, hh, t, s) = static_cast<float>(logits[s] / sum);
            }
        }
    }
    return tr;
}

DatasetManifest generate(const SynthSpec& spec, const std::string& out_dir, unsigned workers) {
    namespace fs = std::filesystem;
    spec.check();
    const ModelHead head = synth_head(spec);
    fs::create_directories(fs::path(out_dir) / "traces");
    write_head(head, (fs::path(out_dir) / "head.mthd").string());

    struct Job {
        Label label;
        std::uint32_t number;
        double effect;
    };
    std::vector<Job> jobs;
    for (std::uint32_t i = 0; i < spec.members; ++i) jobs.push_back({Label::member, i, 1.0});
    for (std::uint32_t i = 0; i < spec.nonmembers; ++i) jobs.push_back({Label::nonmember, i, 0.0});
    for (std::uint32_t i = 0; i < spec.neighbors; ++i) jobs.push_back({Label::neighbor, i, 0.5});
    auto id_of = [](const Job& job) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%s-%05u", to_string(job.label).c_str(), job.number);
        return std::string(buf);
    };

    parallel_for(jobs.size(), workers, [&](std::size_t i) {
        const auto tr = synth_trace(spec, head, i, jobs[i].effect);
        write_trace(tr, (fs::path(out_dir) / "traces" / (id_of(jobs[i]) + ".mtrc")).string());
    });

    DatasetManifest manifest;
    manifest.base_dir = out_dir;
    for (const auto& job : jobs) {
        const auto id = id_of(job);
        manifest.entries.push_back({"traces/" + id + ".mtrc", job.label, "synth", id, std::nullopt});
    }
    write_manifest(manifest, (fs::path(out_dir) / "manifest.jsonl").string());
    return manifest;
}

} // namespace tracemia
