#pragma once

#include "tracemia/classifier.hpp"
#include "tracemia/random.hpp"
#include "tracemia/toy_lm.hpp"
#include "tracemia/trace.hpp"

#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace tracemia::testing {

// Valid trace with causal softmax attention over unmasked keys. Masked query
// rows and masked hidden states hold junk that must never be read.
SequenceTrace random_trace(Rng& rng, const TraceDims& dims, const std::vector<std::uint8_t>& mask,
                           bool with_logits = false);
SequenceTrace random_trace(Rng& rng, const TraceDims& dims, bool with_logits = false);

// Random mask with at least two valid positions.
std::vector<std::uint8_t> random_mask(Rng& rng, std::size_t n);

// Random small dims within the given bounds.
TraceDims random_dims(Rng& rng, std::uint32_t max_layers, std::uint32_t max_heads, std::uint32_t max_len,
                      std::uint32_t max_hidden, std::uint32_t max_vocab);

ModelHead random_head(Rng& rng, std::uint32_t d, std::uint32_t vocab, NormKind kind, bool unembed_bias = false);

// Same trace followed by `extra` masked positions filled with junk.
SequenceTrace append_padding(Rng& rng, const SequenceTrace& trace, std::size_t extra);

// Direct-formula features keyed by name. Shares no code with the library.
std::map<std::string, double> oracle_features(const SequenceTrace& trace, const ModelHead& head);

bool close_rel(double a, double b, double tol);

// Records every scaler fit and flags evaluations whose rows overlap the rows
// the same stage's scaler was fitted on.
class LeakageAudit : public ScalerAudit {
public:
    void on_fit(std::string_view stage, std::span<const std::size_t> rows) override;
    void on_evaluate(std::string_view stage, std::span<const std::size_t> rows) override;

    std::size_t fits = 0;
    std::size_t evaluations = 0;
    std::vector<std::string> problems;

private:
    std::map<std::string, std::set<std::size_t>, std::less<>> fitted_;
};

struct TensorGradientError {
    std::string name;
    double error = 0.0; // max|analytic - numeric| / max(max|numeric|, 1e-8)
    std::size_t kink_probes = 0;
};

// Central finite differences with step h against toy::backward, per tensor.
// A probe whose +-h perturbation flips a ReLU is retried with the step cut
// tenfold (up to 1e-6 h) until the activation pattern holds; a difference
// across a kink is not a derivative.
std::vector<TensorGradientError> toy_gradient_check(const toy::ToyParams& params,
                                                    std::span<const std::uint32_t> tokens, double h = 1e-4);

class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

std::string fixture_dir();

} // namespace tracemia::testing
