#pragma once

// Small decoder-only transformer (pre-norm, ReLU MLP, learned absolute
// positions, untied unembedding) with an exact hand-written backward pass.
// It exists to produce real traces from a model with a known training set.

#include "tracemia/trace.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace tracemia::toy {

struct ToyConfig {
    std::uint32_t vocab = 64;
    std::uint32_t context = 32; // maximum sequence length
    std::uint32_t layers = 2;
    std::uint32_t heads = 2;
    std::uint32_t hidden = 32;
    std::uint64_t seed = 1;
    double init_std = 0.02;

    std::size_t mlp() const { return 4 * std::size_t{hidden}; }
    std::size_t head_dim() const { return hidden / heads; }
    void check() const;
};

struct TensorInfo {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;
};

// Offsets of every parameter tensor inside one flat buffer.
struct ToyLayout {
    struct Block {
        std::size_t ln1_gain, ln1_bias, wq, wk, wv, wo, ln2_gain, ln2_bias, w1, b1, w2, b2;
    };
    std::size_t tok_embed = 0;
    std::size_t pos_embed = 0;
    std::vector<Block> blocks;
    std::size_t lnf_gain = 0;
    std::size_t lnf_bias = 0;
    std::size_t unembed = 0;
    std::size_t total = 0;
    std::vector<TensorInfo> tensors;

    explicit ToyLayout(const ToyConfig& config);
};

inline constexpr double kLayerNormEpsilon = 1e-5;

struct ToyParams {
    ToyConfig config;
    std::vector<double> data;

    const ToyLayout& layout() const { return layout_; }
    double* at(std::size_t offset) { return data.data() + offset; }
    const double* at(std::size_t offset) const { return data.data() + offset; }

    explicit ToyParams(const ToyConfig& config);

    friend bool operator==(const ToyParams& a, const ToyParams& b) {
        return a.data == b.data && a.config.vocab == b.config.vocab && a.config.context == b.config.context &&
               a.config.layers == b.config.layers && a.config.heads == b.config.heads &&
               a.config.hidden == b.config.hidden;
    }

private:
    ToyLayout layout_;
};

// Seeded Gaussian weights (std = config.init_std); norm gains 1, biases 0.
ToyParams init_params(const ToyConfig& config);

struct ForwardResult {
    SequenceTrace trace;
    std::vector<double> token_losses; // -ln p(next token), one per valid transition
};

// Runs the model on `tokens`, right-padded with token 0 up to pad_to (if
// larger). Records embedding output, block outputs, attention maps and logits.
ForwardResult forward(const ToyParams& params, std::span<const std::uint32_t> tokens, std::size_t pad_to = 0);

// Mean next-token cross-entropy in nats.
double loss(const ToyParams& params, std::span<const std::uint32_t> tokens);

// Loss and its exact gradient (same layout as params.data).
double loss_and_gradient(const ToyParams& params, std::span<const std::uint32_t> tokens, std::vector<double>& grad);
std::vector<double> backward(const ToyParams& params, std::span<const std::uint32_t> tokens);

// Sign of every MLP pre-activation (1 where the ReLU is active), block by block.
std::vector<std::uint8_t> relu_pattern(const ToyParams& params, std::span<const std::uint32_t> tokens);

struct TrainOptions {
    std::size_t steps = 3000;
    double learning_rate = 1e-3;
    std::size_t batch_size = 16;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 7;
};

struct TrainResult {
    std::vector<double> loss_curve; // mean batch loss per step
};

// Adam over shuffled mini-batches; throws if the loss becomes non-finite.
TrainResult train(ToyParams& params, std::span<const std::vector<std::uint32_t>> members, const TrainOptions& options);

ModelHead export_head(const ToyParams& params);

// Sequences from a random sparse Markov chain: each token has `branching`
// equally likely successors. Chains are seeded by chain_seed; sampling by seed.
struct MarkovChain {
    std::uint32_t vocab = 0;
    std::vector<std::vector<std::uint32_t>> successors;

    MarkovChain(std::uint32_t vocab, std::uint32_t branching, std::uint64_t chain_seed);
    std::vector<std::vector<std::uint32_t>> sample(std::size_t count, std::size_t length, std::uint64_t seed) const;
};

struct LabeledSequence {
    std::string id;
    std::vector<std::uint32_t> tokens;
};

std::vector<LabeledSequence> read_sequences(const std::string& path);
void write_sequences(const std::string& path, std::span<const LabeledSequence> sequences);

void save_params(const ToyParams& params, const std::string& path);
ToyParams load_params(const std::string& path);

// Writes traces/<id>.mtrc, head.mthd and manifest.jsonl under out_dir.
DatasetManifest export_traces(const ToyParams& params, std::span<const LabeledSequence> members,
                              std::span<const LabeledSequence> nonmembers, const std::string& out_dir,
                              unsigned workers = 1);

// Training recipe: model, optimizer and Markov data settings in one JSON file.
struct ToyDataSpec {
    std::uint32_t branching = 8;
    std::uint64_t chain_seed = 11;
    std::size_t length = 32;
    std::size_t members = 256;
    std::size_t nonmembers = 256;
    std::uint64_t member_seed = 12;
    std::uint64_t nonmember_seed = 13;
};

struct ToyRecipe {
    ToyConfig model;
    TrainOptions train;
    ToyDataSpec data;
};

ToyRecipe parse_recipe(const std::string& json_text);
ToyRecipe load_recipe(const std::string& path);

struct RecipeData {
    std::vector<LabeledSequence> members;
    std::vector<LabeledSequence> nonmembers;
};

// Members and held-out nonmembers drawn from the same chain with disjoint seeds.
RecipeData make_recipe_data(const ToyRecipe& recipe);

std::vector<std::vector<std::uint32_t>> token_lists(std::span<const LabeledSequence> sequences);

} // namespace tracemia::toy
