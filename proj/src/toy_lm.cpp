#include "tracemia/toy_lm.hpp"

#include "tracemia/kernels.hpp"
#include "tracemia/parallel.hpp"
#include "tracemia/random.hpp"
#include "tracemia/trace_io.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

namespace tracemia::toy {

void ToyConfig::check() const {
    if (vocab == 0 || context < 2 || layers == 0 || heads == 0 || hidden == 0) {
        throw std::invalid_argument("toy config: all sizes must be positive and context >= 2");
    }
    if (hidden % heads != 0) throw std::invalid_argument("toy config: hidden must be divisible by heads");
    if (!(init_std > 0.0)) throw std::invalid_argument("toy config: init_std must be positive");
}

ToyLayout::ToyLayout(const ToyConfig& c) {
    const std::size_t d = c.hidden, V = c.vocab, F = c.mlp();
    auto add = [&](const std::string& name, std::size_t size) {
        tensors.push_back({name, total, size});
        total += size;
        return tensors.back().offset;
    };
    tok_embed = add("tok_embed", V * d);
    pos_embed = add("pos_embed", std::size_t{c.context} * d);
    for (std::uint32_t b = 0; b < c.layers; ++b) {
        const std::string p = "block" + std::to_string(b) + ".";
        Block blk{};
        blk.ln1_gain = add(p + "ln1_gain", d);
        blk.ln1_bias = add(p + "ln1_bias", d);
        blk.wq = add(p + "wq", d * d);
        blk.wk = add(p + "wk", d * d);
        blk.wv = add(p + "wv", d * d);
        blk.wo = add(p + "wo", d * d);
        blk.ln2_gain = add(p + "ln2_gain", d);
        blk.ln2_bias = add(p + "ln2_bias", d);
        blk.w1 = add(p + "w1", d * F);
        blk.b1 = add(p + "b1", F);
        blk.w2 = add(p + "w2", F * d);
        blk.b2 = add(p + "b2", d);
        blocks.push_back(blk);
    }
    lnf_gain = add("lnf_gain", d);
    lnf_bias = add("lnf_bias", d);
    unembed = add("unembed", d * V);
}

ToyParams::ToyParams(const ToyConfig& c) : config(c), layout_((c.check(), c)) { data.assign(layout_.total, 0.0); }

ToyParams init_params(const ToyConfig& config) {
    ToyParams p(config);
    Rng rng(config.seed);
    for (const auto& t : p.layout().tensors) {
        const bool is_gain = t.name.ends_with("_gain");
        const bool is_bias = t.name.ends_with("_bias") || t.name.ends_with(".b1") || t.name.ends_with(".b2");
        for (std::size_t i = 0; i < t.size; ++i) {
            p.data[t.offset + i] = is_gain ? 1.0 : is_bias ? 0.0 : rng.normal(0.0, config.init_std);
        }
    }
    return p;
}

namespace {

struct LayerNormCache {
    std::vector<double> xhat;    // T x d
    std::vector<double> inv_std; // T
};

void layer_norm_forward(const double* x, const double* gain, const double* bias, std::size_t T, std::size_t d,
                        double* y, LayerNormCache& cache) {
    cache.xhat.resize(T * d);
    cache.inv_std.resize(T);
    for (std::size_t t = 0; t < T; ++t) {
        const double* row = x + t * d;
        double mean = 0.0;
        for (std::size_t i = 0; i < d; ++i) mean += row[i];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) var += (row[i] - mean) * (row[i] - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + kLayerNormEpsilon);
        cache.inv_std[t] = inv;
        for (std::size_t i = 0; i < d; ++i) {
            const double xh = (row[i] - mean) * inv;
            cache.xhat[t * d + i] = xh;
            y[t * d + i] = gain[i] * xh + bias[i];
        }
    }
}

// Adds the input gradient to dx and accumulates dgain/dbias.
void layer_norm_backward(const double* dy, const double* gain, const LayerNormCache& cache, std::size_t T,
                         std::size_t d, double* dx, double* dgain, double* dbias) {
    std::vector<double> dxhat(d);
    for (std::size_t t = 0; t < T; ++t) {
        const double* xh = cache.xhat.data() + t * d;
        const double* g = dy + t * d;
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            dgain[i] += g[i] * xh[i];
            dbias[i] += g[i];
            dxhat[i] = g[i] * gain[i];
            mean_dxhat += dxhat[i];
            mean_dxhat_xhat += dxhat[i] * xh[i];
        }
        mean_dxhat /= static_cast<double>(d);
        mean_dxhat_xhat /= static_cast<double>(d);
        const double inv = cache.inv_std[t];
        for (std::size_t i = 0; i < d; ++i) {
            dx[t * d + i] += inv * (dxhat[i] - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
}

// out (T x cols) = in (T x rows) @ w (rows x cols) [+ bias]
void matmul(const double* in, const double* w, const double* bias, std::size_t T, std::size_t rows,
            std::size_t cols, double* out) {
    const auto& k = kernels::active();
    for (std::size_t t = 0; t < T; ++t) {
        k.vecmat(in + t * rows, w, rows, cols, out + t * cols);
        if (bias) {
            for (std::size_t j = 0; j < cols; ++j) out[t * cols + j] += bias[j];
        }
    }
}

// Given dout (T x cols) for out = in @ w: dw += in^T dout, din += dout w^T.
void matmul_backward(const double* in, const double* w, const double* dout, std::size_t T, std::size_t rows,
                     std::size_t cols, double* dw, double* din) {
    const auto& k = kernels::active();
    for (std::size_t t = 0; t < T; ++t) {
        const double* g = dout + t * cols;
        const double* x = in + t * rows;
        for (std::size_t i = 0; i < rows; ++i) {
            k.axpy(x[i], g, dw + i * cols, cols);
            if (din) din[t * rows + i] += k.dot(w + i * cols, g, cols);
        }
    }
}

struct BlockCache {
    std::vector<double> input; // T x d
    LayerNormCache ln1;
    std::vector<double> a, q, k, v; // T x d
    std::vector<double> probs;      // H x T x T
    std::vector<double> o;          // T x d (heads concatenated)
    std::vector<double> mid;        // input + attention output
    LayerNormCache ln2;
    std::vector<double> m;  // T x d
    std::vector<double> u;  // T x F pre-activation
    std::vector<double> r;  // T x F
};

struct ForwardCache {
    std::size_t T = 0;
    std::vector<std::uint32_t> tokens;
    std::vector<std::uint8_t> mask;
    std::vector<std::vector<double>> hidden; // L+1 of T x d
    std::vector<BlockCache> blocks;
    LayerNormCache lnf;
    std::vector<double> z;      // T x d
    std::vector<double> logits; // T x V
};

void run_forward(const ToyParams& p, std::span<const std::uint32_t> tokens, std::size_t pad_to, ForwardCache& c) {
    const ToyConfig& cfg = p.config;
    const ToyLayout& lay = p.layout();
    const std::size_t n_real = tokens.size();
    if (n_real == 0) throw std::invalid_argument("forward needs at least one token");
    const std::size_t T = std::max(n_real, pad_to);
    if (T > cfg.context) throw std::invalid_argument("sequence longer than model context");
    for (auto tok : tokens) {
        if (tok >= cfg.vocab) throw std::invalid_argument("token id " + std::to_string(tok) + " >= vocab");
    }
    const std::size_t d = cfg.hidden, V = cfg.vocab, F = cfg.mlp(), H = cfg.heads, dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto& kern = kernels::active();

    c.T = T;
    c.tokens.assign(T, 0);
    std::copy(tokens.begin(), tokens.end(), c.tokens.begin());
    c.mask.assign(T, 0);
    std::fill(c.mask.begin(), c.mask.begin() + static_cast<std::ptrdiff_t>(n_real), 1);

    c.hidden.assign(cfg.layers + 1, std::vector<double>(T * d));
    auto& x0 = c.hidden[0];
    for (std::size_t t = 0; t < T; ++t) {
        const double* te = p.at(lay.tok_embed) + c.tokens[t] * d;
        const double* pe = p.at(lay.pos_embed) + t * d;
        for (std::size_t i = 0; i < d; ++i) x0[t * d + i] = te[i] + pe[i];
    }

    c.blocks.resize(cfg.layers);
    for (std::size_t b = 0; b < cfg.layers; ++b) {
        const auto& L = lay.blocks[b];
        BlockCache& bc = c.blocks[b];
        bc.input = c.hidden[b];
        bc.a.resize(T * d);
        layer_norm_forward(bc.input.data(), p.at(L.ln1_gain), p.at(L.ln1_bias), T, d, bc.a.data(), bc.ln1);
        bc.q.resize(T * d);
        bc.k.resize(T * d);
        bc.v.resize(T * d);
        matmul(bc.a.data(), p.at(L.wq), nullptr, T, d, d, bc.q.data());
        matmul(bc.a.data(), p.at(L.wk), nullptr, T, d, d, bc.k.data());
        matmul(bc.a.data(), p.at(L.wv), nullptr, T, d, d, bc.v.data());

        bc.probs.assign(H * T * T, 0.0);
        bc.o.assign(T * d, 0.0);
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t t = 0; t < T; ++t) {
                double* row = bc.probs.data() + (h * T + t) * T;
                double mx = -INFINITY;
                for (std::size_t s = 0; s <= t; ++s) {
                    if (!c.mask[s]) continue;
                    row[s] = kern.dot(bc.q.data() + t * d + h * dh, bc.k.data() + s * d + h * dh, dh) * scale;
                    mx = std::max(mx, row[s]);
                }
                double sum = 0.0;
                for (std::size_t s = 0; s <= t; ++s) {
                    if (!c.mask[s]) continue;
                    row[s] = std::exp(row[s] - mx);
                    sum += row[s];
                }
                for (std::size_t s = 0; s <= t; ++s) {
                    if (!c.mask[s]) continue;
                    row[s] /= sum;
                    kern.axpy(row[s], bc.v.data() + s * d + h * dh, bc.o.data() + t * d + h * dh, dh);
                }
            }
        }
        bc.mid = bc.input;
        {
            std::vector<double> attn_out(T * d);
            matmul(bc.o.data(), p.at(L.wo), nullptr, T, d, d, attn_out.data());
            for (std::size_t i = 0; i < T * d; ++i) bc.mid[i] += attn_out[i];
        }
        bc.m.resize(T * d);
        layer_norm_forward(bc.mid.data(), p.at(L.ln2_gain), p.at(L.ln2_bias), T, d, bc.m.data(), bc.ln2);
        bc.u.resize(T * F);
        matmul(bc.m.data(), p.at(L.w1), p.at(L.b1), T, d, F, bc.u.data());
        bc.r.resize(T * F);
        for (std::size_t i = 0; i < T * F; ++i) bc.r[i] = bc.u[i] > 0.0 ? bc.u[i] : 0.0;
        auto& out = c.hidden[b + 1];
        matmul(bc.r.data(), p.at(L.w2), p.at(L.b2), T, F, d, out.data());
        for (std::size_t i = 0; i < T * d; ++i) out[i] += bc.mid[i];
    }

    c.z.resize(T * d);
    layer_norm_forward(c.hidden[cfg.layers].data(), p.at(lay.lnf_gain), p.at(lay.lnf_bias), T, d, c.z.data(), c.lnf);
    c.logits.resize(T * V);
    matmul(c.z.data(), p.at(lay.unembed), nullptr, T, d, V, c.logits.data());
}

// -ln p(tokens[t+1]) at t, and softmax probabilities (T x V) when wanted.
std::vector<double> token_losses(const ForwardCache& c, std::size_t n_real, std::size_t V,
                                 std::vector<double>* probs) {
    std::vector<double> losses;
    if (probs) probs->assign(c.T * V, 0.0);
    for (std::size_t t = 0; t + 1 < n_real; ++t) {
        const double* z = c.logits.data() + t * V;
        const double mx = *std::max_element(z, z + V);
        double sum = 0.0;
        for (std::size_t v = 0; v < V; ++v) sum += std::exp(z[v] - mx);
        const double log_sum = std::log(sum);
        losses.push_back(-(z[c.tokens[t + 1]] - mx - log_sum));
        if (probs) {
            for (std::size_t v = 0; v < V; ++v) (*probs)[t * V + v] = std::exp(z[v] - mx - log_sum);
        }
    }
    return losses;
}

} // namespace

ForwardResult forward(const ToyParams& params, std::span<const std::uint32_t> tokens, std::size_t pad_to) {
    ForwardCache c;
    run_forward(params, tokens, pad_to, c);
    const ToyConfig& cfg = params.config;
    const std::size_t T = c.T, d = cfg.hidden, V = cfg.vocab;

    ForwardResult result;
    SequenceTrace& tr = result.trace;
    tr.dims = {cfg.layers, cfg.heads, static_cast<std::uint32_t>(T), cfg.hidden, cfg.vocab};
    tr.token_ids = c.tokens;
    tr.mask = c.mask;
    tr.hidden_states.resize(tr.dims.hidden_count());
    for (std::size_t l = 0; l <= cfg.layers; ++l) {
        for (std::size_t i = 0; i < T * d; ++i) tr.hidden_states[l * T * d + i] = static_cast<float>(c.hidden[l][i]);
    }
    tr.attentions.resize(tr.dims.attention_count());
    const std::size_t per_layer = std::size_t{cfg.heads} * T * T;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        for (std::size_t i = 0; i < per_layer; ++i) {
            tr.attentions[l * per_layer + i] = static_cast<float>(c.blocks[l].probs[i]);
        }
    }
    tr.final_logits = std::vector<float>(T * V);
    for (std::size_t i = 0; i < T * V; ++i) (*tr.final_logits)[i] = static_cast<float>(c.logits[i]);
    result.token_losses = token_losses(c, tokens.size(), V, nullptr);
    return result;
}

double loss(const ToyParams& params, std::span<const std::uint32_t> tokens) {
    if (tokens.size() < 2) throw std::invalid_argument("loss needs at least 2 tokens");
    ForwardCache c;
    run_forward(params, tokens, 0, c);
    const auto losses = token_losses(c, tokens.size(), params.config.vocab, nullptr);
    double total = 0.0;
    for (double l : losses) total += l;
    return total / static_cast<double>(losses.size());
}

double loss_and_gradient(const ToyParams& p, std::span<const std::uint32_t> tokens, std::vector<double>& grad) {
    if (tokens.size() < 2) throw std::invalid_argument("loss needs at least 2 tokens");
    const ToyConfig& cfg = p.config;
    const ToyLayout& lay = p.layout();
    ForwardCache c;
    run_forward(p, tokens, 0, c);
    const std::size_t T = c.T, d = cfg.hidden, V = cfg.vocab, F = cfg.mlp(), H = cfg.heads, dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto& kern = kernels::active();

    std::vector<double> probs;
    const auto losses = token_losses(c, T, V, &probs);
    const double count = static_cast<double>(losses.size());
    double mean_loss = 0.0;
    for (double l : losses) mean_loss += l;
    mean_loss /= count;

    grad.assign(lay.total, 0.0);
    double* g = grad.data();

    // d loss / d logits = (softmax - onehot) / count at predicting positions.
    std::vector<double> dlogits(T * V, 0.0);
    for (std::size_t t = 0; t + 1 < T; ++t) {
        for (std::size_t v = 0; v < V; ++v) dlogits[t * V + v] = probs[t * V + v] / count;
        dlogits[t * V + c.tokens[t + 1]] -= 1.0 / count;
    }
    std::vector<double> dz(T * d, 0.0);
    matmul_backward(c.z.data(), p.at(lay.unembed), dlogits.data(), T, d, V, g + lay.unembed, dz.data());
    std::vector<double> dx(T * d, 0.0);
    layer_norm_backward(dz.data(), p.at(lay.lnf_gain), c.lnf, T, d, dx.data(), g + lay.lnf_gain, g + lay.lnf_bias);

    for (std::size_t bi = cfg.layers; bi-- > 0;) {
        const auto& L = lay.blocks[bi];
        const BlockCache& bc = c.blocks[bi];
        // MLP branch: out = mid + relu(m W1 + b1) W2 + b2
        std::vector<double> dmid = dx;
        std::vector<double> dr(T * F, 0.0);
        matmul_backward(bc.r.data(), p.at(L.w2), dx.data(), T, F, d, g + L.w2, dr.data());
        for (std::size_t t = 0; t < T; ++t) kern.axpy(1.0, dx.data() + t * d, g + L.b2, d);
        for (std::size_t i = 0; i < T * F; ++i) {
            if (!(bc.u[i] > 0.0)) dr[i] = 0.0;
        }
        std::vector<double> dm(T * d, 0.0);
        matmul_backward(bc.m.data(), p.at(L.w1), dr.data(), T, d, F, g + L.w1, dm.data());
        for (std::size_t t = 0; t < T; ++t) kern.axpy(1.0, dr.data() + t * F, g + L.b1, F);
        layer_norm_backward(dm.data(), p.at(L.ln2_gain), bc.ln2, T, d, dmid.data(), g + L.ln2_gain, g + L.ln2_bias);

        // Attention branch: mid = input + o Wo
        std::vector<double> dinput = dmid;
        std::vector<double> dout_heads(T * d, 0.0);
        matmul_backward(bc.o.data(), p.at(L.wo), dmid.data(), T, d, d, g + L.wo, dout_heads.data());
        std::vector<double> dq(T * d, 0.0), dk(T * d, 0.0), dv(T * d, 0.0);
        std::vector<double> dp(T);
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t t = 0; t < T; ++t) {
                const double* row = bc.probs.data() + (h * T + t) * T;
                const double* dot_t = dout_heads.data() + t * d + h * dh;
                double weighted = 0.0;
                for (std::size_t s = 0; s <= t; ++s) {
                    if (!c.mask[s]) continue;
                    dp[s] = kern.dot(dot_t, bc.v.data() + s * d + h * dh, dh);
                    weighted += row[s] * dp[s];
                    kern.axpy(row[s], dot_t, dv.data() + s * d + h * dh, dh);
                }
                for (std::size_t s = 0; s <= t; ++s) {
                    if (!c.mask[s]) continue;
                    const double ds = row[s] * (dp[s] - weighted) * scale;
                    kern.axpy(ds, bc.k.data() + s * d + h * dh, dq.data() + t * d + h * dh, dh);
                    kern.axpy(ds, bc.q.data() + t * d + h * dh, dk.data() + s * d + h * dh, dh);
                }
            }
        }
        std::vector<double> da(T * d, 0.0);
        matmul_backward(bc.a.data(), p.at(L.wq), dq.data(), T, d, d, g + L.wq, da.data());
        matmul_backward(bc.a.data(), p.at(L.wk), dk.data(), T, d, d, g + L.wk, da.data());
        matmul_backward(bc.a.data(), p.at(L.wv), dv.data(), T, d, d, g + L.wv, da.data());
        layer_norm_backward(da.data(), p.at(L.ln1_gain), bc.ln1, T, d, dinput.data(), g + L.ln1_gain,
                            g + L.ln1_bias);
        dx = std::move(dinput);
    }

    for (std::size_t t = 0; t < T; ++t) {
        kern.axpy(1.0, dx.data() + t * d, g + lay.tok_embed + c.tokens[t] * d, d);
        kern.axpy(1.0, dx.data() + t * d, g + lay.pos_embed + t * d, d);
    }
    return mean_loss;
}

std::vector<double> backward(const ToyParams& params, std::span<const std::uint32_t> tokens) {
    std::vector<double> grad;
    loss_and_gradient(params, tokens, grad);
    return grad;
}

std::vector<std::uint8_t> relu_pattern(const ToyParams& params, std::span<const std::uint32_t> tokens) {
    ForwardCache c;
    run_forward(params, tokens, 0, c);
    std::vector<std::uint8_t> pattern;
    for (const auto& bc : c.blocks) {
        for (double u : bc.u) pattern.push_back(u > 0.0 ? 1 : 0);
    }
    return pattern;
}

TrainResult train(ToyParams& params, std::span<const std::vector<std::uint32_t>> members, const TrainOptions& opt) {
    if (members.empty()) throw std::invalid_argument("train needs at least one member sequence");
    const std::size_t batch = std::max<std::size_t>(1, std::min(opt.batch_size, members.size()));
    const std::size_t P = params.data.size();
    std::vector<double> m(P, 0.0), v(P, 0.0), grad_sum(P), grad;
    std::vector<std::size_t> order(members.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(opt.seed);
    std::size_t cursor = order.size(); // forces a shuffle on the first step

    TrainResult result;
    result.loss_curve.reserve(opt.steps);
    double beta1_pow = 1.0, beta2_pow = 1.0;
    for (std::size_t step = 0; step < opt.steps; ++step) {
        std::fill(grad_sum.begin(), grad_sum.end(), 0.0);
        double batch_loss = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            if (cursor >= order.size()) {
                rng.shuffle(order.begin(), order.end());
                cursor = 0;
            }
            batch_loss += loss_and_gradient(params, members[order[cursor++]], grad);
            for (std::size_t i = 0; i < P; ++i) grad_sum[i] += grad[i];
        }
        batch_loss /= static_cast<double>(batch);
        if (!std::isfinite(batch_loss)) {
            throw std::runtime_error("training diverged at step " + std::to_string(step) + " (loss is not finite)");
        }
        result.loss_curve.push_back(batch_loss);
        beta1_pow *= opt.beta1;
        beta2_pow *= opt.beta2;
        const double inv_batch = 1.0 / static_cast<double>(batch);
        const double lr_t = opt.learning_rate * std::sqrt(1.0 - beta2_pow) / (1.0 - beta1_pow);
        for (std::size_t i = 0; i < P; ++i) {
            const double gi = grad_sum[i] * inv_batch;
            m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * gi;
            v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * gi * gi;
            params.data[i] -= lr_t * m[i] / (std::sqrt(v[i]) + opt.epsilon);
        }
    }
    return result;
}

ModelHead export_head(const ToyParams& params) {
    const ToyConfig& cfg = params.config;
    const ToyLayout& lay = params.layout();
    ModelHead head;
    head.hidden_dim = cfg.hidden;
    head.vocab_size = cfg.vocab;
    head.norm_kind = NormKind::layernorm;
    head.norm_epsilon = static_cast<float>(kLayerNormEpsilon);
    auto copy = [&](std::size_t offset, std::size_t n) {
        std::vector<float> out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(params.data[offset + i]);
        return out;
    };
    head.gain = copy(lay.lnf_gain, cfg.hidden);
    head.bias = copy(lay.lnf_bias, cfg.hidden);
    head.unembed = copy(lay.unembed, std::size_t{cfg.hidden} * cfg.vocab);
    return head;
}

MarkovChain::MarkovChain(std::uint32_t vocab_size, std::uint32_t branching, std::uint64_t chain_seed)
    : vocab(vocab_size) {
    if (vocab_size == 0 || branching == 0 || branching > vocab_size) {
        throw std::invalid_argument("markov chain needs 0 < branching <= vocab");
    }
    Rng rng(chain_seed);
    std::vector<std::uint32_t> all(vocab_size);
    for (std::uint32_t i = 0; i < vocab_size; ++i) all[i] = i;
    successors.resize(vocab_size);
    for (auto& next : successors) {
        rng.shuffle(all.begin(), all.end());
        next.assign(all.begin(), all.begin() + branching);
    }
}

std::vector<std::vector<std::uint32_t>> MarkovChain::sample(std::size_t count, std::size_t length,
                                                            std::uint64_t seed) const {
    Rng rng(seed);
    std::vector<std::vector<std::uint32_t>> out(count);
    for (auto& seq : out) {
        seq.resize(length);
        seq[0] = static_cast<std::uint32_t>(rng.below(vocab));
        for (std::size_t t = 1; t < length; ++t) {
            const auto& next = successors[seq[t - 1]];
            seq[t] = next[rng.below(next.size())];
        }
    }
    return out;
}

std::vector<LabeledSequence> read_sequences(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<LabeledSequence> out;
    std::set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto where = path + ":" + std::to_string(line_no);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(where + ": invalid JSON: " + e.what());
        }
        if (!j.contains("id") || !j.contains("tokens")) throw std::runtime_error(where + ": missing id or tokens");
        LabeledSequence seq{j.at("id").get<std::string>(), j.at("tokens").get<std::vector<std::uint32_t>>()};
        if (!seen.insert(seq.id).second) throw std::runtime_error(where + ": duplicate id " + seq.id);
        out.push_back(std::move(seq));
    }
    return out;
}

void write_sequences(const std::string& path, std::span<const LabeledSequence> sequences) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto& s : sequences) {
        nlohmann::ordered_json j;
        j["id"] = s.id;
        j["tokens"] = s.tokens;
        out << j.dump() << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

namespace {

constexpr char kParamsMagic[4] = {'M', 'T', 'P', 'M'};
constexpr std::uint32_t kParamsVersion = 1;

template <class T>
void put(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::string& path) {
    T value{};
    if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw std::runtime_error(path + ": truncated params");
    return value;
}

} // namespace

void save_params(const ToyParams& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    const ToyConfig& c = params.config;
    out.write(kParamsMagic, 4);
    put(out, kParamsVersion);
    put(out, c.vocab);
    put(out, c.context);
    put(out, c.layers);
    put(out, c.heads);
    put(out, c.hidden);
    put(out, c.seed);
    put(out, c.init_std);
    put(out, static_cast<std::uint64_t>(params.data.size()));
    out.write(reinterpret_cast<const char*>(params.data.data()),
              static_cast<std::streamsize>(params.data.size() * sizeof(double)));
    if (!out) throw std::runtime_error("write failed: " + path);
}

ToyParams load_params(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kParamsMagic, 4) != 0) {
        throw std::runtime_error(path + ": bad magic");
    }
    if (get<std::uint32_t>(in, path) != kParamsVersion) throw std::runtime_error(path + ": unsupported version");
    ToyConfig c;
    c.vocab = get<std::uint32_t>(in, path);
    c.context = get<std::uint32_t>(in, path);
    c.layers = get<std::uint32_t>(in, path);
    c.heads = get<std::uint32_t>(in, path);
    c.hidden = get<std::uint32_t>(in, path);
    c.seed = get<std::uint64_t>(in, path);
    c.init_std = get<double>(in, path);
    ToyParams p(c);
    if (get<std::uint64_t>(in, path) != p.data.size()) throw std::runtime_error(path + ": parameter count mismatch");
    if (!in.read(reinterpret_cast<char*>(p.data.data()), static_cast<std::streamsize>(p.data.size() * sizeof(double)))) {
        throw std::runtime_error(path + ": truncated params");
    }
    if (in.peek() != std::char_traits<char>::eof()) throw std::runtime_error(path + ": trailing bytes");
    return p;
}

DatasetManifest export_traces(const ToyParams& params, std::span<const LabeledSequence> members,
                              std::span<const LabeledSequence> nonmembers, const std::string& out_dir,
                              unsigned workers) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "traces");
    write_head(export_head(params), (fs::path(out_dir) / "head.mthd").string());

    struct Job {
        const LabeledSequence* seq;
        Label label;
    };
    std::vector<Job> jobs;
    for (const auto& s : members) jobs.push_back({&s, Label::member});
    for (const auto& s : nonmembers) jobs.push_back({&s, Label::nonmember});
    std::set<std::string> ids;
    for (const auto& j : jobs) {
        if (!ids.insert(j.seq->id).second) throw std::invalid_argument("duplicate id " + j.seq->id);
    }

    parallel_for(jobs.size(), workers, [&](std::size_t i) {
        const auto result = forward(params, jobs[i].seq->tokens);
        write_trace(result.trace, (fs::path(out_dir) / "traces" / (jobs[i].seq->id + ".mtrc")).string());
    });

    DatasetManifest manifest;
    manifest.base_dir = out_dir;
    for (const auto& j : jobs) {
        manifest.entries.push_back({"traces/" + j.seq->id + ".mtrc", j.label, "toy", j.seq->id, std::nullopt});
    }
    write_manifest(manifest, (fs::path(out_dir) / "manifest.jsonl").string());
    return manifest;
}

namespace {

template <class T>
void read_field(const nlohmann::json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

void reject_unknown(const nlohmann::json& obj, std::initializer_list<const char*> keys, const std::string& where) {
    if (!obj.is_object()) throw std::runtime_error("toy recipe: " + where + " must be an object");
    for (const auto& [key, value] : obj.items()) {
        if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return key == k; })) {
            throw std::runtime_error("toy recipe: unknown key \"" + key + "\" in " + where);
        }
    }
}

} // namespace

ToyRecipe parse_recipe(const std::string& json_text) {
    ToyRecipe r;
    try {
        const auto j = nlohmann::json::parse(json_text);
        reject_unknown(j, {"model", "train", "data"}, "recipe");
        if (j.contains("model")) {
            const auto& m = j.at("model");
            reject_unknown(m, {"vocab", "context", "layers", "heads", "hidden", "seed", "init_std"}, "model");
            read_field(m, "vocab", r.model.vocab);
            read_field(m, "context", r.model.context);
            read_field(m, "layers", r.model.layers);
            read_field(m, "heads", r.model.heads);
            read_field(m, "hidden", r.model.hidden);
            read_field(m, "seed", r.model.seed);
            read_field(m, "init_std", r.model.init_std);
        }
        if (j.contains("train")) {
            const auto& t = j.at("train");
            reject_unknown(t, {"steps", "learning_rate", "batch_size", "beta1", "beta2", "epsilon", "seed"}, "train");
            read_field(t, "steps", r.train.steps);
            read_field(t, "learning_rate", r.train.learning_rate);
            read_field(t, "batch_size", r.train.batch_size);
            read_field(t, "beta1", r.train.beta1);
            read_field(t, "beta2", r.train.beta2);
            read_field(t, "epsilon", r.train.epsilon);
            read_field(t, "seed", r.train.seed);
        }
        if (j.contains("data")) {
            const auto& d = j.at("data");
            reject_unknown(d, {"branching", "chain_seed", "length", "members", "nonmembers", "member_seed",
                               "nonmember_seed"},
                           "data");
            read_field(d, "branching", r.data.branching);
            read_field(d, "chain_seed", r.data.chain_seed);
            read_field(d, "length", r.data.length);
            read_field(d, "members", r.data.members);
            read_field(d, "nonmembers", r.data.nonmembers);
            read_field(d, "member_seed", r.data.member_seed);
            read_field(d, "nonmember_seed", r.data.nonmember_seed);
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("toy recipe: ") + e.what());
    }
    r.model.check();
    if (r.data.length < 2 || r.data.length > r.model.context) {
        throw std::runtime_error("toy recipe: data length must lie in [2, context]");
    }
    if (r.data.member_seed == r.data.nonmember_seed) {
        throw std::runtime_error("toy recipe: member and nonmember seeds must differ");
    }
    return r;
}

ToyRecipe load_recipe(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_recipe(text);
}

RecipeData make_recipe_data(const ToyRecipe& recipe) {
    const MarkovChain chain(recipe.model.vocab, recipe.data.branching, recipe.data.chain_seed);
    auto label = [](std::vector<std::vector<std::uint32_t>> seqs, const char* prefix) {
        std::vector<LabeledSequence> out;
        char buf[48];
        for (std::size_t i = 0; i < seqs.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%s-%05zu", prefix, i);
            out.push_back({buf, std::move(seqs[i])});
        }
        return out;
    };
    RecipeData data;
    data.members = label(chain.sample(recipe.data.members, recipe.data.length, recipe.data.member_seed), "member");
    data.nonmembers =
        label(chain.sample(recipe.data.nonmembers, recipe.data.length, recipe.data.nonmember_seed), "nonmember");
    return data;
}

std::vector<std::vector<std::uint32_t>> token_lists(std::span<const LabeledSequence> sequences) {
    std::vector<std::vector<std::uint32_t>> out;
    out.reserve(sequences.size());
    for (const auto& s : sequences) out.push_back(s.tokens);
    return out;
}

} // namespace tracemia::toy
