#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tracemia::testing {

namespace {

double norm_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double dot_of(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double distance_of(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

struct Stats {
    double mean, min, max, std, argmin, argmax;
};

Stats stats_of(const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= n;
    std::size_t lo = 0, hi = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] < v[lo]) lo = i;
        if (v[i] > v[hi]) hi = i;
    }
    const double span = v.size() > 1 ? n - 1.0 : 1.0;
    return {mean, v[lo], v[hi], std::sqrt(var), v.size() > 1 ? lo / span : 0.0, v.size() > 1 ? hi / span : 0.0};
}

std::vector<double> hidden_of(const SequenceTrace& t, std::size_t layer, std::size_t pos) {
    std::vector<double> out(t.dims.hidden_dim);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = t.hidden_states[(layer * t.dims.seq_len + pos) * t.dims.hidden_dim + i];
    }
    return out;
}

std::vector<double> lens_probs(const ModelHead& head, const std::vector<double>& h) {
    const std::size_t d = head.hidden_dim;
    const double eps = head.norm_epsilon;
    std::vector<double> x(h);
    if (head.norm_kind == NormKind::layernorm) {
        double mean = 0.0;
        for (double v : h) mean += v;
        mean /= d;
        double var = 0.0;
        for (double v : h) var += (v - mean) * (v - mean);
        var /= d;
        for (std::size_t i = 0; i < d; ++i) x[i] = (h[i] - mean) * head.gain[i] / std::sqrt(var + eps) + head.bias[i];
    } else if (head.norm_kind == NormKind::rmsnorm) {
        double ms = 0.0;
        for (double v : h) ms += v * v;
        ms /= d;
        for (std::size_t i = 0; i < d; ++i) x[i] = h[i] * head.gain[i] / std::sqrt(ms + eps);
    }
    std::vector<double> z(head.vocab_size, 0.0);
    for (std::size_t v = 0; v < z.size(); ++v) {
        for (std::size_t i = 0; i < d; ++i) z[v] += x[i] * static_cast<double>(head.unembed[i * head.vocab_size + v]);
        if (head.unembed_bias) z[v] += (*head.unembed_bias)[v];
    }
    const double top = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (double& v : z) {
        v = std::exp(v - top);
        total += v;
    }
    for (double& v : z) v /= total;
    return z;
}

void put_stats(std::map<std::string, double>& out, const std::string& prefix, const Stats& s, bool with_args) {
    out[prefix + "_mean"] = s.mean;
    out[prefix + "_min"] = s.min;
    out[prefix + "_max"] = s.max;
    out[prefix + "_std"] = s.std;
    if (with_args) {
        out[prefix + "_argmin"] = s.argmin;
        out[prefix + "_argmax"] = s.argmax;
    }
}

} // namespace

std::vector<std::uint8_t> random_mask(Rng& rng, std::size_t n) {
    std::vector<std::uint8_t> mask(n, 1);
    const int style = static_cast<int>(rng.below(3));
    if (style == 1) {
        const std::size_t valid = 2 + rng.below(n - 1);
        for (std::size_t t = valid; t < n; ++t) mask[t] = 0;
    } else if (style == 2) {
        for (auto& m : mask) m = rng.uniform() < 0.7 ? 1 : 0;
        std::size_t count = std::count(mask.begin(), mask.end(), std::uint8_t{1});
        for (std::size_t t = 0; count < 2; ++t) {
            if (!mask[t]) {
                mask[t] = 1;
                ++count;
            }
        }
    }
    return mask;
}

TraceDims random_dims(Rng& rng, std::uint32_t max_layers, std::uint32_t max_heads, std::uint32_t max_len,
                      std::uint32_t max_hidden, std::uint32_t max_vocab) {
    TraceDims d;
    d.n_layers = 1 + static_cast<std::uint32_t>(rng.below(max_layers));
    d.n_heads = 1 + static_cast<std::uint32_t>(rng.below(max_heads));
    d.seq_len = 2 + static_cast<std::uint32_t>(rng.below(max_len - 1));
    d.hidden_dim = 1 + static_cast<std::uint32_t>(rng.below(max_hidden));
    d.vocab_size = 2 + static_cast<std::uint32_t>(rng.below(max_vocab - 1));
    return d;
}

SequenceTrace random_trace(Rng& rng, const TraceDims& dims, const std::vector<std::uint8_t>& mask, bool with_logits) {
    SequenceTrace t = SequenceTrace::zeros(dims, with_logits);
    t.mask = mask;
    for (auto& id : t.token_ids) id = static_cast<std::uint32_t>(rng.below(dims.vocab_size));
    for (auto& h : t.hidden_states) h = static_cast<float>(rng.normal(0.0, 1.5));
    const std::size_t n = dims.seq_len;
    std::vector<double> w(n);
    for (std::size_t l = 0; l < dims.n_layers; ++l) {
        for (std::size_t h = 0; h < dims.n_heads; ++h) {
            for (std::size_t q = 0; q < n; ++q) {
                if (!mask[q]) {
                    for (std::size_t k = 0; k < n; ++k) t.attention(l, h, q, k) = static_cast<float>(rng.uniform());
                    continue;
                }
                double total = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    w[k] = (k <= q && mask[k]) ? std::exp(2.0 * rng.normal()) : 0.0;
                    total += w[k];
                }
                for (std::size_t k = 0; k < n; ++k) t.attention(l, h, q, k) = static_cast<float>(w[k] / total);
            }
        }
    }
    if (with_logits) {
        for (auto& z : *t.final_logits) z = static_cast<float>(rng.normal());
    }
    return t;
}

SequenceTrace random_trace(Rng& rng, const TraceDims& dims, bool with_logits) {
    return random_trace(rng, dims, random_mask(rng, dims.seq_len), with_logits);
}

ModelHead random_head(Rng& rng, std::uint32_t d, std::uint32_t vocab, NormKind kind, bool unembed_bias) {
    ModelHead head;
    head.hidden_dim = d;
    head.vocab_size = vocab;
    head.norm_kind = kind;
    head.norm_epsilon = 1e-5f;
    for (std::uint32_t i = 0; i < d; ++i) {
        head.gain.push_back(static_cast<float>(1.0 + 0.3 * rng.normal()));
        head.bias.push_back(static_cast<float>(kind == NormKind::layernorm ? 0.2 * rng.normal() : 0.0));
    }
    for (std::size_t i = 0; i < std::size_t{d} * vocab; ++i) head.unembed.push_back(static_cast<float>(rng.normal()));
    if (unembed_bias) {
        head.unembed_bias.emplace();
        for (std::uint32_t v = 0; v < vocab; ++v) head.unembed_bias->push_back(static_cast<float>(0.5 * rng.normal()));
    }
    return head;
}

SequenceTrace append_padding(Rng& rng, const SequenceTrace& trace, std::size_t extra) {
    TraceDims dims = trace.dims;
    dims.seq_len += static_cast<std::uint32_t>(extra);
    const std::size_t n0 = trace.dims.seq_len;
    const std::size_t n1 = dims.seq_len;
    const std::size_t d = dims.hidden_dim;
    SequenceTrace out = SequenceTrace::zeros(dims, trace.final_logits.has_value());
    for (std::size_t t = 0; t < n1; ++t) {
        out.token_ids[t] = t < n0 ? trace.token_ids[t] : 0;
        out.mask[t] = t < n0 ? trace.mask[t] : 0;
    }
    for (std::size_t l = 0; l <= dims.n_layers; ++l) {
        for (std::size_t t = 0; t < n1; ++t) {
            for (std::size_t i = 0; i < d; ++i) {
                out.hidden_states[(l * n1 + t) * d + i] =
                    t < n0 ? trace.hidden_states[(l * n0 + t) * d + i] : static_cast<float>(rng.normal(0.0, 50.0));
            }
        }
    }
    for (std::size_t l = 0; l < dims.n_layers; ++l) {
        for (std::size_t h = 0; h < dims.n_heads; ++h) {
            for (std::size_t q = 0; q < n1; ++q) {
                for (std::size_t k = 0; k < n1; ++k) {
                    float v;
                    if (q < n0 && k < n0) v = trace.attention(l, h, q, k);
                    else if (q < n0) v = 0.0f;
                    else v = static_cast<float>(rng.uniform());
                    out.attention(l, h, q, k) = v;
                }
            }
        }
    }
    if (trace.final_logits) {
        const std::size_t V = dims.vocab_size;
        for (std::size_t i = 0; i < n1 * V; ++i) {
            (*out.final_logits)[i] = i < n0 * V ? (*trace.final_logits)[i] : static_cast<float>(rng.normal());
        }
    }
    return out;
}

std::map<std::string, double> oracle_features(const SequenceTrace& tr, const ModelHead& head) {
    std::map<std::string, double> out;
    const std::size_t L = tr.dims.n_layers;
    std::vector<std::size_t> P;
    for (std::size_t t = 0; t < tr.dims.seq_len; ++t) {
        if (tr.mask[t] == 1) P.push_back(t);
    }
    const std::size_t m = P.size();

    for (std::size_t i = 0; i < L; ++i) {
        std::vector<double> surprise, nsurprise, stability;
        for (std::size_t t : P) {
            const auto a = hidden_of(tr, i, t);
            const auto b = hidden_of(tr, i + 1, t);
            surprise.push_back(distance_of(a, b));
            const double na = norm_of(a), nb = norm_of(b);
            std::vector<double> ua(a.size(), 0.0), ub(b.size(), 0.0);
            for (std::size_t k = 0; k < a.size(); ++k) {
                if (na > 0) ua[k] = a[k] / na;
                if (nb > 0) ub[k] = b[k] / nb;
            }
            nsurprise.push_back(distance_of(ua, ub));
            stability.push_back(na > 0 && nb > 0 ? dot_of(a, b) / (na * nb) : 0.0);
        }
        const std::string p = "trans" + std::to_string(i) + "_";
        put_stats(out, p + "surprise", stats_of(surprise), true);
        put_stats(out, p + "nsurprise", stats_of(nsurprise), true);
        put_stats(out, p + "stability", stats_of(stability), true);
    }

    for (std::size_t l = 0; l <= L; ++l) {
        std::vector<double> entropy, conf, gap;
        for (std::size_t t : P) {
            auto p = lens_probs(head, hidden_of(tr, l, t));
            double e = 0.0;
            for (double v : p) {
                if (v > 0) e -= v * std::log(v);
            }
            entropy.push_back(e);
            std::sort(p.rbegin(), p.rend());
            conf.push_back(p[0]);
            gap.push_back(p[0] - p[1]);
        }
        const std::string p = "pred" + std::to_string(l) + "_";
        put_stats(out, p + "entropy", stats_of(entropy), false);
        const Stats cs = stats_of(conf);
        put_stats(out, p + "conf", cs, false);
        put_stats(out, p + "gap", stats_of(gap), false);
        out[p + "conf_stability"] = cs.mean / (cs.std + 1e-8);
        const std::size_t centers[3] = {P.front(), P[(m - 1) / 2], P.back()};
        const char* where[3] = {"first", "mid", "last"};
        for (int c = 0; c < 3; ++c) {
            std::vector<double> window;
            for (std::size_t j = 0; j < m; ++j) {
                const long diff = static_cast<long>(P[j]) - static_cast<long>(centers[c]);
                if (std::labs(diff) <= 2) window.push_back(conf[j]);
            }
            out[p + "tok" + where[c] + "_confstd"] = stats_of(window).std;
        }
    }

    for (std::size_t l = 0; l < L; ++l) {
        const std::size_t H = tr.dims.n_heads;
        std::vector<std::vector<double>> A(m, std::vector<double>(m, 0.0));
        std::vector<double> head_entropy, head_focus;
        for (std::size_t h = 0; h < H; ++h) {
            double e_sum = 0.0, f_sum = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
                double e = 0.0, best = 0.0;
                for (std::size_t k = 0; k <= j; ++k) {
                    const double a = tr.attention(l, h, P[j], P[k]);
                    A[j][k] += a / static_cast<double>(H);
                    e -= a * std::log2(a + 1e-10);
                    best = std::max(best, a);
                }
                e_sum += e;
                f_sum += best;
            }
            head_entropy.push_back(e_sum / m);
            head_focus.push_back(f_sum / m);
        }
        double entries = 0.0, total = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            for (std::size_t k = 0; k <= j; ++k) {
                total += A[j][k];
                entries += 1.0;
            }
        }
        const double tau = total / entries;
        double ent = 0.0, conc = 0.0, below = 0.0, self = 0.0, prev = 0.0, num = 0.0, den = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            double best = 0.0;
            for (std::size_t k = 0; k <= j; ++k) {
                const double a = A[j][k];
                ent -= a * std::log2(a + 1e-10);
                best = std::max(best, a);
                if (a < tau) below += 1.0;
                num += std::fabs(static_cast<double>(P[j]) - static_cast<double>(P[k])) * a;
                den += a;
            }
            conc += best;
            self += A[j][j];
            if (j >= 1) prev += A[j][j - 1];
        }
        const std::string p = "attn" + std::to_string(l) + "_";
        out[p + "entropy"] = ent / m;
        out[p + "concentration"] = conc / m;
        out[p + "sparsity"] = below / entries;
        out[p + "selfattn"] = self / m;
        out[p + "prevbias"] = prev / (m - 1);
        out[p + "meandist"] = den > 0 ? num / den : 0.0;
        const Stats he = stats_of(head_entropy), hf = stats_of(head_focus);
        for (const auto& [name, s] : {std::pair{"entropy", he}, std::pair{"focus", hf}}) {
            out[p + "head_" + name + "_mean"] = s.mean;
            out[p + "head_" + name + "_std"] = s.std;
            out[p + "head_" + name + "_min"] = s.min;
            out[p + "head_" + name + "_max"] = s.max;
        }
    }

    for (std::size_t l = 0; l <= L; ++l) {
        const std::size_t d = tr.dims.hidden_dim;
        auto prefix_mean = [&](std::size_t count) {
            std::vector<double> mean(d, 0.0);
            for (std::size_t j = 0; j < count; ++j) {
                const auto h = hidden_of(tr, l, P[j]);
                for (std::size_t k = 0; k < d; ++k) mean[k] += h[k];
            }
            for (double& v : mean) v /= static_cast<double>(count);
            return mean;
        };
        std::vector<double> steps;
        for (std::size_t j = 1; j < m; ++j) steps.push_back(distance_of(prefix_mean(j + 1), prefix_mean(j)));
        const Stats s = stats_of(steps);
        const std::string idx = std::to_string(l);
        out["ctx" + idx + "_mean"] = s.mean;
        out["ctx" + idx + "_std"] = s.std;
        out["ctx" + idx + "_min"] = s.min;
        out["ctx" + idx + "_max"] = s.max;
        const auto a = hidden_of(tr, l, P.front());
        const auto b = hidden_of(tr, l, P.back());
        const double na = norm_of(a), nb = norm_of(b);
        out["pos" + idx + "_firstlast"] = na > 0 && nb > 0 ? dot_of(a, b) / (na * nb) : 0.0;
    }
    return out;
}

bool close_rel(double a, double b, double tol) {
    return std::fabs(a - b) <= tol * std::max({1.0, std::fabs(a), std::fabs(b)});
}

void LeakageAudit::on_fit(std::string_view stage, std::span<const std::size_t> rows) {
    ++fits;
    auto& set = fitted_[std::string(stage)];
    if (!set.empty()) problems.push_back("scaler refit for stage " + std::string(stage));
    set.insert(rows.begin(), rows.end());
}

void LeakageAudit::on_evaluate(std::string_view stage, std::span<const std::size_t> rows) {
    ++evaluations;
    const auto it = fitted_.find(stage);
    if (it == fitted_.end()) {
        problems.push_back("evaluation without a scaler fit in stage " + std::string(stage));
        return;
    }
    for (std::size_t r : rows) {
        if (it->second.count(r)) {
            problems.push_back("row " + std::to_string(r) + " used by scaler and evaluation in " + std::string(stage));
            return;
        }
    }
}

std::vector<TensorGradientError> toy_gradient_check(const toy::ToyParams& params,
                                                    std::span<const std::uint32_t> tokens, double h) {
    const auto analytic = toy::backward(params, tokens);
    const auto pattern = toy::relu_pattern(params, tokens);
    toy::ToyParams probe = params;
    std::vector<TensorGradientError> out;
    for (const auto& tensor : params.layout().tensors) {
        TensorGradientError e{tensor.name};
        double worst_diff = 0.0, scale = 0.0;
        for (std::size_t i = tensor.offset; i < tensor.offset + tensor.size; ++i) {
            const double saved = probe.data[i];
            double step = h;
            double up = 0.0, down = 0.0;
            for (int shrink = 0;; ++shrink) {
                probe.data[i] = saved + step;
                up = toy::loss(probe, tokens);
                const bool up_same = toy::relu_pattern(probe, tokens) == pattern;
                probe.data[i] = saved - step;
                down = toy::loss(probe, tokens);
                const bool down_same = toy::relu_pattern(probe, tokens) == pattern;
                if ((up_same && down_same) || shrink == 6) break;
                if (shrink == 0) ++e.kink_probes;
                step /= 10.0;
            }
            probe.data[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            worst_diff = std::max(worst_diff, std::fabs(analytic[i] - numeric));
            scale = std::max(scale, std::fabs(numeric));
        }
        e.error = worst_diff / std::max(scale, 1e-8);
        out.push_back(e);
    }
    return out;
}

TempDir::TempDir() {
    const auto base = std::filesystem::temp_directory_path();
    Rng rng(std::random_device{}());
    for (int attempt = 0; attempt < 100; ++attempt) {
        auto candidate = base / ("tracemia-test-" + std::to_string(rng.next() % 1000000000ULL));
        if (std::filesystem::create_directory(candidate)) {
            path_ = candidate;
            return;
        }
    }
    throw std::runtime_error("cannot create temp dir");
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

std::string fixture_dir() { return TRACEMIA_FIXTURE_DIR; }

} // namespace tracemia::testing
