#include "doctest.h"
#include "support.hpp"

#include "tracemia/logit_lens.hpp"

#include <cmath>

using namespace tracemia;

namespace {

ModelHead identity_head(std::uint32_t d) {
    ModelHead head;
    head.hidden_dim = d;
    head.vocab_size = d;
    head.norm_kind = NormKind::identity;
    head.gain.assign(d, 1.0f);
    head.bias.assign(d, 0.0f);
    head.unembed.assign(std::size_t{d} * d, 0.0f);
    for (std::uint32_t i = 0; i < d; ++i) head.unembed[i * d + i] = 1.0f;
    return head;
}

SequenceTrace trace_with_hidden(std::uint32_t d, std::uint32_t vocab, const std::vector<float>& h0) {
    SequenceTrace t = SequenceTrace::zeros({1, 1, 2, d, vocab});
    t.attention(0, 0, 0, 0) = 1.0f;
    t.attention(0, 0, 1, 0) = 1.0f;
    std::copy(h0.begin(), h0.end(), t.hidden(0, 0).begin());
    return t;
}

} // namespace

TEST_CASE("identity head passes hidden state through") {
    const LensHead head(identity_head(2));
    const auto t = trace_with_hidden(2, 2, {1.0f, 2.0f});
    const auto z = layer_logits(t, head, 0, 0);
    CHECK(z == std::vector<double>{1.0, 2.0});
}

TEST_CASE("layernorm of a constant vector gives uniform predictions") {
    Rng rng(1);
    auto mh = testing::random_head(rng, 2, 5, NormKind::layernorm);
    mh.gain = {1.0f, 1.0f};
    mh.bias = {0.0f, 0.0f};
    const LensHead head(mh);
    const auto t = trace_with_hidden(2, 5, {1.0f, 1.0f});
    const auto z = layer_logits(t, head, 0, 0);
    for (double v : z) CHECK(v == 0.0);
    const auto p = softmax_probs(z);
    for (double v : p) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("lens logits match a dense matvec oracle") {
    Rng rng(2);
    for (NormKind kind : {NormKind::layernorm, NormKind::rmsnorm, NormKind::identity}) {
        const auto mh = testing::random_head(rng, 7, 11, kind, true);
        const LensHead head(mh);
        const auto t = testing::random_trace(rng, {2, 1, 5, 7, 11}, {1, 1, 1, 1, 1});
        for (std::size_t l = 0; l <= 2; ++l) {
            for (std::size_t pos = 0; pos < 5; ++pos) {
                const auto z = layer_logits(t, head, l, pos);
                std::vector<double> h(t.hidden(l, pos).begin(), t.hidden(l, pos).end());
                std::vector<double> x(7);
                if (kind == NormKind::layernorm) {
                    double mean = 0, var = 0;
                    for (double v : h) mean += v / 7;
                    for (double v : h) var += (v - mean) * (v - mean) / 7;
                    for (int i = 0; i < 7; ++i) x[i] = (h[i] - mean) / std::sqrt(var + mh.norm_epsilon) * mh.gain[i] + mh.bias[i];
                } else if (kind == NormKind::rmsnorm) {
                    double ms = 0;
                    for (double v : h) ms += v * v / 7;
                    for (int i = 0; i < 7; ++i) x[i] = h[i] / std::sqrt(ms + mh.norm_epsilon) * mh.gain[i];
                } else {
                    x = h;
                }
                for (int v = 0; v < 11; ++v) {
                    double expect = (*mh.unembed_bias)[v];
                    for (int i = 0; i < 7; ++i) expect += x[i] * mh.unembed[i * 11 + v];
                    CHECK(std::fabs(z[v] - expect) <= 1e-10 * std::max(1.0, std::fabs(expect)));
                }
            }
        }
    }
}

TEST_CASE("softmax examples") {
    CHECK(softmax_probs(std::vector<double>{0.0, 0.0}) == std::vector<double>{0.5, 0.5});
    const auto big = softmax_probs(std::vector<double>{1000.0, 0.0});
    CHECK(big[0] == doctest::Approx(1.0));
    CHECK(big[1] == doctest::Approx(0.0));
    CHECK(std::isfinite(big[1]));
    const auto p = softmax_probs(std::vector<double>{std::log(1.0), std::log(2.0), std::log(3.0)});
    CHECK(p[0] == doctest::Approx(1.0 / 6).epsilon(1e-14));
    CHECK(p[1] == doctest::Approx(2.0 / 6).epsilon(1e-14));
    CHECK(p[2] == doctest::Approx(3.0 / 6).epsilon(1e-14));
    Rng rng(3);
    std::vector<double> z(50);
    for (auto& v : z) v = rng.normal(0.0, 10.0);
    double total = 0;
    for (double v : softmax_probs(z)) total += v;
    CHECK(std::fabs(total - 1.0) <= 1e-12);
}

TEST_CASE("prediction stats examples") {
    const auto uniform = prob_stats(std::vector<double>{0.25, 0.25, 0.25, 0.25});
    CHECK(uniform.entropy == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK(uniform.confidence == 0.25);
    CHECK(uniform.gap == 0.0);
    const auto onehot = prob_stats(std::vector<double>{0.0, 1.0, 0.0});
    CHECK(onehot.entropy == 0.0);
    CHECK(onehot.confidence == 1.0);
    CHECK(onehot.gap == 1.0);
    const auto three = prob_stats(std::vector<double>{0.5, 0.3, 0.2});
    CHECK(three.confidence == 0.5);
    CHECK(three.gap == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("logit_stats agrees with prob_stats and stays in range") {
    Rng rng(4);
    for (int i = 0; i < 200; ++i) {
        std::vector<double> z(2 + rng.below(30));
        for (auto& v : z) v = rng.normal(0.0, 1.0 + 5.0 * rng.uniform());
        const auto a = logit_stats(z);
        const auto b = prob_stats(softmax_probs(z));
        CHECK(a.entropy == doctest::Approx(b.entropy).epsilon(1e-10));
        CHECK(a.confidence == doctest::Approx(b.confidence).epsilon(1e-12));
        CHECK(a.gap == doctest::Approx(b.gap).epsilon(1e-10));
        CHECK(a.entropy >= 0.0);
        CHECK(a.entropy <= std::log(static_cast<double>(z.size())) + 1e-12);
        CHECK(a.confidence > 0.0);
        CHECK(a.confidence <= 1.0);
        CHECK(a.gap >= 0.0);
        CHECK(a.gap <= a.confidence);
    }
    CHECK(log_softmax_at(std::vector<double>{0.0, 0.0}, 1) == doctest::Approx(std::log(0.5)));
}

TEST_CASE("layer predictions skip padding and do not depend on chunking") {
    Rng rng(5);
    const auto mh = testing::random_head(rng, 4, 9, NormKind::layernorm);
    const LensHead head(mh);
    const auto t = testing::random_trace(rng, {2, 2, 10, 4, 9}, {1, 1, 0, 1, 1, 1, 1, 0, 1, 0});
    const auto full = layer_predictions(t, head, 1);
    CHECK(full.positions == std::vector<std::size_t>{0, 1, 3, 4, 5, 6, 8});
    for (std::size_t chunk : {1u, 2u, 3u, 100u}) {
        const auto p = layer_predictions(t, head, 1, chunk);
        CHECK(p.entropy == full.entropy);
        CHECK(p.confidence == full.confidence);
        CHECK(p.gap == full.gap);
    }
    for (std::size_t j = 0; j < full.positions.size(); ++j) {
        const auto s = prob_stats(softmax_probs(layer_logits(t, head, 1, full.positions[j])));
        CHECK(full.entropy[j] == doctest::Approx(s.entropy).epsilon(1e-10));
    }
    const auto lp = next_token_log_probs(t, head, 2);
    CHECK(lp.size() == 6);
    CHECK(lp[2] == doctest::Approx(log_softmax_at(layer_logits(t, head, 2, 3), t.token_ids[4])));
}

TEST_CASE("dimension mismatch is rejected") {
    Rng rng(6);
    const LensHead head(testing::random_head(rng, 3, 5, NormKind::layernorm));
    const auto t = testing::random_trace(rng, {1, 1, 4, 4, 5}, {1, 1, 1, 1});
    CHECK_THROWS_AS(check_head_matches(t, head), std::invalid_argument);
    CHECK_THROWS_AS(layer_predictions(t, head, 0), std::invalid_argument);
}

TEST_CASE("lens consistency against stored logits") {
    Rng rng(7);
    const auto mh = testing::random_head(rng, 4, 6, NormKind::rmsnorm);
    const LensHead head(mh);
    auto t = testing::random_trace(rng, {1, 1, 3, 4, 6}, {1, 1, 1}, true);
    for (std::size_t pos = 0; pos < 3; ++pos) {
        const auto z = layer_logits(t, head, 1, pos);
        for (std::size_t v = 0; v < 6; ++v) (*t.final_logits)[pos * 6 + v] = static_cast<float>(z[v]);
    }
    CHECK(lens_consistency_error(t, head) <= 1e-6);
    (*t.final_logits)[0] += 5.0f;
    CHECK(lens_consistency_error(t, head) > 1e-3);
}
