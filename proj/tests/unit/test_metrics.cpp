#include "doctest.h"
#include "support.hpp"

#include "tracemia/evaluation.hpp"
#include "tracemia/features.hpp"
#include "tracemia/metrics.hpp"
#include "tracemia/synth.hpp"

#include <cmath>
#include <sstream>

using namespace tracemia;

namespace {

double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[i] != 1 || y[j] != 0) continue;
            pairs += 1.0;
            if (s[i] > s[j]) wins += 1.0;
            else if (s[i] == s[j]) wins += 0.5;
        }
    }
    return wins / pairs;
}

} // namespace

TEST_CASE("auc examples") {
    CHECK(auc(std::vector<double>{0.9, 0.8, 0.1, 0.2}, std::vector<int>{1, 1, 0, 0}) == 1.0);
    CHECK(auc(std::vector<double>{0.8, 0.4, 0.6, 0.2}, std::vector<int>{1, 1, 0, 0}) == 0.75);
    CHECK(auc(std::vector<double>{0.3, 0.3, 0.3}, std::vector<int>{1, 0, 1}) == 0.5);
    CHECK_THROWS_AS(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), std::invalid_argument);
}

TEST_CASE("auc equals the pairwise oracle, negation and monotone transforms") {
    Rng rng(99);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 2 + rng.below(19);
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng.below(6)) * 0.25 - 0.5; // coarse grid forces ties
            y[i] = static_cast<int>(rng.below(2));
        }
        y[0] = 1;
        y[1] = 0;
        const double a = auc(s, y);
        CHECK(a == pairwise_auc(s, y));
        std::vector<double> neg(n), lin(n), cube(n);
        for (std::size_t i = 0; i < n; ++i) {
            neg[i] = -s[i];
            lin[i] = 2.0 * s[i] + 1.0;
            cube[i] = s[i] * s[i] * s[i];
        }
        CHECK(a + auc(neg, y) == 1.0);
        CHECK(auc(lin, y) == a);
        CHECK(auc(cube, y) == a);
    }
}

TEST_CASE("precision and recall") {
    const auto a = precision_recall(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}, 0.5);
    CHECK(a.precision == 1.0);
    CHECK(a.recall == 1.0);
    const auto none = precision_recall(std::vector<double>{0.2, 0.1}, std::vector<int>{1, 0}, 0.5);
    CHECK_FALSE(none.precision.has_value());
    CHECK(none.recall == 0.0);
    const auto edge = precision_recall(std::vector<double>{0.5, 0.5, 0.4}, std::vector<int>{1, 0, 1}, 0.5);
    CHECK(edge.precision == 0.5);
    CHECK(edge.recall == 0.5);
    CHECK(edge.true_positives == 1);
    CHECK(edge.false_positives == 1);
    CHECK(edge.false_negatives == 1);
    CHECK(edge.true_negatives == 0);
}

TEST_CASE("layerwise curve has one entry per layer tag and is deterministic") {
    SynthSpec spec;
    spec.dims = {2, 2, 10, 4, 12};
    spec.members = 20;
    spec.nonmembers = 20;
    const auto head = synth_head(spec);
    const LensHead lens(head);
    FeatureMatrix m;
    m.names = feature_registry(spec.dims);
    for (std::uint64_t i = 0; i < 40; ++i) {
        const bool member = i < 20;
        const auto fv = extract_features(synth_trace(spec, head, i, member ? 1.0 : 0.0), lens);
        m.append(fv.values, member ? Label::member : Label::nonmember, std::to_string(i));
    }
    LayerwiseOptions opts;
    opts.full_pipeline = false;
    const auto curve = layerwise_auc(m, 420, opts);
    REQUIRE(curve.size() == 3);
    for (std::size_t l = 0; l < 3; ++l) {
        CHECK(curve[l].layer == l);
        CHECK(curve[l].auc >= 0.0);
        CHECK(curve[l].auc <= 1.0);
    }
    const auto again = layerwise_auc(m, 420, opts);
    for (std::size_t l = 0; l < 3; ++l) CHECK(again[l].auc == curve[l].auc);
    std::ostringstream out;
    write_layerwise_csv(curve, out);
    CHECK(out.str().starts_with("layer,auc\n0,"));
}
