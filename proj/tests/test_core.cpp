#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "doctest.h"

#include "msp/core.hpp"

using namespace msp;

TEST_SUITE_BEGIN("core");

namespace {

Mask make_mask(int h, int w, std::initializer_list<std::pair<int, int>> ones) {
    Mask m(h, w);
    for (auto [y, x] : ones) m.at(y, x) = 1;
    return m;
}

Mask random_mask(int h, int w, RandomSource& rng) {
    Mask m(h, w);
    for (auto& v : m.v) v = rng.uniform() < 0.5 ? 1 : 0;
    return m;
}

}  // namespace

TEST_CASE("union_sample: n=1 always returns {1}") {
    RandomSource rng(1);
    for (int i = 0; i < 100; ++i) {
        CHECK(union_sample(1, rng) == std::vector<int>{1});
    }
}

TEST_CASE("union_sample: n=2 frequencies within 3 sigma of 1/3") {
    RandomSource rng(2);
    std::map<std::vector<int>, int> counts;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) counts[union_sample(2, rng)]++;
    CHECK(counts.size() == 3);
    double p     = 1.0 / 3.0;
    double sigma = std::sqrt(draws * p * (1 - p));
    for (const auto& [subset, n] : counts) {
        CHECK(std::abs(n - draws * p) <= 3 * sigma);
    }
}

TEST_CASE("union_sample: n=3 support is exactly the 7 non-empty subsets") {
    RandomSource rng(3);
    std::set<std::vector<int>> support;
    for (int i = 0; i < 5000; ++i) support.insert(union_sample(3, rng));
    CHECK(support.size() == 7);
    for (const auto& s : support) {
        CHECK(!s.empty());
        for (int v : s) {
            CHECK(v >= 1);
            CHECK(v <= 3);
        }
    }
}

TEST_CASE("union_sample: uniform over subsets for N in {1,2,3,4}") {
    for (int n : {1, 2, 3, 4}) {
        RandomSource rng(100 + n);
        std::map<std::vector<int>, int> counts;
        const int draws = 10000;
        for (int i = 0; i < draws; ++i) counts[union_sample(n, rng)]++;
        int subsets = (1 << n) - 1;
        CHECK(static_cast<int>(counts.size()) == subsets);
        double p     = 1.0 / subsets;
        double sigma = std::sqrt(draws * p * (1 - p));
        for (const auto& [subset, c] : counts) {
            CHECK(std::abs(c - draws * p) <= 3 * sigma + 1e-9);
        }
    }
}

TEST_CASE("union_sample: invalid argument") {
    RandomSource rng(1);
    CHECK_THROWS_AS(union_sample(0, rng), std::invalid_argument);
}

TEST_CASE("mask_union: disjoint masks add their counts") {
    Mask a = make_mask(4, 4, {{0, 0}, {1, 1}});
    Mask b = make_mask(4, 4, {{2, 2}, {3, 3}, {3, 0}});
    Mask u = mask_union({a, b});
    CHECK(u.count() == a.count() + b.count());
}

TEST_CASE("mask_union: idempotence and identity") {
    Mask m = make_mask(3, 5, {{0, 1}, {2, 4}});
    Mask z(3, 5);
    CHECK(mask_union({m, m}).v == m.v);
    CHECK(mask_union({m, z}).v == m.v);
}

TEST_CASE("mask_union: shape mismatch throws") {
    CHECK_THROWS_AS(mask_union({Mask(2, 2), Mask(3, 3)}), std::invalid_argument);
}

TEST_CASE("mask_union: commutative, associative, idempotent on random masks") {
    RandomSource rng(17);
    for (int trial = 0; trial < 30; ++trial) {
        Mask a = random_mask(6, 6, rng);
        Mask b = random_mask(6, 6, rng);
        Mask c = random_mask(6, 6, rng);
        CHECK(mask_union({a, b}).v == mask_union({b, a}).v);
        CHECK(mask_union({mask_union({a, b}), c}).v == mask_union({a, mask_union({b, c})}).v);
        CHECK(mask_union({a, a}).v == a.v);
    }
}

TEST_CASE("normalize_map: basic arithmetic") {
    Tensor x  = Tensor::from({2}, {0.2, 0.4});
    Tensor g  = normalize_map(x);
    CHECK(g[0] == doctest::Approx(0.5));
    CHECK(g[1] == doctest::Approx(1.0));
}

TEST_CASE("normalize_map: all-zeros stays all-zeros") {
    Tensor x({3, 3});
    Tensor g = normalize_map(x);
    for (int64_t i = 0; i < g.numel(); ++i) CHECK(g[i] == 0.0);
}

TEST_CASE("normalize_map: scale invariance and argmax preservation") {
    RandomSource rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x({4, 4});
        for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform();
        double alpha = 0.1 + 5.0 * rng.uniform();
        Tensor x2    = x;
        for (int64_t i = 0; i < x2.numel(); ++i) x2[i] *= alpha;
        Tensor g1 = normalize_map(x);
        Tensor g2 = normalize_map(x2);
        int64_t am1 = 0, am2 = 0;
        for (int64_t i = 0; i < x.numel(); ++i) {
            if (g1[i] > g1[am1]) am1 = i;
            if (g2[i] > g2[am2]) am2 = i;
            CHECK(g1[i] == doctest::Approx(g2[i]).epsilon(1e-12));
        }
        CHECK(am1 == am2);
        CHECK(g1.max() == doctest::Approx(1.0));
    }
}

TEST_CASE("normalize_map: negative entry throws") {
    CHECK_THROWS_AS(normalize_map(Tensor::from({2}, {0.5, -0.1})), std::invalid_argument);
}

TEST_CASE("resize_mask: all-ones and all-zeros") {
    Mask ones(8, 8, 1);
    Mask zeros(8, 8, 0);
    CHECK(resize_mask(ones, 3).count() == 9);
    CHECK(resize_mask(zeros, 3).count() == 0);
}

TEST_CASE("resize_mask: 4x4 quadrant to 2x2") {
    Mask m = make_mask(4, 4, {{0, 0}, {0, 1}, {1, 0}, {1, 1}});
    Mask r = resize_mask(m, 2);
    CHECK(r.at(0, 0) == 1);
    CHECK(r.at(0, 1) == 0);
    CHECK(r.at(1, 0) == 0);
    CHECK(r.at(1, 1) == 0);
}

TEST_CASE("resize_mask: identity at native resolution") {
    RandomSource rng(23);
    Mask m = random_mask(16, 16, rng);
    CHECK(resize_mask(m, 16).v == m.v);
}

TEST_CASE("resize_mask: m < 1 throws") {
    CHECK_THROWS_AS(resize_mask(Mask(4, 4, 1), 0), std::invalid_argument);
}

TEST_CASE("prompt pair: substitution and alignment") {
    SubjectRegistry reg;
    reg.reference_image = Image(8, 8, 3, 0.5);
    SubjectAsset a;
    a.index       = 1;
    a.placeholder = "<asset0>";
    a.class_noun  = "circle";
    a.noun_phrase = "red circle left";
    a.mask        = make_mask(8, 8, {{1, 1}});
    SubjectAsset b;
    b.index       = 2;
    b.placeholder = "<asset1>";
    b.class_noun  = "square";
    b.mask        = make_mask(8, 8, {{5, 5}});
    reg.subjects  = {a, b};
    reg.validate();

    PromptPair pair = make_prompt_pair("a photo of <asset0> and <asset1>", reg,
                                       ClassSource::class_noun);
    CHECK(pair.placeholder_text() == "a photo of <asset0> and <asset1>");
    CHECK(pair.class_text() == "a photo of circle and square");
    CHECK(pair.alignment.at(1).placeholder_positions == std::vector<int>{3});
    CHECK(pair.alignment.at(1).class_positions == std::vector<int>{3});
    CHECK(pair.referenced_subjects() == std::vector<int>{1, 2});

    // multi-word replacement shifts later positions
    PromptPair pp = make_prompt_pair("a photo of <asset0> and <asset1>", reg,
                                     ClassSource::noun_phrase);
    CHECK(pp.class_text() == "a photo of red circle left and square");
    CHECK(pp.alignment.at(1).class_positions == std::vector<int>{3, 4, 5});
    CHECK(pp.alignment.at(2).class_positions == std::vector<int>{7});
    // identical outside substituted spans
    CHECK(pp.placeholder_tokens[0] == pp.class_tokens[0]);
    CHECK(pp.placeholder_tokens[4] == "and");
    CHECK(pp.class_tokens[6] == "and");
}

TEST_CASE("registry invariants") {
    SubjectRegistry reg;
    reg.reference_image = Image(4, 4, 3, 0.1);
    SubjectAsset a;
    a.index       = 1;
    a.placeholder = "<asset0>";
    a.class_noun  = "circle";
    a.mask        = Mask(4, 4);  // empty mask
    reg.subjects  = {a};
    CHECK_THROWS_AS(reg.validate(), std::invalid_argument);
    reg.subjects[0].mask.at(0, 0) = 1;
    CHECK_NOTHROW(reg.validate());
    // duplicate placeholder
    reg.subjects.push_back(reg.subjects[0]);
    reg.subjects[1].index = 2;
    CHECK_THROWS_AS(reg.validate(), std::invalid_argument);
}

TEST_CASE("loss weights defaults and validation") {
    LossWeights w;
    CHECK(w.lambda_md == doctest::Approx(1.0));
    CHECK(w.lambda_m2a == doctest::Approx(1e-2));
    CHECK(w.lambda_ica == doctest::Approx(5e-3));
    CHECK(w.lambda_aug == doctest::Approx(1e-4));
    w.lambda_ica = -1.0;
    CHECK_THROWS_AS(w.validate(), std::invalid_argument);
}

TEST_SUITE_END();
