#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "hybridcap/bleu.hpp"
#include "hybridcap/error.hpp"
#include "oracles.hpp"

using namespace hybridcap;

TEST_CASE("modified_precision clips by the maximum reference count") {
    const Tokens hyp{"a", "a", "a"};
    const std::vector<Tokens> refs{{"a", "a"}};
    const auto brute = oracle::clipped(hyp, refs, 1);
    REQUIRE(brute.matches == 2);
    REQUIRE(brute.total == 3);
    const auto pc = modified_precision(hyp, refs, 1);
    CHECK(pc.clipped_matches == 2);
    CHECK(pc.total == 3);

    const Tokens same{"the", "dog", "runs", "fast"};
    for (int n = 1; n <= 4; ++n) {
        const auto exact = modified_precision(same, {same}, n);
        CHECK(exact.clipped_matches == exact.total);
        CHECK(exact.total == same.size() - static_cast<std::size_t>(n) + 1);
    }
    const auto short_hyp = modified_precision(Tokens{"a", "b"}, {{"a", "b", "c"}}, 3);
    CHECK(short_hyp.clipped_matches == 0);
    CHECK(short_hyp.total == 0);
}

TEST_CASE("sentence_bleu identity, brevity and degenerate cases") {
    const Tokens ref{"a", "dog", "runs", "on", "grass"};
    CHECK(sentence_bleu(ref, {{"x", "y"}, ref}, 4).value == doctest::Approx(1.0).epsilon(1e-15));

    const auto s = sentence_bleu(Tokens{"a", "dog", "runs"}, {{"a", "dog", "runs", "fast"}}, 1);
    CHECK(s.precisions[0] == 1.0);
    CHECK(s.brevity_penalty == doctest::Approx(std::exp(1.0 - 4.0 / 3.0)).epsilon(1e-15));
    CHECK(s.value == doctest::Approx(std::exp(-1.0 / 3.0)).epsilon(1e-15));

    CHECK(sentence_bleu(Tokens{}, {{"a"}}, 4).value == 0.0);
    CHECK_THROWS_AS(sentence_bleu(Tokens{"a"}, {}, 4), Error);
}

TEST_CASE("closest reference length breaks ties toward the shorter reference") {
    // Hypothesis length 3; references of length 2 and 4 are equally close.
    const Tokens hyp{"a", "b", "c"};
    const auto s = sentence_bleu(hyp, {{"a", "b", "c", "d"}, {"a", "b"}}, 1);
    CHECK(s.brevity_penalty == 1.0);
}

TEST_CASE("smoothing replaces zero higher-order numerators by 1/2^k") {
    // p1 = 4/4, p2 = 1/3 (a b), p3 -> (1/2)/2, p4 -> (1/4)/1
    const Tokens hyp{"a", "b", "x", "y"};
    const std::vector<Tokens> refs{{"a", "b", "c", "d"}};
    const auto s = sentence_bleu(hyp, refs, 4);
    CHECK(s.precisions[0] == doctest::Approx(0.5));
    const double expected = std::exp((std::log(0.5) + std::log(1.0 / 3.0) + std::log(0.25) + std::log(0.25)) / 4.0);
    CHECK(s.value == doctest::Approx(expected).epsilon(1e-14));
    CHECK(sentence_bleu(hyp, refs, 4, Smoothing::kNone).value == 0.0);
    CHECK(s.value == doctest::Approx(oracle::sentence_bleu(hyp, refs, 4, true)).epsilon(1e-14));
}

TEST_CASE("corpus_bleu: identity, single pair and a hand-counted two-pair corpus") {
    const Tokens a{"a", "dog", "runs", "on", "the", "grass"};
    const Tokens b{"the", "cat", "sits", "in", "snow"};
    CHECK(corpus_bleu({{a, {a}}, {b, {b, a}}}, 4).value == doctest::Approx(1.0).epsilon(1e-15));

    const Tokens h{"a", "dog", "runs", "on", "grass"};
    const std::vector<Tokens> r{a, {"a", "dog", "is", "running"}};
    CHECK(corpus_bleu({{h, r}}, 4).value == sentence_bleu(h, r, 4, Smoothing::kNone).value);

    // h1 = "a dog runs fast" vs "a dog runs": 1-grams 3/4, 2-grams 2/3, 3-grams 1/2, 4-grams 0/1
    // h2 = "the cat sits" vs "the cat sits down": 3/3, 2/2, 1/1, 0/0
    // totals: 6/7, 4/5, 2/3, 0/1 -> BLEU-4 = 0; BLEU-3 = BP * (6/7*4/5*2/3)^(1/3)
    // lengths: hyp 7, closest refs 3 + 4 = 7 -> BP = 1
    std::vector<BleuPair> pairs{{{"a", "dog", "runs", "fast"}, {{"a", "dog", "runs"}}},
                                {{"the", "cat", "sits"}, {{"the", "cat", "sits", "down"}}}};
    std::vector<oracle::Pair> opairs;
    for (const auto& p : pairs) opairs.push_back({p.hypothesis, p.references});
    const double by_hand = std::cbrt(6.0 / 7.0 * 4.0 / 5.0 * 2.0 / 3.0);
    REQUIRE(std::fabs(oracle::corpus_bleu(opairs, 3) - by_hand) < 1e-14);
    CHECK(std::fabs(corpus_bleu(pairs, 3).value - by_hand) < 1e-12);
    CHECK(corpus_bleu(pairs, 4).value == 0.0);
    CHECK_THROWS_AS(corpus_bleu({}, 4), Error);
}

TEST_CASE("BLEU properties on random inputs") {
    std::mt19937_64 rng(5);
    const std::vector<std::string> words{"a", "b", "c", "d"};
    for (int trial = 0; trial < 300; ++trial) {
        const Tokens hyp = oracle::random_tokens(rng, words, 0, 7);
        std::vector<Tokens> refs;
        const int nrefs = 1 + static_cast<int>(rng() % 4);
        for (int r = 0; r < nrefs; ++r) refs.push_back(oracle::random_tokens(rng, words, 1, 7));
        const double v = sentence_bleu(hyp, refs, 4).value;
        CHECK(v >= 0.0);
        CHECK(v <= 1.0 + 1e-15);

        auto permuted = refs;
        std::reverse(permuted.begin(), permuted.end());
        CHECK(sentence_bleu(hyp, permuted, 4).value == v);

        if (hyp.size() >= 4) {
            auto with_self = refs;
            with_self.push_back(hyp);
            CHECK(sentence_bleu(hyp, with_self, 4).value == doctest::Approx(1.0).epsilon(1e-15));
        }
    }
}

TEST_CASE("profile fast path agrees with the generic sentence BLEU") {
    std::mt19937_64 rng(9);
    const std::vector<std::string> words{"a", "b", "c"};
    for (int trial = 0; trial < 300; ++trial) {
        const Tokens h = oracle::random_tokens(rng, words, 0, 8);
        const Tokens r = oracle::random_tokens(rng, words, 1, 8);
        CHECK(sentence_bleu(NGramProfile(h, 4), NGramProfile(r, 4), 4) == sentence_bleu(h, {r}, 4).value);
    }
}
