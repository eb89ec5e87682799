#include <doctest.h>

#include <algorithm>
#include <random>

#include "sqd/core.hpp"

using namespace sqd;

namespace {

Hypothesis make_hyp(std::vector<TokenId> tokens, double cum, double score, std::uint64_t seq) {
    Hypothesis h;
    h.tokens = std::move(tokens);
    h.cum_logprob = cum;
    h.cached_score = score;
    h.seq_no = seq;
    return h;
}

}  // namespace

TEST_CASE("normalized_logprob") {
    Hypothesis h = make_hyp({2, 3, 4, 5}, -2.0, 0.0, 0);
    CHECK(normalized_logprob(h, 1.0) == doctest::Approx(-0.5));
    CHECK(normalized_logprob(h, 0.0) == doctest::Approx(-2.0));
    Hypothesis h9 = make_hyp(std::vector<TokenId>(9, 2), -3.0, 0.0, 1);
    CHECK(normalized_logprob(h9, 0.5) == doctest::Approx(-1.0));
}

TEST_CASE("normalized_logprob with lambda 0 is the cumulative logprob") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> lp(-20.0, 0.0);
    std::uniform_int_distribution<int> len(1, 30);
    for (int i = 0; i < 200; ++i) {
        Hypothesis h = make_hyp(std::vector<TokenId>(len(rng), 2), lp(rng), 0.0, i);
        CHECK(normalized_logprob(h, 0.0) == h.cum_logprob);
    }
}

TEST_CASE("normalized_logprob monotone in cum_logprob at fixed length") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> lp(-20.0, 0.0);
    std::uniform_real_distribution<double> lam(0.0, 2.0);
    for (int i = 0; i < 200; ++i) {
        double a = lp(rng), b = lp(rng);
        if (a > b) std::swap(a, b);
        double lambda = lam(rng);
        int n = 1 + i % 20;
        Hypothesis ha = make_hyp(std::vector<TokenId>(n, 2), a, 0.0, 0);
        Hypothesis hb = make_hyp(std::vector<TokenId>(n, 2), b, 0.0, 1);
        CHECK(normalized_logprob(ha, lambda) <= normalized_logprob(hb, lambda));
    }
}

TEST_CASE("compare_hypotheses orders by score then insertion") {
    Hypothesis a = make_hyp({2}, -1.0, -1.0, 5);
    Hypothesis b = make_hyp({3}, -2.0, -2.0, 1);
    CHECK(compare_hypotheses(a, b) < 0);
    Hypothesis c = make_hyp({2}, -1.0, -1.0, 3);
    Hypothesis d = make_hyp({3}, -1.0, -1.0, 7);
    CHECK(compare_hypotheses(c, d) < 0);
    CHECK(compare_hypotheses(d, c) > 0);
}

TEST_CASE("compare_hypotheses rejects missing cached score") {
    Hypothesis a = make_hyp({2}, -1.0, -1.0, 0);
    Hypothesis b;
    b.tokens = {3};
    CHECK_THROWS_AS(compare_hypotheses(a, b), std::logic_error);
}

TEST_CASE("compare_hypotheses is a strict total order on random hypotheses") {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> score(-5.0, 0.0);
    std::uniform_int_distribution<int> tok(2, 6);
    std::vector<Hypothesis> hyps;
    for (std::uint64_t i = 0; i < 60; ++i) {
        std::vector<TokenId> tokens(1 + i % 5);
        for (auto& t : tokens) t = tok(rng);
        // Coarse scores force plenty of ties into the seq_no tie-break.
        double s = std::round(score(rng) * 4.0) / 4.0;
        hyps.push_back(make_hyp(std::move(tokens), s, s, i));
    }
    for (const auto& a : hyps)
        for (const auto& b : hyps) {
            int ab = compare_hypotheses(a, b);
            int ba = compare_hypotheses(b, a);
            if (&a == &b)
                CHECK(ab == 0);
            else {
                CHECK(ab != 0);  // seq_no uniqueness -> trichotomy
                CHECK(ab == -ba);
            }
        }
    for (const auto& a : hyps)
        for (const auto& b : hyps)
            for (const auto& c : hyps)
                if (compare_hypotheses(a, b) < 0 && compare_hypotheses(b, c) < 0)
                    CHECK(compare_hypotheses(a, c) < 0);
}

TEST_CASE("vocab validation") {
    Vocab v = Vocab::make_default(4);
    CHECK_NOTHROW(v.validate());
    CHECK(v.size() == 4);
    CHECK(v.bos_id != v.eos_id);
    v.tokens[3] = v.tokens[2];
    CHECK_THROWS_AS(v.validate(), std::invalid_argument);
    Vocab same = Vocab::make_default(3);
    same.eos_id = same.bos_id;
    CHECK_THROWS_AS(same.validate(), std::invalid_argument);
}

TEST_CASE("search config validation") {
    SearchConfig cfg;
    cfg.beam_size = 4;
    cfg.retain_size = 3;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.retain_size = 8;
    CHECK_NOTHROW(cfg.validate());
    cfg.max_steps = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
