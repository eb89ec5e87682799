#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "sqd/model.hpp"

using namespace sqd;

namespace {

// Three-state chain over {<s>, </s>, a, b}; every distribution declared.
std::shared_ptr<TabularModel> chain_fixture() {
    auto model = std::make_shared<TabularModel>(Vocab::make_default(4), 3);
    model->set_distribution(0, {0.0, 0.1, 0.7, 0.2});
    model->set_distribution(1, {0.0, 0.3, 0.3, 0.4});
    model->set_distribution(2, {0.0, 0.8, 0.1, 0.1});
    for (TokenId t = 0; t < 4; ++t) {
        model->set_transition(0, t, 1);
        model->set_transition(1, t, 2);
        model->set_transition(2, t, 2);
    }
    model->set_default_summary({0.5, -0.5});
    model->validate();
    return model;
}

}  // namespace

TEST_CASE("tabular encode returns the declared summary") {
    auto model = chain_fixture();
    model->set_summary_for({2, 3}, {1.0, 2.0});
    auto [summary, state] = model->encode(SourceSentence{{2, 3}});
    CHECK(summary.vector == std::vector<double>{1.0, 2.0});
    auto [other, state2] = model->encode(SourceSentence{{3, 3}});
    CHECK(other.vector == std::vector<double>{0.5, -0.5});
    auto [again, state3] = model->encode(SourceSentence{{2, 3}});
    CHECK(again.vector == summary.vector);
}

TEST_CASE("tabular encode rejects bad input") {
    auto model = chain_fixture();
    CHECK_THROWS_AS(model->encode(SourceSentence{{}}), std::invalid_argument);
    CHECK_THROWS_AS(model->encode(SourceSentence{{99}}), std::invalid_argument);
}

TEST_CASE("tabular step returns the declared distribution") {
    auto model = chain_fixture();
    auto [summary, state] = model->encode(SourceSentence{{2}});
    auto out = model->step(state, model->vocab().bos_id);
    CHECK(out.logprobs[2] == doctest::Approx(std::log(0.7)));
    CHECK(out.logprobs[3] == doctest::Approx(std::log(0.2)));
    CHECK(out.logprobs[1] == doctest::Approx(std::log(0.1)));
}

TEST_CASE("uniform state gives uniform logprobs") {
    auto model = std::make_shared<TabularModel>(Vocab::make_default(5), 1);
    model->set_distribution(0, {0.0, 0.25, 0.25, 0.25, 0.25});
    for (TokenId t = 0; t < 5; ++t) model->set_transition(0, t, 0);
    auto [summary, state] = model->encode(SourceSentence{{2}});
    auto out = model->step(state, model->vocab().bos_id);
    for (TokenId t = 1; t < 5; ++t) CHECK(out.logprobs[t] == doctest::Approx(std::log(0.25)));
}

TEST_CASE("chained step logprob equals direct path probability") {
    auto model = chain_fixture();
    // "a b </s>": 0.7 (state 0) * 0.4 (state 1) * 0.8 (state 2)
    double expected = std::log(0.7) + std::log(0.4) + std::log(0.8);
    CHECK(model->path_logprob({2, 3, 1}) == doctest::Approx(expected));

    auto [summary, state] = model->encode(SourceSentence{{2}});
    TokenId last = model->vocab().bos_id;
    double total = 0.0;
    for (TokenId tok : {2, 3, 1}) {
        auto out = model->step(state, last);
        total += out.logprobs[tok];
        state = out.next_state;
        last = tok;
    }
    CHECK(total == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("tabular embeddings are one-hot") {
    auto model = chain_fixture();
    auto e = model->embed(2);
    CHECK(e.size() == 4);
    CHECK(e[2] == 1.0);
    CHECK(e[0] + e[1] + e[3] == 0.0);
    CHECK(model->embed(2) == e);
    CHECK_THROWS_AS(model->embed(-1), std::invalid_argument);
}

TEST_CASE("step distributions are normalized on random fixtures") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto model = TabularModel::random_fixture(seed, 6, 4);
        auto [summary, state] = model->encode(SourceSentence{{2, 3}});
        auto out = model->step(state, model->vocab().bos_id);
        double sum = 0.0;
        for (double lp : out.logprobs)
            if (std::isfinite(lp)) sum += std::exp(lp);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
    }
}

TEST_CASE("tabular json round trip preserves behavior") {
    auto model = TabularModel::random_fixture(17, 5, 3);
    auto copy = TabularModel::from_json(model->to_json());
    for (auto tokens : {std::vector<TokenId>{2, 1}, {3, 4, 1}, {4, 4, 2, 1}})
        CHECK(copy->path_logprob(tokens) == doctest::Approx(model->path_logprob(tokens)));
    auto [s1, st1] = model->encode(SourceSentence{{2}});
    auto [s2, st2] = copy->encode(SourceSentence{{2}});
    CHECK(s1.vector == s2.vector);
}

TEST_CASE("length-encoding summary reflects the source length") {
    auto model = chain_fixture();
    model->use_length_encoding_summary(2, 0.1);
    auto [s3, st3] = model->encode(SourceSentence{{2, 2, 2}});
    CHECK(s3.vector[0] == doctest::Approx(0.3));
    CHECK(s3.vector[1] == 1.0);
}

TEST_CASE("neural model with zero weights gives uniform distribution") {
    NeuralModel model(Vocab::make_default(4), 3, 2);
    auto [summary, state] = model.encode(SourceSentence{{2}});
    // tanh encoder over zero weights: summary is the zero vector.
    for (double v : summary.vector) CHECK(v == 0.0);
    auto out = model.step(state, model.vocab().bos_id);
    for (double lp : out.logprobs) CHECK(lp == doctest::Approx(std::log(0.25)));
}

TEST_CASE("neural step is a valid log-distribution and deterministic") {
    NeuralModel model(Vocab::make_default(6), 4, 5);
    model.init_random(123);
    auto [summary, state] = model.encode(SourceSentence{{2, 3, 4}});
    auto out = model.step(state, model.vocab().bos_id);
    double sum = 0.0;
    for (double lp : out.logprobs) sum += std::exp(lp);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
    auto out2 = model.step(state, model.vocab().bos_id);
    CHECK(out.logprobs == out2.logprobs);
}

TEST_CASE("model file round trip through disk") {
    auto model = TabularModel::random_fixture(99, 5, 4);
    std::string path = "test_model_roundtrip.json";
    save_model(*model, path);
    auto loaded = load_model(path);
    auto [s1, st1] = model->encode(SourceSentence{{3, 4}});
    auto [s2, st2] = loaded->encode(SourceSentence{{3, 4}});
    CHECK(s1.vector == s2.vector);
    auto o1 = model->step(st1, 2);
    auto o2 = loaded->step(st2, 2);
    for (size_t k = 0; k < o1.logprobs.size(); ++k) {
        if (!std::isfinite(o1.logprobs[k]))
            CHECK(o2.logprobs[k] == o1.logprobs[k]);
        else
            CHECK(o2.logprobs[k] == doctest::Approx(o1.logprobs[k]));
    }
    std::remove(path.c_str());
}
