#include <doctest.h>

#include <cmath>
#include <random>

#include "sqd/lengthpred.hpp"
#include "sqd/model.hpp"

using namespace sqd;

namespace {

void zero_params(LengthPredictor& pred) {
    pred.visit([](nn::Vec& p, nn::Vec&) { std::fill(p.begin(), p.end(), 0.0); });
}

// Self-loop model emitting "a" with high probability; summary encodes length.
std::shared_ptr<TabularModel> loop_fixture() {
    auto model = std::make_shared<TabularModel>(Vocab::make_default(4), 1);
    model->set_distribution(0, {0.0, 0.05, 0.9, 0.05});
    for (TokenId t = 0; t < 4; ++t) model->set_transition(0, t, 0);
    model->use_length_encoding_summary(2, 0.1);
    return model;
}

double mc_cross_entropy(const GaussianParams& d, const GaussianParams& e, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(d.mu, d.sigma);
    double sum = 0.0;
    const int n = 1000000;
    for (int i = 0; i < n; ++i) sum += nn::gaussian_nll(dist(rng), e.mu, e.sigma);
    return sum / n;
}

}  // namespace

TEST_CASE("lms symmetric case agrees across modes") {
    GaussianParams g{2.5, 1.0};
    double expected = 0.5 * std::log(2.0 * M_PI) + 0.5;
    CHECK(lms(g, g, LmsMode::Expectation) == doctest::Approx(expected));
    CHECK(lms(g, g, LmsMode::AsPrinted) == doctest::Approx(expected));
}

TEST_CASE("lms expectation-mode plug-in value") {
    CHECK(lms({0.0, 1.0}, {3.0, 1.0}, LmsMode::Expectation) == doctest::Approx(5.9189385332));
}

TEST_CASE("lms expectation mode matches Monte-Carlo cross entropy") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> mu(-5.0, 5.0), sig(0.3, 3.0);
    for (int i = 0; i < 5; ++i) {
        GaussianParams d{mu(rng), sig(rng)}, e{mu(rng), sig(rng)};
        double closed = lms(d, e, LmsMode::Expectation);
        double mc = mc_cross_entropy(d, e, 1000 + i);
        CHECK(closed == doctest::Approx(mc).epsilon(0.0).scale(0.0).epsilon(1e-2));
        CHECK(std::abs(closed - mc) < 1e-2);
    }
}

TEST_CASE("lms expectation mode is minimized over mu_d at mu_e") {
    GaussianParams e{2.0, 1.3};
    double at_match = lms({2.0, 0.7}, e, LmsMode::Expectation);
    for (double m = -4.0; m <= 8.0; m += 0.25)
        CHECK(lms({m, 0.7}, e, LmsMode::Expectation) >= at_match - 1e-12);
}

TEST_CASE("lmp case clauses") {
    ScoreConfig cfg;
    cfg.lmp_enabled = true;
    cfg.gamma = -0.5;
    cfg.tau = 2.0;
    PredictorState state;
    state.gaussian = {0.0, 1.0};
    GaussianParams e{0.0, 1.0};  // lms ~ 1.42 < tau
    Hypothesis h;
    h.tokens = {2, 3};

    h.finished = true;
    CHECK(lmp(h, state, e, cfg) == 0.0);
    h.finished = false;
    CHECK(lmp(h, state, e, cfg) == 0.0);
    e.mu = 3.0;  // lms ~ 5.9 > tau
    CHECK(lmp(h, state, e, cfg) == -0.5);
}

TEST_CASE("zero-parameter heads give mu 0, sigma softplus(0)") {
    PredictorConfig cfg;
    cfg.hidden_dim = 4;
    LengthPredictor pred(cfg, 2, 4);
    zero_params(pred);
    SourceSummary summary{{0.7, -0.2}};
    auto ge = pred.encoder_head(summary);
    CHECK(ge.mu == 0.0);
    CHECK(ge.sigma == doctest::Approx(std::log(2.0)));
    auto st = pred.initial_state(summary);
    auto st1 = pred.step(st, {1.0, 0.0, 0.0, 0.0}, summary);
    CHECK(st1.gaussian.mu == 0.0);
    CHECK(st1.gaussian.sigma == doctest::Approx(std::log(2.0)));
}

TEST_CASE("predictor step is deterministic") {
    PredictorConfig cfg;
    cfg.hidden_dim = 6;
    cfg.init_seed = 4;
    LengthPredictor pred(cfg, 3, 5);
    SourceSummary summary{{0.1, 0.2, 0.3}};
    auto s0 = pred.initial_state(summary);
    std::vector<double> x{0.0, 1.0, 0.0, 0.0, 0.0};
    auto a = pred.step(s0, x, summary);
    auto b = pred.step(s0, x, summary);
    CHECK(a.h == b.h);
    CHECK(a.c == b.c);
    CHECK(a.gaussian.mu == b.gaussian.mu);
    CHECK(a.gaussian.sigma == b.gaussian.sigma);
}

TEST_CASE("loss_j on the degenerate one-token example") {
    auto model = loop_fixture();
    PredictorConfig cfg;
    cfg.hidden_dim = 3;
    LengthPredictor pred(cfg, 2, 4);
    zero_params(pred);
    TrainingExample ex;
    ex.source = SourceSentence{{2}};
    ex.gold_length = 1;
    ex.greedy_output = {2};
    double expected = 2.0 * nn::gaussian_nll(1.0, 0.0, std::log(2.0));
    CHECK(pred.loss_j(ex, *model) == doctest::Approx(expected));
}

TEST_CASE("loss_j rejects empty greedy output") {
    auto model = loop_fixture();
    LengthPredictor pred(PredictorConfig{}, 2, 4);
    TrainingExample ex;
    ex.source = SourceSentence{{2}};
    ex.gold_length = 3;
    CHECK_THROWS_AS(pred.loss_j(ex, *model), std::invalid_argument);
}

TEST_CASE("loss_j gradients match finite differences") {
    auto model = loop_fixture();
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        PredictorConfig cfg;
        cfg.hidden_dim = 3;
        cfg.head_hidden_dim = 4;
        cfg.init_seed = seed;
        LengthPredictor pred(cfg, 2, 4);
        // Well-scaled parameter draws; gradients near the zero-init point are
        // so small that finite differences drown in float roundoff.
        std::mt19937_64 rng(seed * 77);
        std::uniform_real_distribution<double> draw(-0.8, 0.8);
        pred.visit([&](nn::Vec& p, nn::Vec&) {
            for (auto& x : p) x = draw(rng);
        });
        TrainingExample ex;
        ex.source = SourceSentence{{2, 3, 2, 3}};
        ex.gold_length = 5;
        ex.greedy_output = {2, 3, 2, 3, 2};

        pred.loss_j(ex, *model);
        auto flat = pred.flat_params();
        auto analytic = pred.flat_grads();
        auto loss = [&](std::span<const double> p) {
            LengthPredictor copy = pred;
            copy.set_flat_params(p);
            return copy.loss_j(ex, *model);
        };
        CHECK(nn::check_gradients(loss, flat, analytic) < 1e-6);
    }
}

TEST_CASE("make_training_example greedy-decodes the base model") {
    auto model = loop_fixture();
    auto ex = make_training_example(*model, SourceSentence{{2, 3}}, 2, 5);
    // Greedy always emits "a" until the step budget runs out.
    CHECK(ex.greedy_output == std::vector<TokenId>(5, 2));
    CHECK(ex.gold_length == 2);
}

TEST_CASE("train for zero epochs is a no-op, loss curve stays finite") {
    auto model = loop_fixture();
    PredictorConfig cfg;
    cfg.hidden_dim = 4;
    cfg.init_seed = 9;
    LengthPredictor pred(cfg, 2, 4);
    std::vector<TrainingExample> corpus;
    for (int n = 1; n <= 10; ++n)
        corpus.push_back(make_training_example(*model, SourceSentence{std::vector<TokenId>(n, 2)},
                                               n, 12));
    auto before = pred.flat_params();
    auto report = pred.train(corpus, *model, 0, {}, 1);
    CHECK(report.epoch_mean_loss.empty());
    CHECK(pred.flat_params() == before);

    nn::AdamConfig adam;
    adam.lr = 0.02;
    report = pred.train(corpus, *model, 5, adam, 1);
    CHECK(report.epoch_mean_loss.size() == 5);
    for (double l : report.epoch_mean_loss) CHECK(std::isfinite(l));
    CHECK(report.epoch_mean_loss.back() < report.epoch_mean_loss.front());
}

TEST_CASE("encoder head learns a constant length") {
    auto model = loop_fixture();
    PredictorConfig cfg;
    cfg.hidden_dim = 4;
    cfg.init_seed = 2;
    LengthPredictor pred(cfg, 2, 4);
    std::vector<TrainingExample> corpus;
    for (int i = 0; i < 40; ++i)
        corpus.push_back(make_training_example(*model, SourceSentence{std::vector<TokenId>(3, 2)},
                                               7, 7));
    nn::AdamConfig adam;
    adam.lr = 0.05;
    pred.train(corpus, *model, 10, adam, 3);
    auto [summary, state] = model->encode(SourceSentence{std::vector<TokenId>(3, 2)});
    auto g = pred.encoder_head(summary);
    CHECK(std::abs(g.mu - 7.0) < 1.0);
}

TEST_CASE("predictor serialization round trip") {
    PredictorConfig cfg;
    cfg.hidden_dim = 5;
    cfg.init_seed = 8;
    LengthPredictor pred(cfg, 3, 4);
    auto copy = LengthPredictor::from_json(pred.to_json());
    SourceSummary summary{{0.3, -0.1, 0.8}};
    auto a = pred.encoder_head(summary);
    auto b = copy->encoder_head(summary);
    CHECK(a.mu == b.mu);
    CHECK(a.sigma == b.sigma);
    auto sa = pred.step(pred.initial_state(summary), {0, 1, 0, 0}, summary);
    auto sb = copy->step(copy->initial_state(summary), {0, 1, 0, 0}, summary);
    CHECK(sa.gaussian.mu == doctest::Approx(sb.gaussian.mu));
}
