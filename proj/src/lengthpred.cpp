#include "sqd/lengthpred.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace sqd {

using nlohmann::json;
using nn::Vec;

LmsMode lms_mode_from_string(const std::string& s) {
    if (s == "expectation") return LmsMode::Expectation;
    if (s == "as-printed" || s == "as_printed") return LmsMode::AsPrinted;
    throw std::invalid_argument("unknown lms mode: " + s);
}

std::string to_string(LmsMode mode) {
    return mode == LmsMode::Expectation ? "expectation" : "as-printed";
}

double lms(const GaussianParams& d, const GaussianParams& e, LmsMode mode) {
    if (d.sigma < kSigmaFloor || e.sigma < kSigmaFloor)
        throw std::invalid_argument("lms: sigma below floor");
    double diff2 = (d.mu - e.mu) * (d.mu - e.mu);
    if (mode == LmsMode::Expectation)
        return 0.5 * std::log(2.0 * M_PI * e.sigma * e.sigma) +
               (d.sigma * d.sigma + diff2) / (2.0 * e.sigma * e.sigma);
    return 0.5 * std::log(2.0 * M_PI * d.sigma * d.sigma) +
           (e.sigma * e.sigma + diff2) / (2.0 * d.sigma * d.sigma);
}

double lmp(const Hypothesis& h, const PredictorState& state, const GaussianParams& encoder_gauss,
           const ScoreConfig& cfg) {
    if (h.finished) return 0.0;
    return lms(state.gaussian, encoder_gauss, cfg.lms_mode) > cfg.tau ? cfg.gamma : 0.0;
}

// ---------------------------------------------------------------------------

namespace {

GaussianParams gaussian_from_head(const Vec& v) {
    return GaussianParams{v[0], std::max(nn::softplus(v[1]), kSigmaFloor)};
}

// d(loss)/d(head output v) given d(loss)/d(mu, sigma).
Vec head_grad(const Vec& v, double dmu, double dsigma) {
    Vec dv(2, 0.0);
    dv[0] = dmu;
    double sp = nn::softplus(v[1]);
    if (sp > kSigmaFloor) dv[1] = dsigma * nn::sigmoid(v[1]);
    return dv;
}

}  // namespace

LengthPredictor::LengthPredictor(const PredictorConfig& cfg, int summary_dim, int embed_dim)
    : cfg_(cfg),
      summary_dim_(summary_dim),
      embed_dim_(embed_dim),
      needs_projection_(summary_dim != cfg.hidden_dim),
      enc_hidden_(summary_dim, cfg.head_hidden_dim, true),
      enc_out_(cfg.head_hidden_dim, 2, false),
      proj_(needs_projection_ ? summary_dim : 1, cfg.hidden_dim, false),
      lstm_(embed_dim, cfg.hidden_dim),
      dec_hidden_(cfg.hidden_dim, cfg.head_hidden_dim, true),
      dec_out_(cfg.head_hidden_dim, 2, false) {
    if (summary_dim < 1 || embed_dim < 1)
        throw std::invalid_argument("predictor: dimensions must be >= 1");
    std::mt19937_64 rng(cfg.init_seed);
    enc_hidden_.init_uniform(rng);
    enc_out_.init_uniform(rng);
    if (needs_projection_) proj_.init_uniform(rng);
    lstm_.init_uniform(rng);
    dec_hidden_.init_uniform(rng);
    dec_out_.init_uniform(rng);
}

Vec LengthPredictor::project_summary(const Vec& summary) const {
    if (static_cast<int>(summary.size()) != summary_dim_)
        throw std::logic_error("predictor: summary dimension mismatch");
    if (!needs_projection_) return summary;
    return proj_.forward(summary);
}

GaussianParams LengthPredictor::encoder_head(const SourceSummary& summary) const {
    auto hidden = enc_hidden_.forward(summary.vector);
    return gaussian_from_head(enc_out_.forward(hidden));
}

PredictorState LengthPredictor::initial_state(const SourceSummary& summary) const {
    PredictorState st;
    st.h.assign(cfg_.hidden_dim, 0.0);
    st.c.assign(cfg_.hidden_dim, 0.0);
    Vec s = project_summary(summary.vector);
    Vec z(cfg_.hidden_dim);
    for (int k = 0; k < cfg_.hidden_dim; ++k) z[k] = st.h[k] + s[k];
    st.gaussian = gaussian_from_head(dec_out_.forward(dec_hidden_.forward(z)));
    return st;
}

PredictorState LengthPredictor::step(const PredictorState& state,
                                     const std::vector<double>& token_embedding,
                                     const SourceSummary& summary) const {
    PredictorState next;
    auto [h, c] = lstm_.forward(state.h, state.c, token_embedding);
    next.h = std::move(h);
    next.c = std::move(c);
    Vec s = project_summary(summary.vector);
    Vec z(cfg_.hidden_dim);
    for (int k = 0; k < cfg_.hidden_dim; ++k) z[k] = next.h[k] + s[k];
    next.gaussian = gaussian_from_head(dec_out_.forward(dec_hidden_.forward(z)));
    return next;
}

double LengthPredictor::loss_j(const TrainingExample& example, const SequenceModel& model) {
    if (example.greedy_output.empty())
        throw std::invalid_argument("loss_j: empty greedy output");
    if (example.gold_length < 1) throw std::invalid_argument("loss_j: gold length must be >= 1");
    zero_grads();

    auto [summary, state] = model.encode(example.source);
    (void)state;
    const Vec& sv = summary.vector;

    // Encoder term: -log P(L*; mu_e, sigma_e)
    Vec enc_pre, enc_hid_out;
    enc_hid_out = enc_hidden_.forward(sv, &enc_pre);
    Vec enc_out_pre;
    Vec ve = enc_out_.forward(enc_hid_out, &enc_out_pre);
    GaussianParams ge = gaussian_from_head(ve);
    double lstar = static_cast<double>(example.gold_length);
    double loss = nn::gaussian_nll(lstar, ge.mu, ge.sigma);
    {
        auto [dmu, dsigma] = nn::gaussian_nll_grad(lstar, ge.mu, ge.sigma);
        Vec dve = head_grad(ve, dmu, dsigma);
        Vec dhid = enc_out_.backward(enc_hid_out, enc_out_pre, dve);
        enc_hidden_.backward(sv, enc_pre, dhid);
    }

    // Decoder term: -(1/L) sum_l log P(L; mu_d_l, sigma_d_l)
    int steps = static_cast<int>(example.greedy_output.size());
    double len = static_cast<double>(steps);
    Vec proj_pre;
    Vec s = needs_projection_ ? proj_.forward(sv, &proj_pre) : sv;

    std::vector<nn::LstmCell::Cache> caches(steps);
    std::vector<Vec> embeddings(steps), zs(steps), dh_pre(steps), dh_out(steps), do_pre(steps),
        vds(steps);
    Vec dz_total(cfg_.hidden_dim, 0.0);
    std::vector<Vec> dzs(steps, Vec(cfg_.hidden_dim, 0.0));
    Vec h(cfg_.hidden_dim, 0.0), c(cfg_.hidden_dim, 0.0);
    for (int l = 0; l < steps; ++l) {
        embeddings[l] = model.embed(example.greedy_output[l]);
        auto [nh, nc] = lstm_.forward(h, c, embeddings[l], &caches[l]);
        h = std::move(nh);
        c = std::move(nc);
        zs[l].resize(cfg_.hidden_dim);
        for (int k = 0; k < cfg_.hidden_dim; ++k) zs[l][k] = h[k] + s[k];
        dh_out[l] = dec_hidden_.forward(zs[l], &dh_pre[l]);
        vds[l] = dec_out_.forward(dh_out[l], &do_pre[l]);
        GaussianParams gd = gaussian_from_head(vds[l]);
        loss += nn::gaussian_nll(len, gd.mu, gd.sigma) / len;

        auto [dmu, dsigma] = nn::gaussian_nll_grad(len, gd.mu, gd.sigma);
        Vec dvd = head_grad(vds[l], dmu / len, dsigma / len);
        Vec dh_hid = dec_out_.backward(dh_out[l], do_pre[l], dvd);
        dzs[l] = dec_hidden_.backward(zs[l], dh_pre[l], dh_hid);
        for (int k = 0; k < cfg_.hidden_dim; ++k) dz_total[k] += dzs[l][k];
    }

    // BPTT through LSTM^d.
    Vec dh_carry(cfg_.hidden_dim, 0.0), dc_carry(cfg_.hidden_dim, 0.0);
    for (int l = steps - 1; l >= 0; --l) {
        Vec dh = dzs[l];
        for (int k = 0; k < cfg_.hidden_dim; ++k) dh[k] += dh_carry[k];
        auto [dhp, dcp, dx] = lstm_.backward(caches[l], dh, dc_carry);
        dh_carry = std::move(dhp);
        dc_carry = std::move(dcp);
    }

    // The summed-in summary feeds every step's z.
    if (needs_projection_) proj_.backward(sv, proj_pre, dz_total);

    return loss;
}

LengthPredictor::TrainReport LengthPredictor::train(const std::vector<TrainingExample>& corpus,
                                                    const SequenceModel& model, int epochs,
                                                    const nn::AdamConfig& adam_cfg,
                                                    std::uint64_t shuffle_seed) {
    if (corpus.empty()) throw std::invalid_argument("train: empty corpus");
    TrainReport report;
    nn::Adam adam(adam_cfg);
    std::mt19937_64 rng(shuffle_seed);
    std::vector<size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), size_t{0});
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        for (size_t idx : order) {
            double loss = loss_j(corpus[idx], model);
            total += loss;
            Vec params = flat_params();
            Vec grads = flat_grads();
            adam.step(params, grads);
            set_flat_params(params);
        }
        report.epoch_mean_loss.push_back(total / static_cast<double>(corpus.size()));
    }
    return report;
}

void LengthPredictor::visit(const nn::ParamVisitor& fn) {
    visit_encoder(fn);
    if (needs_projection_) proj_.visit(fn);
    lstm_.visit(fn);
    dec_hidden_.visit(fn);
    dec_out_.visit(fn);
}

void LengthPredictor::visit_encoder(const nn::ParamVisitor& fn) {
    enc_hidden_.visit(fn);
    enc_out_.visit(fn);
}

Vec LengthPredictor::flat_params() {
    return nn::flatten([this](const nn::ParamVisitor& fn) { visit(fn); }, false);
}

Vec LengthPredictor::flat_grads() {
    return nn::flatten([this](const nn::ParamVisitor& fn) { visit(fn); }, true);
}

void LengthPredictor::set_flat_params(std::span<const double> flat) {
    nn::unflatten([this](const nn::ParamVisitor& fn) { visit(fn); }, flat);
}

void LengthPredictor::zero_grads() {
    visit([](Vec&, Vec& g) { std::fill(g.begin(), g.end(), 0.0); });
}

std::string LengthPredictor::to_json() const {
    json j;
    j["version"] = 1;
    j["hidden_dim"] = cfg_.hidden_dim;
    j["head_hidden_dim"] = cfg_.head_hidden_dim;
    j["summary_dim"] = summary_dim_;
    j["embed_dim"] = embed_dim_;
    json params = json::array();
    const_cast<LengthPredictor*>(this)->visit(
        [&](Vec& p, Vec&) { params.push_back(p); });
    j["params"] = params;
    return j.dump();
}

std::shared_ptr<LengthPredictor> LengthPredictor::from_json(const std::string& text) {
    json j = json::parse(text);
    PredictorConfig cfg;
    cfg.hidden_dim = j.at("hidden_dim").get<int>();
    cfg.head_hidden_dim = j.at("head_hidden_dim").get<int>();
    auto pred = std::make_shared<LengthPredictor>(cfg, j.at("summary_dim").get<int>(),
                                                  j.at("embed_dim").get<int>());
    auto params = j.at("params");
    size_t idx = 0;
    pred->visit([&](Vec& p, Vec&) {
        if (idx >= params.size()) throw std::invalid_argument("predictor file: missing parameters");
        auto loaded = params[idx++].get<Vec>();
        if (loaded.size() != p.size())
            throw std::invalid_argument("predictor file: parameter shape mismatch");
        p = std::move(loaded);
    });
    if (idx != params.size()) throw std::invalid_argument("predictor file: extra parameters");
    return pred;
}

TrainingExample make_training_example(const SequenceModel& model, const SourceSentence& source,
                                      int gold_length, int max_steps) {
    TrainingExample ex;
    ex.source = source;
    ex.gold_length = gold_length;
    auto [summary, state] = model.encode(source);
    (void)summary;
    TokenId last = model.vocab().bos_id;
    for (int t = 0; t < max_steps; ++t) {
        auto out = model.step(state, last);
        auto best = std::max_element(out.logprobs.begin(), out.logprobs.end());
        TokenId tok = static_cast<TokenId>(best - out.logprobs.begin());
        if (tok == model.vocab().eos_id) break;
        ex.greedy_output.push_back(tok);
        state = out.next_state;
        last = tok;
    }
    if (ex.greedy_output.empty()) ex.greedy_output.push_back(model.vocab().eos_id);
    return ex;
}

void save_predictor_section(const std::string& model_path, const LengthPredictor& predictor) {
    std::ifstream in(model_path);
    if (!in) throw std::invalid_argument("cannot open model file: " + model_path);
    std::stringstream buf;
    buf << in.rdbuf();
    in.close();
    json j = json::parse(buf.str());
    j["length_predictor"] = json::parse(predictor.to_json());
    std::ofstream out(model_path);
    if (!out) throw std::invalid_argument("cannot write model file: " + model_path);
    out << j.dump(2) << "\n";
}

std::shared_ptr<LengthPredictor> load_predictor_section(const std::string& model_path) {
    std::ifstream in(model_path);
    if (!in) throw std::invalid_argument("cannot open model file: " + model_path);
    std::stringstream buf;
    buf << in.rdbuf();
    json j = json::parse(buf.str());
    if (!j.contains("length_predictor"))
        throw std::invalid_argument("model file has no length_predictor section: " + model_path);
    return LengthPredictor::from_json(j.at("length_predictor").dump());
}

}  // namespace sqd
