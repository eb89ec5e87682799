#include "sqd/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

namespace sqd {

using nlohmann::json;

std::vector<double> log_softmax(const std::vector<double>& logits) {
    double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    double lse = mx + std::log(sum);
    std::vector<double> out(logits.size());
    for (size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] - lse;
    return out;
}

// ---------------------------------------------------------------------------
// TabularModel

namespace {
struct TabularState {
    int state;
};
}  // namespace

TabularModel::TabularModel(Vocab vocab, int num_states) : vocab_(std::move(vocab)) {
    vocab_.validate();
    if (num_states < 1) throw std::invalid_argument("tabular: need at least one state");
    int v = vocab_.size();
    logprobs_.assign(num_states, std::vector<double>(v, -std::numeric_limits<double>::infinity()));
    transitions_.assign(num_states, std::vector<int>(v, 0));
    default_summary_.assign(2, 0.0);
}

void TabularModel::set_distribution(int state, const std::vector<double>& probs) {
    if (state < 0 || state >= num_states())
        throw std::invalid_argument("tabular: state out of range");
    if (static_cast<int>(probs.size()) != vocab_.size())
        throw std::invalid_argument("tabular: distribution size != vocab size");
    double sum = 0.0;
    for (double p : probs) {
        if (p < 0.0) throw std::invalid_argument("tabular: negative probability");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("tabular: distribution does not sum to 1");
    for (int k = 0; k < vocab_.size(); ++k)
        logprobs_[state][k] =
            probs[k] > 0.0 ? std::log(probs[k]) : -std::numeric_limits<double>::infinity();
}

void TabularModel::set_transition(int state, TokenId token, int next_state) {
    if (state < 0 || state >= num_states() || next_state < 0 || next_state >= num_states())
        throw std::invalid_argument("tabular: state out of range");
    if (!vocab_.valid_id(token)) throw std::invalid_argument("tabular: token out of range");
    transitions_[state][token] = next_state;
}

void TabularModel::set_default_summary(std::vector<double> summary) {
    default_summary_ = std::move(summary);
    summary_mode_ = SummaryMode::Declared;
}

void TabularModel::set_summary_for(const std::vector<TokenId>& source,
                                   std::vector<double> summary) {
    per_source_summary_[source] = std::move(summary);
}

void TabularModel::use_length_encoding_summary(int dim, double scale) {
    if (dim < 1) throw std::invalid_argument("tabular: summary dim must be >= 1");
    summary_mode_ = SummaryMode::LengthEncoding;
    length_summary_dim_ = dim;
    length_summary_scale_ = scale;
}

void TabularModel::validate() const {
    for (int s = 0; s < num_states(); ++s) {
        double sum = 0.0;
        for (double lp : logprobs_[s])
            if (lp > -std::numeric_limits<double>::infinity()) sum += std::exp(lp);
        if (std::abs(sum - 1.0) > 1e-9)
            throw std::invalid_argument("tabular: state " + std::to_string(s) +
                                        " distribution does not sum to 1");
    }
}

double TabularModel::path_logprob(const std::vector<TokenId>& tokens) const {
    int state = initial_state_;
    double total = 0.0;
    for (TokenId t : tokens) {
        total += logprobs_[state][t];
        state = transitions_[state][t];
    }
    return total;
}

int TabularModel::summary_dim() const {
    return summary_mode_ == SummaryMode::LengthEncoding
               ? length_summary_dim_
               : static_cast<int>(default_summary_.size());
}

std::pair<SourceSummary, StateHandle> TabularModel::encode(const SourceSentence& source) const {
    if (source.length() < 1) throw std::invalid_argument("encode: empty source");
    for (TokenId t : source.tokens)
        if (!vocab_.valid_id(t))
            throw std::invalid_argument("encode: unknown token id " + std::to_string(t));
    SourceSummary summary;
    if (summary_mode_ == SummaryMode::LengthEncoding) {
        summary.vector.assign(length_summary_dim_, 0.0);
        summary.vector[0] = length_summary_scale_ * source.length();
        if (length_summary_dim_ > 1) summary.vector[1] = 1.0;
    } else if (auto it = per_source_summary_.find(source.tokens); it != per_source_summary_.end()) {
        summary.vector = it->second;
    } else {
        summary.vector = default_summary_;
    }
    return {std::move(summary), std::make_shared<TabularState>(TabularState{initial_state_})};
}

ModelStepOutput TabularModel::step(const StateHandle& state, TokenId last_token) const {
    const auto* ts = static_cast<const TabularState*>(state.get());
    if (!ts) throw std::logic_error("tabular: null state handle");
    if (!vocab_.valid_id(last_token))
        throw std::invalid_argument("step: unknown token id " + std::to_string(last_token));
    // BOS does not move the automaton; emitted tokens do.
    int next = last_token == vocab_.bos_id ? ts->state : transitions_[ts->state][last_token];
    ModelStepOutput out;
    out.logprobs = logprobs_[next];
    out.next_state = std::make_shared<TabularState>(TabularState{next});
    return out;
}

std::vector<double> TabularModel::embed(TokenId token) const {
    if (!vocab_.valid_id(token))
        throw std::invalid_argument("embed: unknown token id " + std::to_string(token));
    std::vector<double> e(vocab_.size(), 0.0);
    e[token] = 1.0;
    return e;
}

std::string TabularModel::to_json() const {
    json j;
    j["format"] = "sqd-model";
    j["version"] = 1;
    j["type"] = "tabular";
    j["vocab"] = {{"tokens", vocab_.tokens}, {"bos_id", vocab_.bos_id}, {"eos_id", vocab_.eos_id}};
    j["initial_state"] = initial_state_;
    json states = json::array();
    for (int s = 0; s < num_states(); ++s) {
        json st;
        std::vector<double> probs(vocab_.size());
        for (int k = 0; k < vocab_.size(); ++k) {
            double lp = logprobs_[s][k];
            probs[k] = lp > -std::numeric_limits<double>::infinity() ? std::exp(lp) : 0.0;
        }
        st["probs"] = probs;
        st["transitions"] = transitions_[s];
        states.push_back(st);
    }
    j["states"] = states;
    if (summary_mode_ == SummaryMode::LengthEncoding) {
        j["summary"] = {{"mode", "length"},
                        {"dim", length_summary_dim_},
                        {"scale", length_summary_scale_}};
    } else {
        json per_source = json::array();
        for (const auto& [src, vec] : per_source_summary_)
            per_source.push_back({{"source", src}, {"vector", vec}});
        j["summary"] = {{"mode", "declared"},
                        {"default", default_summary_},
                        {"per_source", per_source}};
    }
    return j.dump(2);
}

std::shared_ptr<TabularModel> TabularModel::from_json(const std::string& text) {
    json j = json::parse(text);
    Vocab vocab;
    vocab.tokens = j.at("vocab").at("tokens").get<std::vector<std::string>>();
    vocab.bos_id = j.at("vocab").at("bos_id").get<int>();
    vocab.eos_id = j.at("vocab").at("eos_id").get<int>();
    auto states = j.at("states");
    auto model = std::make_shared<TabularModel>(vocab, static_cast<int>(states.size()));
    model->initial_state_ = j.value("initial_state", 0);
    for (int s = 0; s < static_cast<int>(states.size()); ++s) {
        auto probs = states[s].at("probs").get<std::vector<double>>();
        // Renormalize tiny float drift from hand-written fixtures.
        double sum = 0.0;
        for (double p : probs) sum += p;
        if (std::abs(sum - 1.0) > 1e-6)
            throw std::invalid_argument("tabular fixture: state " + std::to_string(s) +
                                        " probabilities sum to " + std::to_string(sum));
        for (double& p : probs) p /= sum;
        model->set_distribution(s, probs);
        auto trans = states[s].at("transitions").get<std::vector<int>>();
        for (int k = 0; k < static_cast<int>(trans.size()); ++k)
            model->set_transition(s, k, trans[k]);
    }
    auto summary = j.at("summary");
    if (summary.at("mode") == "length") {
        model->use_length_encoding_summary(summary.at("dim").get<int>(),
                                           summary.at("scale").get<double>());
    } else {
        model->set_default_summary(summary.at("default").get<std::vector<double>>());
        for (const auto& entry : summary.value("per_source", json::array()))
            model->set_summary_for(entry.at("source").get<std::vector<TokenId>>(),
                                   entry.at("vector").get<std::vector<double>>());
    }
    model->validate();
    return model;
}

std::shared_ptr<TabularModel> TabularModel::random_fixture(std::uint64_t seed, int vocab_size,
                                                           int states, double eos_weight) {
    if (vocab_size < 3) throw std::invalid_argument("fixture: vocab size must be >= 3");
    std::mt19937_64 rng(seed);
    auto model = std::make_shared<TabularModel>(Vocab::make_default(vocab_size), states);
    std::gamma_distribution<double> gamma(1.0, 1.0);
    std::uniform_int_distribution<int> state_dist(0, states - 1);
    for (int s = 0; s < states; ++s) {
        std::vector<double> probs(vocab_size, 0.0);
        double sum = 0.0;
        for (int k = 0; k < vocab_size; ++k) {
            if (k == model->vocab_.bos_id) continue;
            double w = gamma(rng);
            if (k == model->vocab_.eos_id) w *= eos_weight;
            probs[k] = w;
            sum += w;
        }
        for (double& p : probs) p /= sum;
        model->set_distribution(s, probs);
        for (int k = 0; k < vocab_size; ++k) model->set_transition(s, k, state_dist(rng));
    }
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::vector<double> summary(2);
    for (double& v : summary) v = unit(rng);
    model->set_default_summary(std::move(summary));
    return model;
}

// ---------------------------------------------------------------------------
// NeuralModel

namespace {
struct NeuralState {
    std::vector<double> hidden;
};
}  // namespace

NeuralModel::NeuralModel(Vocab vocab, int embed_dim, int hidden_dim)
    : vocab_(std::move(vocab)),
      embed_dim_(embed_dim),
      hidden_dim_(hidden_dim),
      embeddings_(static_cast<size_t>(embed_dim) * 0, 0.0),
      encoder_(embed_dim, hidden_dim, true),
      rec_input_(embed_dim, hidden_dim, false),
      rec_hidden_(hidden_dim, hidden_dim, false),
      output_(hidden_dim, 0, false) {
    vocab_.validate();
    if (embed_dim < 1 || hidden_dim < 1)
        throw std::invalid_argument("neural: dimensions must be >= 1");
    embeddings_.assign(static_cast<size_t>(vocab_.size()) * embed_dim_, 0.0);
    output_ = nn::DenseLayer(hidden_dim, vocab_.size(), false);
}

void NeuralModel::init_random(std::uint64_t seed, double range) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-range, range);
    for (double& e : embeddings_) e = dist(rng);
    encoder_.init_uniform(rng, range);
    rec_input_.init_uniform(rng, range);
    rec_hidden_.init_uniform(rng, range);
    output_.init_uniform(rng, range);
}

std::vector<double> NeuralModel::embed(TokenId token) const {
    if (!vocab_.valid_id(token))
        throw std::invalid_argument("embed: unknown token id " + std::to_string(token));
    auto begin = embeddings_.begin() + static_cast<size_t>(token) * embed_dim_;
    return {begin, begin + embed_dim_};
}

std::pair<SourceSummary, StateHandle> NeuralModel::encode(const SourceSentence& source) const {
    if (source.length() < 1) throw std::invalid_argument("encode: empty source");
    std::vector<double> mean(embed_dim_, 0.0);
    for (TokenId t : source.tokens) {
        auto e = embed(t);
        for (int k = 0; k < embed_dim_; ++k) mean[k] += e[k];
    }
    for (double& v : mean) v /= source.length();
    auto hidden = encoder_.forward(mean);
    SourceSummary summary{hidden};
    return {std::move(summary), std::make_shared<NeuralState>(NeuralState{std::move(hidden)})};
}

ModelStepOutput NeuralModel::step(const StateHandle& state, TokenId last_token) const {
    const auto* ns = static_cast<const NeuralState*>(state.get());
    if (!ns) throw std::logic_error("neural: null state handle");
    auto x = embed(last_token);
    auto from_input = rec_input_.forward(x);
    auto from_hidden = rec_hidden_.forward(ns->hidden);
    std::vector<double> h(hidden_dim_);
    for (int k = 0; k < hidden_dim_; ++k) h[k] = std::tanh(from_input[k] + from_hidden[k]);
    auto logits = output_.forward(h);
    ModelStepOutput out;
    out.logprobs = log_softmax(logits);
    out.next_state = std::make_shared<NeuralState>(NeuralState{std::move(h)});
    return out;
}

std::string NeuralModel::to_json() const {
    json j;
    j["format"] = "sqd-model";
    j["version"] = 1;
    j["type"] = "neural";
    j["vocab"] = {{"tokens", vocab_.tokens}, {"bos_id", vocab_.bos_id}, {"eos_id", vocab_.eos_id}};
    j["embed_dim"] = embed_dim_;
    j["hidden_dim"] = hidden_dim_;
    j["embeddings"] = embeddings_;
    auto dump_dense = [](const nn::DenseLayer& d) {
        return json{{"W", d.W}, {"b", d.b}};
    };
    j["encoder"] = dump_dense(encoder_);
    j["rec_input"] = dump_dense(rec_input_);
    j["rec_hidden"] = dump_dense(rec_hidden_);
    j["output"] = dump_dense(output_);
    return j.dump(2);
}

std::shared_ptr<NeuralModel> NeuralModel::from_json(const std::string& text) {
    json j = json::parse(text);
    Vocab vocab;
    vocab.tokens = j.at("vocab").at("tokens").get<std::vector<std::string>>();
    vocab.bos_id = j.at("vocab").at("bos_id").get<int>();
    vocab.eos_id = j.at("vocab").at("eos_id").get<int>();
    auto model = std::make_shared<NeuralModel>(vocab, j.at("embed_dim").get<int>(),
                                               j.at("hidden_dim").get<int>());
    model->embeddings_ = j.at("embeddings").get<std::vector<double>>();
    auto load_dense = [&](const char* key, nn::DenseLayer& d) {
        d.W = j.at(key).at("W").get<std::vector<double>>();
        d.b = j.at(key).at("b").get<std::vector<double>>();
    };
    load_dense("encoder", model->encoder_);
    load_dense("rec_input", model->rec_input_);
    load_dense("rec_hidden", model->rec_hidden_);
    load_dense("output", model->output_);
    return model;
}

// ---------------------------------------------------------------------------
// File IO

std::shared_ptr<SequenceModel> load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open model file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    json j = json::parse(buf.str());
    auto type = j.at("type").get<std::string>();
    if (type == "tabular") return TabularModel::from_json(buf.str());
    if (type == "neural") return NeuralModel::from_json(buf.str());
    throw std::invalid_argument("unknown model type: " + type);
}

void save_model(const SequenceModel& model, const std::string& path) {
    std::string text;
    if (const auto* t = dynamic_cast<const TabularModel*>(&model)) {
        text = t->to_json();
    } else if (const auto* n = dynamic_cast<const NeuralModel*>(&model)) {
        text = n->to_json();
    } else {
        throw std::logic_error("save_model: unknown model class");
    }
    std::ofstream out(path);
    if (!out) throw std::invalid_argument("cannot write model file: " + path);
    out << text << "\n";
}

}  // namespace sqd
