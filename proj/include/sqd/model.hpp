#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sqd/core.hpp"
#include "sqd/nn.hpp"

namespace sqd {

struct SourceSummary {
    std::vector<double> vector;

    int dim() const { return static_cast<int>(vector.size()); }
};

using StateHandle = std::shared_ptr<const void>;

struct ModelStepOutput {
    std::vector<double> logprobs;  // log-softmax over the vocabulary
    StateHandle next_state;
};

// Contract every decodable scorer implements. A hypothesis stores the decoder
// state *before* its last token; step() consumes that token and returns the
// next-token distribution together with the advanced state.
class SequenceModel {
public:
    virtual ~SequenceModel() = default;

    virtual const Vocab& vocab() const = 0;
    virtual std::pair<SourceSummary, StateHandle> encode(const SourceSentence& source) const = 0;
    virtual ModelStepOutput step(const StateHandle& state, TokenId last_token) const = 0;
    virtual std::vector<double> embed(TokenId token) const = 0;
    virtual int embed_dim() const = 0;
    virtual int summary_dim() const = 0;
};

// Exact finite-state model: per-state distributions over the vocabulary and a
// deterministic transition table. Embeddings are one-hot; the source summary
// is either declared per fixture or derived from the source length so length
// prediction has something to learn from.
class TabularModel : public SequenceModel {
public:
    enum class SummaryMode { Declared, LengthEncoding };

    TabularModel(Vocab vocab, int num_states);

    void set_distribution(int state, const std::vector<double>& probs);  // probs sum to 1
    void set_transition(int state, TokenId token, int next_state);
    void set_default_summary(std::vector<double> summary);
    void set_summary_for(const std::vector<TokenId>& source, std::vector<double> summary);
    void use_length_encoding_summary(int dim, double scale);
    void set_initial_state(int state) { initial_state_ = state; }

    int num_states() const { return static_cast<int>(logprobs_.size()); }
    void validate() const;

    // Exact log-probability of an EOS-free-prefix token path from the initial
    // state; independent of step() chaining, used as an oracle.
    double path_logprob(const std::vector<TokenId>& tokens) const;

    const Vocab& vocab() const override { return vocab_; }
    std::pair<SourceSummary, StateHandle> encode(const SourceSentence& source) const override;
    ModelStepOutput step(const StateHandle& state, TokenId last_token) const override;
    std::vector<double> embed(TokenId token) const override;
    int embed_dim() const override { return vocab_.size(); }
    int summary_dim() const override;

    std::string to_json() const;
    static std::shared_ptr<TabularModel> from_json(const std::string& text);

    // Seeded random fixture: dense transitions, positive probabilities for
    // every non-BOS token, random declared summary.
    static std::shared_ptr<TabularModel> random_fixture(std::uint64_t seed, int vocab_size,
                                                        int states, double eos_weight = 1.0);

private:
    Vocab vocab_;
    std::vector<std::vector<double>> logprobs_;       // state -> log p(token)
    std::vector<std::vector<int>> transitions_;       // state x token -> state
    std::vector<double> default_summary_;
    std::map<std::vector<TokenId>, std::vector<double>> per_source_summary_;
    SummaryMode summary_mode_ = SummaryMode::Declared;
    int length_summary_dim_ = 2;
    double length_summary_scale_ = 0.1;
    int initial_state_ = 0;
};

// Minimal trainable model: embedding table, one dense encoder over the mean
// source embedding, a plain tanh recurrence for the decoder and a softmax
// output layer.
class NeuralModel : public SequenceModel {
public:
    NeuralModel(Vocab vocab, int embed_dim, int hidden_dim);

    void init_random(std::uint64_t seed, double range = 0.1);

    const Vocab& vocab() const override { return vocab_; }
    std::pair<SourceSummary, StateHandle> encode(const SourceSentence& source) const override;
    ModelStepOutput step(const StateHandle& state, TokenId last_token) const override;
    std::vector<double> embed(TokenId token) const override;
    int embed_dim() const override { return embed_dim_; }
    int summary_dim() const override { return hidden_dim_; }

    std::string to_json() const;
    static std::shared_ptr<NeuralModel> from_json(const std::string& text);

private:
    Vocab vocab_;
    int embed_dim_;
    int hidden_dim_;
    std::vector<double> embeddings_;  // V x embed_dim
    nn::DenseLayer encoder_;          // embed_dim -> hidden (tanh)
    nn::DenseLayer rec_input_;        // embed_dim -> hidden (identity)
    nn::DenseLayer rec_hidden_;       // hidden -> hidden (identity)
    nn::DenseLayer output_;           // hidden -> V (identity, log-softmaxed)

    friend struct NeuralModelAccess;
};

// Loads either model type by inspecting the "type" field; attaches no
// predictor (see lengthpred for the predictor section).
std::shared_ptr<SequenceModel> load_model(const std::string& path);
void save_model(const SequenceModel& model, const std::string& path);

std::vector<double> log_softmax(const std::vector<double>& logits);

}  // namespace sqd
