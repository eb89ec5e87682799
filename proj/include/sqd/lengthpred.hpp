#pragma once

#include <memory>
#include <string>
#include <vector>

#include "sqd/core.hpp"
#include "sqd/model.hpp"
#include "sqd/nn.hpp"

namespace sqd {

// LSTM state of the length predictor carried inside a hypothesis, together
// with the current predicted final-length Gaussian.
struct PredictorState {
    nn::Vec h;
    nn::Vec c;
    GaussianParams gaussian;
};

LmsMode lms_mode_from_string(const std::string& s);
std::string to_string(LmsMode mode);

// Cross-entropy between the hypothesis-length Gaussian d and the
// correct-length Gaussian e.
double lms(const GaussianParams& d, const GaussianParams& e, LmsMode mode = LmsMode::Expectation);

// Length matching penalty: 0 for finished hypotheses, otherwise gamma when
// the matching score exceeds tau.
double lmp(const Hypothesis& h, const PredictorState& state, const GaussianParams& encoder_gauss,
           const ScoreConfig& cfg);

struct TrainingExample {
    SourceSentence source;
    int gold_length = 0;                  // reference length, EOS excluded
    std::vector<TokenId> greedy_output;   // greedy decode of the base model, EOS stripped
};

struct PredictorConfig {
    int hidden_dim = 16;       // LSTM^d size; also the dim the summary is matched to
    int head_hidden_dim = 16;  // hidden layer inside f^e and f^d
    std::uint64_t init_seed = 0;
};

class LengthPredictor {
public:
    LengthPredictor(const PredictorConfig& cfg, int summary_dim, int embed_dim);

    // f^e: source summary -> correct-length Gaussian.
    GaussianParams encoder_head(const SourceSummary& summary) const;

    PredictorState initial_state(const SourceSummary& summary) const;
    // Advances LSTM^d by one emitted token and refreshes the decoder-head
    // Gaussian from f^d(h_l + summary).
    PredictorState step(const PredictorState& state, const std::vector<double>& token_embedding,
                        const SourceSummary& summary) const;

    // Loss J on one example: encoder-head NLL of the gold length plus the mean
    // per-step decoder-head NLL of the greedy length. Gradients are left in
    // the layers' grad buffers (zeroed first).
    double loss_j(const TrainingExample& example, const SequenceModel& model);

    struct TrainReport {
        std::vector<double> epoch_mean_loss;
    };
    TrainReport train(const std::vector<TrainingExample>& corpus, const SequenceModel& model,
                      int epochs, const nn::AdamConfig& adam, std::uint64_t shuffle_seed);

    void visit(const nn::ParamVisitor& fn);         // theta_e then theta_d
    void visit_encoder(const nn::ParamVisitor& fn);  // theta_e only
    nn::Vec flat_params();
    nn::Vec flat_grads();
    void set_flat_params(std::span<const double> flat);
    void zero_grads();

    int summary_dim() const { return summary_dim_; }
    int hidden_dim() const { return cfg_.hidden_dim; }

    std::string to_json() const;
    static std::shared_ptr<LengthPredictor> from_json(const std::string& text);

private:
    nn::Vec project_summary(const nn::Vec& summary) const;

    PredictorConfig cfg_;
    int summary_dim_ = 0;
    int embed_dim_ = 0;
    bool needs_projection_ = false;

    // theta_e
    nn::DenseLayer enc_hidden_;  // summary_dim -> head_hidden (tanh)
    nn::DenseLayer enc_out_;     // head_hidden -> 2
    // theta_d
    nn::DenseLayer proj_;        // summary_dim -> hidden (identity), only when dims differ
    nn::LstmCell lstm_;          // embed_dim -> hidden
    nn::DenseLayer dec_hidden_;  // hidden -> head_hidden (tanh)
    nn::DenseLayer dec_out_;     // head_hidden -> 2
};

// Builds TrainingExamples by greedy decoding each source with the base model.
TrainingExample make_training_example(const SequenceModel& model, const SourceSentence& source,
                                      int gold_length, int max_steps);

// Predictor section living next to the base model inside one JSON file.
void save_predictor_section(const std::string& model_path, const LengthPredictor& predictor);
std::shared_ptr<LengthPredictor> load_predictor_section(const std::string& model_path);

}  // namespace sqd
