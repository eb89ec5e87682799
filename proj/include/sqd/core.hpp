#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sqd {

using TokenId = int;

// Lower bound on any predicted Gaussian stddev; keeps the cross-entropy finite.
inline constexpr double kSigmaFloor = 1e-4;

struct Vocab {
    std::vector<std::string> tokens;
    TokenId bos_id = 0;
    TokenId eos_id = 1;

    int size() const { return static_cast<int>(tokens.size()); }
    bool valid_id(TokenId id) const { return id >= 0 && id < size(); }
    void validate() const;

    // Standard toy vocab: <s>, </s>, then w2..w{V-1}.
    static Vocab make_default(int v);
};

struct SourceSentence {
    std::vector<TokenId> tokens;

    int length() const { return static_cast<int>(tokens.size()); }
};

struct GaussianParams {
    double mu = 0.0;
    double sigma = 1.0;  // >= kSigmaFloor
};

struct PredictorState;  // defined in lengthpred.hpp

struct Hypothesis {
    std::vector<TokenId> tokens;  // excludes BOS, may end in EOS
    double cum_logprob = 0.0;
    bool finished = false;
    std::shared_ptr<const void> model_state;
    std::shared_ptr<const PredictorState> pred_state;
    std::optional<double> cached_score;
    std::uint64_t seq_no = 0;

    int length() const { return static_cast<int>(tokens.size()); }
    TokenId last_token() const { return tokens.back(); }
};

// Which direction the Gaussian cross-entropy in the length matching score is
// taken. Expectation integrates the hypothesis-length Gaussian against the
// correct-length one; AsPrinted swaps the two roles.
enum class LmsMode {
    Expectation,
    AsPrinted,
};

struct ScoreConfig {
    double lambda = 1.0;  // length-normalization exponent, >= 0
    double alpha = 0.0;   // progress-penalty weight
    double beta = 1.0;    // progress-penalty exponent, >= 0
    double gamma = 0.0;   // length-matching penalty weight (negative penalizes)
    double tau = 0.0;     // length-matching score threshold
    bool lmp_enabled = false;
    bool pg_enabled = true;
    LmsMode lms_mode = LmsMode::Expectation;
};

struct SearchConfig {
    int beam_size = 5;
    int max_steps = 150;
    int retain_size = 10;  // size of the per-step retained set, >= beam_size
    std::optional<int> queue_capacity;
    std::uint64_t seed = 0;
    bool trace = true;  // record rank_score_trace

    void validate() const;
};

struct DecodeResult {
    Hypothesis best;
    bool fallback = false;  // best is unfinished (no finished hypothesis found)
    std::vector<Hypothesis> all_finished;
    int steps_taken = 0;
    // Per step, length-normalized (lambda=1) scores of the expanded set S,
    // sorted descending. Row length <= beam_size.
    std::vector<std::vector<double>> rank_score_trace;
    double time_ms = 0.0;
};

// cum_logprob / |tokens|^lambda
double normalized_logprob(const Hypothesis& h, double lambda);
double normalized_logprob(double cum_logprob, int length, double lambda);

// Strict total order: cached_score descending, then seq_no ascending, then
// lexicographic token sequence. Both hypotheses must carry a cached score.
// Returns <0 if a precedes b, >0 if b precedes a, 0 if equivalent.
int compare_hypotheses(const Hypothesis& a, const Hypothesis& b);

struct HypothesisBefore {
    bool operator()(const Hypothesis& a, const Hypothesis& b) const {
        return compare_hypotheses(a, b) < 0;
    }
};

}  // namespace sqd
