#pragma once

#include <optional>
#include <set>
#include <vector>

#include "sqd/core.hpp"
#include "sqd/lengthpred.hpp"
#include "sqd/model.hpp"

namespace sqd {

// All hypotheses live in one ordered container; extraction order agrees with
// compare_hypotheses. Finished and unfinished members are indexed separately
// so "best B unfinished" skips finished entries in O(log n).
class HypothesisQueue {
public:
    explicit HypothesisQueue(std::optional<int> capacity = std::nullopt)
        : capacity_(capacity) {}

    void push(Hypothesis h);
    // Removes and returns up to n best unfinished hypotheses.
    std::vector<Hypothesis> pop_best_unfinished(int n);

    int size() const { return static_cast<int>(finished_.size() + unfinished_.size()); }
    int finished_count() const { return static_cast<int>(finished_.size()); }
    int unfinished_count() const { return static_cast<int>(unfinished_.size()); }

    const Hypothesis* best_finished() const;
    const Hypothesis* best_unfinished() const;
    std::vector<Hypothesis> finished_hypotheses() const;

private:
    std::set<Hypothesis, HypothesisBefore> finished_;
    std::set<Hypothesis, HypothesisBefore> unfinished_;
    std::optional<int> capacity_;
};

enum class BeamMode {
    Vanilla,     // rank by cumulative log-probability
    LengthNorm,  // rank by length-normalized log-probability
};

// Universal score: normalized log-probability plus progress and
// length-matching penalties. Finished hypotheses get both penalties zeroed.
// The predictor state / encoder Gaussian are consulted only when the length
// matching penalty is enabled.
double score_hypothesis(const Hypothesis& h, const SourceSentence& source,
                        const ScoreConfig& score_cfg,
                        const PredictorState* pred_state = nullptr,
                        const GaussianParams* encoder_gauss = nullptr);

DecodeResult beam_search(const SequenceModel& model, const SourceSentence& source,
                         const SearchConfig& cfg, BeamMode mode, double lambda = 1.0);

DecodeResult single_queue_decode(const SequenceModel& model, const SourceSentence& source,
                                 const SearchConfig& cfg, const ScoreConfig& score_cfg,
                                 const LengthPredictor* predictor = nullptr);

// Enumerates every EOS-terminated sequence up to max_len and returns the
// scorer argmax. Refuses instances with V^max_len > 10^7.
Hypothesis exhaustive_best(const SequenceModel& model, const SourceSentence& source, int max_len,
                           BeamMode mode, double lambda = 1.0);

struct RankStatCell {
    int step = 0;
    int rank = 0;
    double mean_score = 0.0;
    int count = 0;
};

// Per (step, rank) mean of the rank-score traces across decodes. Rows where a
// decode did not reach the step (or rank) are skipped, not zero-filled.
std::vector<RankStatCell> collect_rank_stats(const std::vector<DecodeResult>& results,
                                             int beam_size);

}  // namespace sqd
