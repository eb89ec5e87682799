#include "sqd/search.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace sqd {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

// Top-k (logprob, token) continuations, ties broken by ascending token id.
// Zero-probability tokens are never proposed.
std::vector<std::pair<double, TokenId>> top_tokens(const std::vector<double>& logprobs, int k) {
    std::vector<std::pair<double, TokenId>> all;
    all.reserve(logprobs.size());
    for (size_t t = 0; t < logprobs.size(); ++t)
        if (logprobs[t] > -std::numeric_limits<double>::infinity())
            all.emplace_back(logprobs[t], static_cast<TokenId>(t));
    auto before = [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    };
    if (static_cast<int>(all.size()) > k) {
        std::partial_sort(all.begin(), all.begin() + k, all.end(), before);
        all.resize(k);
    } else {
        std::sort(all.begin(), all.end(), before);
    }
    return all;
}

std::vector<double> trace_row(const std::vector<Hypothesis>& hyps) {
    std::vector<double> row;
    row.reserve(hyps.size());
    for (const auto& h : hyps)
        if (h.length() >= 1) row.push_back(normalized_logprob(h, 1.0));
    std::sort(row.rbegin(), row.rend());
    return row;
}

}  // namespace

// ---------------------------------------------------------------------------
// HypothesisQueue

void HypothesisQueue::push(Hypothesis h) {
    if (!h.cached_score) throw std::logic_error("queue: hypothesis has no cached score");
    auto& target = h.finished ? finished_ : unfinished_;
    if (!target.insert(std::move(h)).second)
        throw std::logic_error("queue: duplicate hypothesis (seq_no reused)");
    if (capacity_ && size() > *capacity_ && !unfinished_.empty())
        unfinished_.erase(std::prev(unfinished_.end()));
}

std::vector<Hypothesis> HypothesisQueue::pop_best_unfinished(int n) {
    std::vector<Hypothesis> out;
    out.reserve(static_cast<size_t>(std::max(n, 0)));
    while (n-- > 0 && !unfinished_.empty()) {
        out.push_back(*unfinished_.begin());
        unfinished_.erase(unfinished_.begin());
    }
    return out;
}

const Hypothesis* HypothesisQueue::best_finished() const {
    return finished_.empty() ? nullptr : &*finished_.begin();
}

const Hypothesis* HypothesisQueue::best_unfinished() const {
    return unfinished_.empty() ? nullptr : &*unfinished_.begin();
}

std::vector<Hypothesis> HypothesisQueue::finished_hypotheses() const {
    return {finished_.begin(), finished_.end()};
}

// ---------------------------------------------------------------------------
// Scoring

double score_hypothesis(const Hypothesis& h, const SourceSentence& source,
                        const ScoreConfig& score_cfg, const PredictorState* pred_state,
                        const GaussianParams* encoder_gauss) {
    double s = normalized_logprob(h, score_cfg.lambda);
    if (h.finished) return s;
    if (score_cfg.pg_enabled) {
        s += score_cfg.alpha * std::pow(static_cast<double>(h.length()), score_cfg.beta) /
             std::pow(static_cast<double>(source.length()), score_cfg.beta);
    }
    if (score_cfg.lmp_enabled) {
        if (!pred_state || !encoder_gauss)
            throw std::logic_error("score: lmp enabled but predictor state missing");
        s += lmp(h, *pred_state, *encoder_gauss, score_cfg);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Beam search

DecodeResult beam_search(const SequenceModel& model, const SourceSentence& source,
                         const SearchConfig& cfg, BeamMode mode, double lambda) {
    cfg.validate();
    auto start = Clock::now();
    const Vocab& vocab = model.vocab();
    double lambda_eff = mode == BeamMode::Vanilla ? 0.0 : lambda;

    auto [summary, init_state] = model.encode(source);
    (void)summary;
    std::uint64_t next_seq = 0;

    Hypothesis seed;
    seed.model_state = init_state;
    seed.cached_score = 0.0;
    seed.seq_no = next_seq++;

    std::vector<Hypothesis> live{seed};
    std::vector<Hypothesis> finished;
    DecodeResult result;

    for (int t = 1; t <= cfg.max_steps; ++t) {
        if (live.empty()) break;
        result.steps_taken = t;
        if (cfg.trace) result.rank_score_trace.push_back(trace_row(live));

        std::vector<Hypothesis> candidates;
        for (const auto& h : live) {
            TokenId last = h.tokens.empty() ? vocab.bos_id : h.last_token();
            auto out = model.step(h.model_state, last);
            for (auto [lp, tok] : top_tokens(out.logprobs, cfg.beam_size)) {
                Hypothesis child;
                child.tokens = h.tokens;
                child.tokens.push_back(tok);
                child.cum_logprob = h.cum_logprob + lp;
                child.finished = tok == vocab.eos_id;
                child.model_state = out.next_state;
                child.seq_no = next_seq++;
                child.cached_score = normalized_logprob(child, lambda_eff);
                candidates.push_back(std::move(child));
            }
        }
        std::sort(candidates.begin(), candidates.end(), HypothesisBefore{});
        if (static_cast<int>(candidates.size()) > cfg.beam_size)
            candidates.resize(cfg.beam_size);

        live.clear();
        for (auto& c : candidates) {
            if (c.finished)
                finished.push_back(std::move(c));
            else
                live.push_back(std::move(c));
        }
        if (static_cast<int>(finished.size()) >= cfg.beam_size) break;
    }

    result.all_finished = finished;
    if (!finished.empty()) {
        std::sort(finished.begin(), finished.end(), HypothesisBefore{});
        result.best = finished.front();
    } else {
        // Ran out of steps (or live set) without a single finished hypothesis.
        result.fallback = true;
        if (!live.empty()) {
            std::sort(live.begin(), live.end(), HypothesisBefore{});
            result.best = live.front();
        }
    }
    result.time_ms = elapsed_ms(start);
    return result;
}

// ---------------------------------------------------------------------------
// Single-queue decoding

DecodeResult single_queue_decode(const SequenceModel& model, const SourceSentence& source,
                                 const SearchConfig& cfg, const ScoreConfig& score_cfg,
                                 const LengthPredictor* predictor) {
    cfg.validate();
    if (score_cfg.lmp_enabled && !predictor)
        throw std::invalid_argument("sqd: lmp enabled but no predictor supplied");
    auto start = Clock::now();
    const Vocab& vocab = model.vocab();

    auto [summary, init_state] = model.encode(source);
    GaussianParams encoder_gauss;
    std::shared_ptr<const PredictorState> init_pred;
    if (score_cfg.lmp_enabled) {
        encoder_gauss = predictor->encoder_head(summary);
        init_pred = std::make_shared<PredictorState>(predictor->initial_state(summary));
    }

    std::uint64_t next_seq = 0;
    Hypothesis seed;
    seed.model_state = init_state;
    seed.pred_state = init_pred;
    seed.cached_score = 0.0;
    seed.seq_no = next_seq++;

    HypothesisQueue queue(cfg.queue_capacity);
    queue.push(std::move(seed));
    DecodeResult result;

    for (int t = 1; t <= cfg.max_steps; ++t) {
        auto expand_set = queue.pop_best_unfinished(cfg.beam_size);
        if (expand_set.empty()) break;
        result.steps_taken = t;
        if (cfg.trace) result.rank_score_trace.push_back(trace_row(expand_set));

        // Per-hypothesis expansion width; widened so the retained set can be
        // filled even when few hypotheses are available (B=1 in particular).
        int width = std::max(cfg.beam_size,
                             (cfg.retain_size + static_cast<int>(expand_set.size()) - 1) /
                                 static_cast<int>(expand_set.size()));

        std::vector<Hypothesis> candidates;
        for (const auto& h : expand_set) {
            TokenId last = h.tokens.empty() ? vocab.bos_id : h.last_token();
            auto out = model.step(h.model_state, last);
            for (auto [lp, tok] : top_tokens(out.logprobs, width)) {
                Hypothesis child;
                child.tokens = h.tokens;
                child.tokens.push_back(tok);
                child.cum_logprob = h.cum_logprob + lp;
                child.finished = tok == vocab.eos_id;
                child.model_state = out.next_state;
                child.seq_no = next_seq++;
                if (score_cfg.lmp_enabled) {
                    child.pred_state =
                        child.finished
                            ? h.pred_state
                            : std::make_shared<PredictorState>(
                                  predictor->step(*h.pred_state, model.embed(tok), summary));
                }
                child.cached_score = score_hypothesis(child, source, score_cfg,
                                                      child.pred_state.get(), &encoder_gauss);
                candidates.push_back(std::move(child));
            }
        }
        std::sort(candidates.begin(), candidates.end(), HypothesisBefore{});
        if (static_cast<int>(candidates.size()) > cfg.retain_size)
            candidates.resize(cfg.retain_size);
        for (auto& c : candidates) queue.push(std::move(c));

        if (queue.finished_count() >= cfg.beam_size) break;
    }

    result.all_finished = queue.finished_hypotheses();
    if (const Hypothesis* best = queue.best_finished()) {
        result.best = *best;
    } else {
        result.fallback = true;
        if (const Hypothesis* b = queue.best_unfinished()) result.best = *b;
    }
    result.time_ms = elapsed_ms(start);
    return result;
}

// ---------------------------------------------------------------------------
// Exhaustive oracle

namespace {

struct OracleCtx {
    const SequenceModel* model;
    const Vocab* vocab;
    int max_len;
    BeamMode mode;
    double lambda;
    bool have_best = false;
    double best_score = 0.0;
    Hypothesis best;
};

void oracle_visit(OracleCtx& ctx, const StateHandle& state, TokenId last,
                  std::vector<TokenId>& prefix, double cum) {
    auto out = ctx.model->step(state, last);
    for (size_t tok = 0; tok < out.logprobs.size(); ++tok) {
        double lp = out.logprobs[tok];
        if (lp == -std::numeric_limits<double>::infinity()) continue;
        TokenId id = static_cast<TokenId>(tok);
        if (id == ctx.vocab->eos_id) {
            int len = static_cast<int>(prefix.size()) + 1;
            double total = cum + lp;
            double s = ctx.mode == BeamMode::Vanilla
                           ? total
                           : normalized_logprob(total, len, ctx.lambda);
            // First sequence in lexicographic order wins ties.
            if (!ctx.have_best || s > ctx.best_score) {
                ctx.have_best = true;
                ctx.best_score = s;
                ctx.best.tokens = prefix;
                ctx.best.tokens.push_back(id);
                ctx.best.cum_logprob = total;
                ctx.best.finished = true;
                ctx.best.cached_score = s;
            }
        } else if (static_cast<int>(prefix.size()) + 1 < ctx.max_len) {
            prefix.push_back(id);
            oracle_visit(ctx, out.next_state, id, prefix, cum + lp);
            prefix.pop_back();
        }
    }
}

}  // namespace

Hypothesis exhaustive_best(const SequenceModel& model, const SourceSentence& source, int max_len,
                           BeamMode mode, double lambda) {
    if (max_len < 1) throw std::invalid_argument("exhaustive: max_len must be >= 1");
    double count = std::pow(static_cast<double>(model.vocab().size()), max_len);
    if (count > 1e7)
        throw std::invalid_argument("exhaustive: V^max_len exceeds the enumeration bound");
    auto [summary, init_state] = model.encode(source);
    (void)summary;
    OracleCtx ctx{&model, &model.vocab(), max_len, mode, lambda};
    std::vector<TokenId> prefix;
    oracle_visit(ctx, init_state, model.vocab().bos_id, prefix, 0.0);
    if (!ctx.have_best)
        throw std::runtime_error("exhaustive: no EOS-terminated sequence within max_len");
    return ctx.best;
}

// ---------------------------------------------------------------------------

std::vector<RankStatCell> collect_rank_stats(const std::vector<DecodeResult>& results,
                                             int beam_size) {
    if (results.empty()) throw std::invalid_argument("rank stats: no results");
    size_t max_steps = 0;
    for (const auto& r : results) max_steps = std::max(max_steps, r.rank_score_trace.size());
    std::vector<RankStatCell> cells;
    for (size_t t = 0; t < max_steps; ++t) {
        for (int r = 0; r < beam_size; ++r) {
            double sum = 0.0;
            int count = 0;
            for (const auto& res : results) {
                if (t >= res.rank_score_trace.size()) continue;
                const auto& row = res.rank_score_trace[t];
                if (r >= static_cast<int>(row.size())) continue;
                sum += row[r];
                ++count;
            }
            if (count > 0)
                cells.push_back({static_cast<int>(t), r, sum / count, count});
        }
    }
    return cells;
}

}  // namespace sqd
